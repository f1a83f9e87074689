//! Attribution and counterfactual tools built on the sufficiency machinery:
//! Shapley values, anchor precision, recourse search, and the probabilities
//! of sufficiency and necessity of a binary cause in a structural model.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{all_target_sets, rng_for, AugmentedPoint, Aux, Context, Equation, MixtureComponent, Scm, WeightedPoint};
use crate::data::{Dataset, FeatureKind, FeatureSchema, Instance};
use crate::error::{Error, Result};
use crate::factor::{Atom, Factor, FactorSpace};
use crate::lens::{Basis, EstimationConfig, Estimator};
use crate::model::{Model, Rule};
use crate::order::{CostFn, PartialOrder};
use crate::rational;

/// Largest arity accepted by exact Shapley enumeration.
pub const MAX_EXACT_SHAPLEY_ARITY: usize = 20;

/// Tag key distinguishing the two halves of the counterfactual mixture.
pub const SOURCE_TAG: &str = "source";

fn check_pool(input: &Instance, refs: &Dataset) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::EmptyReferencePool);
    }
    let arity = refs.schema().arity();
    if input.len() != arity {
        return Err(Error::ArityMismatch {
            expected: arity,
            got: input.len(),
        });
    }
    Ok(())
}

fn splice(input: &Instance, reference: &Instance, keep: impl Fn(usize) -> bool) -> Instance {
    Instance(
        reference
            .0
            .iter()
            .enumerate()
            .map(|(i, &r)| if keep(i) { input.0[i] } else { r })
            .collect(),
    )
}

/// Number of references `r` with `f(x_S, r_rest) = 1`.
fn positive_count(model: &Model, input: &Instance, refs: &[Instance], mask: u64) -> Result<u64> {
    let xs: Vec<Instance> = refs
        .iter()
        .map(|r| splice(input, r, |i| mask >> i & 1 == 1))
        .collect();
    Ok(model.predict_batch(&xs)?.iter().filter(|&&l| l == 1).count() as u64)
}

fn mask_of(subset: &BTreeSet<usize>, arity: usize) -> Result<u64> {
    let mut mask = 0u64;
    for &i in subset {
        if i >= arity {
            return Err(Error::IndexOutOfBounds { index: i, arity });
        }
        mask |= 1 << i;
    }
    Ok(mask)
}

/// `v(S) = E_r[f(x_S, r_rest)]`: the expected output when the features in
/// `subset` are fixed to the input and the rest come from the references.
pub fn value_function(
    model: &Model,
    input: &Instance,
    refs: &Dataset,
    subset: &BTreeSet<usize>,
    cfg: EstimationConfig,
) -> Result<f64> {
    check_pool(input, refs)?;
    if input.len() > 63 {
        return Err(Error::ArityTooLarge {
            arity: input.len(),
            max: 63,
        });
    }
    let mask = mask_of(subset, input.len())?;
    match cfg {
        EstimationConfig::Exact => {
            let count = positive_count(model, input, refs.rows(), mask)?;
            Ok(rational::to_f64(&rational::frac(count, refs.len() as u64)))
        }
        EstimationConfig::MonteCarlo { n, seed, .. } => {
            if n == 0 {
                return Err(Error::BadParameters("Monte Carlo needs n >= 1".into()));
            }
            let mut rng = rng_for(seed, 0);
            let drawn: Vec<Instance> = (0..n)
                .map(|_| refs.rows()[rng.random_range(0..refs.len())].clone())
                .collect();
            Ok(positive_count(model, input, &drawn, mask)? as f64 / n as f64)
        }
    }
}

/// The same value computed through the lens: `PS(c_S, 1)` over an R2I
/// context with every target set, where `c_S` selects points whose target
/// set is exactly `S`.
pub fn value_function_via_lens(
    model: &Model,
    input: &Instance,
    refs: &Dataset,
    subset: &BTreeSet<usize>,
    cfg: EstimationConfig,
) -> Result<f64> {
    let arity = input.len();
    let context = Context::r2i(input.clone(), refs.clone(), all_target_sets(arity, arity))?;
    let c = Factor::targets(subset.iter().copied(), false);
    let basis = Basis::new(model.clone(), context, FactorSpace::new(vec![c.clone()])?, PartialOrder::Subset)?;
    Ok(Estimator::new(&basis, cfg)?.ps(&c, 1)?.ps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ShapleyMode {
    Exact,
    /// Average marginal contributions over `permutations` random orderings.
    Permutation { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShapleyResult {
    pub phi: Vec<f64>,
    /// `v(∅)`, the baseline the attributions are measured from.
    pub phi0: f64,
    /// `v(S)` for every evaluated subset, keyed by its sorted feature list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_cache: Option<BTreeMap<String, f64>>,
}

fn mask_key(mask: u64, arity: usize) -> String {
    let idx: Vec<String> = (0..arity).filter(|i| mask >> i & 1 == 1).map(|i| i.to_string()).collect();
    format!("[{}]", idx.join(","))
}

fn cache_map(counts: &HashMap<u64, u64>, arity: usize, r: u64) -> BTreeMap<String, f64> {
    counts
        .iter()
        .map(|(&m, &c)| (mask_key(m, arity), rational::to_f64(&rational::frac(c, r))))
        .collect()
}

pub fn shapley_values(model: &Model, input: &Instance, refs: &Dataset, mode: ShapleyMode) -> Result<ShapleyResult> {
    check_pool(input, refs)?;
    let d = input.len();
    match mode {
        ShapleyMode::Exact => exact_shapley(model, input, refs),
        ShapleyMode::Permutation { permutations, seed } => permutation_shapley(model, input, refs, d, permutations, seed),
    }
}

fn exact_shapley(model: &Model, input: &Instance, refs: &Dataset) -> Result<ShapleyResult> {
    let d = input.len();
    if d > MAX_EXACT_SHAPLEY_ARITY {
        return Err(Error::ArityTooLarge {
            arity: d,
            max: MAX_EXACT_SHAPLEY_ARITY,
        });
    }
    let masks: Vec<u64> = (0..1u64 << d).collect();
    let counts: Vec<u64> = if matches!(model, Model::External(_)) {
        masks
            .iter()
            .map(|&m| positive_count(model, input, refs.rows(), m))
            .collect::<Result<_>>()?
    } else {
        masks
            .par_iter()
            .map(|&m| positive_count(model, input, refs.rows(), m))
            .collect::<Result<_>>()?
    };
    // phi_j = sum_S |S|! (d-|S|-1)! (v(S+j) - v(S)) / d!, with v = count / R
    let fact: Vec<i128> = (0..=d as i128).scan(1i128, |acc, k| {
        if k > 0 {
            *acc *= k;
        }
        Some(*acc)
    })
    .collect();
    let r = refs.len() as u64;
    let denom = BigInt::from(fact[d]) * BigInt::from(r);
    let mut phi = Vec::with_capacity(d);
    for j in 0..d {
        let bit = 1u64 << j;
        let mut num = BigInt::zero();
        let mut acc: i128 = 0;
        for &m in masks.iter().filter(|&&m| m & bit == 0) {
            let s = m.count_ones() as usize;
            let diff = counts[(m | bit) as usize] as i128 - counts[m as usize] as i128;
            if diff != 0 {
                let term = fact[s] * fact[d - s - 1] * diff;
                match acc.checked_add(term) {
                    Some(v) => acc = v,
                    None => {
                        num += BigInt::from(acc);
                        acc = term;
                    }
                }
            }
        }
        num += BigInt::from(acc);
        phi.push(rational::to_f64(&BigRational::new(num, denom.clone())));
    }
    let cache: HashMap<u64, u64> = masks.iter().map(|&m| (m, counts[m as usize])).collect();
    Ok(ShapleyResult {
        phi,
        phi0: rational::to_f64(&rational::frac(counts[0], r)),
        value_cache: Some(cache_map(&cache, d, r)),
    })
}

fn permutation_shapley(
    model: &Model,
    input: &Instance,
    refs: &Dataset,
    d: usize,
    permutations: usize,
    seed: u64,
) -> Result<ShapleyResult> {
    if permutations == 0 {
        return Err(Error::BadParameters("need at least one permutation".into()));
    }
    if d > 63 {
        return Err(Error::ArityTooLarge { arity: d, max: 63 });
    }
    let r = refs.len() as u64;
    let mut counts: HashMap<u64, u64> = HashMap::new();
    let value = |m: u64, counts: &mut HashMap<u64, u64>| -> Result<u64> {
        if let Some(&c) = counts.get(&m) {
            return Ok(c);
        }
        let c = positive_count(model, input, refs.rows(), m)?;
        counts.insert(m, c);
        Ok(c)
    };
    let mut rng = rng_for(seed, 0);
    let mut totals = vec![0i64; d];
    let mut order: Vec<usize> = (0..d).collect();
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = value(mask, &mut counts)?;
        for &j in &order {
            mask |= 1 << j;
            let next = value(mask, &mut counts)?;
            totals[j] += next as i64 - prev as i64;
            prev = next;
        }
    }
    let scale = permutations as f64 * r as f64;
    let phi0 = value(0, &mut counts)?;
    Ok(ShapleyResult {
        phi: totals.iter().map(|&t| t as f64 / scale).collect(),
        phi0: rational::to_f64(&rational::frac(phi0, r)),
        value_cache: Some(cache_map(&counts, d, r)),
    })
}

fn anchor_features(anchor: &Factor) -> Result<BTreeSet<usize>> {
    match anchor {
        Factor::ValuePredicate { atoms } => Ok(atoms.iter().map(|a| a.feature).collect()),
        other => Err(Error::InvalidFactor(format!("an anchor must be a value predicate, got {other}"))),
    }
}

fn check_anchor(model: &Model, input: &Instance, anchor: &Factor) -> Result<BTreeSet<usize>> {
    let features = anchor_features(anchor)?;
    let z = AugmentedPoint::new(input.clone(), Aux::default());
    if !anchor.evaluate(&z)? {
        return Err(Error::AnchorDoesNotHold);
    }
    model.arity().map_or(Ok(()), |n| {
        if n == input.len() {
            Ok(())
        } else {
            Err(Error::ArityMismatch {
                expected: n,
                got: input.len(),
            })
        }
    })?;
    Ok(features)
}

/// Fraction of perturbed points, input values on the anchor's features and
/// reference values elsewhere, that keep the input's prediction.
pub fn anchor_precision(
    model: &Model,
    input: &Instance,
    anchor: &Factor,
    refs: &Dataset,
    cfg: EstimationConfig,
) -> Result<f64> {
    check_pool(input, refs)?;
    let features = check_anchor(model, input, anchor)?;
    let y = model.predict(input)?;
    let agree = |rows: &[Instance]| -> Result<u64> {
        let xs: Vec<Instance> = rows.iter().map(|r| splice(input, r, |i| features.contains(&i))).collect();
        Ok(model.predict_batch(&xs)?.iter().filter(|&&l| l == y).count() as u64)
    };
    match cfg {
        EstimationConfig::Exact => Ok(rational::to_f64(&rational::frac(agree(refs.rows())?, refs.len() as u64))),
        EstimationConfig::MonteCarlo { n, seed, .. } => {
            if n == 0 {
                return Err(Error::BadParameters("Monte Carlo needs n >= 1".into()));
            }
            let mut rng = rng_for(seed, 0);
            let drawn: Vec<Instance> = (0..n)
                .map(|_| refs.rows()[rng.random_range(0..refs.len())].clone())
                .collect();
            Ok(agree(&drawn)? as f64 / n as f64)
        }
    }
}

/// Basis under which an anchor's precision is `PS(anchor, f(input))`: an
/// R2I context whose only target set is the anchor's features.
pub fn anchor_basis(model: &Model, input: &Instance, anchor: &Factor, refs: &Dataset) -> Result<Basis> {
    check_pool(input, refs)?;
    let features = check_anchor(model, input, anchor)?;
    let context = Context::r2i(input.clone(), refs.clone(), vec![features])?;
    Basis::new(
        model.clone(),
        context,
        FactorSpace::new(vec![anchor.clone()])?,
        PartialOrder::Subset,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecourseOption {
    pub factor: Factor,
    pub cost: f64,
    pub ps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecourseResult {
    /// The outcome the recourse aims for, `1 - f(input)`.
    pub target_outcome: u8,
    pub chosen: Factor,
    pub cost: f64,
    pub ps: f64,
    /// Other τ-minimal options under the cost order.
    pub alternatives: Vec<RecourseOption>,
}

/// Cheapest factor of the basis space that flips the input's prediction
/// with probability at least `tau`. Ties break on condition count, then on
/// canonical JSON.
pub fn recourse_search(basis: &Basis, cost: &CostFn, tau: f64, cfg: EstimationConfig) -> Result<RecourseResult> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::BadParameters(format!("tau {tau} outside [0, 1]")));
    }
    let input = basis
        .context
        .input()
        .ok_or_else(|| Error::InvalidContext("recourse needs a context built around an input".into()))?;
    let target = 1 - basis.model.predict(input)?;
    let est = Estimator::new(basis, cfg)?;
    est.precompute(target)?;
    let mut feasible: Vec<RecourseOption> = Vec::new();
    for c in basis.space.iter() {
        let ps = match est.ps(c, target) {
            Ok(e) => e.ps,
            Err(Error::ZeroSupport(_)) => continue,
            Err(e) => return Err(e),
        };
        if ps >= tau {
            feasible.push(RecourseOption {
                factor: c.clone(),
                cost: cost.cost(c),
                ps,
            });
        }
    }
    let order = PartialOrder::Cost(cost.clone());
    let key = |o: &RecourseOption| (o.cost, o.factor.condition_count(), o.factor.canonical());
    let best = feasible
        .iter()
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then_with(|| ka.2.cmp(&kb.2))
        })
        .cloned()
        .ok_or(Error::NoFeasibleRecourse(tau))?;
    let mut alternatives: Vec<RecourseOption> = feasible
        .iter()
        .filter(|o| o.factor != best.factor)
        .filter(|o| !feasible.iter().any(|p| order.lt(&p.factor, &o.factor)))
        .cloned()
        .collect();
    alternatives.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then_with(|| a.factor.canonical().cmp(&b.factor.canonical()))
    });
    Ok(RecourseResult {
        target_outcome: target,
        chosen: best.factor,
        cost: best.cost,
        ps: best.ps,
        alternatives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearlResult {
    pub suf: f64,
    pub nec: f64,
}

/// A structural model with a binary cause, a binary outcome determined by
/// its parents, and exogenous root variables with finite tables.
struct Bivariate<'a> {
    scm: &'a Scm,
    cause: usize,
    outcome: usize,
    exogenous: Vec<usize>,
}

fn levels(schema: &FeatureSchema, i: usize) -> Option<usize> {
    match &schema.features()[i].kind {
        FeatureKind::Categorical { levels } => Some(levels.len()),
        FeatureKind::Continuous { .. } => None,
    }
}

impl<'a> Bivariate<'a> {
    fn new(scm: &'a Scm, cause: usize, outcome: usize) -> Result<Self> {
        let n = scm.arity();
        let bad = |m: &str| Err(Error::NotBivariate(m.into()));
        if cause >= n || outcome >= n {
            return Err(Error::IndexOutOfBounds {
                index: cause.max(outcome),
                arity: n,
            });
        }
        if cause == outcome {
            return bad("cause and outcome must differ");
        }
        let schema = scm.schema();
        for v in [cause, outcome] {
            if levels(schema, v) != Some(2) || !matches!(scm.equation(v), Equation::Table { .. }) {
                return bad("cause and outcome must be binary table nodes");
            }
        }
        let exogenous: Vec<usize> = (0..n).filter(|&i| i != cause && i != outcome).collect();
        for &e in &exogenous {
            if levels(schema, e).is_none() || !matches!(scm.equation(e), Equation::Table { .. }) {
                return bad("every other node must be a finite exogenous table");
            }
            if !scm.parents(e).is_empty() {
                return bad("every other node must be a root");
            }
        }
        if scm.parents(cause).contains(&outcome) {
            return bad("the outcome may not cause the cause");
        }
        if let Equation::Table { cpt } = scm.equation(outcome) {
            if cpt.iter().any(|row| !row.iter().all(|&p| p == 0.0 || p == 1.0)) {
                return bad("the outcome must be a deterministic function of its parents");
            }
        }
        Ok(Bivariate {
            scm,
            cause,
            outcome,
            exogenous,
        })
    }

    /// Every joint value of the exogenous nodes with its prior probability.
    fn noise(&self) -> Result<Vec<(Vec<f64>, BigRational)>> {
        let schema = self.scm.schema();
        let mut out = vec![(vec![0.0; self.scm.arity()], BigRational::one())];
        for &e in &self.exogenous {
            let k = levels(schema, e).unwrap_or(0);
            let mut next = Vec::with_capacity(out.len() * k);
            for (vals, p) in &out {
                let row = self
                    .scm
                    .table_probabilities(e, vals)
                    .ok_or_else(|| Error::NotBivariate("non-table exogenous node".into()))?;
                for (level, q) in row.into_iter().enumerate() {
                    if q.is_zero() {
                        continue;
                    }
                    let mut v = vals.clone();
                    v[e] = level as f64;
                    next.push((v, p * q));
                }
            }
            out = next;
        }
        Ok(out)
    }

    fn outcome_under(&self, u: &[f64], x: u8) -> u8 {
        let mut v = u.to_vec();
        v[self.cause] = f64::from(x);
        let row = self
            .scm
            .table_probabilities(self.outcome, &v)
            .expect("outcome is a table node");
        u8::from(row[1] == BigRational::one())
    }

    fn cause_probability(&self, u: &[f64], x: u8) -> BigRational {
        self.scm
            .table_probabilities(self.cause, u)
            .expect("cause is a table node")[x as usize]
            .clone()
    }

    /// Posterior weights of each noise value given the observation
    /// `(cause = x, outcome = y)`, unnormalized.
    fn posterior(&self, noise: &[(Vec<f64>, BigRational)], x: u8, y: u8) -> Result<Vec<BigRational>> {
        let w: Vec<BigRational> = noise
            .iter()
            .map(|(u, p)| {
                if self.outcome_under(u, x) == y {
                    p * self.cause_probability(u, x)
                } else {
                    BigRational::zero()
                }
            })
            .collect();
        if w.iter().all(Zero::is_zero) {
            return Err(Error::ZeroConditioningProbability { x, y });
        }
        Ok(w)
    }

    /// Counterfactual world: noise `u`, cause forced to `x`.
    fn world(&self, u: &[f64], x: u8) -> Instance {
        let mut v = u.to_vec();
        v[self.cause] = f64::from(x);
        v[self.outcome] = f64::from(self.outcome_under(u, x));
        Instance(v)
    }
}

fn check_binary(x: u8, y: u8) -> Result<()> {
    if x > 1 || y > 1 {
        return Err(Error::BadParameters(format!("cause {x} and outcome {y} must be 0 or 1")));
    }
    Ok(())
}

/// Sufficiency and necessity of `cause = x` for `outcome = y` by direct
/// abduction over the exogenous noise:
///
/// * `suf = P(Y_x = y | X = 1-x, Y = 1-y)`
/// * `nec = P(Y_{1-x} = 1-y | X = x, Y = y)`
pub fn pearl_direct(scm: &Scm, cause: usize, outcome: usize, x: u8, y: u8) -> Result<PearlResult> {
    check_binary(x, y)?;
    let b = Bivariate::new(scm, cause, outcome)?;
    let noise = b.noise()?;
    let expect = |post: &[BigRational], force: u8, want: u8| -> f64 {
        let total: BigRational = post.iter().cloned().sum();
        let hit: BigRational = noise
            .iter()
            .zip(post)
            .filter(|((u, _), _)| b.outcome_under(u, force) == want)
            .map(|(_, w)| w.clone())
            .sum();
        rational::to_f64(&(hit / total))
    };
    let suf_post = b.posterior(&noise, 1 - x, 1 - y)?;
    let nec_post = b.posterior(&noise, x, y)?;
    Ok(PearlResult {
        suf: expect(&suf_post, x, y),
        nec: expect(&nec_post, 1 - x, 1 - y),
    })
}

/// Basis whose context mixes the two counterfactual worlds:
///
/// * source `I`: worlds consistent with `(x, y)`, cause forced to `1-x`;
/// * source `R`: worlds consistent with `(1-x, 1-y)`, cause forced to `x`.
///
/// The model reads the outcome column, so `suf = PS(source = R, y)` and
/// `nec = PS(source != R, 1-y)`.
pub fn pearl_basis(scm: &Scm, cause: usize, outcome: usize, x: u8, y: u8) -> Result<Basis> {
    check_binary(x, y)?;
    let b = Bivariate::new(scm, cause, outcome)?;
    let noise = b.noise()?;
    let side = |obs_x: u8, obs_y: u8, force: u8| -> Result<Context> {
        let post = b.posterior(&noise, obs_x, obs_y)?;
        let points = noise
            .iter()
            .zip(post)
            .filter(|(_, w)| !w.is_zero())
            .map(|((u, _), weight)| WeightedPoint {
                point: AugmentedPoint::new(b.world(u, force), Aux::with_targets([cause])),
                weight,
            })
            .collect();
        Context::points(points)
    };
    let context = Context::mixture(
        vec![
            MixtureComponent {
                tag: "I".into(),
                weight: 0.5,
                context: side(x, y, 1 - x)?,
            },
            MixtureComponent {
                tag: "R".into(),
                weight: 0.5,
                context: side(1 - x, 1 - y, x)?,
            },
        ],
        SOURCE_TAG,
    )?;
    let model = Model::RuleModel {
        rules: vec![Rule {
            when: vec![Atom::eq(outcome, 1.0)],
            label: 1,
        }],
        default: 0,
        arity: Some(scm.arity()),
    };
    let r = Factor::tag(SOURCE_TAG, "R");
    let space = FactorSpace::new(vec![r.clone(), r.negate()])?;
    Basis::new(model, context, space, PartialOrder::Subset)
}

/// Sufficiency and necessity through the lens over [`pearl_basis`].
pub fn pearl_suf_nec(scm: &Scm, cause: usize, outcome: usize, x: u8, y: u8, cfg: EstimationConfig) -> Result<PearlResult> {
    let basis = pearl_basis(scm, cause, outcome, x, y)?;
    let est = Estimator::new(&basis, cfg)?;
    let r = Factor::tag(SOURCE_TAG, "R");
    Ok(PearlResult {
        suf: est.ps(&r, y)?.ps,
        nec: est.ps(&r.negate(), 1 - y)?.ps,
    })
}
