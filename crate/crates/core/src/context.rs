//! Contexts: distributions over augmented points `(x, w)`.
//!
//! Reference-to-input (R2I) contexts inject the input's values on a target
//! set into reference rows; input-to-reference (I2R) contexts inject
//! reference values into the input. Causal I2R contexts propagate
//! interventions through a structural causal model. Mixtures tag each point
//! with the component it came from.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, Instance};
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::rational;

/// Draws allowed per requested point before rejection sampling gives up.
pub const REJECTION_BUDGET: usize = 10_000;

pub type Assignment = BTreeMap<usize, f64>;

/// Seeded generator for stream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Auxiliary record of an augmented point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aux {
    /// Features whose values were replaced to create the point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<BTreeSet<usize>>,
    #[serde(flatten)]
    pub tags: BTreeMap<String, String>,
}

impl Aux {
    pub fn with_targets(targets: impl IntoIterator<Item = usize>) -> Self {
        Aux {
            targets: Some(targets.into_iter().collect()),
            tags: BTreeMap::new(),
        }
    }

    pub fn tagged(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPoint {
    pub instance: Instance,
    pub aux: Aux,
}

impl AugmentedPoint {
    pub fn new(instance: Instance, aux: Aux) -> Self {
        AugmentedPoint { instance, aux }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoint {
    pub point: AugmentedPoint,
    pub weight: BigRational,
}

impl WeightedPoint {
    pub fn weight_f64(&self) -> f64 {
        rational::to_f64(&self.weight)
    }
}

impl Serialize for WeightedPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            instance: &'a Instance,
            aux: &'a Aux,
            weight: f64,
        }
        Repr {
            instance: &self.point.instance,
            aux: &self.point.aux,
            weight: self.weight_f64(),
        }
        .serialize(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Materialize {
    Enumerate,
    Sample { n: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub tag: String,
    pub weight: f64,
    pub context: Context,
}

#[derive(Debug, Clone)]
pub enum Context {
    R2I {
        input: Instance,
        references: Dataset,
        target_sets: Vec<BTreeSet<usize>>,
    },
    I2R {
        input: Instance,
        references: Dataset,
        target_sets: Vec<BTreeSet<usize>>,
    },
    I2RCausal {
        input: Instance,
        scm: Scm,
        interventions: Vec<Assignment>,
        samples_per_intervention: usize,
    },
    Mixture {
        components: Vec<MixtureComponent>,
        tags_key: String,
    },
    /// Explicit weighted points; weights are normalized on use.
    Points { points: Vec<WeightedPoint> },
}

/// Every subset of `0..arity` with at most `max` elements, the empty set
/// first, then by size and lexicographically.
pub fn all_target_sets(arity: usize, max: usize) -> Vec<BTreeSet<usize>> {
    std::iter::once(BTreeSet::new())
        .chain(
            crate::factor::subsets_up_to(arity, max)
                .into_iter()
                .map(|s| s.into_iter().collect()),
        )
        .collect()
}

impl Context {
    pub fn r2i(input: Instance, references: Dataset, target_sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        check_swap_context(&input, &references, &target_sets)?;
        Ok(Context::R2I {
            input,
            references,
            target_sets,
        })
    }

    pub fn i2r(input: Instance, references: Dataset, target_sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        check_swap_context(&input, &references, &target_sets)?;
        Ok(Context::I2R {
            input,
            references,
            target_sets,
        })
    }

    pub fn i2r_causal(
        input: Instance,
        scm: Scm,
        interventions: Vec<Assignment>,
        samples_per_intervention: usize,
    ) -> Result<Self> {
        if input.len() != scm.arity() {
            return Err(Error::ArityMismatch {
                expected: scm.arity(),
                got: input.len(),
            });
        }
        if interventions.is_empty() {
            return Err(Error::InvalidContext("causal context needs at least one intervention".into()));
        }
        for a in &interventions {
            scm.check_assignment(a)?;
        }
        Ok(Context::I2RCausal {
            input,
            scm,
            interventions,
            samples_per_intervention: samples_per_intervention.max(1),
        })
    }

    pub fn mixture(components: Vec<MixtureComponent>, tags_key: impl Into<String>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidContext("mixture has no components".into()));
        }
        if components.iter().any(|c| !(c.weight > 0.0 && c.weight.is_finite())) {
            return Err(Error::InvalidContext("mixture weights must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidContext(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Context::Mixture {
            components,
            tags_key: tags_key.into(),
        })
    }

    pub fn points(points: Vec<WeightedPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidContext("point context is empty".into()));
        }
        if points.iter().any(|p| p.weight <= BigRational::zero()) {
            return Err(Error::InvalidContext("point weights must be positive".into()));
        }
        Ok(Context::Points { points })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Context::R2I { .. } => "r2i",
            Context::I2R { .. } => "i2r",
            Context::I2RCausal { .. } => "i2r-causal",
            Context::Mixture { .. } => "mixture",
            Context::Points { .. } => "points",
        }
    }

    pub fn input(&self) -> Option<&Instance> {
        match self {
            Context::R2I { input, .. } | Context::I2R { input, .. } | Context::I2RCausal { input, .. } => Some(input),
            _ => None,
        }
    }

    pub fn schema(&self) -> Option<&FeatureSchema> {
        match self {
            Context::R2I { references, .. } | Context::I2R { references, .. } => Some(references.schema()),
            Context::I2RCausal { scm, .. } => Some(scm.schema()),
            Context::Mixture { components, .. } => components.iter().find_map(|c| c.context.schema()),
            Context::Points { .. } => None,
        }
    }

    pub fn is_enumerable(&self) -> bool {
        match self {
            Context::I2RCausal { .. } => false,
            Context::Mixture { components, .. } => components.iter().all(|c| c.context.is_enumerable()),
            _ => true,
        }
    }

    /// Default number of conditional samples, when the context suggests one.
    pub fn default_sample_count(&self) -> Option<usize> {
        match self {
            Context::I2RCausal {
                samples_per_intervention,
                ..
            } => Some(*samples_per_intervention),
            Context::Mixture { components, .. } => components.iter().find_map(|c| c.context.default_sample_count()),
            _ => None,
        }
    }

    pub fn materialize(&self, mode: Materialize) -> Result<Vec<WeightedPoint>> {
        match mode {
            Materialize::Enumerate => self.enumerate(),
            Materialize::Sample { n, seed } => {
                if n == 0 {
                    return Err(Error::BadParameters("sample size must be at least 1".into()));
                }
                let w = rational::frac(1, n as u64);
                Ok(self
                    .sample(n, seed)?
                    .into_iter()
                    .map(|point| WeightedPoint {
                        point,
                        weight: w.clone(),
                    })
                    .collect())
            }
        }
    }

    /// Exact distribution as weighted points; weights sum to one.
    pub fn enumerate(&self) -> Result<Vec<WeightedPoint>> {
        match self {
            Context::R2I {
                input,
                references,
                target_sets,
            } => swap_points(input, references, target_sets, Direction::ReferenceToInput),
            Context::I2R {
                input,
                references,
                target_sets,
            } => swap_points(input, references, target_sets, Direction::InputToReference),
            Context::I2RCausal { .. } => Err(Error::NotEnumerable(
                "causal contexts draw structural noise and are sampled only".into(),
            )),
            Context::Mixture { components, tags_key } => {
                let weights = mixture_weights(components)?;
                let mut out = Vec::new();
                for (comp, w) in components.iter().zip(weights) {
                    for mut wp in comp.context.enumerate()? {
                        wp.weight *= &w;
                        wp.point.aux.tags.insert(tags_key.clone(), comp.tag.clone());
                        out.push(wp);
                    }
                }
                Ok(out)
            }
            Context::Points { points } => {
                let total: BigRational = points.iter().map(|p| p.weight.clone()).sum();
                Ok(points
                    .iter()
                    .map(|p| WeightedPoint {
                        point: p.point.clone(),
                        weight: &p.weight / &total,
                    })
                    .collect())
            }
        }
    }

    /// `n` independent draws; identical `(n, seed)` give identical sequences.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<AugmentedPoint>> {
        let sampler = Sampler::new(self)?;
        let mut rng = rng_for(seed, 0);
        (0..n).map(|_| sampler.draw(&mut rng)).collect()
    }

    /// `n` points distributed as the context conditioned on `c`. Target-set
    /// factors on R2I/I2R contexts are generated directly by fixing the
    /// target set; every other factor goes through rejection sampling.
    pub fn sample_conditional(&self, c: &Factor, n: usize, seed: u64) -> Result<Vec<AugmentedPoint>> {
        if let Some(direct) = self.direct_target_sets(c) {
            let sets = direct?;
            let (input, refs, dir) = self.swap_parts().expect("direct path implies swap context");
            let mut rng = rng_for(seed, 0);
            return Ok((0..n)
                .map(|_| {
                    let s = sets[rng.random_range(0..sets.len())];
                    let r = &refs.rows()[rng.random_range(0..refs.len())];
                    swap_point(input, r, s, dir)
                })
                .collect());
        }
        self.sample_conditional_rejection(c, n, seed)
    }

    /// Conditional sampling by rejection: draws from the context and keeps
    /// the points satisfying `c`.
    pub fn sample_conditional_rejection(&self, c: &Factor, n: usize, seed: u64) -> Result<Vec<AugmentedPoint>> {
        self.sample_where(|z| c.evaluate(z), n, seed)
            .map_err(|e| match e {
                Error::ZeroSupport(_) => Error::ZeroSupport(c.to_string()),
                e => e,
            })
    }

    /// Rejection sampling for an arbitrary event.
    pub fn sample_where<F>(&self, mut event: F, n: usize, seed: u64) -> Result<Vec<AugmentedPoint>>
    where
        F: FnMut(&AugmentedPoint) -> Result<bool>,
    {
        let sampler = Sampler::new(self)?;
        let mut rng = rng_for(seed, 0);
        let budget = REJECTION_BUDGET.saturating_mul(n.max(1));
        let mut out = Vec::with_capacity(n);
        let mut draws = 0usize;
        while out.len() < n {
            if draws == budget {
                return Err(Error::ZeroSupport(format!(
                    "no point satisfied the event within {budget} draws"
                )));
            }
            draws += 1;
            let z = sampler.draw(&mut rng)?;
            if event(&z)? {
                out.push(z);
            }
        }
        Ok(out)
    }

    /// Exact conditional distribution given `c`, generated directly for
    /// target-set factors on R2I/I2R contexts.
    pub fn enumerate_conditional(&self, c: &Factor) -> Result<Vec<WeightedPoint>> {
        if let Some(direct) = self.direct_target_sets(c) {
            let sets: Vec<BTreeSet<usize>> = direct?.into_iter().cloned().collect();
            let (input, refs, dir) = self.swap_parts().expect("direct path implies swap context");
            return swap_points(input, refs, &sets, dir);
        }
        self.enumerate_filtered(c)
    }

    /// Exact conditional distribution by filtering the full enumeration and
    /// renormalizing.
    pub fn enumerate_filtered(&self, c: &Factor) -> Result<Vec<WeightedPoint>> {
        let mut kept = Vec::new();
        for wp in self.enumerate()? {
            if c.evaluate(&wp.point)? {
                kept.push(wp);
            }
        }
        let total: BigRational = kept.iter().map(|p| p.weight.clone()).sum();
        if total.is_zero() {
            return Err(Error::ZeroSupport(c.to_string()));
        }
        for wp in &mut kept {
            wp.weight = &wp.weight / &total;
        }
        Ok(kept)
    }

    fn swap_parts(&self) -> Option<(&Instance, &Dataset, Direction)> {
        match self {
            Context::R2I { input, references, .. } => Some((input, references, Direction::ReferenceToInput)),
            Context::I2R { input, references, .. } => Some((input, references, Direction::InputToReference)),
            _ => None,
        }
    }

    /// Target sets matching a target factor, when direct generation applies.
    fn direct_target_sets(&self, c: &Factor) -> Option<Result<Vec<&BTreeSet<usize>>>> {
        let (Context::R2I { target_sets, references, .. } | Context::I2R { target_sets, references, .. }) = self else {
            return None;
        };
        let Factor::InterventionTargets { targets, containment } = c else {
            return None;
        };
        if references.is_empty() {
            return Some(Err(Error::EmptyReferencePool));
        }
        if let Some(&i) = targets.iter().next_back() {
            if i >= references.schema().arity() {
                return Some(Err(Error::SchemaMismatch(format!("feature {i} not in schema"))));
            }
        }
        let sets: Vec<&BTreeSet<usize>> = target_sets
            .iter()
            .filter(|s| if *containment { targets.is_subset(s) } else { *s == targets })
            .collect();
        if sets.is_empty() {
            return Some(Err(Error::ZeroSupport(c.to_string())));
        }
        Some(Ok(sets))
    }
}

fn check_swap_context(input: &Instance, references: &Dataset, target_sets: &[BTreeSet<usize>]) -> Result<()> {
    let arity = references.schema().arity();
    if input.len() != arity {
        return Err(Error::ArityMismatch {
            expected: arity,
            got: input.len(),
        });
    }
    if target_sets.is_empty() {
        return Err(Error::InvalidContext("target set list is empty".into()));
    }
    for s in target_sets {
        if let Some(&i) = s.iter().next_back() {
            if i >= arity {
                return Err(Error::IndexOutOfBounds { index: i, arity });
            }
        }
    }
    Ok(())
}

fn mixture_weights(components: &[MixtureComponent]) -> Result<Vec<BigRational>> {
    let exact: Vec<BigRational> = components
        .iter()
        .map(|c| rational::from_f64(c.weight).ok_or_else(|| Error::InvalidContext("non-finite weight".into())))
        .collect::<Result<_>>()?;
    let total: BigRational = exact.iter().cloned().sum();
    Ok(exact.into_iter().map(|w| w / &total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    /// Input values written into the reference on the target set.
    ReferenceToInput,
    /// Reference values written into the input on the target set.
    InputToReference,
}

fn swap_point(input: &Instance, reference: &Instance, targets: &BTreeSet<usize>, dir: Direction) -> AugmentedPoint {
    let (base, donor) = match dir {
        Direction::ReferenceToInput => (reference, input),
        Direction::InputToReference => (input, reference),
    };
    let mut x = base.clone();
    for &i in targets {
        x.0[i] = donor.0[i];
    }
    AugmentedPoint::new(x, Aux { targets: Some(targets.clone()), tags: BTreeMap::new() })
}

fn swap_points(
    input: &Instance,
    references: &Dataset,
    target_sets: &[BTreeSet<usize>],
    dir: Direction,
) -> Result<Vec<WeightedPoint>> {
    if references.is_empty() {
        return Err(Error::EmptyReferencePool);
    }
    let w = rational::frac(1, (target_sets.len() * references.len()) as u64);
    let mut out = Vec::with_capacity(target_sets.len() * references.len());
    for s in target_sets {
        for r in references.rows() {
            out.push(WeightedPoint {
                point: swap_point(input, r, s, dir),
                weight: w.clone(),
            });
        }
    }
    Ok(out)
}

/// Prepared sampler: cumulative weights are computed once per context.
enum Sampler<'a> {
    Swap {
        input: &'a Instance,
        references: &'a Dataset,
        target_sets: &'a [BTreeSet<usize>],
        dir: Direction,
    },
    Causal {
        input: &'a Instance,
        scm: &'a Scm,
        interventions: &'a [Assignment],
    },
    Mixture {
        cumulative: Vec<f64>,
        parts: Vec<(&'a str, Sampler<'a>)>,
        tags_key: &'a str,
    },
    Points {
        cumulative: Vec<f64>,
        points: &'a [WeightedPoint],
    },
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    let total = acc;
    for v in &mut out {
        *v /= total;
    }
    out
}

fn pick(cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

impl<'a> Sampler<'a> {
    fn new(ctx: &'a Context) -> Result<Self> {
        Ok(match ctx {
            Context::R2I {
                input,
                references,
                target_sets,
            }
            | Context::I2R {
                input,
                references,
                target_sets,
            } => {
                if references.is_empty() {
                    return Err(Error::EmptyReferencePool);
                }
                let dir = if matches!(ctx, Context::R2I { .. }) {
                    Direction::ReferenceToInput
                } else {
                    Direction::InputToReference
                };
                Sampler::Swap {
                    input,
                    references,
                    target_sets,
                    dir,
                }
            }
            Context::I2RCausal {
                input,
                scm,
                interventions,
                ..
            } => Sampler::Causal {
                input,
                scm,
                interventions,
            },
            Context::Mixture { components, tags_key } => Sampler::Mixture {
                cumulative: cumulative(components.iter().map(|c| c.weight)),
                parts: components
                    .iter()
                    .map(|c| Ok((c.tag.as_str(), Sampler::new(&c.context)?)))
                    .collect::<Result<_>>()?,
                tags_key,
            },
            Context::Points { points } => Sampler::Points {
                cumulative: cumulative(points.iter().map(WeightedPoint::weight_f64)),
                points,
            },
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<AugmentedPoint> {
        Ok(match self {
            Sampler::Swap {
                input,
                references,
                target_sets,
                dir,
            } => {
                let s = &target_sets[rng.random_range(0..target_sets.len())];
                let r = &references.rows()[rng.random_range(0..references.len())];
                swap_point(input, r, s, *dir)
            }
            Sampler::Causal {
                input,
                scm,
                interventions,
            } => {
                let a = &interventions[rng.random_range(0..interventions.len())];
                let x = scm.sample_from(a, Some(input), rng)?;
                AugmentedPoint::new(x, Aux::with_targets(a.keys().copied()))
            }
            Sampler::Mixture {
                cumulative,
                parts,
                tags_key,
            } => {
                let (tag, part) = &parts[pick(cumulative, rng)];
                let mut z = part.draw(rng)?;
                z.aux.tags.insert(tags_key.to_string(), tag.to_string());
                z
            }
            Sampler::Points { cumulative, points } => points[pick(cumulative, rng)].point.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Structural causal models

/// Structural equation of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum Equation {
    /// `intercept + sum(coef * parent) + sigma * N(0, 1)`; coefficients are
    /// aligned with the node's parent list.
    LinearGaussian { coef: Vec<f64>, intercept: f64, sigma: f64 },
    /// One probability row per parent level combination, first parent most
    /// significant.
    Table { cpt: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EquationSpec {
    Linear {
        #[serde(default)]
        coef: BTreeMap<String, f64>,
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        sigma: f64,
    },
    Table {
        cpt: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<String>>,
    },
}

/// JSON form of a structural causal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub parents: BTreeMap<String, Vec<String>>,
    pub equations: BTreeMap<String, EquationSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scm {
    schema: FeatureSchema,
    parents: Vec<Vec<usize>>,
    equations: Vec<Equation>,
    order: Vec<usize>,
}

impl Scm {
    pub fn from_json(text: &str, schema: Option<&FeatureSchema>) -> Result<Self> {
        let spec: ScmSpec = serde_json::from_str(text)?;
        Scm::from_spec(&spec, schema)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>, schema: Option<&FeatureSchema>) -> Result<Self> {
        Scm::from_json(&std::fs::read_to_string(path)?, schema)
    }

    /// Builds a model whose nodes follow `schema` order. Without a schema,
    /// table nodes become categorical features (levels `"0".."k-1"` unless
    /// named) and linear nodes unbounded continuous features.
    pub fn from_spec(spec: &ScmSpec, schema: Option<&FeatureSchema>) -> Result<Self> {
        let schema = match schema {
            Some(s) => {
                let names: Vec<&str> = s.features().iter().map(|f| f.name.as_str()).collect();
                if names != spec.nodes.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(Error::InvalidScm("nodes must match the schema's features in order".into()));
                }
                s.clone()
            }
            None => {
                let mut features = Vec::with_capacity(spec.nodes.len());
                for name in &spec.nodes {
                    let eq = spec
                        .equations
                        .get(name)
                        .ok_or_else(|| Error::InvalidScm(format!("node `{name}` has no equation")))?;
                    features.push(match eq {
                        EquationSpec::Linear { .. } => FeatureSpec::continuous(name, f64::MIN, f64::MAX),
                        EquationSpec::Table { cpt, levels } => {
                            let k = cpt.first().map_or(0, Vec::len);
                            let levels = levels.clone().unwrap_or_else(|| (0..k).map(|i| i.to_string()).collect());
                            FeatureSpec::categorical(name, levels)
                        }
                    });
                }
                FeatureSchema::new(features)?
            }
        };
        let index = |name: &str| {
            schema
                .index_of(name)
                .ok_or_else(|| Error::InvalidScm(format!("unknown node `{name}`")))
        };
        for name in spec.parents.keys().chain(spec.equations.keys()) {
            index(name)?;
        }
        let mut parents = vec![Vec::new(); schema.arity()];
        for (child, ps) in &spec.parents {
            let c = index(child)?;
            for p in ps {
                let p = index(p)?;
                if parents[c].contains(&p) {
                    return Err(Error::InvalidScm(format!("duplicate parent of `{child}`")));
                }
                parents[c].push(p);
            }
        }
        let mut equations = Vec::with_capacity(schema.arity());
        for (i, name) in spec.nodes.iter().enumerate() {
            let eq = spec
                .equations
                .get(name)
                .ok_or_else(|| Error::InvalidScm(format!("node `{name}` has no equation")))?;
            equations.push(match eq {
                EquationSpec::Linear { coef, intercept, sigma } => {
                    for k in coef.keys() {
                        if !parents[i].contains(&index(k)?) {
                            return Err(Error::InvalidScm(format!("`{name}` has a coefficient for non-parent `{k}`")));
                        }
                    }
                    Equation::LinearGaussian {
                        coef: parents[i]
                            .iter()
                            .map(|&p| coef.get(&schema.features()[p].name).copied().unwrap_or(0.0))
                            .collect(),
                        intercept: *intercept,
                        sigma: *sigma,
                    }
                }
                EquationSpec::Table { cpt, .. } => Equation::Table { cpt: cpt.clone() },
            });
        }
        Scm::new(schema, parents, equations)
    }

    pub fn new(schema: FeatureSchema, parents: Vec<Vec<usize>>, equations: Vec<Equation>) -> Result<Self> {
        let n = schema.arity();
        if parents.len() != n || equations.len() != n {
            return Err(Error::InvalidScm("one parent list and equation per node".into()));
        }
        let order = topological_order(&parents)?;
        for (i, eq) in equations.iter().enumerate() {
            let spec = &schema.features()[i];
            match (eq, &spec.kind) {
                (Equation::LinearGaussian { coef, intercept, sigma }, FeatureKind::Continuous { .. }) => {
                    if coef.len() != parents[i].len() {
                        return Err(Error::InvalidScm(format!("`{}`: one coefficient per parent", spec.name)));
                    }
                    if !(sigma.is_finite() && *sigma >= 0.0 && intercept.is_finite()) {
                        return Err(Error::InvalidScm(format!("`{}`: bad intercept or noise", spec.name)));
                    }
                }
                (Equation::LinearGaussian { .. }, FeatureKind::Categorical { .. }) => {
                    return Err(Error::InvalidScm(format!(
                        "`{}`: linear equations need a continuous node",
                        spec.name
                    )));
                }
                (Equation::Table { cpt }, FeatureKind::Categorical { levels }) => {
                    let mut rows = 1usize;
                    for &p in &parents[i] {
                        match &schema.features()[p].kind {
                            FeatureKind::Categorical { levels } => rows *= levels.len(),
                            FeatureKind::Continuous { .. } => {
                                return Err(Error::InvalidScm(format!(
                                    "`{}`: table nodes need categorical parents",
                                    spec.name
                                )));
                            }
                        }
                    }
                    if cpt.len() != rows {
                        return Err(Error::InvalidScm(format!(
                            "`{}`: {} table rows, expected {rows}",
                            spec.name,
                            cpt.len()
                        )));
                    }
                    for row in cpt {
                        if row.len() != levels.len() || row.iter().any(|p| p.is_nan() || *p < 0.0) {
                            return Err(Error::InvalidScm(format!("`{}`: bad probability row", spec.name)));
                        }
                        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                            return Err(Error::InvalidScm(format!("`{}`: row does not sum to 1", spec.name)));
                        }
                    }
                }
                (Equation::Table { .. }, FeatureKind::Continuous { .. }) => {
                    return Err(Error::InvalidScm(format!(
                        "`{}`: table equations need a categorical node",
                        spec.name
                    )));
                }
            }
        }
        Ok(Scm {
            schema,
            parents,
            equations,
            order,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn arity(&self) -> usize {
        self.schema.arity()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn equation(&self, node: usize) -> &Equation {
        &self.equations[node]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arity()).filter(move |&c| self.parents[c].contains(&node))
    }

    /// Nodes reachable from any of `roots` along directed edges, excluding
    /// the roots themselves unless reachable from another root.
    pub fn descendants(&self, roots: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = roots.into_iter().collect();
        while let Some(v) = stack.pop() {
            for c in self.children(v) {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    pub fn check_assignment(&self, a: &Assignment) -> Result<()> {
        for (&i, &v) in a {
            let spec = self
                .schema
                .features()
                .get(i)
                .ok_or_else(|| Error::BadAssignment(format!("node {i} does not exist")))?;
            let ok = match &spec.kind {
                FeatureKind::Continuous { .. } => v.is_finite(),
                FeatureKind::Categorical { levels } => v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels.len(),
            };
            if !ok {
                return Err(Error::BadAssignment(format!("{v} is not a value of `{}`", spec.name)));
            }
        }
        Ok(())
    }

    /// Row index of a table node given realized parent values.
    pub fn table_row(&self, node: usize, values: &[f64]) -> usize {
        let mut row = 0usize;
        for &p in &self.parents[node] {
            let k = match &self.schema.features()[p].kind {
                FeatureKind::Categorical { levels } => levels.len(),
                FeatureKind::Continuous { .. } => 1,
            };
            row = row * k + values[p] as usize;
        }
        row
    }

    /// Draws one instance under `do(assignments)`. With a `base`, nodes that
    /// are neither intervened on nor downstream of an intervention keep the
    /// base values.
    pub fn sample_from<R: Rng>(&self, assignments: &Assignment, base: Option<&Instance>, rng: &mut R) -> Result<Instance> {
        self.check_assignment(assignments)?;
        let downstream = base.map(|_| self.descendants(assignments.keys().copied()));
        let mut values = vec![0.0; self.arity()];
        for &i in &self.order {
            values[i] = if let Some(&v) = assignments.get(&i) {
                v
            } else if let (Some(b), Some(d)) = (base, &downstream) {
                if d.contains(&i) {
                    self.draw_node(i, &values, rng)
                } else {
                    b.0[i]
                }
            } else {
                self.draw_node(i, &values, rng)
            };
        }
        Ok(Instance(values))
    }

    fn draw_node<R: Rng>(&self, i: usize, values: &[f64], rng: &mut R) -> f64 {
        match &self.equations[i] {
            Equation::LinearGaussian { coef, intercept, sigma } => {
                let mean = intercept + coef.iter().zip(&self.parents[i]).map(|(c, &p)| c * values[p]).sum::<f64>();
                if *sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + sigma * z
                } else {
                    mean
                }
            }
            Equation::Table { cpt } => {
                let row = &cpt[self.table_row(i, values)];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (level, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return level as f64;
                    }
                }
                // rounding: fall back to the last level with mass
                row.iter().rposition(|&p| p > 0.0).unwrap_or(0) as f64
            }
        }
    }

    /// Exact probability row of a table node as rationals.
    pub(crate) fn table_probabilities(&self, node: usize, values: &[f64]) -> Option<Vec<BigRational>> {
        match &self.equations[node] {
            Equation::Table { cpt } => cpt[self.table_row(node, values)]
                .iter()
                .map(|&p| rational::from_f64(p))
                .collect(),
            Equation::LinearGaussian { .. } => None,
        }
    }
}

/// One interventional draw from `scm` with the given seed.
pub fn scm_sample(scm: &Scm, interventions: &Assignment, seed: u64) -> Result<Instance> {
    scm.sample_from(interventions, None, &mut rng_for(seed, 0))
}

fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for c in 0..n {
            if parents[c].contains(&v) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::CyclicGraph);
    }
    Ok(order)
}

/// Uniform weight over a finite set of `count` points.
pub fn uniform_weight(count: usize) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(count))
}
