//! Probability of sufficiency and necessity, and the search for
//! τ-minimal sufficient factors.
//!
//! For a basis `<f, D, C, ⪯>` and outcome `y`:
//!
//! * `PS(c, y) = P(f(z) = y | c(z) = 1)`, and for a factor set the
//!   conditioning event is the disjunction of its members.
//! * `PN(C, y) = P(c_1(z) ∨ ... ∨ c_k(z) | f(z) = y)`.
//! * `c` is τ-minimal iff `PS(c, y) >= τ` and no `c' ≺ c` has
//!   `PS(c', y) >= τ`.
//!
//! Exact estimation enumerates the context with rational weights; Monte
//! Carlo estimation draws conditional samples with a seed derived from the
//! run seed and the factor itself.

use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::{Mutex, OnceLock};

use fnv::FnvHasher;
use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::context::{AugmentedPoint, Context};
use crate::error::{Error, Result};
use crate::factor::{Factor, FactorSpace};
use crate::model::Model;
use crate::order::{toposort, upward_closure, PartialOrder};
use crate::rational::{self, WeightClasses};

/// The tuple `<f, D, C, ⪯>`.
#[derive(Debug, Clone)]
pub struct Basis {
    pub model: Model,
    pub context: Context,
    pub space: FactorSpace,
    pub order: PartialOrder,
}

impl Basis {
    pub fn new(model: Model, context: Context, space: FactorSpace, order: PartialOrder) -> Result<Self> {
        if let Some(schema) = context.schema() {
            space.validate(schema)?;
            if let Some(n) = model.arity() {
                if n != schema.arity() {
                    return Err(Error::ArityMismatch {
                        expected: n,
                        got: schema.arity(),
                    });
                }
            }
        }
        Ok(Basis {
            model,
            context,
            space,
            order,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EstimationConfig {
    Exact,
    /// `n` samples per estimate. With `alpha`, a factor is accepted only
    /// when the one-sided binomial test rejects `PS < τ` at level `alpha`.
    MonteCarlo {
        n: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
}

impl EstimationConfig {
    pub fn monte_carlo(n: usize, seed: u64) -> Self {
        EstimationConfig::MonteCarlo { n, seed, alpha: None }
    }

    fn validate(&self) -> Result<()> {
        if let EstimationConfig::MonteCarlo { n, alpha, .. } = self {
            if *n == 0 {
                return Err(Error::BadParameters("Monte Carlo needs n >= 1".into()));
            }
            if let Some(a) = alpha {
                if !(*a > 0.0 && *a < 1.0) {
                    return Err(Error::BadParameters(format!("alpha {a} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// A sufficiency estimate with the counts behind it. In exact mode the
/// counts are numbers of enumerated points rather than samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PsEstimate {
    pub ps: f64,
    pub satisfying: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Candidate {
    pub factor: Factor,
    pub ps: f64,
    pub sample_counts: (u64, u64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkippedFactor {
    pub factor: Factor,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunEcho {
    pub context: String,
    pub order: String,
    pub estimation: EstimationConfig,
    pub space_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExplanationReport {
    pub outcome: u8,
    pub tau: f64,
    pub candidates: Vec<Candidate>,
    pub skipped: Vec<SkippedFactor>,
    /// Cumulative necessity of the candidates' upward closure; 0 when there
    /// are no candidates.
    #[serde(rename = "cumulativePN")]
    pub cumulative_pn: f64,
    pub no_candidates: bool,
    pub config: RunEcho,
}

impl ExplanationReport {
    pub fn candidate_factors(&self) -> Vec<Factor> {
        self.candidates.iter().map(|c| c.factor.clone()).collect()
    }
}

/// Enumerated context with cached labels.
struct Table {
    points: Vec<AugmentedPoint>,
    labels: Vec<u8>,
    class: Vec<u32>,
    classes: WeightClasses,
}

impl Table {
    fn build(basis: &Basis) -> Result<Table> {
        let weighted = basis.context.enumerate()?;
        let mut classes = WeightClasses::default();
        let class = weighted.iter().map(|wp| classes.intern(&wp.weight)).collect();
        let points: Vec<AugmentedPoint> = weighted.into_iter().map(|wp| wp.point).collect();
        let labels = predict_points(&basis.model, &points)?;
        Ok(Table {
            points,
            labels,
            class,
            classes,
        })
    }

    /// Weighted mass of `event` and of `event ∧ f = y`, with point counts.
    fn masses<F>(&self, y: u8, event: F) -> Result<(BigRational, BigRational, u64, u64)>
    where
        F: Fn(&AugmentedPoint) -> Result<bool>,
    {
        let k = self.classes.len();
        let mut all = vec![0u64; k];
        let mut hit = vec![0u64; k];
        for (i, z) in self.points.iter().enumerate() {
            if event(z)? {
                let cl = self.class[i] as usize;
                all[cl] += 1;
                if self.labels[i] == y {
                    hit[cl] += 1;
                }
            }
        }
        let (n_all, n_hit) = (all.iter().sum(), hit.iter().sum());
        Ok((self.classes.total(&hit), self.classes.total(&all), n_hit, n_all))
    }
}

fn predict_points(model: &Model, points: &[AugmentedPoint]) -> Result<Vec<u8>> {
    let xs: Vec<_> = points.iter().map(|z| z.instance.clone()).collect();
    if matches!(model, Model::External(_)) || xs.len() < 4096 {
        return model.predict_batch(&xs);
    }
    let chunks: Vec<Vec<u8>> = xs
        .par_chunks(1024)
        .map(|chunk| model.predict_batch(chunk))
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Stable per-factor seed so that an estimate does not depend on where the
/// factor is visited.
fn factor_seed(seed: u64, salt: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write(salt.as_bytes());
    h.finish()
}

fn set_salt(factors: &[Factor]) -> String {
    let parts: Vec<String> = factors.iter().map(Factor::canonical).collect();
    format!("any[{}]", parts.join(","))
}

/// Caches the enumerated context (exact mode) and sufficiency estimates for
/// repeated queries against one basis.
pub struct Estimator<'a> {
    basis: &'a Basis,
    cfg: EstimationConfig,
    table: OnceLock<std::result::Result<Table, String>>,
    ps_cache: Mutex<HashMap<(String, u8), PsEstimate>>,
}

impl<'a> Estimator<'a> {
    pub fn new(basis: &'a Basis, cfg: EstimationConfig) -> Result<Self> {
        cfg.validate()?;
        if matches!(cfg, EstimationConfig::Exact) && !basis.context.is_enumerable() {
            return Err(Error::NotEnumerable(format!(
                "{} context needs Monte Carlo estimation",
                basis.context.kind()
            )));
        }
        Ok(Estimator {
            basis,
            cfg,
            table: OnceLock::new(),
            ps_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> EstimationConfig {
        self.cfg
    }

    fn table(&self) -> Result<&Table> {
        // errors are replayed as text; the first call returns the real error
        let mut first_err = None;
        let t = self.table.get_or_init(|| {
            Table::build(self.basis).map_err(|e| {
                let msg = e.to_string();
                first_err = Some(e);
                msg
            })
        });
        if let Some(e) = first_err {
            return Err(e);
        }
        t.as_ref().map_err(|m| Error::InvalidContext(m.clone()))
    }

    /// `PS(c, y)` with the counts behind it.
    pub fn ps(&self, c: &Factor, y: u8) -> Result<PsEstimate> {
        let key = (c.canonical(), y);
        if let Some(hit) = self.ps_cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(*hit);
        }
        let est = match self.cfg {
            EstimationConfig::Exact => {
                let (hit, all, n_hit, n_all) = self.table()?.masses(y, |z| c.evaluate(z))?;
                ratio(hit, all, n_hit, n_all).ok_or_else(|| Error::ZeroSupport(c.to_string()))?
            }
            EstimationConfig::MonteCarlo { n, seed, .. } => {
                let pts = self
                    .basis
                    .context
                    .sample_conditional(c, n, factor_seed(seed, &key.0))?;
                self.mc_estimate(&pts, y)?
            }
        };
        self.ps_cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, est);
        Ok(est)
    }

    /// `PS` of the disjunction of `factors`.
    pub fn ps_set(&self, factors: &[Factor], y: u8) -> Result<PsEstimate> {
        if factors.is_empty() {
            return Err(Error::BadParameters("factor set must be nonempty".into()));
        }
        if let [single] = factors {
            return self.ps(single, y);
        }
        let any = |z: &AugmentedPoint| any_holds(factors, z);
        match self.cfg {
            EstimationConfig::Exact => {
                let (hit, all, n_hit, n_all) = self.table()?.masses(y, any)?;
                ratio(hit, all, n_hit, n_all).ok_or_else(|| Error::ZeroSupport(set_salt(factors)))
            }
            EstimationConfig::MonteCarlo { n, seed, .. } => {
                let salt = set_salt(factors);
                let pts = self
                    .basis
                    .context
                    .sample_where(any, n, factor_seed(seed, &salt))
                    .map_err(|e| match e {
                        Error::ZeroSupport(_) => Error::ZeroSupport(salt.clone()),
                        e => e,
                    })?;
                self.mc_estimate(&pts, y)
            }
        }
    }

    fn mc_estimate(&self, pts: &[AugmentedPoint], y: u8) -> Result<PsEstimate> {
        let labels = predict_points(&self.basis.model, pts)?;
        let hit = labels.iter().filter(|&&l| l == y).count() as u64;
        let total = labels.len() as u64;
        Ok(PsEstimate {
            ps: hit as f64 / total as f64,
            satisfying: hit,
            total,
        })
    }

    /// `P(f = y)` under the context.
    pub fn outcome_probability(&self, y: u8) -> Result<f64> {
        match self.cfg {
            EstimationConfig::Exact => {
                let t = self.table()?;
                let (hit, all, _, _) = t.masses(y, |_| Ok(true))?;
                Ok(rational::to_f64(&(hit / all)))
            }
            EstimationConfig::MonteCarlo { n, seed, .. } => {
                let pts = self.basis.context.sample(n, factor_seed(seed, "outcome"))?;
                Ok(self.mc_estimate(&pts, y)?.ps)
            }
        }
    }

    fn necessity_factors(&self, factors: &[Factor], upward_closure_flag: bool) -> Vec<Factor> {
        if !upward_closure_flag {
            return factors.to_vec();
        }
        let mut all = upward_closure(&self.basis.space, factors, &self.basis.order);
        // selected factors outside the space still count
        for c in factors {
            if !all.contains(c) {
                all.push(c.clone());
            }
        }
        all
    }

    /// `PN` of the disjunction of `factors`, after expanding them to their
    /// upward closure in the basis space when `upward_closure_flag` is set.
    pub fn pn(&self, factors: &[Factor], y: u8, upward_closure_flag: bool) -> Result<f64> {
        match self.cfg {
            EstimationConfig::Exact => Ok(rational::to_f64(&self.pn_exact(factors, y, upward_closure_flag)?)),
            EstimationConfig::MonteCarlo { n, seed, .. } => {
                let factors = self.necessity_factors(factors, upward_closure_flag);
                let pts = self.basis.context.sample(n, factor_seed(seed, "necessity"))?;
                let labels = predict_points(&self.basis.model, &pts)?;
                let mut n_y = 0u64;
                let mut n_cy = 0u64;
                for (z, &l) in pts.iter().zip(&labels) {
                    if l == y {
                        n_y += 1;
                        if any_holds(&factors, z)? {
                            n_cy += 1;
                        }
                    }
                }
                if n_y == 0 {
                    return Err(Error::ZeroOutcomeProbability(y));
                }
                Ok(n_cy as f64 / n_y as f64)
            }
        }
    }

    /// Exact `PS(c, y)` as a rational; enumerated contexts only.
    pub fn ps_exact(&self, c: &Factor, y: u8) -> Result<BigRational> {
        self.require_exact()?;
        let (hit, all, _, _) = self.table()?.masses(y, |z| c.evaluate(z))?;
        if all.is_zero() {
            return Err(Error::ZeroSupport(c.to_string()));
        }
        Ok(hit / all)
    }

    /// Exact `PN` as a rational; enumerated contexts only.
    pub fn pn_exact(&self, factors: &[Factor], y: u8, upward_closure_flag: bool) -> Result<BigRational> {
        self.require_exact()?;
        let factors = self.necessity_factors(factors, upward_closure_flag);
        let t = self.table()?;
        let k = t.classes.len();
        let mut outcome = vec![0u64; k];
        let mut both = vec![0u64; k];
        for (i, z) in t.points.iter().enumerate() {
            if t.labels[i] != y {
                continue;
            }
            let cl = t.class[i] as usize;
            outcome[cl] += 1;
            if any_holds(&factors, z)? {
                both[cl] += 1;
            }
        }
        let denom = t.classes.total(&outcome);
        if denom.is_zero() {
            return Err(Error::ZeroOutcomeProbability(y));
        }
        Ok(t.classes.total(&both) / denom)
    }

    fn require_exact(&self) -> Result<()> {
        match self.cfg {
            EstimationConfig::Exact => Ok(()),
            EstimationConfig::MonteCarlo { .. } => Err(Error::BadParameters("exact values need exact estimation".into())),
        }
    }

    /// Sufficiency estimates for every factor of the space, in parallel;
    /// exact mode only benefits since Monte Carlo estimates are lazy.
    pub fn precompute(&self, y: u8) -> Result<()> {
        if matches!(self.cfg, EstimationConfig::Exact) {
            self.table()?;
            self.basis
                .space
                .factors()
                .par_iter()
                .map(|c| match self.ps(c, y) {
                    Ok(_) | Err(Error::ZeroSupport(_)) => Ok(()),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<()>>>()?;
        }
        Ok(())
    }

    /// Searches the space in topological order for τ-minimal factors.
    pub fn minimal_sufficient_factors(&self, y: u8, tau: f64) -> Result<ExplanationReport> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::BadParameters(format!("tau {tau} outside [0, 1]")));
        }
        check_outcome(y)?;
        let basis = self.basis;
        let sorted = toposort(&basis.space, &basis.order)?;
        self.precompute(y)?;
        let alpha = match self.cfg {
            EstimationConfig::MonteCarlo { alpha: Some(a), .. } if tau > 0.0 && tau < 1.0 => Some(a),
            _ => None,
        };
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut skipped = Vec::new();
        for c in sorted {
            if candidates.iter().any(|cand| basis.order.leq(&cand.factor, &c)) {
                continue;
            }
            let est = match self.ps(&c, y) {
                Ok(e) => e,
                Err(Error::ZeroSupport(_)) => {
                    skipped.push(SkippedFactor {
                        factor: c,
                        reason: "zero support under the context".into(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (accept, p_value) = match alpha {
                Some(a) => {
                    let t = binomial_tau_test(est.satisfying, est.total, tau, a)?;
                    (t.reject, Some(t.p_value))
                }
                None => (est.ps >= tau, None),
            };
            if accept {
                candidates.push(Candidate {
                    factor: c,
                    ps: est.ps,
                    sample_counts: (est.satisfying, est.total),
                    p_value,
                });
            }
        }
        let no_candidates = candidates.is_empty();
        let cumulative_pn = if no_candidates {
            0.0
        } else {
            let selected: Vec<Factor> = candidates.iter().map(|c| c.factor.clone()).collect();
            self.pn(&selected, y, true)?
        };
        Ok(ExplanationReport {
            outcome: y,
            tau,
            candidates,
            skipped,
            cumulative_pn,
            no_candidates,
            config: RunEcho {
                context: basis.context.kind().into(),
                order: basis.order.name(),
                estimation: self.cfg,
                space_size: basis.space.len(),
            },
        })
    }
}

fn any_holds(factors: &[Factor], z: &AugmentedPoint) -> Result<bool> {
    for c in factors {
        if c.evaluate(z)? {
            return Ok(true);
        }
    }
    Ok(false)
}

fn ratio(hit: BigRational, all: BigRational, n_hit: u64, n_all: u64) -> Option<PsEstimate> {
    if all.is_zero() {
        return None;
    }
    Some(PsEstimate {
        ps: rational::to_f64(&(hit / all)),
        satisfying: n_hit,
        total: n_all,
    })
}

fn check_outcome(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::BadParameters(format!("outcome {y} is not 0 or 1")));
    }
    Ok(())
}

pub fn prob_sufficiency(basis: &Basis, c: &Factor, y: u8, cfg: EstimationConfig) -> Result<f64> {
    check_outcome(y)?;
    Ok(Estimator::new(basis, cfg)?.ps(c, y)?.ps)
}

pub fn prob_sufficiency_set(basis: &Basis, factors: &[Factor], y: u8, cfg: EstimationConfig) -> Result<f64> {
    check_outcome(y)?;
    Ok(Estimator::new(basis, cfg)?.ps_set(factors, y)?.ps)
}

/// `PN` of a factor list; an empty list has necessity 0 (the empty
/// disjunction never holds).
pub fn prob_necessity(
    basis: &Basis,
    factors: &[Factor],
    y: u8,
    upward_closure_flag: bool,
    cfg: EstimationConfig,
) -> Result<f64> {
    check_outcome(y)?;
    Estimator::new(basis, cfg)?.pn(factors, y, upward_closure_flag)
}

pub fn minimal_sufficient_factors(basis: &Basis, y: u8, tau: f64, cfg: EstimationConfig) -> Result<ExplanationReport> {
    Estimator::new(basis, cfg)?.minimal_sufficient_factors(y, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BinomialTest {
    pub p_value: f64,
    pub reject: bool,
}

/// One-sided exact binomial test of `H0: PS < τ` against `H1: PS >= τ`.
/// The p-value is `P(K >= successes)` for `K ~ Binomial(trials, τ)`.
pub fn binomial_tau_test(successes: u64, trials: u64, tau: f64, alpha: f64) -> Result<BinomialTest> {
    if successes > trials {
        return Err(Error::BadParameters(format!("{successes} successes in {trials} trials")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::BadParameters(format!("tau {tau} outside (0, 1)")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadParameters(format!("alpha {alpha} outside (0, 1)")));
    }
    let p_value = binomial_upper_tail(successes, trials, tau)?;
    Ok(BinomialTest {
        p_value,
        reject: p_value <= alpha,
    })
}

fn binomial_upper_tail(k: u64, n: u64, p: f64) -> Result<f64> {
    if k == 0 {
        return Ok(1.0);
    }
    let dist = Binomial::new(p, n).map_err(|e| Error::BadParameters(e.to_string()))?;
    Ok(dist.sf(k - 1).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_all_successes_is_power() {
        let t = binomial_tau_test(100, 100, 0.9, 0.05).unwrap();
        assert!((t.p_value - 0.9f64.powi(100)).abs() <= 1e-12);
        assert!((t.p_value - 2.6561e-5).abs() < 1e-8);
        assert!(t.reject);
    }

    #[test]
    fn binomial_zero_successes_is_sure() {
        let t = binomial_tau_test(0, 10, 0.5, 0.05).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert!(!t.reject);
    }

    #[test]
    fn binomial_parameter_checks() {
        assert!(binomial_tau_test(11, 10, 0.5, 0.05).is_err());
        assert!(binomial_tau_test(1, 10, 0.0, 0.05).is_err());
        assert!(binomial_tau_test(1, 10, 1.0, 0.05).is_err());
        assert!(binomial_tau_test(1, 10, 0.5, 1.0).is_err());
    }

    #[test]
    fn binomial_full_success_decreases_with_trials() {
        let tau = 0.3;
        let mut last = 1.0;
        for n in 1..40 {
            let p = binomial_tau_test(n, n, tau, 0.05).unwrap().p_value;
            assert!((p - tau.powi(n as i32)).abs() <= 1e-12 * p.max(1e-300) + 1e-300);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn factor_seeds_are_stable() {
        assert_eq!(factor_seed(7, "a"), factor_seed(7, "a"));
        assert_ne!(factor_seed(7, "a"), factor_seed(7, "b"));
        assert_ne!(factor_seed(7, "a"), factor_seed(8, "a"));
    }
}
