//! Factors: Boolean predicates over augmented points, and generators for
//! finite factor spaces.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::context::AugmentedPoint;
use crate::data::{Dataset, FeatureSchema, Instance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomOp {
    Eq,
    Ne,
    Le,
    Ge,
}

impl AtomOp {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            AtomOp::Eq => lhs == rhs,
            AtomOp::Ne => lhs != rhs,
            AtomOp::Le => lhs <= rhs,
            AtomOp::Ge => lhs >= rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            AtomOp::Eq => "=",
            AtomOp::Ne => "!=",
            AtomOp::Le => "<=",
            AtomOp::Ge => ">=",
        }
    }
}

/// `x[feature] op value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub feature: usize,
    pub op: AtomOp,
    pub value: f64,
}

impl Atom {
    pub fn new(feature: usize, op: AtomOp, value: f64) -> Self {
        Atom { feature, op, value }
    }

    pub fn eq(feature: usize, value: f64) -> Self {
        Atom::new(feature, AtomOp::Eq, value)
    }

    pub fn holds(&self, x: &Instance) -> Option<bool> {
        x.get(self.feature).map(|v| self.op.holds(v, self.value))
    }

    pub(crate) fn cmp_key(&self, other: &Atom) -> std::cmp::Ordering {
        self.feature
            .cmp(&other.feature)
            .then(self.op.cmp(&other.op))
            .then(self.value.total_cmp(&other.value))
    }
}

impl Eq for Atom {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum Factor {
    /// True iff the point's intervention targets equal `targets`, or contain
    /// them when `containment` is set.
    InterventionTargets { targets: BTreeSet<usize>, containment: bool },
    /// True iff the point's targets are exactly the assigned features and the
    /// instance carries the assigned values.
    FullIntervention {
        #[serde(with = "keyed_by_index")]
        assignments: BTreeMap<usize, f64>,
    },
    /// Conjunction of atoms on the instance; the empty conjunction is true.
    ValuePredicate { atoms: Vec<Atom> },
    AuxTag { key: String, value: String },
    Negation { inner: Box<Factor> },
}

impl Eq for Factor {}

/// Feature-indexed maps as JSON objects with decimal string keys; parsing
/// the keys by hand keeps them readable inside tagged enums.
mod keyed_by_index {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|i| (i, v))
                    .map_err(|_| D::Error::custom(format!("`{k}` is not a feature index")))
            })
            .collect()
    }
}

impl Factor {
    pub fn targets(targets: impl IntoIterator<Item = usize>, containment: bool) -> Self {
        Factor::InterventionTargets {
            targets: targets.into_iter().collect(),
            containment,
        }
    }

    pub fn full(assignments: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Factor::FullIntervention {
            assignments: assignments.into_iter().collect(),
        }
    }

    /// Builds a value predicate with atoms in canonical order, duplicates
    /// removed.
    pub fn predicate(atoms: impl IntoIterator<Item = Atom>) -> Self {
        let mut atoms: Vec<Atom> = atoms.into_iter().collect();
        atoms.sort_by(Atom::cmp_key);
        atoms.dedup();
        Factor::ValuePredicate { atoms }
    }

    pub fn tag(key: impl Into<String>, value: impl Into<String>) -> Self {
        Factor::AuxTag {
            key: key.into(),
            value: value.into(),
        }
    }

    /// Negation that never nests: negating a negation unwraps it.
    pub fn negate(self) -> Self {
        match self {
            Factor::Negation { inner } => *inner,
            other => Factor::Negation { inner: Box::new(other) },
        }
    }

    pub fn evaluate(&self, z: &AugmentedPoint) -> Result<bool> {
        let x = &z.instance;
        let oob = |i: usize| Error::SchemaMismatch(format!("feature {i} not in a {}-feature point", x.len()));
        Ok(match self {
            Factor::InterventionTargets { targets, containment } => {
                if let Some(&i) = targets.iter().next_back() {
                    if i >= x.len() {
                        return Err(oob(i));
                    }
                }
                match &z.aux.targets {
                    None => false,
                    Some(t) if *containment => targets.is_subset(t),
                    Some(t) => t == targets,
                }
            }
            Factor::FullIntervention { assignments } => {
                if let Some((&i, _)) = assignments.iter().next_back() {
                    if i >= x.len() {
                        return Err(oob(i));
                    }
                }
                match &z.aux.targets {
                    Some(t) => {
                        t.len() == assignments.len()
                            && assignments.iter().all(|(&i, &v)| t.contains(&i) && x.0[i] == v)
                    }
                    None => false,
                }
            }
            Factor::ValuePredicate { atoms } => {
                let mut all = true;
                for a in atoms {
                    match a.holds(x) {
                        Some(h) => all &= h,
                        None => return Err(oob(a.feature)),
                    }
                }
                all
            }
            Factor::AuxTag { key, value } => z.aux.tags.get(key) == Some(value),
            Factor::Negation { inner } => !inner.evaluate(z)?,
        })
    }

    /// Checks feature indices and assigned values against `schema`.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        match self {
            Factor::InterventionTargets { targets, .. } => {
                for &i in targets {
                    schema.feature(i).map_err(|_| mismatch(i, schema))?;
                }
            }
            Factor::FullIntervention { assignments } => {
                for (&i, &v) in assignments {
                    let spec = schema.feature(i).map_err(|_| mismatch(i, schema))?;
                    spec.check_value(v)
                        .map_err(|e| Error::InvalidFactor(format!("assignment out of kind: {e}")))?;
                }
            }
            Factor::ValuePredicate { atoms } => {
                for a in atoms {
                    schema.feature(a.feature).map_err(|_| mismatch(a.feature, schema))?;
                }
            }
            Factor::AuxTag { .. } => {}
            Factor::Negation { inner } => {
                if matches!(**inner, Factor::Negation { .. }) {
                    return Err(Error::InvalidFactor("double negation".into()));
                }
                inner.validate(schema)?;
            }
        }
        Ok(())
    }

    /// Number of conditions: targets, assignments or atoms.
    pub fn condition_count(&self) -> usize {
        match self {
            Factor::InterventionTargets { targets, .. } => targets.len(),
            Factor::FullIntervention { assignments } => assignments.len(),
            Factor::ValuePredicate { atoms } => atoms.len(),
            Factor::AuxTag { .. } => 1,
            Factor::Negation { inner } => inner.condition_count(),
        }
    }

    /// Canonical JSON text, used for deterministic tie-breaking.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("factor serialization is infallible")
    }

    pub fn display_with<'a>(&'a self, schema: Option<&'a FeatureSchema>) -> FactorDisplay<'a> {
        FactorDisplay { factor: self, schema }
    }
}

fn mismatch(i: usize, schema: &FeatureSchema) -> Error {
    Error::SchemaMismatch(format!("feature {i} not in a {}-feature schema", schema.arity()))
}

pub struct FactorDisplay<'a> {
    factor: &'a Factor,
    schema: Option<&'a FeatureSchema>,
}

impl FactorDisplay<'_> {
    fn name(&self, i: usize) -> String {
        match self.schema.and_then(|s| s.features().get(i)) {
            Some(f) => f.name.clone(),
            None => format!("x{}", i + 1),
        }
    }

    fn value(&self, i: usize, v: f64) -> String {
        match self.schema.and_then(|s| s.features().get(i)) {
            Some(f) => f.format_value(v),
            None => format!("{v}"),
        }
    }
}

impl fmt::Display for FactorDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.factor {
            Factor::InterventionTargets { targets, containment } => {
                let names: Vec<String> = targets.iter().map(|&i| self.name(i)).collect();
                let rel = if *containment { "targets >= " } else { "targets = " };
                write!(f, "{rel}{{{}}}", names.join(", "))
            }
            Factor::FullIntervention { assignments } => {
                let parts: Vec<String> = assignments
                    .iter()
                    .map(|(&i, &v)| format!("{} := {}", self.name(i), self.value(i, v)))
                    .collect();
                write!(f, "do({})", parts.join(", "))
            }
            Factor::ValuePredicate { atoms } => {
                if atoms.is_empty() {
                    return write!(f, "true");
                }
                let parts: Vec<String> = atoms
                    .iter()
                    .map(|a| format!("{} {} {}", self.name(a.feature), a.op.symbol(), self.value(a.feature, a.value)))
                    .collect();
                write!(f, "{}", parts.join(" and "))
            }
            Factor::AuxTag { key, value } => write!(f, "{key} = {value}"),
            Factor::Negation { inner } => write!(f, "not ({})", inner.display_with(self.schema)),
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.display_with(None).fmt(f)
    }
}

/// Finite, duplicate-free list of factors.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FactorSpace {
    factors: Vec<Factor>,
}

impl<'de> Deserialize<'de> for FactorSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let factors = Vec::<Factor>::deserialize(d)?;
        FactorSpace::new(factors).map_err(serde::de::Error::custom)
    }
}

impl FactorSpace {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(factors.len());
        for f in &factors {
            if let Factor::Negation { inner } = f {
                if matches!(**inner, Factor::Negation { .. }) {
                    return Err(Error::InvalidFactor("double negation".into()));
                }
            }
            if !seen.insert(f.canonical()) {
                return Err(Error::InvalidFactor(format!("duplicate factor {f}")));
            }
        }
        Ok(FactorSpace { factors })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn contains(&self, c: &Factor) -> bool {
        self.factors.contains(c)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Factor> {
        self.factors.iter()
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        self.factors.iter().try_for_each(|c| c.validate(schema))
    }
}

impl<'a> IntoIterator for &'a FactorSpace {
    type Item = &'a Factor;
    type IntoIter = std::slice::Iter<'a, Factor>;

    fn into_iter(self) -> Self::IntoIter {
        self.factors.iter()
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Nonempty subsets of `0..n` of size at most `max`, by size then
/// lexicographically.
pub fn subsets_up_to(n: usize, max: usize) -> Vec<Vec<usize>> {
    (1..=max.min(n)).flat_map(|k| combinations(n, k)).collect()
}

/// Intervention-target factors for every nonempty feature subset of size at
/// most `max_cardinality`.
pub fn generate_target_space(schema: &FeatureSchema, max_cardinality: usize, containment: bool) -> Result<FactorSpace> {
    let arity = schema.arity();
    if max_cardinality == 0 || max_cardinality > arity {
        return Err(Error::BadCardinality {
            max: max_cardinality,
            arity,
        });
    }
    let factors = subsets_up_to(arity, max_cardinality)
        .into_iter()
        .map(|s| Factor::targets(s, containment))
        .collect();
    FactorSpace::new(factors)
}

/// Full-intervention factors assigning value combinations observed in
/// `pool`, skipping any combination that re-assigns one of the input's own
/// values.
pub fn generate_full_intervention_space(input: &Instance, pool: &Dataset, max_cardinality: usize) -> Result<FactorSpace> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let arity = pool.schema().arity();
    if input.len() != arity {
        return Err(Error::ArityMismatch {
            expected: arity,
            got: input.len(),
        });
    }
    if max_cardinality == 0 || max_cardinality > arity {
        return Err(Error::BadCardinality {
            max: max_cardinality,
            arity,
        });
    }
    let mut factors = Vec::new();
    for subset in subsets_up_to(arity, max_cardinality) {
        let mut combos: Vec<Vec<f64>> = pool
            .rows()
            .iter()
            .map(|r| subset.iter().map(|&i| r.0[i]).collect::<Vec<f64>>())
            .filter(|vals| subset.iter().zip(vals).all(|(&i, &v)| v != input.0[i]))
            .collect();
        combos.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        combos.dedup();
        for vals in combos {
            factors.push(Factor::full(subset.iter().copied().zip(vals)));
        }
    }
    FactorSpace::new(factors)
}
