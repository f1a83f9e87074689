//! Partial orders over factors, cost functions, topological sorting and
//! upward closure.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::data::{feature_range, FeatureKind, FeatureSchema, Instance};
use crate::error::{Error, Result};
use crate::factor::{Atom, AtomOp, Factor, FactorSpace};

#[derive(Debug, Clone, PartialEq)]
pub enum CostFn {
    /// Number of conditions of the factor.
    TargetCount,
    /// Sum over assigned features of `|assigned - input| / range`; a changed
    /// categorical value costs 1. Target-set factors carry no values and
    /// cost their target count.
    NormalizedL1 { input: Instance, schema: FeatureSchema },
}

impl CostFn {
    pub fn name(&self) -> &'static str {
        match self {
            CostFn::TargetCount => "target-count",
            CostFn::NormalizedL1 { .. } => "normalized-l1",
        }
    }

    pub fn cost(&self, c: &Factor) -> f64 {
        match self {
            CostFn::TargetCount => match c {
                Factor::AuxTag { .. } | Factor::Negation { .. } => 0.0,
                other => other.condition_count() as f64,
            },
            CostFn::NormalizedL1 { input, schema } => {
                let term = |i: usize, v: f64| -> f64 {
                    let Some(x) = input.get(i) else { return 0.0 };
                    match schema.features().get(i).map(|f| &f.kind) {
                        Some(FeatureKind::Categorical { .. }) => f64::from(u8::from(v != x)),
                        Some(FeatureKind::Continuous { .. }) => {
                            (v - x).abs() / feature_range(schema, i).unwrap_or(1.0)
                        }
                        None => 0.0,
                    }
                };
                match c {
                    Factor::InterventionTargets { targets, .. } => targets.len() as f64,
                    Factor::FullIntervention { assignments } => assignments.iter().map(|(&i, &v)| term(i, v)).sum(),
                    Factor::ValuePredicate { atoms } => atoms
                        .iter()
                        .filter(|a| a.op == AtomOp::Eq)
                        .map(|a| term(a.feature, a.value))
                        .sum(),
                    Factor::AuxTag { .. } | Factor::Negation { .. } => 0.0,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartialOrder {
    /// `c <= c'` iff both are the same kind of factor and the conditions of
    /// `c` are a subset of those of `c'`.
    Subset,
    /// Subset order plus `cost(c) <= cost(c')`.
    Cost(CostFn),
}

impl PartialOrder {
    pub fn name(&self) -> String {
        match self {
            PartialOrder::Subset => "subset".into(),
            PartialOrder::Cost(c) => format!("cost:{}", c.name()),
        }
    }

    pub fn leq(&self, c1: &Factor, c2: &Factor) -> bool {
        match self {
            PartialOrder::Subset => subset_leq(c1, c2),
            PartialOrder::Cost(cost) => subset_leq(c1, c2) && cost.cost(c1) <= cost.cost(c2),
        }
    }

    /// `c1` strictly precedes `c2`.
    pub fn lt(&self, c1: &Factor, c2: &Factor) -> bool {
        c1 != c2 && self.leq(c1, c2)
    }

    fn tie_key(&self, c: &Factor) -> TieKey {
        TieKey {
            cost: match self {
                PartialOrder::Subset => 0.0,
                PartialOrder::Cost(cost) => cost.cost(c),
            },
            size: c.condition_count(),
            text: c.canonical(),
        }
    }
}

fn sorted_subset<T>(a: &[T], b: &[T], cmp: impl Fn(&T, &T) -> Ordering) -> bool {
    let mut j = 0;
    for x in a {
        loop {
            match b.get(j).map(|y| cmp(x, y)) {
                None | Some(Ordering::Less) => return false,
                Some(Ordering::Equal) => {
                    j += 1;
                    break;
                }
                Some(Ordering::Greater) => j += 1,
            }
        }
    }
    true
}

fn subset_leq(c1: &Factor, c2: &Factor) -> bool {
    match (c1, c2) {
        (
            Factor::InterventionTargets {
                targets: a,
                containment: ca,
            },
            Factor::InterventionTargets {
                targets: b,
                containment: cb,
            },
        ) => ca == cb && a.is_subset(b),
        (Factor::FullIntervention { assignments: a }, Factor::FullIntervention { assignments: b }) => {
            a.iter().all(|(k, v)| b.get(k) == Some(v))
        }
        (Factor::ValuePredicate { atoms: a }, Factor::ValuePredicate { atoms: b }) => {
            let mut a: Vec<Atom> = a.clone();
            let mut b: Vec<Atom> = b.clone();
            a.sort_by(Atom::cmp_key);
            b.sort_by(Atom::cmp_key);
            sorted_subset(&a, &b, Atom::cmp_key)
        }
        (a, b) => a == b,
    }
}

#[derive(Debug, Clone)]
struct TieKey {
    cost: f64,
    size: usize,
    text: String,
}

impl PartialEq for TieKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for TieKey {}

impl PartialOrd for TieKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TieKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.size.cmp(&other.size))
            .then_with(|| self.text.cmp(&other.text))
    }
}

/// Linear extension of `order` on `space`: if `c1 < c2` then `c1` comes
/// first. Among available factors the smallest by (cost, condition count,
/// canonical JSON) is emitted next.
pub fn toposort(space: &FactorSpace, order: &PartialOrder) -> Result<Vec<Factor>> {
    let factors = space.factors();
    let n = factors.len();
    let mut successors = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && order.leq(&factors[i], &factors[j]) {
                if order.leq(&factors[j], &factors[i]) {
                    return Err(Error::CycleDetected);
                }
                successors[i].push(j);
                indegree[j] += 1;
            }
        }
    }
    let keys: Vec<TieKey> = factors.iter().map(|c| order.tie_key(c)).collect();
    let mut heap: BinaryHeap<Reverse<(TieKey, usize)>> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| Reverse((keys[i].clone(), i)))
        .collect();
    let mut out = Vec::with_capacity(n);
    while let Some(Reverse((_, i))) = heap.pop() {
        out.push(factors[i].clone());
        for &j in &successors[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                heap.push(Reverse((keys[j].clone(), j)));
            }
        }
    }
    if out.len() != n {
        return Err(Error::CycleDetected);
    }
    Ok(out)
}

/// Factors of `space` that dominate some member of `selected`.
pub fn upward_closure(space: &FactorSpace, selected: &[Factor], order: &PartialOrder) -> Vec<Factor> {
    space
        .iter()
        .filter(|c| selected.iter().any(|s| order.leq(s, c)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderKind {
    #[serde(rename = "subset")]
    Subset,
    #[serde(rename = "cost:target-count")]
    CostTargetCount,
    #[serde(rename = "cost:normalized-l1")]
    CostNormalizedL1,
}

impl std::str::FromStr for OrderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subset" => Ok(OrderKind::Subset),
            "cost:target-count" => Ok(OrderKind::CostTargetCount),
            "cost:normalized-l1" => Ok(OrderKind::CostNormalizedL1),
            other => Err(Error::BadParameters(format!("unknown order `{other}`"))),
        }
    }
}

impl OrderKind {
    pub fn build(self, input: &Instance, schema: &FeatureSchema) -> PartialOrder {
        match self {
            OrderKind::Subset => PartialOrder::Subset,
            OrderKind::CostTargetCount => PartialOrder::Cost(CostFn::TargetCount),
            OrderKind::CostNormalizedL1 => PartialOrder::Cost(CostFn::NormalizedL1 {
                input: input.clone(),
                schema: schema.clone(),
            }),
        }
    }
}
