//! Random bases and an independent enumeration oracle shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lens_core::context::all_target_sets;
use lens_core::factor::{generate_target_space, Atom, AtomOp};
use lens_core::model::{Rule, SplitTest, TreeNode};
use lens_core::{
    Basis, Context, CostFn, Dataset, FeatureKind, FeatureSchema, FeatureSpec, Factor, FactorSpace, Instance, Model,
    PartialOrder,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn q(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn f(x: &BigRational) -> f64 {
    x.to_f64().unwrap()
}

pub fn and2() -> Model {
    Model::RuleModel {
        rules: vec![Rule {
            when: vec![Atom::eq(0, 1.0), Atom::eq(1, 1.0)],
            label: 1,
        }],
        default: 0,
        arity: Some(2),
    }
}

/// All four Boolean rows of two features.
pub fn grid2() -> Dataset {
    let rows = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
        .into_iter()
        .map(Instance::from)
        .collect();
    Dataset::new(FeatureSchema::boolean(2), rows, None).unwrap()
}

pub fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

pub fn targets(v: &[usize]) -> Factor {
    Factor::targets(v.iter().copied(), false)
}

/// AND2 with input (1,1), the 4-row grid as references and every target
/// set including the empty one.
pub fn and2_basis() -> Basis {
    let ctx = Context::r2i(Instance::from([1.0, 1.0]), grid2(), all_target_sets(2, 2)).unwrap();
    let space = generate_target_space(&FeatureSchema::boolean(2), 2, false).unwrap();
    Basis::new(and2(), ctx, space, PartialOrder::Subset).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    R2I,
    I2R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderChoice {
    Subset,
    TargetCount,
    L1,
}

/// A random basis together with the raw parts it was built from.
pub struct Fixture {
    pub basis: Basis,
    pub model: Model,
    pub schema: FeatureSchema,
    pub input: Instance,
    pub refs: Dataset,
    pub target_sets: Vec<BTreeSet<usize>>,
    pub dir: Dir,
    pub order: OrderChoice,
    pub y: u8,
}

fn levels_of(schema: &FeatureSchema, i: usize) -> usize {
    match &schema.features()[i].kind {
        FeatureKind::Categorical { levels } => levels.len(),
        FeatureKind::Continuous { .. } => 2,
    }
}

pub fn random_schema(r: &mut ChaCha8Rng, d: usize) -> FeatureSchema {
    let features = (0..d)
        .map(|i| {
            if r.random_bool(0.5) {
                let k = r.random_range(2..=3);
                FeatureSpec::categorical(format!("c{i}"), (0..k).map(|l| format!("v{l}")))
            } else {
                FeatureSpec::continuous(format!("b{i}"), 0.0, 1.0)
            }
        })
        .collect();
    FeatureSchema::new(features).unwrap()
}

pub fn random_instance(r: &mut ChaCha8Rng, schema: &FeatureSchema) -> Instance {
    Instance(
        (0..schema.arity())
            .map(|i| r.random_range(0..levels_of(schema, i)) as f64)
            .collect(),
    )
}

pub fn random_dataset(r: &mut ChaCha8Rng, schema: &FeatureSchema, rows: usize) -> Dataset {
    let rows = (0..rows).map(|_| random_instance(r, schema)).collect();
    Dataset::new(schema.clone(), rows, None).unwrap()
}

fn random_tree(r: &mut ChaCha8Rng, schema: &FeatureSchema, depth: usize, nodes: &mut Vec<TreeNode>) -> usize {
    let at = nodes.len();
    if depth == 0 || r.random_bool(0.25) {
        nodes.push(TreeNode::Leaf {
            label: r.random_range(0..=1),
        });
        return at;
    }
    nodes.push(TreeNode::Leaf { label: 0 });
    let feature = r.random_range(0..schema.arity());
    let test = match &schema.features()[feature].kind {
        FeatureKind::Continuous { .. } => SplitTest::Threshold(0.5),
        FeatureKind::Categorical { levels } => {
            let mut left: Vec<usize> = (0..levels.len()).filter(|_| r.random_bool(0.5)).collect();
            if left.is_empty() {
                left.push(0);
            }
            SplitTest::Levels(left)
        }
    };
    let left = random_tree(r, schema, depth - 1, nodes);
    let right = random_tree(r, schema, depth - 1, nodes);
    nodes[at] = TreeNode::Split {
        feature,
        test,
        left,
        right,
    };
    at
}

pub fn random_model(r: &mut ChaCha8Rng, schema: &FeatureSchema) -> Model {
    let d = schema.arity();
    if r.random_bool(0.5) {
        let mut nodes = Vec::new();
        random_tree(r, schema, 3, &mut nodes);
        Model::DecisionTree { nodes, arity: Some(d) }
    } else {
        let rules = (0..r.random_range(1..=3))
            .map(|_| Rule {
                when: (0..r.random_range(1..=2))
                    .map(|_| {
                        let i = r.random_range(0..d);
                        Atom::eq(i, r.random_range(0..levels_of(schema, i)) as f64)
                    })
                    .collect(),
                label: r.random_range(0..=1),
            })
            .collect();
        Model::RuleModel {
            rules,
            default: r.random_range(0..=1),
            arity: Some(d),
        }
    }
}

fn random_predicate_space(r: &mut ChaCha8Rng, schema: &FeatureSchema, input: &Instance) -> FactorSpace {
    let d = schema.arity();
    let mut factors = Vec::new();
    for _ in 0..r.random_range(3..=12) {
        let k = r.random_range(1..=d.min(3));
        let mut feats: Vec<usize> = (0..d).collect();
        for i in (1..feats.len()).rev() {
            feats.swap(i, r.random_range(0..=i));
        }
        let atoms = feats[..k].iter().map(|&i| {
            let v = if r.random_bool(0.6) {
                input.0[i]
            } else {
                r.random_range(0..levels_of(schema, i)) as f64
            };
            let op = match r.random_range(0..4) {
                0 => AtomOp::Ne,
                1 => AtomOp::Le,
                _ => AtomOp::Eq,
            };
            Atom::new(i, op, v)
        });
        let c = Factor::predicate(atoms);
        if !factors.contains(&c) {
            factors.push(c);
        }
    }
    FactorSpace::new(factors).unwrap()
}

pub fn build_order(choice: OrderChoice, input: &Instance, schema: &FeatureSchema) -> PartialOrder {
    match choice {
        OrderChoice::Subset => PartialOrder::Subset,
        OrderChoice::TargetCount => PartialOrder::Cost(CostFn::TargetCount),
        OrderChoice::L1 => PartialOrder::Cost(CostFn::NormalizedL1 {
            input: input.clone(),
            schema: schema.clone(),
        }),
    }
}

/// A random enumerable basis over at most `max_d` Boolean/categorical
/// features with a factor space of at most 64 factors.
pub fn random_fixture(r: &mut ChaCha8Rng, max_d: usize) -> Fixture {
    let d = r.random_range(1..=max_d);
    let schema = random_schema(r, d);
    let model = random_model(r, &schema);
    let input = random_instance(r, &schema);
    let n_refs = r.random_range(2..=6);
    let refs = random_dataset(r, &schema, n_refs);
    let target_sets = if r.random_bool(0.5) {
        all_target_sets(d, r.random_range(1..=d))
    } else {
        let mut sets: Vec<BTreeSet<usize>> = all_target_sets(d, d)
            .into_iter()
            .filter(|_| r.random_bool(0.5))
            .collect();
        if sets.is_empty() {
            sets.push((0..d).collect());
        }
        sets
    };
    let dir = if r.random_bool(0.5) { Dir::R2I } else { Dir::I2R };
    let ctx = match dir {
        Dir::R2I => Context::r2i(input.clone(), refs.clone(), target_sets.clone()),
        Dir::I2R => Context::i2r(input.clone(), refs.clone(), target_sets.clone()),
    }
    .unwrap();
    let space = if r.random_bool(0.6) {
        generate_target_space(&schema, r.random_range(1..=d), r.random_bool(0.3)).unwrap()
    } else {
        random_predicate_space(r, &schema, &input)
    };
    let order = [OrderChoice::Subset, OrderChoice::TargetCount, OrderChoice::L1][r.random_range(0..3)];
    let basis = Basis::new(model.clone(), ctx, space, build_order(order, &input, &schema)).unwrap();
    Fixture {
        basis,
        model,
        schema,
        input,
        refs,
        target_sets,
        dir,
        order,
        y: r.random_range(0..=1),
    }
}

/// One enumerated point of the oracle: instance, target set, weight, label.
pub struct OraclePoint {
    pub x: Instance,
    pub targets: BTreeSet<usize>,
    pub w: BigRational,
    pub label: u8,
}

/// Direct enumeration of a swap context, written independently of the
/// library's context module.
pub struct Oracle {
    pub points: Vec<OraclePoint>,
}

impl Oracle {
    pub fn new(fx: &Fixture) -> Oracle {
        Oracle::from_parts(&fx.model, &fx.input, &fx.refs, &fx.target_sets, fx.dir)
    }

    pub fn from_parts(model: &Model, input: &Instance, refs: &Dataset, sets: &[BTreeSet<usize>], dir: Dir) -> Oracle {
        let w = q(1, (sets.len() * refs.len()) as i64);
        let mut points = Vec::new();
        for s in sets {
            for row in refs.rows() {
                let x: Vec<f64> = (0..input.len())
                    .map(|i| match (dir, s.contains(&i)) {
                        (Dir::R2I, true) | (Dir::I2R, false) => input.0[i],
                        (Dir::R2I, false) | (Dir::I2R, true) => row.0[i],
                    })
                    .collect();
                let x = Instance(x);
                let label = model.predict(&x).unwrap();
                points.push(OraclePoint {
                    x,
                    targets: s.clone(),
                    w: w.clone(),
                    label,
                });
            }
        }
        Oracle { points }
    }

    pub fn holds(c: &Factor, p: &OraclePoint) -> bool {
        match c {
            Factor::InterventionTargets { targets, containment } => {
                if *containment {
                    targets.iter().all(|t| p.targets.contains(t))
                } else {
                    *targets == p.targets
                }
            }
            Factor::ValuePredicate { atoms } => atoms.iter().all(|a| {
                let v = p.x.0[a.feature];
                match a.op {
                    AtomOp::Eq => v == a.value,
                    AtomOp::Ne => v != a.value,
                    AtomOp::Le => v <= a.value,
                    AtomOp::Ge => v >= a.value,
                }
            }),
            Factor::FullIntervention { assignments } => {
                assignments.keys().eq(p.targets.iter()) && assignments.iter().all(|(&i, &v)| p.x.0[i] == v)
            }
            Factor::Negation { inner } => !Oracle::holds(inner, p),
            Factor::AuxTag { .. } => panic!("oracle does not model {c}"),
        }
    }

    fn mass(&self, keep: impl Fn(&OraclePoint) -> bool) -> BigRational {
        self.points
            .iter()
            .filter(|p| keep(p))
            .fold(BigRational::zero(), |acc, p| acc + &p.w)
    }

    pub fn ps_any(&self, cs: &[Factor], y: u8) -> Option<BigRational> {
        let any = |p: &OraclePoint| cs.iter().any(|c| Oracle::holds(c, p));
        let all = self.mass(any);
        if all.is_zero() {
            return None;
        }
        Some(self.mass(|p| any(p) && p.label == y) / all)
    }

    pub fn ps(&self, c: &Factor, y: u8) -> Option<BigRational> {
        self.ps_any(std::slice::from_ref(c), y)
    }

    pub fn pn(&self, cs: &[Factor], y: u8) -> Option<BigRational> {
        let out = self.mass(|p| p.label == y);
        if out.is_zero() {
            return None;
        }
        Some(self.mass(|p| p.label == y && cs.iter().any(|c| Oracle::holds(c, p))) / out)
    }

    pub fn outcome_probability(&self, y: u8) -> BigRational {
        self.mass(|p| p.label == y)
    }
}

fn conditions(c: &Factor) -> Vec<(usize, u8, u64)> {
    match c {
        Factor::InterventionTargets { targets, .. } => targets.iter().map(|&t| (t, 0, 0)).collect(),
        Factor::ValuePredicate { atoms } => atoms
            .iter()
            .map(|a| {
                let op = match a.op {
                    AtomOp::Eq => 0,
                    AtomOp::Ne => 1,
                    AtomOp::Le => 2,
                    AtomOp::Ge => 3,
                };
                (a.feature, op, a.value.to_bits())
            })
            .collect(),
        _ => panic!("oracle does not model {c}"),
    }
}

/// Cost of a factor, computed directly from the fixture.
pub fn oracle_cost(fx: &Fixture, c: &Factor) -> f64 {
    match (fx.order, c) {
        (_, Factor::InterventionTargets { targets, .. }) => targets.len() as f64,
        (OrderChoice::L1, Factor::ValuePredicate { atoms }) => atoms
            .iter()
            .filter(|a| a.op == AtomOp::Eq)
            .map(|a| {
                let x = fx.input.0[a.feature];
                match fx.schema.features()[a.feature].kind {
                    FeatureKind::Categorical { .. } => f64::from(u8::from(a.value != x)),
                    FeatureKind::Continuous { min, max } => (a.value - x).abs() / (max - min),
                }
            })
            .sum(),
        (_, other) => conditions(other).len() as f64,
    }
}

/// `a ⪯ b` under the fixture's order, from the definitions.
pub fn oracle_leq(fx: &Fixture, a: &Factor, b: &Factor) -> bool {
    let same_kind = match (a, b) {
        (
            Factor::InterventionTargets { containment: x, .. },
            Factor::InterventionTargets { containment: y, .. },
        ) => x == y,
        (Factor::ValuePredicate { .. }, Factor::ValuePredicate { .. }) => true,
        _ => false,
    };
    if !same_kind {
        return a == b;
    }
    let (ca, cb) = (conditions(a), conditions(b));
    let subset = ca.iter().all(|x| cb.contains(x));
    match fx.order {
        OrderChoice::Subset => subset,
        _ => subset && oracle_cost(fx, a) <= oracle_cost(fx, b),
    }
}

/// The τ-minimal factors of the space: sufficient at `tau`, with no
/// strictly preferred factor that is also sufficient.
pub fn brute_minimal(fx: &Fixture, oracle: &Oracle, tau: f64) -> BTreeSet<String> {
    let space = fx.basis.space.factors();
    let sufficient: Vec<bool> = space
        .iter()
        .map(|c| oracle.ps(c, fx.y).is_some_and(|p| f(&p) >= tau))
        .collect();
    space
        .iter()
        .enumerate()
        .filter(|&(i, c)| {
            sufficient[i]
                && !space
                    .iter()
                    .enumerate()
                    .any(|(j, d)| j != i && sufficient[j] && d != c && oracle_leq(fx, d, c))
        })
        .map(|(_, c)| c.canonical())
        .collect()
}
