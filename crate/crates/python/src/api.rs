//! Plain Rust entry points behind the Python functions. Inputs and results
//! travel as JSON text so the binding layer stays a thin conversion.

use std::collections::BTreeSet;

use lens_core::causation::{pearl_suf_nec, recourse_search, shapley_values, ShapleyMode};
use lens_core::context::{all_target_sets, Scm};
use lens_core::data::{load_csv, parse_csv};
use lens_core::factor::{generate_full_intervention_space, generate_target_space};
use lens_core::lens::{binomial_tau_test, Estimator};
use lens_core::order::OrderKind;
use lens_core::{Basis, Context, CostFn, Dataset, EstimationConfig, Error, FeatureSchema, Instance, Model, PartialOrder, Result};
use serde::Serialize;

/// Reference data: a CSV file or rows of numbers.
#[derive(Debug, Clone)]
pub enum Data {
    Csv { path: String, label_column: Option<String> },
    Rows(Vec<Vec<f64>>),
}

impl Data {
    pub fn load(&self, schema: Option<&FeatureSchema>) -> Result<Dataset> {
        match self {
            Data::Csv { path, label_column } => load_csv(path, schema, label_column.as_deref()),
            Data::Rows(rows) => {
                let d = rows.first().map_or(0, Vec::len);
                if d == 0 {
                    return Err(Error::EmptyReferencePool);
                }
                let header: Vec<String> = match schema {
                    Some(s) => s.features().iter().map(|f| f.name.clone()).collect(),
                    None => (1..=d).map(|i| format!("x{i}")).collect(),
                };
                let mut text = header.join(",");
                for row in rows {
                    text.push('\n');
                    text.push_str(&row.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
                }
                text.push('\n');
                parse_csv(&text, schema, None)
            }
        }
    }
}

/// How the context and factor space are built around the input.
#[derive(Debug, Clone)]
pub struct BasisOptions {
    pub context: String,
    pub max_target_cardinality: Option<usize>,
    pub include_empty_target_set: bool,
    pub space: String,
    pub space_max_cardinality: Option<usize>,
    pub containment: bool,
    pub order: String,
}

impl BasisOptions {
    pub fn explain_defaults() -> Self {
        BasisOptions {
            context: "r2i".into(),
            max_target_cardinality: None,
            include_empty_target_set: true,
            space: "targets".into(),
            space_max_cardinality: None,
            containment: false,
            order: "subset".into(),
        }
    }

    pub fn recourse_defaults() -> Self {
        BasisOptions {
            context: "i2r".into(),
            space: "full-intervention".into(),
            order: "cost:normalized-l1".into(),
            ..BasisOptions::explain_defaults()
        }
    }

    pub fn build(&self, model: Model, data: &Dataset, input: &Instance) -> Result<Basis> {
        let schema = data.schema();
        let d = schema.arity();
        schema.validate_instance(input)?;
        let max_targets = self.max_target_cardinality.unwrap_or(d);
        let max_space = self.space_max_cardinality.unwrap_or(d);
        if max_targets > d {
            return Err(Error::BadCardinality { max: max_targets, arity: d });
        }
        let mut sets: Vec<BTreeSet<usize>> = all_target_sets(d, max_targets);
        if !self.include_empty_target_set {
            sets.retain(|s| !s.is_empty());
        }
        let context = match self.context.as_str() {
            "r2i" => Context::r2i(input.clone(), data.clone(), sets)?,
            "i2r" => Context::i2r(input.clone(), data.clone(), sets)?,
            other => return Err(Error::BadParameters(format!("unknown context `{other}`"))),
        };
        let space = match self.space.as_str() {
            "targets" => generate_target_space(schema, max_space, self.containment)?,
            "full-intervention" => generate_full_intervention_space(input, data, max_space)?,
            other => return Err(Error::BadParameters(format!("unknown space `{other}`"))),
        };
        let order = self.order.parse::<OrderKind>()?.build(input, schema);
        Basis::new(model, context, space, order)
    }
}

pub fn estimation(kind: &str, samples: usize, seed: u64, alpha: Option<f64>) -> Result<EstimationConfig> {
    match kind {
        "exact" => Ok(EstimationConfig::Exact),
        "mc" => Ok(EstimationConfig::MonteCarlo { n: samples, seed, alpha }),
        other => Err(Error::BadParameters(format!("unknown estimation `{other}`"))),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

pub fn schema_from_json(text: Option<&str>) -> Result<Option<FeatureSchema>> {
    text.map(|t| serde_json::from_str(t).map_err(Error::from)).transpose()
}

pub fn predict(model: &str, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let model = Model::from_json(model)?;
    let xs: Vec<Instance> = rows.iter().map(|r| Instance::new(r.clone())).collect();
    model.predict_batch(&xs)
}

pub struct Problem<'a> {
    pub model: &'a str,
    pub data: &'a Data,
    pub schema: Option<&'a str>,
    pub input: &'a [f64],
}

impl Problem<'_> {
    fn load(&self) -> Result<(Model, Dataset, Instance)> {
        let model = Model::from_json(self.model)?;
        let schema = schema_from_json(self.schema)?;
        let data = self.data.load(schema.as_ref())?;
        Ok((model, data, Instance::new(self.input.to_vec())))
    }
}

pub fn explain(p: &Problem, tau: f64, outcome: Option<u8>, opts: &BasisOptions, cfg: EstimationConfig) -> Result<String> {
    let (model, data, input) = p.load()?;
    let y = match outcome {
        Some(y) => y,
        None => model.predict(&input)?,
    };
    let basis = opts.build(model, &data, &input)?;
    to_json(&Estimator::new(&basis, cfg)?.minimal_sufficient_factors(y, tau)?)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepRow {
    tau: f64,
    candidate_count: usize,
    #[serde(rename = "cumulativePN")]
    cumulative_pn: f64,
}

pub fn sweep_tau(
    p: &Problem,
    taus: &[f64],
    outcome: Option<u8>,
    opts: &BasisOptions,
    cfg: EstimationConfig,
) -> Result<String> {
    if taus.is_empty() {
        return Err(Error::BadParameters("taus must not be empty".into()));
    }
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::BadParameters("taus must be sorted ascending".into()));
    }
    let (model, data, input) = p.load()?;
    let y = match outcome {
        Some(y) => y,
        None => model.predict(&input)?,
    };
    let basis = opts.build(model, &data, &input)?;
    let est = Estimator::new(&basis, cfg)?;
    let rows = taus
        .iter()
        .map(|&tau| {
            let rep = est.minimal_sufficient_factors(y, tau)?;
            Ok(SweepRow {
                tau,
                candidate_count: rep.candidates.len(),
                cumulative_pn: rep.cumulative_pn,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    to_json(&rows)
}

pub fn shapley(p: &Problem, mode: ShapleyMode, verbose: bool) -> Result<String> {
    let (model, data, input) = p.load()?;
    let mut res = shapley_values(&model, &input, &data, mode)?;
    if !verbose {
        res.value_cache = None;
    }
    to_json(&res)
}

pub fn recourse(p: &Problem, tau: f64, opts: &BasisOptions, cfg: EstimationConfig) -> Result<String> {
    let (model, data, input) = p.load()?;
    let basis = opts.build(model, &data, &input)?;
    let cost = match &basis.order {
        PartialOrder::Cost(c) => c.clone(),
        PartialOrder::Subset => CostFn::TargetCount,
    };
    to_json(&recourse_search(&basis, &cost, tau, cfg)?)
}

fn node(scm: &Scm, name: &str) -> Result<usize> {
    scm.schema()
        .index_of(name)
        .or_else(|| name.parse().ok().filter(|&i| i < scm.arity()))
        .ok_or_else(|| Error::BadParameters(format!("no node `{name}` in the causal model")))
}

pub fn pearl(scm: &str, cause: &str, effect: &str, x: u8, y: u8, cfg: EstimationConfig) -> Result<String> {
    let scm = Scm::from_json(scm, None)?;
    to_json(&pearl_suf_nec(&scm, node(&scm, cause)?, node(&scm, effect)?, x, y, cfg)?)
}

pub fn binomial_test(successes: u64, trials: u64, tau: f64, alpha: f64) -> Result<(f64, bool)> {
    let t = binomial_tau_test(successes, trials, tau, alpha)?;
    Ok((t.p_value, t.reject))
}
