use std::collections::BTreeSet;
use std::fmt::Write;

use lens_core::causation::{pearl_suf_nec, recourse_search, shapley_values};
use lens_core::context::{all_target_sets, Scm};
use lens_core::data::load_csv;
use lens_core::factor::{generate_full_intervention_space, generate_target_space};
use lens_core::lens::Estimator;
use lens_core::{
    Basis, Context, CostFn, Dataset, ExplanationReport, Factor, FeatureSchema, Instance, Model, PartialOrder,
};
use serde::Serialize;

use crate::config::{Command, ContextKind, Effective, SpaceKind};
use crate::error::{invalid, CliError, CliResult};
use crate::SCHEMA_VERSION;

/// What a run produces: the JSON document, a short human summary and, for
/// sweeps, the CSV table.
pub struct Output {
    pub json: String,
    pub summary: String,
    pub csv: Option<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Document<'a, T: Serialize> {
    schema_version: u32,
    command: Command,
    config: &'a Effective,
    result: T,
}

fn document<T: Serialize>(cfg: &Effective, result: T) -> CliResult<String> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        command: cfg.command,
        config: cfg,
        result,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(lens_core::Error::from)?;
    text.push('\n');
    Ok(text)
}

struct Inputs {
    model: Model,
    data: Dataset,
    input: Instance,
}

impl Inputs {
    fn schema(&self) -> &FeatureSchema {
        self.data.schema()
    }
}

fn load_inputs(cfg: &mut Effective) -> CliResult<Inputs> {
    let schema = match &cfg.schema {
        Some(path) => Some(FeatureSchema::from_json_file(path).map_err(|e| CliError::DataLoad {
            path: path.clone(),
            reason: e.to_string(),
        })?),
        None => None,
    };
    let data_path = cfg.data.clone().expect("resolved config has data");
    let data = load_csv(&data_path, schema.as_ref(), cfg.label_column.as_deref()).map_err(|e| {
        CliError::DataLoad {
            path: data_path.clone(),
            reason: e.to_string(),
        }
    })?;
    let model = match (&cfg.model, &cfg.external_model) {
        (Some(path), _) => Model::from_json_file(path).map_err(|e| CliError::ModelLoad {
            path: path.clone(),
            reason: e.to_string(),
        })?,
        (None, Some(cmd)) => Model::external(cmd.iter().cloned()),
        (None, None) => unreachable!("resolved config has a model"),
    };
    let input = match (cfg.row, &cfg.input) {
        (Some(row), _) => data
            .rows()
            .get(row)
            .cloned()
            .ok_or_else(|| invalid(format!("row {row} out of range for {} rows", data.len())))?,
        (None, Some(values)) => Instance::new(values.clone()),
        (None, None) => unreachable!("resolved config has an input"),
    };
    data.schema().validate_instance(&input)?;
    cfg.input = Some(input.0.clone());
    Ok(Inputs { model, data, input })
}

fn build_basis(cfg: &mut Effective, inputs: &Inputs) -> CliResult<Basis> {
    let d = inputs.schema().arity();
    let max_targets = *cfg.max_target_cardinality.get_or_insert(d);
    let max_space = *cfg.space_max_cardinality.get_or_insert(d);
    for (name, v) in [("maxTargetCardinality", max_targets), ("spaceMaxCardinality", max_space)] {
        if v > d {
            return Err(invalid(format!("{name} {v} exceeds the {d} features")));
        }
    }
    let mut sets: Vec<BTreeSet<usize>> = all_target_sets(d, max_targets);
    if cfg.include_empty_target_set == Some(false) {
        sets.retain(|s| !s.is_empty());
    }
    if sets.is_empty() {
        return Err(invalid("the context has no target sets"));
    }
    let (input, refs) = (inputs.input.clone(), inputs.data.clone());
    let context = match cfg.context.expect("resolved") {
        ContextKind::R2i => Context::r2i(input, refs, sets)?,
        ContextKind::I2r => Context::i2r(input, refs, sets)?,
    };
    let space = match cfg.space.expect("resolved") {
        SpaceKind::Targets => generate_target_space(inputs.schema(), max_space, cfg.containment == Some(true))?,
        SpaceKind::FullIntervention => generate_full_intervention_space(&inputs.input, &inputs.data, max_space)?,
    };
    let order = cfg.order.expect("resolved").build(&inputs.input, inputs.schema());
    Ok(Basis::new(inputs.model.clone(), context, space, order)?)
}

fn outcome(cfg: &mut Effective, inputs: &Inputs) -> CliResult<u8> {
    match cfg.outcome {
        Some(y) => Ok(y),
        None => {
            let y = inputs.model.predict(&inputs.input)?;
            cfg.outcome = Some(y);
            Ok(y)
        }
    }
}

fn factor_text(c: &Factor, schema: &FeatureSchema) -> String {
    c.display_with(Some(schema)).to_string()
}

fn explain_summary(rep: &ExplanationReport, schema: &FeatureSchema) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "outcome {} at tau {}: {} minimal sufficient factor(s), cumulative PN {:.6}",
        rep.outcome,
        rep.tau,
        rep.candidates.len(),
        rep.cumulative_pn
    );
    for c in &rep.candidates {
        let _ = writeln!(s, "  PS {:.6}  {}", c.ps, factor_text(&c.factor, schema));
    }
    s
}

pub fn run(command: Command, mut cfg: Effective) -> CliResult<Output> {
    match command {
        Command::Explain => explain(&mut cfg),
        Command::SweepTau => sweep(&mut cfg),
        Command::Shapley => shapley(&mut cfg),
        Command::Recourse => recourse(&mut cfg),
        Command::Pearl => pearl(&mut cfg),
    }
}

fn explain(cfg: &mut Effective) -> CliResult<Output> {
    let inputs = load_inputs(cfg)?;
    let basis = build_basis(cfg, &inputs)?;
    let y = outcome(cfg, &inputs)?;
    let est = Estimator::new(&basis, cfg.estimation_config())?;
    let rep = est.minimal_sufficient_factors(y, cfg.tau.expect("resolved"))?;
    Ok(Output {
        summary: explain_summary(&rep, inputs.schema()),
        json: document(cfg, &rep)?,
        csv: None,
    })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepRow {
    tau: f64,
    candidate_count: usize,
    #[serde(rename = "cumulativePN")]
    cumulative_pn: f64,
}

fn sweep(cfg: &mut Effective) -> CliResult<Output> {
    let inputs = load_inputs(cfg)?;
    let basis = build_basis(cfg, &inputs)?;
    let y = outcome(cfg, &inputs)?;
    let est = Estimator::new(&basis, cfg.estimation_config())?;
    let mut rows = Vec::new();
    for &tau in cfg.taus.as_deref().expect("resolved") {
        let rep = est.minimal_sufficient_factors(y, tau)?;
        rows.push(SweepRow {
            tau,
            candidate_count: rep.candidates.len(),
            cumulative_pn: rep.cumulative_pn,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Output {
            path: "csv".into(),
            reason: e.to_string(),
        })?;
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8");
    let mut summary = format!("outcome {y}: {} threshold(s)\n", rows.len());
    for r in &rows {
        let _ = writeln!(summary, "  tau {:<6} {:>3} factor(s)  PN {:.6}", r.tau, r.candidate_count, r.cumulative_pn);
    }
    Ok(Output {
        json: document(cfg, &rows)?,
        summary,
        csv: Some(csv),
    })
}

fn shapley(cfg: &mut Effective) -> CliResult<Output> {
    let inputs = load_inputs(cfg)?;
    let mut res = shapley_values(&inputs.model, &inputs.input, &inputs.data, cfg.shapley.expect("resolved"))?;
    if cfg.verbose != Some(true) {
        res.value_cache = None;
    }
    let mut summary = format!("baseline v(empty) {:.6}\n", res.phi0);
    for (spec, phi) in inputs.schema().features().iter().zip(&res.phi) {
        let _ = writeln!(summary, "  {:<16} {:+.6}", spec.name, phi);
    }
    Ok(Output {
        json: document(cfg, &res)?,
        summary,
        csv: None,
    })
}

fn recourse(cfg: &mut Effective) -> CliResult<Output> {
    let inputs = load_inputs(cfg)?;
    let basis = build_basis(cfg, &inputs)?;
    let cost = match &basis.order {
        PartialOrder::Cost(c) => c.clone(),
        PartialOrder::Subset => CostFn::TargetCount,
    };
    let res = recourse_search(&basis, &cost, cfg.tau.expect("resolved"), cfg.estimation_config())?;
    let mut summary = format!(
        "to reach outcome {}: {}  (cost {:.6}, PS {:.6})\n",
        res.target_outcome,
        factor_text(&res.chosen, inputs.schema()),
        res.cost,
        res.ps
    );
    for alt in &res.alternatives {
        let _ = writeln!(
            summary,
            "  alternative: {}  (cost {:.6}, PS {:.6})",
            factor_text(&alt.factor, inputs.schema()),
            alt.cost,
            alt.ps
        );
    }
    Ok(Output {
        json: document(cfg, &res)?,
        summary,
        csv: None,
    })
}

fn node_index(scm: &Scm, node: &str) -> CliResult<usize> {
    if let Some(i) = scm.schema().index_of(node) {
        return Ok(i);
    }
    match node.parse::<usize>() {
        Ok(i) if i < scm.arity() => Ok(i),
        _ => Err(invalid(format!("no node `{node}` in the causal model"))),
    }
}

fn pearl(cfg: &mut Effective) -> CliResult<Output> {
    let path = cfg.scm.clone().expect("resolved");
    let scm = Scm::from_json_file(&path, None).map_err(|e| CliError::ScmLoad {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let cause = node_index(&scm, cfg.cause.as_deref().expect("resolved"))?;
    let effect = node_index(&scm, cfg.effect.as_deref().expect("resolved"))?;
    let (x, y) = (cfg.cause_value.expect("resolved"), cfg.effect_value.expect("resolved"));
    let res = pearl_suf_nec(&scm, cause, effect, x, y, cfg.estimation_config())?;
    let summary = format!(
        "{}={x}, {}={y}: sufficiency {:.6}, necessity {:.6}\n",
        cfg.cause.as_deref().unwrap_or_default(),
        cfg.effect.as_deref().unwrap_or_default(),
        res.suf,
        res.nec
    );
    Ok(Output {
        json: document(cfg, res)?,
        summary,
        csv: None,
    })
}
