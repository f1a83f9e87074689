use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use lens_core::order::OrderKind;
use lens_core::EstimationConfig;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

pub const SEED_VAR: &str = "LENS_SEED";
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_PERMUTATIONS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Explain,
    Shapley,
    Recourse,
    Pearl,
    SweepTau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    R2i,
    I2r,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    Targets,
    FullIntervention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationKind {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ShapleyKind {
    Exact,
    Permutation,
}

fn parse_order(s: &str) -> Result<OrderKind, String> {
    s.parse().map_err(|e: lens_core::Error| e.to_string())
}

/// Run parameters, read from flags and from an optional JSON config file
/// with the same keys in camelCase. Every field is optional here; defaults
/// are filled in by [`Settings::resolve`].
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Settings {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Reference data set (CSV with a header row).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV column holding labels, excluded from the features.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Feature schema as JSON; inferred from the data when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Built-in model as JSON.
    #[arg(long, conflicts_with = "external_model")]
    pub model: Option<PathBuf>,
    /// Command line of an external model process.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pub external_model: Option<Vec<String>>,

    /// Row of the data set to explain.
    #[arg(long, conflicts_with = "input")]
    pub row: Option<usize>,
    /// Instance to explain, comma separated; categorical values are level indices.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub input: Option<Vec<f64>>,

    #[arg(long, value_enum)]
    pub context: Option<ContextKind>,
    /// Largest target set of the context.
    #[arg(long)]
    pub max_target_cardinality: Option<usize>,
    /// Whether the context includes the empty target set.
    #[arg(long)]
    pub include_empty_target_set: Option<bool>,

    #[arg(long, value_enum)]
    pub space: Option<SpaceKind>,
    /// Largest factor of the space.
    #[arg(long)]
    pub space_max_cardinality: Option<usize>,
    /// Target-set factors hold on supersets of their targets.
    #[arg(long)]
    pub containment: Option<bool>,
    /// subset, cost:target-count or cost:normalized-l1.
    #[arg(long, value_parser = parse_order)]
    pub order: Option<OrderKind>,

    #[arg(long)]
    pub tau: Option<f64>,
    /// Thresholds for sweep-tau, comma separated and ascending.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Outcome to explain; the model's prediction on the input by default.
    #[arg(long)]
    pub outcome: Option<u8>,

    #[arg(long, value_enum)]
    pub estimation: Option<EstimationKind>,
    /// Monte Carlo samples per estimate.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Monte Carlo seed; falls back to the LENS_SEED environment variable, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Level of the one-sided binomial test applied to Monte Carlo estimates.
    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long, value_enum)]
    pub shapley_mode: Option<ShapleyKind>,
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Include the coalition value cache in Shapley output.
    #[arg(long)]
    pub verbose: Option<bool>,

    /// Structural causal model as JSON.
    #[arg(long)]
    pub scm: Option<PathBuf>,
    /// Cause node, by name or index.
    #[arg(long)]
    pub cause: Option<String>,
    /// Effect node, by name or index.
    #[arg(long)]
    pub effect: Option<String>,
    #[arg(long)]
    pub cause_value: Option<u8>,
    #[arg(long)]
    pub effect_value: Option<u8>,

    /// Where to write the result; JSON goes to standard output otherwise.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// sweep-tau only: also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($field:ident),+ $(,)?) => {
        Settings {
            config: $top.config.or($base.config),
            $($field: $top.$field.or($base.$field),)+
        }
    };
}

impl Settings {
    /// Values present in `self` win over those in `base`.
    pub fn overlay(self, base: Settings) -> Settings {
        overlay!(
            self, base, data, label_column, schema, model, external_model, row, input, context,
            max_target_cardinality, include_empty_target_set, space, space_max_cardinality, containment, order,
            tau, taus, outcome, estimation, samples, seed, alpha, shapley_mode, permutations, verbose, scm, cause,
            effect, cause_value, effect_value, output, report,
        )
    }

    pub fn from_file(path: &Path) -> CliResult<Settings> {
        let fail = |reason: String| CliError::ConfigLoad {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| fail(e.to_string()))
    }

    /// Reads the config file, if any, under the command-line values.
    pub fn with_file(self) -> CliResult<Settings> {
        match &self.config {
            Some(path) => {
                let file = Settings::from_file(path)?;
                Ok(self.overlay(file))
            }
            None => Ok(self),
        }
    }
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn check_tau(tau: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&tau) {
        Ok(tau)
    } else {
        Err(invalid(format!("tau {tau} outside [0, 1]")))
    }
}

fn check_binary(name: &str, v: Option<u8>) -> CliResult<Option<u8>> {
    match v {
        Some(v) if v > 1 => Err(invalid(format!("{name} must be 0 or 1, got {v}"))),
        v => Ok(v),
    }
}

fn default_seed() -> CliResult<u64> {
    match std::env::var(SEED_VAR) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{SEED_VAR}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Fully resolved configuration, echoed into every report. Fields that do
/// not apply to the command are left out.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Effective {
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_model: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_target_cardinality: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_empty_target_set: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space_max_cardinality: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub containment: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapley: Option<lens_core::causation::ShapleyMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verbose: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scm: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause_value: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect_value: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

impl Effective {
    fn bare(command: Command, s: &Settings) -> Self {
        Effective {
            command,
            data: None,
            label_column: None,
            schema: None,
            model: None,
            external_model: None,
            row: None,
            input: None,
            context: None,
            max_target_cardinality: None,
            include_empty_target_set: None,
            space: None,
            space_max_cardinality: None,
            containment: None,
            order: None,
            tau: None,
            taus: None,
            outcome: None,
            estimation: None,
            shapley: None,
            verbose: None,
            scm: None,
            cause: None,
            effect: None,
            cause_value: None,
            effect_value: None,
            output: path_string(&s.output),
            report: None,
        }
    }

    pub fn estimation_config(&self) -> EstimationConfig {
        self.estimation.unwrap_or(EstimationConfig::Exact)
    }
}

/// Checks that the fields `command` needs are present and in range, and
/// fills in defaults. Anything that depends on the data (arity, the
/// model's prediction) is completed later by the runner.
pub fn resolve(command: Command, s: &Settings) -> CliResult<Effective> {
    let mut e = Effective::bare(command, s);

    let estimation = match s.estimation.unwrap_or(EstimationKind::Exact) {
        EstimationKind::Exact => {
            if s.samples.is_some() || s.alpha.is_some() {
                return Err(invalid("samples and alpha apply to Monte Carlo estimation only"));
            }
            EstimationConfig::Exact
        }
        EstimationKind::Mc => {
            let n = s.samples.unwrap_or(DEFAULT_SAMPLES);
            if n == 0 {
                return Err(invalid("samples must be at least 1"));
            }
            if let Some(a) = s.alpha {
                if !(a > 0.0 && a < 1.0) {
                    return Err(invalid(format!("alpha {a} outside (0, 1)")));
                }
            }
            EstimationConfig::MonteCarlo {
                n,
                seed: s.seed.map_or_else(default_seed, Ok)?,
                alpha: s.alpha,
            }
        }
    };

    if command == Command::Pearl {
        let need = |v: &Option<String>, name: &str| v.clone().ok_or_else(|| invalid(format!("pearl needs {name}")));
        e.scm = Some(path_string(&s.scm).ok_or_else(|| invalid("pearl needs scm"))?);
        e.cause = Some(need(&s.cause, "cause")?);
        e.effect = Some(need(&s.effect, "effect")?);
        e.cause_value = Some(check_binary("causeValue", s.cause_value)?.unwrap_or(1));
        e.effect_value = Some(check_binary("effectValue", s.effect_value)?.unwrap_or(1));
        e.estimation = Some(estimation);
        return Ok(e);
    }

    e.data = Some(path_string(&s.data).ok_or_else(|| invalid(format!("{} needs data", name(command))))?);
    e.label_column = s.label_column.clone();
    e.schema = path_string(&s.schema);
    match (&s.model, &s.external_model) {
        (Some(_), Some(_)) => return Err(invalid("give either model or externalModel, not both")),
        (None, None) => return Err(invalid(format!("{} needs model or externalModel", name(command)))),
        (Some(m), None) => e.model = Some(m.display().to_string()),
        (None, Some(cmd)) if cmd.is_empty() => return Err(invalid("externalModel command is empty")),
        (None, Some(cmd)) => e.external_model = Some(cmd.clone()),
    }
    match (s.row, &s.input) {
        (Some(_), Some(_)) => return Err(invalid("give either row or input, not both")),
        (None, None) => return Err(invalid(format!("{} needs row or input", name(command)))),
        (row, input) => {
            e.row = row;
            e.input = input.clone();
        }
    }

    if command == Command::Shapley {
        e.shapley = Some(match s.shapley_mode.unwrap_or(ShapleyKind::Exact) {
            ShapleyKind::Exact => lens_core::causation::ShapleyMode::Exact,
            ShapleyKind::Permutation => {
                let permutations = s.permutations.unwrap_or(DEFAULT_PERMUTATIONS);
                if permutations == 0 {
                    return Err(invalid("permutations must be at least 1"));
                }
                lens_core::causation::ShapleyMode::Permutation {
                    permutations,
                    seed: s.seed.map_or_else(default_seed, Ok)?,
                }
            }
        });
        e.verbose = Some(s.verbose.unwrap_or(false));
        return Ok(e);
    }

    let recourse = command == Command::Recourse;
    e.context = Some(s.context.unwrap_or(if recourse { ContextKind::I2r } else { ContextKind::R2i }));
    e.max_target_cardinality = s.max_target_cardinality;
    e.include_empty_target_set = Some(s.include_empty_target_set.unwrap_or(true));
    e.space = Some(s.space.unwrap_or(if recourse { SpaceKind::FullIntervention } else { SpaceKind::Targets }));
    e.space_max_cardinality = s.space_max_cardinality;
    e.containment = Some(s.containment.unwrap_or(false));
    e.order = Some(s.order.unwrap_or(if recourse {
        OrderKind::CostNormalizedL1
    } else {
        OrderKind::Subset
    }));
    e.estimation = Some(estimation);

    match command {
        Command::SweepTau => {
            if s.tau.is_some() {
                return Err(invalid("sweep-tau takes taus, not tau"));
            }
            let taus = s.taus.clone().ok_or_else(|| invalid("sweep-tau needs taus"))?;
            if taus.is_empty() {
                return Err(invalid("taus must not be empty"));
            }
            for &t in &taus {
                check_tau(t)?;
            }
            if taus.windows(2).any(|w| w[0] > w[1]) {
                return Err(invalid("taus must be sorted ascending"));
            }
            e.taus = Some(taus);
            e.outcome = check_binary("outcome", s.outcome)?;
            e.report = path_string(&s.report);
        }
        _ => {
            let tau = s.tau.ok_or_else(|| invalid(format!("{} needs tau", name(command))))?;
            e.tau = Some(check_tau(tau)?);
            if !recourse {
                e.outcome = check_binary("outcome", s.outcome)?;
            } else if s.outcome.is_some() {
                return Err(invalid("recourse always targets the flipped prediction; outcome is not accepted"));
            }
        }
    }
    Ok(e)
}

pub fn name(command: Command) -> &'static str {
    match command {
        Command::Explain => "explain",
        Command::Shapley => "shapley",
        Command::Recourse => "recourse",
        Command::Pearl => "pearl",
        Command::SweepTau => "sweep-tau",
    }
}
