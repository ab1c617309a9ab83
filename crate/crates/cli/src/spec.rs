//! Experiment spec files and how their pieces resolve into library objects.
//!
//! Relative paths inside a spec resolve against the spec file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use memlearn::automata::MechanismBlueprint;
use memlearn::search::SearchConfig;
use memlearn::signals::{alternating_family, sup_ratio_model, symmetric_model};
use memlearn::{Problem, SignalModel, UpdatingMechanism};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Optional guard: when present it must name the command being run.
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub problem: Option<Value>,
    #[serde(default)]
    pub mechanism: Option<Value>,
    #[serde(default)]
    pub mechanism_b: Option<Value>,
    #[serde(default)]
    pub varsigma: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub closed_forms: Vec<ClosedForm>,
    #[serde(default)]
    pub search: Option<SearchSpec>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Gamma,
    M,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Enumeration budget for `m` sweeps.
    #[serde(default)]
    pub budget: Option<u128>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosedForm {
    Prop4 {
        nu: f64,
        tau: f64,
        ups: f64,
    },
    Symmetric {
        n: usize,
        info: f64,
    },
    Star {
        lam: usize,
        #[serde(default)]
        delta: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Enumerate,
    Local,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub mode: SearchMode,
    #[serde(default)]
    pub config: SearchConfig,
    #[serde(default)]
    pub budget: Option<u128>,
    /// Loss to report the gap against.
    #[serde(default)]
    pub reference_loss: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub steps: usize,
    #[serde(default)]
    pub burn_in: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSpec {
    model: Value,
    #[serde(default)]
    utilities: Option<Vec<f64>>,
    #[serde(default)]
    priors: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelSpec {
    Inline { mass: Vec<Vec<f64>> },
    File { path: PathBuf },
    Alternating { n: usize },
    Symmetric { n: usize, info: f64 },
    SupRatio { tau: f64, ups: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineMechanism {
    m: usize,
    transition: Vec<Vec<Vec<f64>>>,
    decision: Vec<usize>,
    initial: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRef {
    file: PathBuf,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn from_value<T: DeserializeOwned>(value: Value, origin: &Path) -> CliResult<T> {
    serde_json::from_value(value).map_err(|source| CliError::Json {
        path: origin.to_path_buf(),
        source,
    })
}

fn is_file_ref(value: &Value) -> bool {
    value
        .as_object()
        .is_some_and(|o| o.len() == 1 && o.contains_key("file"))
}

/// Follows a `{"file": ...}` indirection, returning the loaded value and
/// the file it came from.
fn resolve(value: &Value, base: &Path, origin: &Path) -> CliResult<(Value, PathBuf)> {
    if is_file_ref(value) {
        let r: FileRef = from_value(value.clone(), origin)?;
        let path = base.join(r.file);
        let loaded = read_json(&path)?;
        Ok((loaded, path))
    } else {
        Ok((value.clone(), origin.to_path_buf()))
    }
}

pub struct Loaded {
    pub spec: ExperimentSpec,
    pub path: PathBuf,
    base: PathBuf,
}

impl Loaded {
    pub fn open(path: &Path) -> CliResult<Self> {
        let spec: ExperimentSpec = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            spec,
            path: path.to_path_buf(),
            base,
        })
    }

    pub fn check_command(&self, name: &str) -> CliResult<()> {
        match &self.spec.command {
            Some(c) if c != name => Err(CliError::Usage(format!(
                "spec is for command `{c}`, not `{name}`"
            ))),
            _ => Ok(()),
        }
    }

    pub fn model(&self) -> CliResult<SignalModel> {
        Ok(self.problem()?.model().clone())
    }

    pub fn problem(&self) -> CliResult<Problem> {
        let raw = self
            .spec
            .problem
            .as_ref()
            .ok_or_else(|| CliError::Usage("spec has no `problem`".into()))?;
        let (value, origin) = resolve(raw, &self.base, &self.path)?;
        let base = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        let spec: ProblemSpec = from_value(value, &origin)?;
        let (model_value, model_origin) = resolve(&spec.model, &base, &origin)?;
        let model_base = model_origin
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let model = build_model(from_value(model_value, &model_origin)?, &model_base)?;
        let n = model.n_states();
        let problem = match (spec.utilities, spec.priors) {
            (None, None) => Problem::uniform(model),
            (u, p) => Problem::new(
                u.unwrap_or_else(|| vec![1.0; n]),
                p.unwrap_or_else(|| vec![1.0 / n as f64; n]),
                model,
            )?,
        };
        Ok(problem)
    }

    pub fn mechanism(&self, problem: &Problem) -> CliResult<UpdatingMechanism> {
        self.mechanism_from(self.spec.mechanism.as_ref(), "mechanism", problem)
    }

    pub fn mechanism_b(&self, problem: &Problem) -> CliResult<UpdatingMechanism> {
        self.mechanism_from(self.spec.mechanism_b.as_ref(), "mechanism_b", problem)
    }

    /// The mechanism entry as a blueprint, for sweeps that vary its parameters.
    pub fn blueprint(&self) -> CliResult<MechanismBlueprint> {
        let raw = self
            .spec
            .mechanism
            .as_ref()
            .ok_or_else(|| CliError::Usage("spec has no `mechanism`".into()))?;
        let (value, origin) = resolve(raw, &self.base, &self.path)?;
        from_value(value, &origin)
    }

    fn mechanism_from(
        &self,
        raw: Option<&Value>,
        key: &str,
        problem: &Problem,
    ) -> CliResult<UpdatingMechanism> {
        let raw = raw.ok_or_else(|| CliError::Usage(format!("spec has no `{key}`")))?;
        let (value, origin) = resolve(raw, &self.base, &self.path)?;
        let inline = value
            .as_object()
            .is_some_and(|o| o.contains_key("transition"));
        if inline {
            let m: InlineMechanism = from_value(value, &origin)?;
            if m.m != m.transition.len() {
                return Err(memlearn::Error::Shape(format!(
                    "declared {} memory states but transition has {}",
                    m.m,
                    m.transition.len()
                ))
                .into());
            }
            Ok(UpdatingMechanism::new(m.transition, m.decision, m.initial)?)
        } else {
            let bp: MechanismBlueprint = from_value(value, &origin)?;
            Ok(bp.build(problem.model())?)
        }
    }

    /// `--seed` wins over the spec; one of them must be given.
    pub fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        flag.or(self.spec.seed).ok_or_else(|| {
            CliError::Usage("a seed is required: set `seed` in the spec or pass --seed".into())
        })
    }
}

fn build_model(spec: ModelSpec, base: &Path) -> CliResult<SignalModel> {
    Ok(match spec {
        ModelSpec::Inline { mass } => SignalModel::new(mass)?,
        ModelSpec::File { path } => {
            let path = base.join(path);
            let value: Value = read_json(&path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            build_model(from_value(value, &path)?, &base)?
        }
        ModelSpec::Alternating { n } => alternating_family(n)?,
        ModelSpec::Symmetric { n, info } => symmetric_model(n, info)?,
        ModelSpec::SupRatio { tau, ups } => sup_ratio_model(tau, ups)?,
    })
}
