//! JSON run configuration: presets, file keys, flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fal_core::adversary::{AdversaryConfig, AdversaryMode};
use fal_core::data::{
    gen_gaussian_clusters, gen_separable_sphere, load_csv, ClusterSpec, DataMode, DataPoint,
    FederatedDataset,
};
use fal_core::federation::{FalConfig, Regime};
use fal_core::model::LossKind;
use fal_core::rng::dataset_stream;
use fal_core::verification::ConvergenceProbe;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Theory,
    Experiment6,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Fal,
    Fedavg,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<AdversaryMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
}

/// Where the training data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Sphere {
        n_clients: usize,
        per_client: usize,
        d: usize,
        delta: f64,
    },
    Clusters(ClusterSpec),
    Csv {
        train: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
    },
}

/// Contents of a config file. Every key is optional; missing keys come from
/// the preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_local: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_global: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryFile>,
    /// `0` selects full-batch steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel_clients: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_audit_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accumulate_adv_set: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
}

/// Fully resolved run description, written as `resolved_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub preset: Preset,
    pub algorithm: Algorithm,
    pub out: PathBuf,
    pub fal: FalConfig,
    pub data: DataSource,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub local_steps: Option<usize>,
    pub eta_local: Option<f64>,
    pub eta_global: Option<f64>,
    pub width: Option<usize>,
    pub rho: Option<f64>,
    pub batch_size: Option<usize>,
    pub grad_audit_every: Option<usize>,
    pub accumulate_adv_set: bool,
    pub scale: Option<f64>,
    pub sequential: bool,
}

pub const DEFAULT_OUT: &str = "fal-out";

/// Parses a config document. Syntax and schema errors carry line numbers.
pub fn parse_config(text: &str) -> Result<RunConfigFile, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
    })
}

pub fn read_config(path: &Path) -> Result<RunConfigFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    // a resolved config can be fed back directly
    if let Ok(resolved) = serde_json::from_str::<ResolvedConfig>(&text) {
        return Ok(resolved.into_file());
    }
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn theory_defaults() -> (FalConfig, DataSource) {
    let probe = ConvergenceProbe::default();
    let data = DataSource::Sphere {
        n_clients: probe.n_clients,
        per_client: probe.per_client,
        d: probe.d,
        delta: probe.delta,
    };
    (probe.config(), data)
}

fn experiment6_defaults() -> (FalConfig, DataSource) {
    let spec = ClusterSpec {
        scale: 2.5,
        ..ClusterSpec::default()
    };
    (FalConfig::experiment(1e-5), DataSource::Clusters(spec))
}

impl ResolvedConfig {
    pub fn into_file(self) -> RunConfigFile {
        let f = self.fal;
        let a = f.adversary;
        RunConfigFile {
            preset: Some(self.preset),
            algorithm: Some(self.algorithm),
            out: Some(self.out),
            seed: Some(f.seed),
            rounds: Some(f.rounds),
            local_steps: Some(f.local_steps),
            eta_local: Some(f.eta_local),
            eta_global: Some(f.eta_global),
            width: Some(f.width),
            loss: Some(f.loss),
            adversary: Some(AdversaryFile {
                mode: Some(a.mode),
                rho: Some(a.rho),
                steps: Some(a.steps),
                step_size: Some(a.step_size),
                restarts: Some(a.restarts),
                grid_resolution: Some(a.grid_resolution),
            }),
            batch_size: Some(f.batch_size.unwrap_or(0)),
            parallel_clients: Some(f.parallel_clients),
            grad_audit_every: Some(f.grad_audit_every),
            accumulate_adv_set: Some(f.accumulate_adv_set),
            data: Some(self.data),
        }
    }
}

/// Preset, then file keys, then flags.
pub fn resolve(file: RunConfigFile, flags: &Overrides) -> Result<ResolvedConfig, CliError> {
    let preset = flags.preset.or(file.preset).unwrap_or(Preset::Theory);
    let (mut fal, mut data) = match preset {
        Preset::Theory => theory_defaults(),
        Preset::Experiment6 => experiment6_defaults(),
    };

    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = flags.$field.or(file.$field) {
                fal.$field = v;
            }
        };
    }
    set!(seed);
    set!(rounds);
    set!(local_steps);
    set!(eta_local);
    set!(eta_global);
    set!(width);
    set!(grad_audit_every);
    if let Some(v) = file.loss {
        fal.loss = v;
    }
    if let Some(v) = file.parallel_clients {
        fal.parallel_clients = v;
    }
    if flags.sequential {
        fal.parallel_clients = false;
    }
    if let Some(v) = file.accumulate_adv_set {
        fal.accumulate_adv_set = v;
    }
    if flags.accumulate_adv_set {
        fal.accumulate_adv_set = true;
    }
    if let Some(b) = flags.batch_size.or(file.batch_size) {
        fal.batch_size = (b > 0).then_some(b);
    }
    if let Some(a) = file.adversary {
        apply_adversary(&mut fal.adversary, a);
    }
    if let Some(rho) = flags.rho {
        fal.adversary.rho = rho;
    }

    if let Some(d) = file.data {
        data = d;
    }
    if let Some(scale) = flags.scale {
        match &mut data {
            DataSource::Clusters(spec) => spec.scale = scale,
            _ => return Err(CliError::Config("--scale applies to cluster data only".into())),
        }
    }

    let algorithm = file.algorithm.unwrap_or_default();
    let out = flags
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    if preset == Preset::Theory && fal.regime == Regime::Theory {
        // the theory preset ties η_loc to K unless the file sets it explicitly
        if flags.eta_local.or(file.eta_local).is_none() {
            fal.eta_local = 1.0 / fal.local_steps.max(1) as f64;
        }
    }
    fal.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let DataSource::Sphere { delta, .. } = data {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(CliError::Config(format!("data.delta must lie in (0, 1/2), got {delta}")));
        }
    }
    Ok(ResolvedConfig {
        preset,
        algorithm,
        out,
        fal,
        data,
    })
}

fn apply_adversary(cfg: &mut AdversaryConfig, a: AdversaryFile) {
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = a.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = a.grid_resolution {
        cfg.grid_resolution = v;
    }
}

/// Training set and (possibly empty) test set described by `source`.
pub fn load_data(
    source: &DataSource,
    seed: u64,
) -> fal_core::Result<(FederatedDataset<f64>, Vec<DataPoint<f64>>)> {
    let rng = dataset_stream(seed);
    match source {
        DataSource::Sphere {
            n_clients,
            per_client,
            d,
            delta,
        } => Ok((gen_separable_sphere(*n_clients, *per_client, *d, *delta, &rng)?, Vec::new())),
        DataSource::Clusters(spec) => gen_gaussian_clusters(spec, &rng),
        DataSource::Csv { train, test } => {
            let train = load_csv(train)?;
            let test = match test {
                Some(p) => load_csv::<f64>(p)?.points().cloned().collect(),
                None => Vec::new(),
            };
            Ok((train, test))
        }
    }
}

/// Data mode a source produces, for regime checks before generation.
pub fn source_mode(source: &DataSource) -> Option<DataMode> {
    match source {
        DataSource::Sphere { .. } => Some(DataMode::Sphere),
        DataSource::Clusters(_) => Some(DataMode::Clusters),
        DataSource::Csv { .. } => None,
    }
}
