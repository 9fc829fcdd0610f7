use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fundus_core::data::{split_patients, Manifest, Partition, PartitionSpec};
use fundus_core::experiment::ExperimentConfig;
use fundus_core::metrics::ScoreSet;
use fundus_core::model::{load_checkpoint, Checkpoint};
use fundus_core::stats::{adjust_reports, bootstrap_auc, BootstrapConfig, NamedReport, ReportJson};

/// An error plus the process exit code: 1 for usage/config, 2 for runtime.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub fn usage(error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        error: error.into(),
    }
}

pub fn runtime(error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        error: error.into(),
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait OrRuntime<T> {
    fn rt(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrRuntime<T> for Result<T, E> {
    fn rt(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| runtime(e.into().context(what())))
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::read(path).map_err(usage)?;
    cfg.apply_overrides(overrides).map_err(usage)?;
    Ok(cfg)
}

pub fn run_config(run: &Path) -> CliResult<ExperimentConfig> {
    let path = run.join("resolved.cfg");
    if !path.exists() {
        return Err(usage(anyhow!("{} is not a run directory (no resolved.cfg)", run.display())));
    }
    ExperimentConfig::read(&path).map_err(usage)
}

pub fn load_run_checkpoint(run: &Path, explicit: Option<&Path>) -> CliResult<Checkpoint> {
    let path = explicit.map_or_else(|| run.join("best.ckpt"), Path::to_path_buf);
    load_checkpoint(&path).rt(|| format!("loading checkpoint {}", path.display()))
}

pub fn manifest_path(cfg: &ExperimentConfig, explicit: Option<&Path>) -> CliResult<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| usage(anyhow!("no manifest: set data.manifest or pass --manifest")))
}

/// Reads a manifest, splitting it by patient with the config's `data.split`
/// when no entry carries a partition yet.
pub fn partitioned_manifest(path: &Path, cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let m = Manifest::read(path).rt(|| format!("reading manifest {}", path.display()))?;
    let unassigned = m.entries.iter().filter(|e| e.partition == Partition::Unassigned).count();
    if unassigned == 0 {
        return Ok(m);
    }
    if unassigned < m.entries.len() {
        return Err(runtime(anyhow!(
            "{}: {unassigned} of {} images have no partition; assign all or none",
            path.display(),
            m.entries.len()
        )));
    }
    let (a, b, c) = cfg.split;
    split_patients(&m, &PartitionSpec::new(a, b, c, cfg.seed)).rt(|| format!("splitting {}", path.display()))
}

pub fn parse_partition(s: &str) -> CliResult<Partition> {
    match s.parse::<Partition>() {
        Ok(p) if p != Partition::Unassigned => Ok(p),
        _ => Err(usage(anyhow!("partition must be train, val or test, got {s:?}"))),
    }
}

pub fn bootstrap_config(base: &BootstrapConfig, b: Option<usize>, alpha: Option<f64>, seed: Option<u64>) -> CliResult<BootstrapConfig> {
    let cfg = BootstrapConfig {
        b: b.unwrap_or(base.b),
        alpha: alpha.unwrap_or(base.alpha),
        seed: seed.unwrap_or(base.seed),
        mu_ref: base.mu_ref,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Bootstraps every score set, applies BH across them and writes
/// `scores_<name>.csv` and `report_<name>.json` into `dir`.
pub fn write_reports(dir: &Path, sets: &[(String, ScoreSet)], cfg: &BootstrapConfig) -> CliResult<Vec<NamedReport>> {
    let mut reports = sets
        .iter()
        .map(|(name, scores)| {
            Ok(NamedReport {
                name: name.clone(),
                report: bootstrap_auc(scores, cfg).rt(|| format!("bootstrapping {name}"))?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    adjust_reports(&mut reports).rt(|| "adjusting p-values".into())?;
    for ((name, scores), r) in sets.iter().zip(&reports) {
        let scores_path = dir.join(format!("scores_{name}.csv"));
        scores.write_csv(&scores_path).rt(|| format!("writing {}", scores_path.display()))?;
        let json = serde_json::to_string_pretty(&ReportJson::from(r)).rt(|| "serialising report".into())?;
        let report_path = dir.join(format!("report_{name}.json"));
        std::fs::write(&report_path, json + "\n").rt(|| format!("writing {}", report_path.display()))?;
    }
    Ok(reports)
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if let Ok(mut it) = std::fs::read_dir(dir) {
        if it.next().is_some() && !force {
            return Err(usage(anyhow!("{} exists and is not empty; pass --force to overwrite", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)
}
