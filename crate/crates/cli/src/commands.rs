use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fundus_core::data::{dataset_stats, generate_synthetic, split_patients, Manifest, Partition, PartitionSpec, Style, SyntheticSpec};
use fundus_core::ensemble::{ensemble_predict, predictor_study, reshuffle_ensemble_sweep, study_csv, EnsembleSpec, MemberRef, SweepConfig};
use fundus_core::metrics::ScoreSet;
use fundus_core::model::build_model;
use fundus_core::report::{training_curves_svg, val_test_scatter_svg, ScatterPoint};
use fundus_core::stats::{render_table, significance_table, ReportJson};
use fundus_core::train::{predict, read_metrics_csv, score_set, train_manifest, ImageSet};

use crate::common::*;
use crate::{CrosstestArgs, EnsembleArgs, EvalArgs, ReportArgs, ReshuffleArgs, SynthArgs, TrainArgs};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).rt(|| format!("writing {}", path.display()))
}

fn parse_fractions(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| usage(anyhow!("expected comma-separated fractions, got {s:?}")))
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let style = match a.style.as_str() {
        "a" | "A" => Style::A,
        "b" | "B" => Style::B,
        other => return Err(usage(anyhow!("style must be a or b, got {other:?}"))),
    };
    let spec = SyntheticSpec {
        style,
        id_prefix: a.prefix.clone(),
        ..SyntheticSpec::new(a.patients, a.delta, a.size, a.seed)
    };
    spec.validate().map_err(usage)?;
    let split = match a.split.as_str() {
        "none" => None,
        s => match parse_fractions(s)?.as_slice() {
            &[tr, va, te] => {
                let p = PartitionSpec::new(tr, va, te, a.seed);
                p.validate().map_err(usage)?;
                Some(p)
            }
            _ => return Err(usage(anyhow!("--split needs three fractions or `none`"))),
        },
    };
    if a.delta == 0.0 {
        eprintln!("warning: delta = 0 plants no signal; expect chance-level AUC (about 0.5)");
    }
    prepare_out_dir(&a.out, a.force)?;
    let (mut manifest, _) = generate_synthetic(&spec, &a.out).rt(|| "generating images".into())?;
    if let Some(p) = split {
        manifest = split_patients(&manifest, &p).rt(|| "splitting patients".into())?;
        manifest.write(&a.out.join("manifest.csv")).rt(|| "writing manifest".into())?;
    }
    print!("{}", dataset_stats(&manifest).to_csv());
    println!("wrote {} images to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn run_dir(runs_dir: &Path, name: &str, force: bool) -> CliResult<PathBuf> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(usage(anyhow!("run name {name:?} must be a plain directory name")));
    }
    let dir = runs_dir.join(name);
    if let Ok(mut it) = std::fs::read_dir(&dir) {
        if it.next().is_some() && !force {
            return Err(usage(anyhow!("{} exists and is not empty; pass --force to overwrite", dir.display())));
        }
    }
    Ok(dir)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let c = &a.config;
    let cfg = load_config(&c.config, &c.overrides)?;
    let dir = run_dir(&c.runs_dir, &cfg.name, c.force)?;
    let manifest = partitioned_manifest(&manifest_path(&cfg, None)?, &cfg)?;
    let model = build_model(&cfg.model).map_err(usage)?;
    let outcome = train_manifest(model, &manifest, &cfg.train, |r| {
        eprintln!(
            "epoch {:>4}  train bce {:.4} auc {:.4}  val bce {:.4} auc {:.4} acc {:.4}  lr {:.3e}",
            r.epoch, r.train_bce, r.train_auc, r.val_bce, r.val_auc, r.val_acc, r.lr
        )
    })
    .rt(|| "training".into())?;

    prepare_out_dir(&dir, true)?;
    write(&dir.join("resolved.cfg"), cfg.to_text())?;
    outcome.write(&dir).rt(|| format!("writing run outputs to {}", dir.display()))?;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).rt(|| "creating plots/".into())?;
    let svg = training_curves_svg(&cfg.name, &outcome.records, outcome.best_epoch).rt(|| "plotting".into())?;
    write(&plots.join("training_curves.svg"), svg)?;
    println!(
        "{}: {} epochs, best epoch {} (val AUC {:.4})",
        dir.display(),
        outcome.records.len(),
        outcome.best_epoch,
        outcome.best.meta.val_auc
    );
    Ok(())
}

fn print_table(reports: &[fundus_core::stats::NamedReport], alpha: f64) {
    print!("{}", render_table(&significance_table(reports, alpha)));
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let cfg = run_config(&a.run)?;
    let partitions = match a.partition.as_str() {
        "all" => vec![Partition::Val, Partition::Test],
        p => vec![parse_partition(p)?],
    };
    let boot = bootstrap_config(&cfg.bootstrap, a.bootstrap.b, a.bootstrap.alpha, a.bootstrap.seed)?;
    let ckpt = load_run_checkpoint(&a.run, a.checkpoint.as_deref())?;
    let manifest = partitioned_manifest(&manifest_path(&cfg, a.manifest.as_deref())?, &cfg)?;
    let mut sets = Vec::new();
    for p in partitions {
        let set = ImageSet::load(&manifest, Some(p), &cfg.train.preprocess).rt(|| format!("loading {p} images"))?;
        if set.is_empty() {
            return Err(runtime(anyhow!("{p} partition is empty")));
        }
        let probs = predict(&ckpt.model, &set, &cfg.train.preprocess, cfg.train.normalize).rt(|| "scoring".into())?;
        sets.push((p.to_string(), score_set(&set, &probs)));
    }
    let reports = write_reports(&a.run, &sets, &boot)?;
    print_table(&reports, boot.alpha);
    Ok(())
}

fn image_ids(m: &Manifest) -> BTreeSet<String> {
    m.entries.iter().map(|e| e.image_id()).collect()
}

pub fn crosstest(a: CrosstestArgs) -> CliResult<()> {
    let cfg = run_config(&a.run)?;
    let boot = bootstrap_config(&cfg.bootstrap, a.bootstrap.b, a.bootstrap.alpha, a.bootstrap.seed)?;
    let ckpt = load_run_checkpoint(&a.run, a.checkpoint.as_deref())?;
    let external = Manifest::read(&a.manifest).rt(|| format!("reading manifest {}", a.manifest.display()))?;
    if let Some(own) = &cfg.manifest {
        let own = Manifest::read(own).rt(|| format!("reading training manifest {}", own.display()))?;
        let clash: Vec<String> = image_ids(&own).intersection(&image_ids(&external)).take(5).cloned().collect();
        if !clash.is_empty() {
            return Err(runtime(anyhow!(
                "image ids appear in both the training and external manifests (e.g. {})",
                clash.join(", ")
            )));
        }
    }
    let set = ImageSet::load(&external, None, &cfg.train.preprocess).rt(|| "loading external images".into())?;
    let probs = predict(&ckpt.model, &set, &cfg.train.preprocess, cfg.train.normalize).rt(|| "scoring".into())?;
    let name = format!("crosstest_{}", a.tag);
    let reports = write_reports(&a.run, &[(name, score_set(&set, &probs))], &boot)?;
    print_table(&reports, boot.alpha);
    Ok(())
}

fn member_id(run: &Path) -> String {
    run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn ensemble(a: EnsembleArgs) -> CliResult<()> {
    if a.runs.len() != a.big_l {
        return Err(usage(anyhow!("L = {} but {} runs given", a.big_l, a.runs.len())));
    }
    let part = parse_partition(&a.partition)?;
    let mut members = Vec::new();
    let mut refs = Vec::new();
    let mut first_cfg = None;
    for run in &a.runs {
        let cfg = run_config(run)?;
        let ckpt = load_run_checkpoint(run, None)?;
        let id = member_id(run);
        if let Some(f) = &first_cfg {
            let f: &fundus_core::experiment::ExperimentConfig = f;
            if f.train.preprocess != cfg.train.preprocess || f.train.normalize != cfg.train.normalize {
                return Err(usage(anyhow!("run {id} preprocesses images differently from {}", member_id(&a.runs[0]))));
            }
        } else {
            first_cfg = Some(cfg.clone());
        }
        refs.push(MemberRef {
            id: id.clone(),
            val_auc: ckpt.meta.val_auc,
        });
        members.push((id, ckpt));
    }
    let cfg = first_cfg.expect("at least one run");
    let spec = EnsembleSpec::new(a.ell, a.big_l, refs).map_err(usage)?;
    let boot = bootstrap_config(&cfg.bootstrap, a.bootstrap.b, a.bootstrap.alpha, a.bootstrap.seed)?;
    let manifest = partitioned_manifest(&manifest_path(&cfg, a.manifest.as_deref())?, &cfg)?;
    let set = ImageSet::load(&manifest, Some(part), &cfg.train.preprocess).rt(|| format!("loading {part} images"))?;
    if set.is_empty() {
        return Err(runtime(anyhow!("{part} partition is empty")));
    }
    prepare_out_dir(&a.out, a.force)?;

    let mut probs = BTreeMap::new();
    for (id, ckpt) in &members {
        let p = predict(&ckpt.model, &set, &cfg.train.preprocess, cfg.train.normalize).rt(|| format!("scoring {id}"))?;
        probs.insert(id.clone(), p);
    }
    let ens = ensemble_predict(&spec, &probs).map_err(runtime)?;
    let mut sets: Vec<(String, ScoreSet)> = spec
        .members
        .iter()
        .map(|m| (format!("member_{}", m.id), score_set(&set, &probs[&m.id])))
        .collect();
    sets.push(("ensemble".into(), score_set(&set, &ens)));
    let reports = write_reports(&a.out, &sets, &boot)?;

    let selected: BTreeSet<&str> = spec.selected().iter().map(|m| m.id.as_str()).collect();
    let mut table = format!("run\tval_auc\tselected\t{part}_auc\tci_lo\tci_hi\tp_empir\tp_adj\n");
    for (i, r) in reports.iter().enumerate() {
        let (label, val, sel) = match spec.members.get(i) {
            Some(m) => (m.id.clone(), format!("{:.4}", m.val_auc), selected.contains(m.id.as_str()).to_string()),
            None => ("E*".to_string(), "-".to_string(), "-".to_string()),
        };
        let j = ReportJson::from(r);
        writeln!(
            table,
            "{label}\t{val}\t{sel}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            j.estimate,
            j.ci_lo,
            j.ci_hi,
            r.report.p_display(),
            j.p_adj.map_or("-".into(), |p| format!("{p:.4}"))
        )
        .expect("string write");
    }
    write(&a.out.join("ensemble_table.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn reshuffle(a: ReshuffleArgs) -> CliResult<()> {
    let c = &a.config;
    let cfg = load_config(&c.config, &c.overrides)?;
    let dir = run_dir(&c.runs_dir, &cfg.name, c.force)?;
    let manifest = partitioned_manifest(&manifest_path(&cfg, None)?, &cfg)?;
    let dev_entries = manifest
        .entries
        .iter()
        .filter(|e| matches!(e.partition, Partition::Train | Partition::Val))
        .cloned()
        .collect();
    let dev = Manifest::new(dev_entries, manifest.root.clone()).rt(|| "building development set".into())?;
    let test = ImageSet::load(&manifest, Some(Partition::Test), &cfg.train.preprocess).rt(|| "loading test images".into())?;
    if test.is_empty() {
        return Err(runtime(anyhow!("test partition is empty")));
    }
    let r = &cfg.reshuffle;
    let sweep = SweepConfig {
        n_models: r.n_models,
        sizes: r.sizes.clone(),
        trials_per_size: r.trials,
        split: r.split,
        seed: cfg.seed,
    };
    let outcome = reshuffle_ensemble_sweep(&dev, &test, &cfg.model, &cfg.train, &sweep, |j, m| {
        eprintln!("member {:>3}: val AUC {:.4}  test AUC {:.4}", j, m.val_auc, m.test_auc)
    })
    .rt(|| "reshuffled ensemble sweep".into())?;

    prepare_out_dir(&dir, true)?;
    write(&dir.join("resolved.cfg"), cfg.to_text())?;
    write(&dir.join("sweep.csv"), outcome.to_csv())?;
    let mut members = String::from("member,val_auc,val_acc,test_auc\n");
    for (j, m) in outcome.members.iter().enumerate() {
        writeln!(members, "{j},{},{},{}", m.val_auc, m.val_acc, m.test_auc).expect("string write");
    }
    write(&dir.join("members.csv"), members)?;
    let mut summary = String::from("size,mean_test_auc,ci_lo,ci_hi\n");
    for s in outcome.summary() {
        writeln!(summary, "{},{},{},{}", s.size, s.mean_test_auc, s.ci.0, s.ci.1).expect("string write");
    }
    write(&dir.join("sweep_summary.csv"), &summary)?;
    write(&dir.join("predictor_study.csv"), study_csv(&predictor_study(&outcome.rows)))?;
    print!("{summary}");
    Ok(())
}

fn read_report(path: &Path) -> Option<ReportJson> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut produced = 0usize;
    let mut points = Vec::new();
    for run in &a.runs {
        let metrics = run.join("metrics.csv");
        if metrics.exists() {
            let text = std::fs::read_to_string(&metrics).rt(|| format!("reading {}", metrics.display()))?;
            let records = read_metrics_csv(&text).rt(|| format!("parsing {}", metrics.display()))?;
            let best = load_run_checkpoint(run, None)?.meta.epoch as usize;
            let svg = training_curves_svg(&member_id(run), &records, best).map_err(usage)?;
            let plots = run.join("plots");
            std::fs::create_dir_all(&plots).rt(|| "creating plots/".into())?;
            write(&plots.join("training_curves.svg"), svg)?;
            produced += 1;
        }
        if let (Some(val), Some(test)) = (read_report(&run.join("report_val.json")), read_report(&run.join("report_test.json"))) {
            points.push(ScatterPoint {
                label: member_id(run),
                val_auc: val.estimate,
                test_auc: test.estimate,
                n: test.n,
            });
        }
    }
    if !points.is_empty() {
        let out = a.out.clone().unwrap_or_else(|| a.runs[0].join("plots"));
        std::fs::create_dir_all(&out).rt(|| format!("creating {}", out.display()))?;
        let svg = val_test_scatter_svg("validation vs test AUC", &points).map_err(usage)?;
        write(&out.join("val_test.svg"), svg)?;
        produced += 1;
    }
    if produced == 0 {
        return Err(usage(anyhow!(
            "nothing to report: no metrics.csv or val/test reports in the given runs"
        )));
    }
    println!("wrote {produced} plot(s)");
    Ok(())
}
