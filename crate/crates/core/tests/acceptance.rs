//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fundus_core::data::{
    dataset_stats, generate_synthetic, split_patients, Eye, GroundTruth, Manifest, ManifestEntry, Partition, PartitionSpec, Sex,
    SyntheticSpec,
};
use fundus_core::ensemble::{reshuffle_ensemble_sweep, SweepConfig};
use fundus_core::experiment::ExperimentConfig;
use fundus_core::loss::{balanced_loss, bce_loss, LossKind};
use fundus_core::metrics::{auc, ScoreSet};
use fundus_core::model::{build_model, ModelConfig};
use fundus_core::stats::{benjamini_hochberg, bootstrap_auc, gaussian_auc, gaussian_scores, BootstrapConfig};
use fundus_core::tensor::{finite_difference_check, Mode, Tape, Tensor};
use fundus_core::train::{bce_increase_probe, predict, score_set, train, ImageSet, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Φ(1/√2), to ten digits.
const PHI_INV_SQRT2: f64 = 0.760_249_938_0;
/// Φ(√2), to ten digits.
const PHI_SQRT2: f64 = 0.921_350_396_2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.cfg"))
}

/// Preset D shrunk to a mini model on 64px synthetic images.
fn mini_d(seed: u64, extra: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::read(&preset("D")).expect("preset D");
    let mut sets: Vec<String> = [
        format!("seed={seed}"),
        "preprocess.wavelet_levels=1".into(),
        "preprocess.input_size=32".into(),
        "model.stem_channels=8".into(),
        "model.n_residual_units=2".into(),
        "model.hidden_layer_width=32".into(),
        "train.max_epochs=60".into(),
    ]
    .into();
    sets.extend(extra.iter().map(|s| s.to_string()));
    cfg.apply_overrides(&sets).expect("overrides");
    cfg
}

fn synth_split(patients: usize, seed: u64, split: (f64, f64, f64), dir: &Path) -> Manifest {
    synth_split_with_truth(patients, seed, split, dir).0
}

fn synth_split_with_truth(patients: usize, seed: u64, split: (f64, f64, f64), dir: &Path) -> (Manifest, Vec<GroundTruth>) {
    let (m, truth) = generate_synthetic(&SyntheticSpec::new(patients, 2.0, 64, seed), dir).expect("synth");
    let m = split_patients(&m, &PartitionSpec::new(split.0, split.1, split.2, seed)).expect("split");
    (m, truth)
}

/// AUC of the planted statistic itself on one partition.
fn oracle_auc(m: &Manifest, truth: &[GroundTruth], p: Partition) -> f64 {
    let ids: BTreeSet<String> = m.in_partition(p).map(|e| e.image_id()).collect();
    let rows: Vec<GroundTruth> = truth.iter().filter(|g| ids.contains(&g.id)).cloned().collect();
    auc(&GroundTruth::oracle_scores(&rows)).expect("oracle auc")
}

fn train_partitions(cfg: &ExperimentConfig, m: &Manifest) -> TrainOutcome {
    let prep = &cfg.train.preprocess;
    let tr = ImageSet::load(m, Some(Partition::Train), prep).expect("train set");
    let va = ImageSet::load(m, Some(Partition::Val), prep).expect("val set");
    train(build_model(&cfg.model).expect("model"), &tr, &va, &cfg.train, |_| {}).expect("train")
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let cfg = ModelConfig {
            input_size: rng.random_range(5..=9),
            channels: 3,
            stem_channels: rng.random_range(2..=4),
            stem_stride: rng.random_range(1..=2),
            n_residual_units: rng.random_range(1..=2),
            hidden_layer_width: rng.random_range(3..=6),
            dropout_p: if k % 2 == 0 { 0.0 } else { 0.3 },
            n_fc_layers: 2,
            seed: k,
        };
        let mut model = build_model(&cfg).expect("mini model");
        for (_, t) in model.params.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let n = 3;
        let numel = n * 3 * cfg.input_size * cfg.input_size;
        let x = Tensor::new(vec![n, 3, cfg.input_size, cfg.input_size], (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect())
            .expect("input");
        let labels = [0u8, 1, 1];
        let loss = LossKind::bce(0.92, 1.10);
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in &names {
            let theta = model.params.get(name).expect("param").clone();
            let err = finite_difference_check(
                |tape: &mut Tape, th| {
                    let mut vars = model.params.register(tape);
                    vars.replace(name, th);
                    let xi = tape.input(x.clone());
                    let p = model.forward(tape, &vars, xi, Mode::Train, 7).map_err(|e| match e {
                        fundus_core::model::ModelError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })?;
                    loss.on_tape(tape, p, &labels)
                },
                &theta,
                1e-6,
            )
            .expect("gradcheck");
            worst = worst.max(err);
        }
    }
    verdict(worst < 1e-5, format!("gradient check on 50 mini-models, max relative error {worst:.2e} (< 1e-5)"))
}

/// Pairwise concordance oracle: `(2·concordant + ties) / (2·P·N)`.
fn concordance_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut conc, mut ties, mut pos, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                if scores[i] > scores[j] {
                    conc += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
    }
    (2 * conc + ties) as f64 / (2 * pos * neg) as f64
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=500);
        let grid = rng.random_range(2..=50) as f64;
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0) * grid).floor() / grid).collect();
        let set = ScoreSet::from_pairs(&labels, &scores).expect("score set");
        if auc(&set).expect("auc") != concordance_auc(&labels, &scores) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("AUC equals the concordance oracle on 1000 tied score sets ({mismatches} mismatches)"))
}

fn criterion_3() -> Verdict {
    assert!((gaussian_auc(1.0) - PHI_INV_SQRT2).abs() < 1e-9);
    let sims = 1000;
    let mut covered = 0;
    for s in 0..sims {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + s);
        let scores = gaussian_scores(100, 100, 1.0, &mut rng);
        let cfg = BootstrapConfig {
            b: 1000,
            seed: s,
            ..Default::default()
        };
        let r = bootstrap_auc(&scores, &cfg).expect("bootstrap");
        if r.ci.0 <= PHI_INV_SQRT2 && PHI_INV_SQRT2 <= r.ci.1 {
            covered += 1;
        }
    }
    let coverage = covered as f64 / sims as f64;
    verdict(
        (0.93..=0.97).contains(&coverage),
        format!("bootstrap 95% CI coverage of {PHI_INV_SQRT2:.4} is {coverage:.3} over {sims} simulations (in [0.93, 0.97])"),
    )
}

/// Step-up definition: `adj_i = min(1, min over k ≥ rank(i) of p_(k)·m/k)`.
fn bh_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    for (rank0, &idx) in order.iter().enumerate() {
        let mut best = 1.0f64;
        for (k0, &j) in order.iter().enumerate().skip(rank0) {
            best = best.min(p[j] * (m as f64 / (k0 + 1) as f64));
        }
        out[idx] = best;
    }
    out
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let m = rng.random_range(1..=50);
        let mut p: Vec<f64> = (0..m).map(|_| 1.0 - rng.random_range(0.0..1.0)).collect();
        for i in 1..m {
            if rng.random_range(0..5) == 0 {
                p[i] = p[rng.random_range(0..i)];
            }
        }
        if benjamini_hochberg(&p).expect("bh") != bh_oracle(&p) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("BH equals the step-up oracle on 10000 p-vectors ({mismatches} mismatches)"))
}

fn criterion_5() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3u64 {
        let tmp = tempfile::tempdir().expect("tempdir");
        let cfg = mini_d(seed, &[]);
        let (m, truth) = synth_split_with_truth(200, seed, cfg.split, tmp.path());
        let out = train_partitions(&cfg, &m);
        let best_val = out.records[out.best_epoch - 1].val_auc;
        let prep = &cfg.train.preprocess;
        let test = ImageSet::load(&m, Some(Partition::Test), prep).expect("test set");
        let probs = predict(&out.best.model, &test, prep, cfg.train.normalize).expect("predict");
        let r = bootstrap_auc(&score_set(&test, &probs), &cfg.bootstrap).expect("bootstrap");
        let ok = best_val >= 0.85 && r.ci.1 >= 0.80 && r.estimate <= PHI_SQRT2 + 0.03;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: best val {best_val:.3} @ {} (planted {:.3}), test {:.3} [{:.3}, {:.3}] (planted {:.3})",
            out.best_epoch,
            oracle_auc(&m, &truth, Partition::Val),
            r.estimate,
            r.ci.0,
            r.ci.1,
            oracle_auc(&m, &truth, Partition::Test)
        ));
    }
    verdict(
        pass,
        format!(
            "planted signal (val >= 0.85, test CI reaches 0.80, test <= {:.3}): {}",
            PHI_SQRT2 + 0.03,
            parts.join("; ")
        ),
    )
}

fn criterion_6() -> Verdict {
    let r = 0.1;
    let rows = bce_increase_probe(r, &[0.99, 0.999, 1.0]).expect("probe");
    let bce_rises = rows[1].mean_bce > rows[0].mean_bce;
    let balanced_bounded = rows[2].mean_balanced <= 2.0 * r + 1e-9;
    // Independent closed form for the probe's BCE: r·(−ln(1−c)) + (1−r)·(−ln c).
    let closed = |c: f64| -r * (1.0 - c).ln() - (1.0 - r) * c.ln();
    let closed_ok = rows[..2].iter().all(|row| (row.mean_bce - closed(row.confidence)).abs() < 1e-9)
        && (bce_loss(0.999, 0, &LossKind::bce(1.0, 1.0)).unwrap() + (0.001f64).ln()).abs() < 1e-12
        && (balanced_loss(1.0, 0).unwrap() - 2.0).abs() < 1e-12;

    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = mini_d(
        6,
        &[
            "augment.preset=none",
            "model.dropout_p=0",
            "optim.lr=0.01",
            "train.max_epochs=80",
            "train.patience=80",
        ],
    );
    let m = synth_split(120, 6, (0.25, 0.75, 0.0), tmp.path());
    let out = train_partitions(&cfg, &m);
    let last = out.records.last().expect("records");
    let argmin = out
        .records
        .iter()
        .min_by(|a, b| a.val_bce.total_cmp(&b.val_bce))
        .expect("records");
    let overfit = last.val_bce > argmin.val_bce && last.val_auc >= argmin.val_auc - 0.02;
    verdict(
        bce_rises && balanced_bounded && closed_ok && overfit,
        format!(
            "probe at r=0.1: BCE {:.4} -> {:.4}, balanced at c=1 {:.4}; overfit run: val BCE min {:.4} @ {} (AUC {:.3}), final {:.4} @ {} (AUC {:.3})",
            rows[0].mean_bce,
            rows[1].mean_bce,
            rows[2].mean_balanced,
            argmin.val_bce,
            argmin.epoch,
            argmin.val_auc,
            last.val_bce,
            last.epoch,
            last.val_auc
        ),
    )
}

fn criterion_7() -> Verdict {
    let (mut ens_sum, mut single_sum) = (0.0, 0.0);
    let mut monotone = true;
    let mut parts = Vec::new();
    for seed in 1..=3u64 {
        let tmp = tempfile::tempdir().expect("tempdir");
        let cfg = mini_d(seed, &["train.max_epochs=30", "train.patience=10"]);
        let m = synth_split(150, 70 + seed, (0.8, 0.0, 0.2), tmp.path());
        let dev_entries = m.entries.iter().filter(|e| e.partition == Partition::Train).cloned().collect();
        let dev = Manifest::new(dev_entries, m.root.clone()).expect("dev");
        let test = ImageSet::load(&m, Some(Partition::Test), &cfg.train.preprocess).expect("test set");
        let sweep = SweepConfig {
            n_models: 10,
            sizes: (1..=10).collect(),
            trials_per_size: 20,
            split: (0.8, 0.2),
            seed,
        };
        let out = reshuffle_ensemble_sweep(&dev, &test, &cfg.model, &cfg.train, &sweep, |_, _| {}).expect("sweep");
        let single = out.members.iter().map(|m| m.test_auc).sum::<f64>() / out.members.len() as f64;
        let summary = out.summary();
        let full = summary.last().expect("size 10").mean_test_auc;
        for w in summary.windows(2) {
            if w[1].mean_test_auc < w[0].mean_test_auc && w[1].ci.1 < w[0].ci.0 {
                monotone = false;
            }
        }
        ens_sum += full;
        single_sum += single;
        let curve: Vec<String> = summary.iter().map(|s| format!("{:.3}", s.mean_test_auc)).collect();
        parts.push(format!("seed {seed}: single {single:.3}, full {full:.3}, sweep [{}]", curve.join(" ")));
    }
    let (ens, single) = (ens_sum / 3.0, single_sum / 3.0);
    verdict(
        ens >= single - 0.01 && monotone,
        format!(
            "ensembling: mean full-ensemble {ens:.3} vs mean single {single:.3}, sweep monotone within CI {monotone}; {}",
            parts.join("; ")
        ),
    )
}

fn reconstructed(females: usize, males: usize) -> Manifest {
    let mut entries = Vec::new();
    for i in 0..females + males {
        let sex = if i < females { Sex::F } else { Sex::M };
        for eye in [Eye::L, Eye::R] {
            entries.push(ManifestEntry {
                patient_id: format!("P{i:04}"),
                eye,
                sex,
                image_path: format!("P{i:04}_{eye}.png"),
                partition: Partition::Unassigned,
                quality_flags: Default::default(),
            });
        }
    }
    Manifest::new(entries, PathBuf::new()).expect("manifest")
}

/// Returns mismatches between the split's per-partition counts and the reference counts.
fn reference_check(
    label: &str,
    (f, m): (usize, usize),
    split: (f64, f64, f64),
    want: [usize; 3],
) -> (Vec<String>, String) {
    let assigned = split_patients(&reconstructed(f, m), &PartitionSpec::new(split.0, split.1, split.2, 0)).expect("split");
    let stats = dataset_stats(&assigned);
    let mut bad = Vec::new();
    let mut got = Vec::new();
    for (p, &w) in [Partition::Train, Partition::Val, Partition::Test].iter().zip(&want) {
        let c = stats.partition_total(*p);
        got.push(format!("{}/{}", c.patients, c.images));
        if c.patients != w || c.images != 2 * w {
            bad.push(format!("{label} {p}: {}/{} patients/images, reference {w}/{}", c.patients, c.images, 2 * w));
        }
    }
    for (s, n) in [(Sex::F, f), (Sex::M, m)] {
        let c = stats.sex_total(s);
        if c.patients != n || c.images != 2 * n {
            bad.push(format!("{label} {s}: {}/{}, reference {n}/{}", c.patients, c.images, 2 * n));
        }
    }
    (bad, format!("{label} {}", got.join(" ")))
}

fn criterion_8() -> Verdict {
    let (mut bad, a) = reference_check("DOVS-i", (438, 415), (0.75, 0.125, 0.125), [640, 107, 106]);
    let (bad_b, b) = reference_check("DOVS-ii", (635, 613), (0.70, 0.15, 0.15), [873, 187, 188]);
    bad.extend(bad_b);
    let detail = if bad.is_empty() {
        format!("reference counts reproduced: {a}; {b}")
    } else {
        format!("reference counts: {a}; {b}; mismatches: {}", bad.join(", "))
    };
    verdict(bad.is_empty(), detail)
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = mini_d(9, &["train.max_epochs=4", "preprocess.input_size=16", "model.hidden_layer_width=8"]);
    let m = synth_split(24, 9, cfg.split, &tmp.path().join("data"));
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir(&dir).expect("run dir");
        train_partitions(&cfg, &m).write(&dir).expect("write");
        files.push((
            std::fs::read(dir.join("metrics.csv")).expect("metrics"),
            std::fs::read(dir.join("best.ckpt")).expect("checkpoint"),
        ));
    }
    let same = files[0] == files[1];
    verdict(
        same,
        format!("rerun with identical config and seed gives byte-identical metrics.csv and best.ckpt: {same}"),
    )
}

fn main() {
    let criteria: [fn() -> Verdict; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = c();
        failed += usize::from(!v.pass);
        println!(
            "{} criterion {}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
