use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Eye, Manifest, ManifestEntry, Partition, Result, Sex};
use crate::metrics::ScoreSet;
use crate::preprocess::Image;
use crate::seeds;

/// Vessel texture family; `B` is the shifted domain used for cross-testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    /// Mean shift of the planted statistic between classes, in standard deviations.
    pub separability_delta: f64,
    pub image_size: usize,
    pub seed: u64,
    pub style: Style,
    /// Prepended to every patient id.
    pub id_prefix: String,
}

impl SyntheticSpec {
    pub fn new(n_patients: usize, separability_delta: f64, image_size: usize, seed: u64) -> Self {
        Self {
            n_patients,
            separability_delta,
            image_size,
            seed,
            style: Style::A,
            id_prefix: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 2 {
            return Err(DataError::Spec(format!("need at least 2 patients, got {}", self.n_patients)));
        }
        if !(self.separability_delta >= 0.0) || !self.separability_delta.is_finite() {
            return Err(DataError::Spec(format!(
                "separability_delta must be finite and non-negative, got {}",
                self.separability_delta
            )));
        }
        if self.image_size < 16 {
            return Err(DataError::Spec(format!("image_size must be at least 16, got {}", self.image_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub label: u8,
    pub statistic: f64,
}

impl GroundTruth {
    pub fn write_csv(rows: &[GroundTruth], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<GroundTruth>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Scores `Φ(statistic)`: the Bayes-optimal ranking of the planted signal.
    pub fn oracle_scores(rows: &[GroundTruth]) -> ScoreSet {
        use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
        let phi = StdNormal::standard();
        let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
        let scores: Vec<f64> = rows.iter().map(|r| phi.cdf(r.statistic)).collect();
        ScoreSet::from_pairs(&labels, &scores).expect("Φ maps into [0, 1]")
    }
}

/// Brightness tilt per unit of the planted statistic, at the field centre.
const TILT: f64 = 0.06;

struct VesselStyle {
    count: usize,
    darkness: f64,
    wiggle: f64,
    thick: bool,
}

fn vessel_style(style: Style) -> VesselStyle {
    match style {
        Style::A => VesselStyle {
            count: 8,
            darkness: 0.12,
            wiggle: 0.2,
            thick: false,
        },
        Style::B => VesselStyle {
            count: 14,
            darkness: 0.08,
            wiggle: 0.45,
            thick: true,
        },
    }
}

/// One grayscale fundus-like image carrying `statistic` as a radial brightness tilt.
fn render<R: Rng>(size: usize, eye: Eye, statistic: f64, style: Style, rng: &mut R) -> Image {
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let radius = 0.45 * s;
    let gain = 1.0 + 0.03 * Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    let side = if eye == Eye::L { -1.0 } else { 1.0 };
    let disc_x = c + side * (0.25 * s + rng.random_range(-0.02..0.02) * s);
    let disc_y = c + rng.random_range(-0.03..0.03) * s;
    let disc_sigma = 0.06 * s;

    let mut px = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let r = (dx * dx + dy * dy).sqrt() / radius;
            if r > 1.0 {
                continue;
            }
            let base = gain * (0.45 - 0.2 * r * r);
            let ddx = x as f64 - disc_x;
            let ddy = y as f64 - disc_y;
            let disc = 0.35 * (-(ddx * ddx + ddy * ddy) / (2.0 * disc_sigma * disc_sigma)).exp();
            px[y * size + x] = base + disc + TILT * statistic * (1.0 - r);
        }
    }

    let vs = vessel_style(style);
    let steps = (0.6 * s) as usize;
    for _ in 0..vs.count {
        let mut angle = rng.random_range(0.0..2.0 * PI);
        let (mut x, mut y) = (disc_x, disc_y);
        for _ in 0..steps {
            angle += rng.random_range(-vs.wiggle..vs.wiggle);
            x += angle.cos();
            y += angle.sin();
            let reach: isize = if vs.thick { 1 } else { 0 };
            for oy in -reach..=reach {
                for ox in -reach..=reach {
                    let (xi, yi) = (x.round() as isize + ox, y.round() as isize + oy);
                    if xi < 0 || yi < 0 || xi >= size as isize || yi >= size as isize {
                        continue;
                    }
                    let i = yi as usize * size + xi as usize;
                    if px[i] > 0.0 {
                        px[i] = (px[i] - vs.darkness).max(0.01);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, 0.02).expect("positive sd");
    for v in px.iter_mut() {
        if *v > 0.0 {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Image::new(1, size, size, px).expect("square image")
}

/// Writes `<patient_id>_<eye>.png` for every patient, plus `manifest.csv` and
/// `ground_truth.csv`, into `out_dir`. Even-numbered patients are F (class 0),
/// odd-numbered are M (class 1). Each image draws its own statistic from
/// `N(δ·class, 1)`, so the statistic's population AUC is `Φ(δ/√2)`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<(Manifest, Vec<GroundTruth>)> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(2 * spec.n_patients);
    let mut truth = Vec::with_capacity(2 * spec.n_patients);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for i in 0..spec.n_patients {
        let mut rng = seeds::rng(spec.seed, &[i as u64]);
        let sex = if i % 2 == 0 { Sex::F } else { Sex::M };
        let patient_id = format!("{}P{:04}", spec.id_prefix, i + 1);
        for eye in [Eye::L, Eye::R] {
            let statistic = spec.separability_delta * f64::from(sex.label()) + unit.sample(&mut rng);
            let img = render(spec.image_size, eye, statistic, spec.style, &mut rng);
            let entry = ManifestEntry {
                image_path: format!("{patient_id}_{eye}.png"),
                patient_id: patient_id.clone(),
                eye,
                sex,
                partition: Partition::Unassigned,
                quality_flags: BTreeSet::new(),
            };
            img.write_png(&out_dir.join(&entry.image_path))?;
            truth.push(GroundTruth {
                id: entry.image_id(),
                label: sex.label(),
                statistic,
            });
            entries.push(entry);
        }
    }
    let manifest = Manifest::new(entries, out_dir.to_path_buf())?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    GroundTruth::write_csv(&truth, &out_dir.join("ground_truth.csv"))?;
    Ok((manifest, truth))
}
