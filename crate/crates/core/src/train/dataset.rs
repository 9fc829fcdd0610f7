use crate::data::{Manifest, Partition};
use crate::metrics::{ScoreEntry, ScoreSet};
use crate::model::Model;
use crate::preprocess::{normalize_channels, stack, Image, NormalizationParams, PreprocessConfig};
use crate::tensor::Mode;

use super::{Result, TrainError};

/// Standardised images of one manifest subset, kept in memory.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub images: Vec<Image>,
}

impl ImageSet {
    /// Loads the entries of `partition` (every entry when `None`) in manifest order.
    pub fn load(manifest: &Manifest, partition: Option<Partition>, prep: &PreprocessConfig) -> Result<Self> {
        let mut set = ImageSet::default();
        for e in &manifest.entries {
            if partition.is_some_and(|p| p != e.partition) {
                continue;
            }
            let raw = Image::read_png(&manifest.image_path(e))?;
            set.ids.push(e.image_id());
            set.labels.push(e.sex.label());
            set.images.push(prep.standardize(&raw)?);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.ids.extend(other.ids.iter().cloned());
        out.labels.extend_from_slice(&other.labels);
        out.images.extend(other.images.iter().cloned());
        out
    }
}

/// Final step shared by training and evaluation inputs.
pub(crate) fn finish(img: Image, normalize: bool) -> Result<Image> {
    if normalize {
        let params = NormalizationParams::imagenet();
        if img.channels() != params.mean.len() {
            return Err(TrainError::Data(format!(
                "normalisation expects 3 channels, image has {}",
                img.channels()
            )));
        }
        Ok(normalize_channels(&img, &params)?)
    } else {
        Ok(img)
    }
}

const EVAL_BATCH: usize = 64;

/// Eval-mode probabilities for every image in `set`.
pub fn predict(model: &Model, set: &ImageSet, prep: &PreprocessConfig, normalize: bool) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.images.chunks(EVAL_BATCH) {
        let views = chunk
            .iter()
            .map(|img| finish(prep.eval_view(img)?, normalize))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = views.iter().collect();
        out.extend(model.predict_proba(&stack(&refs)?, Mode::Eval, 0)?);
    }
    Ok(out)
}

pub fn score_set(set: &ImageSet, probs: &[f64]) -> ScoreSet {
    ScoreSet::new(
        set.ids
            .iter()
            .zip(&set.labels)
            .zip(probs)
            .map(|((id, &label), &score)| ScoreEntry {
                id: id.clone(),
                label,
                score,
            })
            .collect(),
    )
    .expect("labels from the manifest and clamped probabilities")
}
