//! Dataset manifests, patient-level partitioning, count tables and the
//! synthetic fundus-like generator.

mod split;
mod synth;

pub use split::{split_patients, PartitionSpec};
pub use synth::{generate_synthetic, GroundTruth, Style, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("partitioning: {0}")]
    Partition(String),
    #[error("synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] crate::preprocess::ImageError),
}

pub type Result<T> = std::result::Result<T, DataError>;

macro_rules! token_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} {:?}", stringify!($name).to_lowercase(), s)),
                }
            }
        }
    };
}

token_enum!(Eye { L => "L", R => "R" });
token_enum!(Sex { F => "F", M => "M" });
token_enum!(Partition {
    Train => "train",
    Val => "val",
    Test => "test",
    Unassigned => "unassigned",
});
token_enum!(QualityFlag {
    Illumination => "illumination",
    FieldDefinition => "field_definition",
    Artifacts => "artifacts",
    Validity => "validity",
    Compositeness => "compositeness",
});

impl Sex {
    /// Class label: F is 0, M is 1.
    pub fn label(self) -> u8 {
        match self {
            Sex::F => 0,
            Sex::M => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub eye: Eye,
    pub sex: Sex,
    pub image_path: String,
    pub partition: Partition,
    pub quality_flags: BTreeSet<QualityFlag>,
}

impl ManifestEntry {
    /// `<patient_id>_<eye>`, also the image file stem.
    pub fn image_id(&self) -> String {
        format!("{}_{}", self.patient_id, self.eye)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: String,
    eye: String,
    sex: String,
    image_path: String,
    partition: String,
    quality_flags: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: PathBuf) -> Result<Self> {
        let m = Self { entries, root };
        m.validate()?;
        Ok(m)
    }

    /// Checks that `(patient_id, eye)` is unique and that each patient has one sex and one partition.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut per_patient: BTreeMap<&str, (Sex, Partition)> = BTreeMap::new();
        for e in &self.entries {
            if e.patient_id.is_empty() {
                return Err(DataError::Invalid("empty patient_id".into()));
            }
            if !seen.insert((e.patient_id.as_str(), e.eye)) {
                return Err(DataError::Invalid(format!("duplicate image {}", e.image_id())));
            }
            match per_patient.get(e.patient_id.as_str()) {
                None => {
                    per_patient.insert(&e.patient_id, (e.sex, e.partition));
                }
                Some(&(sex, part)) => {
                    if sex != e.sex {
                        return Err(DataError::Invalid(format!("patient {} has two sexes", e.patient_id)));
                    }
                    if part != e.partition {
                        return Err(DataError::Invalid(format!(
                            "patient {} straddles {} and {}",
                            e.patient_id, part, e.partition
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row?;
            let parse_err = |message: String| DataError::Parse { line, message };
            let quality_flags = row
                .quality_flags
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(QualityFlag::from_str)
                .collect::<std::result::Result<BTreeSet<_>, _>>()
                .map_err(parse_err)?;
            entries.push(ManifestEntry {
                eye: row.eye.parse().map_err(parse_err)?,
                sex: row.sex.parse().map_err(parse_err)?,
                partition: row.partition.parse().map_err(parse_err)?,
                patient_id: row.patient_id,
                image_path: row.image_path,
                quality_flags,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, root)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(Row {
                patient_id: e.patient_id.clone(),
                eye: e.eye.to_string(),
                sex: e.sex.to_string(),
                image_path: e.image_path.clone(),
                partition: e.partition.to_string(),
                quality_flags: e
                    .quality_flags
                    .iter()
                    .map(|f| f.as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.image_path)
    }

    pub fn in_partition(&self, p: Partition) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.partition == p)
    }

    /// Patients in id order with their sex.
    pub fn patients(&self) -> Vec<(String, Sex)> {
        let mut map: BTreeMap<&str, Sex> = BTreeMap::new();
        for e in &self.entries {
            map.insert(&e.patient_id, e.sex);
        }
        map.into_iter().map(|(p, s)| (p.to_string(), s)).collect()
    }

    /// Every entry moved to `partition`.
    pub fn with_partition(&self, partition: Partition) -> Self {
        let mut m = self.clone();
        for e in &mut m.entries {
            e.partition = partition;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub patients: usize,
    pub images: usize,
}

/// Patient and image counts per partition and sex.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetStats {
    pub cells: BTreeMap<(Partition, Sex), Counts>,
}

impl DatasetStats {
    pub fn get(&self, p: Partition, s: Sex) -> Counts {
        self.cells.get(&(p, s)).copied().unwrap_or_default()
    }

    pub fn partition_total(&self, p: Partition) -> Counts {
        Sex::ALL.iter().fold(Counts::default(), |acc, &s| add(acc, self.get(p, s)))
    }

    pub fn sex_total(&self, s: Sex) -> Counts {
        Partition::ALL.iter().fold(Counts::default(), |acc, &p| add(acc, self.get(p, s)))
    }

    pub fn total(&self) -> Counts {
        Sex::ALL.iter().fold(Counts::default(), |acc, &s| add(acc, self.sex_total(s)))
    }

    /// CSV with one row per (partition, sex) plus totals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("partition,sex,patients,images\n");
        for &p in Partition::ALL {
            for &s in Sex::ALL {
                let c = self.get(p, s);
                out.push_str(&format!("{p},{s},{},{}\n", c.patients, c.images));
            }
            let t = self.partition_total(p);
            out.push_str(&format!("{p},all,{},{}\n", t.patients, t.images));
        }
        for &s in Sex::ALL {
            let t = self.sex_total(s);
            out.push_str(&format!("all,{s},{},{}\n", t.patients, t.images));
        }
        let t = self.total();
        out.push_str(&format!("all,all,{},{}\n", t.patients, t.images));
        out
    }
}

fn add(a: Counts, b: Counts) -> Counts {
    Counts {
        patients: a.patients + b.patients,
        images: a.images + b.images,
    }
}

pub fn dataset_stats(manifest: &Manifest) -> DatasetStats {
    let mut patients: BTreeSet<(&str, Partition, Sex)> = BTreeSet::new();
    let mut stats = DatasetStats::default();
    for e in &manifest.entries {
        let cell = stats.cells.entry((e.partition, e.sex)).or_default();
        cell.images += 1;
        if patients.insert((&e.patient_id, e.partition, e.sex)) {
            cell.patients += 1;
        }
    }
    stats
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Unassigned manifest with both eyes for every patient.
    pub(crate) fn two_eyed(females: usize, males: usize) -> Manifest {
        let mut entries = Vec::new();
        for i in 0..females + males {
            let sex = if i < females { Sex::F } else { Sex::M };
            for eye in [Eye::L, Eye::R] {
                let pid = format!("P{i:05}");
                entries.push(ManifestEntry {
                    image_path: format!("{pid}_{eye}.png"),
                    patient_id: pid,
                    eye,
                    sex,
                    partition: Partition::Unassigned,
                    quality_flags: BTreeSet::new(),
                });
            }
        }
        Manifest::new(entries, PathBuf::new()).unwrap()
    }

    #[test]
    fn manifest_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let mut m = two_eyed(2, 1);
        m.entries[0].quality_flags = [QualityFlag::Artifacts, QualityFlag::Illumination].into();
        m.root = dir.path().to_path_buf();
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patient_id,eye,sex,image_path,partition,quality_flags\n"));
        assert!(text.contains("illumination;artifacts") || text.contains("artifacts;illumination"));
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }

    #[test]
    fn invalid_manifests_are_rejected() {
        let mut m = two_eyed(1, 1);
        m.entries[1].partition = Partition::Test;
        assert!(matches!(m.validate(), Err(DataError::Invalid(msg)) if msg.contains("straddles")));
        let mut m = two_eyed(1, 1);
        m.entries[1].eye = Eye::L;
        assert!(m.validate().is_err());
    }

    #[test]
    fn bad_tokens_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "patient_id,eye,sex,image_path,partition,quality_flags\nP1,L,F,a.png,train,\nP1,X,F,b.png,train,\n",
        )
        .unwrap();
        assert!(matches!(Manifest::read(&path), Err(DataError::Parse { line: 3, .. })));
    }

    #[test]
    fn stats_examples() {
        let empty = dataset_stats(&Manifest::default());
        assert_eq!(empty.total(), Counts::default());
        let one = dataset_stats(&two_eyed(1, 0));
        let c = one.get(Partition::Unassigned, Sex::F);
        assert_eq!((c.patients, c.images), (1, 2));
        let s = dataset_stats(&two_eyed(3, 4));
        assert_eq!(s.total(), Counts { patients: 7, images: 14 });
        assert_eq!(s.sex_total(Sex::M).images, 8);
        assert!(s.to_csv().ends_with("all,all,7,14\n"));
    }
}
