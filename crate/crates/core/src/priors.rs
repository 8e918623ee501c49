//! Per-class dimension priors.
//!
//! The built-in tables hold, per dataset, the language-model size estimates
//! and the dataset-statistics sizes as `[width, height, length]` meters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    #[default]
    LlmTable,
    DatasetStats,
    Custom,
}

/// Typical `(width, height, length)` of a class, canonicalized so that
/// `length >= width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionPrior {
    #[serde(rename = "class")]
    pub class_name: String,
    pub width: f64,
    pub height: f64,
    pub length: f64,
    pub source: PriorSource,
}

impl DimensionPrior {
    pub fn new(
        class_name: &str,
        width: f64,
        height: f64,
        length: f64,
        source: PriorSource,
    ) -> Result<Self> {
        let mut p = Self {
            class_name: class_name.to_string(),
            width,
            height,
            length,
            source,
        };
        p.validate()?;
        p.canonicalize();
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.width, self.height, self.length]
            .iter()
            .all(|d| d.is_finite() && *d > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "prior for `{}` has non-positive dimensions",
                self.class_name
            )))
        }
    }

    fn canonicalize(&mut self) {
        if self.width > self.length {
            std::mem::swap(&mut self.width, &mut self.length);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Kitti,
    Nuscenes,
    Arkitscenes,
    SunRgbd,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::Kitti,
        Dataset::Nuscenes,
        Dataset::SunRgbd,
        Dataset::Arkitscenes,
    ];
}

type Row = (&'static str, [f64; 3], [f64; 3]);

// (class, dataset statistics, language model), each [width, height, length].
const KITTI: &[Row] = &[
    ("car", [1.6, 1.5, 3.9], [1.8, 1.5, 4.5]),
    ("truck", [2.6, 3.4, 9.3], [2.5, 3.5, 10.0]),
    ("van", [1.9, 2.2, 5.1], [2.0, 2.0, 5.0]),
    ("cyclist", [0.6, 1.7, 1.8], [0.6, 1.7, 1.5]),
    ("pedestrian", [0.6, 1.8, 0.8], [0.5, 1.7, 0.8]),
];

const NUSCENES: &[Row] = &[
    ("car", [1.9, 1.8, 4.7], [1.8, 1.5, 4.5]),
    ("bicycle", [0.6, 1.4, 1.7], [0.6, 1.2, 1.8]),
    ("pedestrian", [0.7, 1.8, 0.7], [0.5, 1.7, 0.8]),
    ("traffic cone", [0.4, 1.1, 0.4], [0.3, 0.7, 0.3]),
    ("barrier", [0.5, 1.0, 2.5], [0.5, 2.0, 2.0]),
    ("motorcycle", [0.8, 1.5, 2.1], [0.8, 1.2, 2.0]),
    ("truck", [2.6, 3.0, 7.1], [2.5, 3.5, 8.0]),
    ("bus", [3.0, 3.6, 11.4], [2.8, 3.5, 11.0]),
    ("trailer", [3.0, 3.8, 11.6], [2.8, 3.3, 11.0]),
];

const ARKITSCENES: &[Row] = &[
    ("refrigerator", [0.7, 1.7, 0.7], [0.8, 1.5, 0.8]),
    ("chair", [0.5, 0.8, 0.5], [0.5, 1.0, 0.5]),
    ("oven", [0.6, 0.7, 0.6], [0.6, 0.8, 0.8]),
    ("machine", [0.6, 0.9, 0.6], [0.8, 1.0, 1.0]),
    ("stove", [0.7, 0.2, 0.6], [0.6, 0.8, 0.8]),
    ("shelves", [0.4, 1.2, 0.8], [0.3, 1.5, 1.5]),
    ("sink", [0.5, 0.2, 0.4], [0.5, 0.2, 0.8]),
    ("cabinet", [0.5, 0.9, 0.9], [0.5, 1.5, 1.0]),
    ("bathtub", [0.8, 0.6, 1.7], [0.8, 0.5, 1.5]),
    ("toilet", [0.4, 0.7, 0.6], [0.4, 0.8, 0.5]),
    ("table", [0.6, 0.6, 1.0], [0.8, 0.8, 1.5]),
    ("bed", [1.6, 0.6, 2.1], [1.5, 0.5, 2.0]),
    ("sofa", [1.0, 0.8, 1.4], [1.0, 1.0, 2.0]),
    ("television", [0.9, 0.6, 0.1], [1.0, 0.5, 0.1]),
];

const SUN_RGBD: &[Row] = &[
    ("bin", [0.4, 0.6, 0.4], [0.5, 0.5, 0.5]),
    ("stove", [0.6, 0.6, 0.8], [0.6, 0.8, 0.8]),
    ("box", [0.4, 0.4, 0.4], [0.5, 0.5, 0.5]),
    ("table", [0.8, 0.7, 1.3], [0.8, 0.8, 1.5]),
    ("cup", [0.1, 0.2, 0.1], [0.1, 0.1, 0.1]),
    ("pillow", [0.4, 0.3, 0.6], [0.3, 0.3, 0.5]),
    ("desk", [0.8, 0.8, 1.4], [0.6, 0.8, 1.2]),
    ("toilet", [0.7, 0.8, 0.5], [0.4, 0.8, 0.5]),
    ("bed", [1.6, 1.1, 2.0], [1.5, 0.5, 2.0]),
    ("bathtub", [0.8, 0.5, 1.4], [0.8, 0.5, 1.5]),
    ("door", [0.3, 1.8, 0.7], [0.1, 2.0, 1.0]),
    ("towel", [0.2, 0.4, 0.4], [0.2, 0.1, 0.3]),
    ("lamp", [0.4, 0.7, 0.4], [0.3, 0.6, 0.3]),
    ("blinds", [0.2, 1.2, 1.2], [0.1, 1.0, 1.5]),
    ("oven", [0.6, 0.8, 0.6], [0.6, 0.8, 0.8]),
    ("bottle", [0.2, 0.3, 0.2], [0.1, 0.3, 0.1]),
    ("sink", [0.5, 0.4, 0.6], [0.5, 0.2, 0.8]),
    ("laptop", [0.4, 0.2, 0.4], [0.3, 0.1, 0.4]),
    ("sofa", [1.0, 0.8, 1.9], [1.0, 1.0, 2.0]),
    ("mirror", [0.2, 1.1, 0.8], [0.1, 1.0, 0.5]),
    ("books", [0.3, 0.2, 0.3], [0.2, 0.1, 0.3]),
    ("window", [0.2, 1.1, 1.7], [0.1, 1.0, 1.5]),
    ("chair", [0.6, 0.8, 0.6], [0.5, 1.0, 0.5]),
    ("bicycle", [1.0, 1.1, 1.0], [0.5, 1.0, 1.5]),
    ("refrigerator", [0.7, 1.5, 0.8], [0.8, 1.5, 0.8]),
    ("picture", [0.1, 0.5, 0.5], [0.1, 0.5, 0.5]),
    ("shelves", [0.4, 1.0, 1.3], [0.3, 1.5, 1.5]),
    ("bookcase", [0.4, 1.5, 1.4], [0.3, 2.0, 1.0]),
    ("clothes", [0.4, 0.5, 0.5], [0.5, 1.0, 0.5]),
    ("counter", [0.9, 0.9, 2.1], [0.6, 1.0, 1.5]),
    ("curtain", [0.3, 1.7, 1.1], [0.1, 1.5, 1.0]),
    ("floor mat", [0.6, 0.1, 0.9], [1.0, 0.1, 1.5]),
    ("stationery", [0.3, 0.2, 0.3], [0.3, 0.3, 0.3]),
    ("television", [0.3, 0.6, 0.8], [0.1, 0.5, 1.0]),
    ("night stand", [0.5, 0.7, 0.6], [0.4, 0.5, 0.5]),
    ("machine", [0.6, 0.7, 0.6], [0.8, 1.0, 1.0]),
    ("shoes", [0.3, 0.1, 0.3], [0.2, 0.1, 0.3]),
    ("cabinet", [0.5, 1.1, 1.2], [0.5, 1.5, 1.0]),
];

fn rows(dataset: Dataset) -> &'static [Row] {
    match dataset {
        Dataset::Kitti => KITTI,
        Dataset::Nuscenes => NUSCENES,
        Dataset::Arkitscenes => ARKITSCENES,
        Dataset::SunRgbd => SUN_RGBD,
    }
}

/// Class → prior lookup, case-insensitive on exact names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PriorTable {
    entries: BTreeMap<String, DimensionPrior>,
}

impl PriorTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Built-in table for one dataset.
    pub fn builtin(dataset: Dataset, source: PriorSource) -> Self {
        let mut t = Self::new();
        t.extend_builtin(dataset, source);
        t
    }

    /// All four datasets merged; the first dataset in [`Dataset::ALL`]
    /// defining a class wins.
    pub fn builtin_all(source: PriorSource) -> Self {
        let mut t = Self::new();
        for d in Dataset::ALL {
            t.extend_builtin(d, source);
        }
        t
    }

    fn extend_builtin(&mut self, dataset: Dataset, source: PriorSource) {
        for (name, stats, llm) in rows(dataset) {
            let dims = match source {
                PriorSource::DatasetStats => stats,
                _ => llm,
            };
            let tag = if source == PriorSource::DatasetStats {
                source
            } else {
                PriorSource::LlmTable
            };
            let p = DimensionPrior::new(name, dims[0], dims[1], dims[2], tag)
                .expect("table rows are positive");
            self.entries.entry(name.to_lowercase()).or_insert(p);
        }
    }

    /// Inserts or replaces a prior.
    pub fn insert(&mut self, prior: DimensionPrior) {
        self.entries.insert(prior.class_name.to_lowercase(), prior);
    }

    pub fn get(&self, class_name: &str) -> Option<&DimensionPrior> {
        self.entries.get(&class_name.to_lowercase())
    }

    pub fn require(&self, class_name: &str) -> Result<&DimensionPrior> {
        self.get(class_name)
            .ok_or_else(|| Error::MissingPrior(class_name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DimensionPrior> {
        self.entries.values()
    }

    /// Parses a JSON array of `{"class","width","height","length","source"}`.
    pub fn from_json(text: &str, path: &Path) -> Result<Vec<DimensionPrior>> {
        let raw: Vec<DimensionPrior> =
            serde_json::from_str(text).map_err(|e| Error::format("priors file", path, e))?;
        raw.into_iter()
            .map(|p| DimensionPrior::new(&p.class_name, p.width, p.height, p.length, p.source))
            .collect()
    }

    /// Loads a priors file and overlays it on `self`.
    pub fn overlay_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for p in Self::from_json(&text, path)? {
            self.insert(p);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let v: Vec<&DimensionPrior> = self.iter().collect();
        serde_json::to_string_pretty(&v).expect("priors serialize")
    }
}
