//! Dataset bookkeeping: tags, morphology counts and the manifest file.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Healthy,
    Anaemic,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 2] = [DatasetTag::Healthy, DatasetTag::Anaemic];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Healthy => "healthy",
            DatasetTag::Anaemic => "anaemic",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(DatasetTag::Healthy),
            "anaemic" => Ok(DatasetTag::Anaemic),
            other => Err(Error::invalid(format!(
                "unknown dataset tag {other:?}, expected healthy or anaemic"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Morphology {
    Normal,
    Microcyte,
    Macrocyte,
    Elliptocyte,
    Target,
}

impl Morphology {
    pub const ALL: [Morphology; 5] = [
        Morphology::Normal,
        Morphology::Microcyte,
        Morphology::Macrocyte,
        Morphology::Elliptocyte,
        Morphology::Target,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Morphology::Normal => "normal",
            Morphology::Microcyte => "microcyte",
            Morphology::Macrocyte => "macrocyte",
            Morphology::Elliptocyte => "elliptocyte",
            Morphology::Target => "target",
        }
    }
}

/// Cell counts per morphology, indexed by `Morphology::index`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ClassCounts(pub [usize; 5]);

impl ClassCounts {
    pub fn get(&self, m: Morphology) -> usize {
        self.0[m.index()]
    }

    pub fn add(&mut self, m: Morphology) {
        self.0[m.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// One manifest line: an image/mask pair with its provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub mask: String,
    pub seed: u64,
    pub tag: DatasetTag,
    pub normal: usize,
    pub microcyte: usize,
    pub macrocyte: usize,
    pub elliptocyte: usize,
    pub target: usize,
}

impl ManifestRow {
    pub fn new(image: String, mask: String, seed: u64, tag: DatasetTag, counts: ClassCounts) -> Self {
        let [normal, microcyte, macrocyte, elliptocyte, target] = counts.0;
        ManifestRow {
            image,
            mask,
            seed,
            tag,
            normal,
            microcyte,
            macrocyte,
            elliptocyte,
            target,
        }
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts([
            self.normal,
            self.microcyte,
            self.macrocyte,
            self.elliptocyte,
            self.target,
        ])
    }
}

pub const MANIFEST_NAME: &str = "manifest.csv";

pub fn encode_manifest(rows: &[ManifestRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Ingestion(format!("manifest row for {}: {e}", row.image)))?;
    }
    if rows.is_empty() {
        w.write_record([
            "image",
            "mask",
            "seed",
            "tag",
            "normal",
            "microcyte",
            "macrocyte",
            "elliptocyte",
            "target",
        ])
        .map_err(|e| Error::Ingestion(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Ingestion(e.to_string()))
}

pub fn decode_manifest(bytes: &[u8], path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("manifest line {}: {e}", i + 2),
            })
        })
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST_NAME);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_manifest(&bytes, &path)
}
