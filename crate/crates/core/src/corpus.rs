//! Seeded shape corpora and the `NCPC` corpus file.
//!
//! File layout, little-endian throughout:
//!
//! ```text
//! b"NCPC" | u32 version = 1 | u32 n_clouds | u32 n_points
//! per cloud: u64 id | u8 split (0 = train, 1 = new) | n_points * 3 f64, row-major
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::synth::{generate_cloud, normalize_cloud, Family, PointCloud, ShapeSpec};

const CORPUS_MAGIC: &[u8; 4] = b"NCPC";
const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    New,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::New => "new",
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::New => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::New),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "new" => Ok(Split::New),
            _ => Err(Error::Param(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyCount {
    pub family: Family,
    pub count: usize,
}

/// Describes a whole corpus. Clouds get consecutive ids: first every train
/// group in listed order, then every new group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub train: Vec<FamilyCount>,
    pub new: Vec<FamilyCount>,
}

/// Per-family scale ranges. Spheres draw one radius for all three axes and
/// cylinders one radius for both cross-section axes.
fn draw_scale(family: Family, rng: &mut Rng) -> [f64; 3] {
    match family {
        Family::Sphere => {
            let r = rng.uniform(0.8, 1.2);
            [r, r, r]
        }
        Family::Ellipsoid => [
            rng.uniform(0.6, 1.4),
            rng.uniform(0.6, 1.4),
            rng.uniform(0.6, 1.4),
        ],
        Family::Box => [
            rng.uniform(1.0, 2.0),
            rng.uniform(1.0, 2.0),
            rng.uniform(0.1, 0.4),
        ],
        Family::Cylinder => {
            let r = rng.uniform(0.08, 0.3);
            [r, r, rng.uniform(1.5, 2.5)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedCloud {
    pub id: u64,
    pub split: Split,
    pub spec: ShapeSpec,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::Param("corpus n_points must be at least 1".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Param("corpus noise_sigma must be nonnegative".into()));
        }
        if self.count(Split::Train) == 0 {
            return Err(Error::Param("corpus needs at least one train cloud".into()));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        let groups = match split {
            Split::Train => &self.train,
            Split::New => &self.new,
        };
        groups.iter().map(|g| g.count).sum()
    }

    /// The shape spec of every cloud, in id order.
    pub fn plan(&self) -> Vec<PlannedCloud> {
        let groups = self
            .train
            .iter()
            .map(|g| (Split::Train, g))
            .chain(self.new.iter().map(|g| (Split::New, g)));
        let mut out = Vec::new();
        let mut id = 0u64;
        for (split, group) in groups {
            for _ in 0..group.count {
                let mut rng = Rng::seed_from_u64(derive_seed(self.seed, id));
                let scale = draw_scale(group.family, &mut rng);
                out.push(PlannedCloud {
                    id,
                    split,
                    spec: ShapeSpec {
                        family: group.family,
                        scale,
                        noise_sigma: self.noise_sigma,
                        seed: rng.next_u64(),
                    },
                });
                id += 1;
            }
        }
        out
    }

    /// Counts per (split, family), for summaries.
    pub fn summary(&self) -> BTreeMap<(Split, Family), usize> {
        let mut m = BTreeMap::new();
        for p in self.plan() {
            *m.entry((p.split, p.spec.family)).or_insert(0) += 1;
        }
        m
    }

    pub fn generate(&self) -> Result<Corpus> {
        self.validate()?;
        let clouds = self
            .plan()
            .par_iter()
            .map(|p| {
                let cloud = normalize_cloud(&generate_cloud(&p.spec, self.n_points)?)?;
                Ok(CorpusEntry {
                    id: p.id,
                    split: p.split,
                    cloud,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            n_points: self.n_points,
            clouds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: u64,
    pub split: Split,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub n_points: usize,
    pub clouds: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.clouds.iter().filter(move |c| c.split == split)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 + self.clouds.len() * (9 + 24 * self.n_points));
        buf.extend_from_slice(CORPUS_MAGIC);
        buf.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.clouds.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_points as u32).to_le_bytes());
        for c in &self.clouds {
            buf.extend_from_slice(&c.id.to_le_bytes());
            buf.push(c.split.code());
            for x in c.cloud.flat() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "corpus file");
        if r.take(4)? != CORPUS_MAGIC {
            return Err(Error::Format("corpus file: bad magic (expected NCPC)".into()));
        }
        let version = r.u32()?;
        if version != CORPUS_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "corpus file",
                version,
            });
        }
        let n_clouds = r.u32()? as usize;
        let n_points = r.u32()? as usize;
        if n_points == 0 {
            return Err(Error::Format("corpus file: n_points is 0".into()));
        }
        let mut clouds = Vec::with_capacity(n_clouds.min(1 << 16));
        let mut coords = vec![0.0; 3 * n_points];
        for _ in 0..n_clouds {
            let id = r.u64()?;
            let code = r.u8()?;
            let split = Split::from_code(code)
                .ok_or_else(|| Error::Format(format!("corpus file: cloud {id} has split code {code}")))?;
            for c in coords.iter_mut() {
                *c = r.f64()?;
            }
            let cloud = PointCloud::from_flat(&coords)
                .map_err(|e| Error::Format(format!("corpus file: cloud {id}: {e}")))?;
            clouds.push(CorpusEntry { id, split, cloud });
        }
        if !r.is_empty() {
            return Err(Error::Format("corpus file: trailing bytes".into()));
        }
        Ok(Corpus { n_points, clouds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::input(path, e.to_string()))
    }
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        ByteReader { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(self.what)),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_points: 16,
            noise_sigma: 0.01,
            seed: 5,
            train: vec![
                FamilyCount { family: Family::Sphere, count: 3 },
                FamilyCount { family: Family::Ellipsoid, count: 2 },
            ],
            new: vec![FamilyCount { family: Family::Box, count: 2 }],
        }
    }

    #[test]
    fn plan_ids_and_splits() {
        let plan = small_spec().plan();
        assert_eq!(plan.len(), 7);
        assert!(plan.iter().enumerate().all(|(i, p)| p.id == i as u64));
        assert_eq!(plan[4].spec.family, Family::Ellipsoid);
        assert_eq!(plan[5].split, Split::New);
        assert_eq!(plan[5].spec.family, Family::Box);
    }

    #[test]
    fn generated_clouds_match_direct_calls() {
        let spec = small_spec();
        let corpus = spec.generate().unwrap();
        for (entry, p) in corpus.clouds.iter().zip(spec.plan()) {
            let direct = normalize_cloud(&generate_cloud(&p.spec, 16).unwrap()).unwrap();
            assert_eq!(entry.cloud, direct);
        }
    }

    #[test]
    fn binary_round_trip() {
        let corpus = small_spec().generate().unwrap();
        let mut buf = Vec::new();
        corpus.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 7 * (9 + 16 * 24));
        assert_eq!(Corpus::from_bytes(&buf).unwrap(), corpus);
    }

    #[test]
    fn binary_errors() {
        let corpus = small_spec().generate().unwrap();
        let mut buf = Vec::new();
        corpus.write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Corpus::from_bytes(&bad), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            Corpus::from_bytes(&bad),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));

        assert!(matches!(
            Corpus::from_bytes(&buf[..buf.len() - 3]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn summary_counts() {
        let s = small_spec().summary();
        assert_eq!(s[&(Split::Train, Family::Sphere)], 3);
        assert_eq!(s[&(Split::Train, Family::Ellipsoid)], 2);
        assert_eq!(s[&(Split::New, Family::Box)], 2);
    }
}
