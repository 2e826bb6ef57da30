//! Retrieval over structured semantic units and aggregation into a target.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::format_version;

/// One structured record: symptom, diagnosis anchor, organ, anatomy-level
/// locations and a supporting basis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticUnit {
    pub id: u64,
    pub symptom: String,
    pub diagnosis: String,
    pub organ: String,
    #[serde(default)]
    pub locations: Vec<String>,
    #[serde(default)]
    pub basis: String,
}

/// Organ whitelist with the admissible anatomy locations per organ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub organs: BTreeMap<String, BTreeSet<String>>,
}

impl Default for Ontology {
    fn default() -> Self {
        let entry = |organ: &str, locs: &[&str]| {
            (organ.to_string(), locs.iter().map(|s| s.to_string()).collect())
        };
        Self {
            organs: [
                entry("liver", &["right_lobe", "left_lobe", "caudate_lobe", "gallbladder_fossa", "porta_hepatis"]),
                entry("gallbladder", &["fundus", "body", "neck"]),
                entry("kidney_left", &["upper_pole", "mid", "lower_pole", "hilum"]),
                entry("kidney_right", &["upper_pole", "mid", "lower_pole", "hilum"]),
                entry("spleen", &["upper_pole", "hilum", "lower_pole"]),
                entry("pancreas", &["head", "body", "tail"]),
                entry("stomach", &["fundus", "body", "antrum", "pylorus"]),
                entry("bladder", &["dome", "trigone", "neck"]),
                entry("heart", &["apex", "base", "left_ventricle", "right_ventricle"]),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl Ontology {
    pub fn load(path: &Path) -> Result<Self> {
        crate::format::read_json(path)
    }

    pub fn check(&self, unit: &SemanticUnit) -> Result<()> {
        let locs = self.organs.get(&unit.organ).ok_or_else(|| {
            Error::RejectedUnit(format!("unit {}: organ `{}` is not whitelisted", unit.id, unit.organ))
        })?;
        if let Some(bad) = unit.locations.iter().find(|l| !locs.contains(*l)) {
            return Err(Error::RejectedUnit(format!(
                "unit {}: location `{bad}` is not defined for `{}`",
                unit.id, unit.organ
            )));
        }
        Ok(())
    }
}

pub fn read_units(path: &Path) -> Result<Vec<SemanticUnit>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let unit = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(unit);
    }
    Ok(out)
}

pub fn write_units(path: &Path, units: &[SemanticUnit]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for u in units {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Maps text to a unit vector of fixed dimension.
pub trait Embedder: Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Feature-hashed token counts (FNV-1a over lowercase alphanumeric tokens).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> String {
        format!("hashed-fnv1a-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            return Err(Error::EmptyText);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores closer than this are ranked as equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Sorts by descending score; runs of consecutive scores within
/// [`TIE_TOLERANCE`] of each other are ordered by `tie` instead.
fn rank_with_ties<I>(items: &mut [I], score: impl Fn(&I) -> f64, tie: impl Fn(&I, &I) -> Ordering) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)));
    let mut start = 0;
    while start < items.len() {
        let mut end = start + 1;
        while end < items.len() && score(&items[end - 1]) - score(&items[end]) <= TIE_TOLERANCE {
            end += 1;
        }
        items[start..end].sort_by(&tie);
        start = end;
    }
}

/// Exact cosine index over unit symptom embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex {
    embedder_id: String,
    dim: usize,
    units: Vec<SemanticUnit>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingIndex {
    pub fn build<E: Embedder + ?Sized>(units: Vec<SemanticUnit>, ontology: &Ontology, embedder: &E) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for u in &units {
            ontology.check(u)?;
            if !seen.insert(u.id) {
                return Err(Error::RejectedUnit(format!("duplicate unit id {}", u.id)));
            }
        }
        let vectors = units
            .iter()
            .map(|u| embedder.embed(&u.symptom))
            .collect::<Result<Vec<_>>>()?;
        Self::from_vectors(units, vectors, embedder.id())
    }

    /// Index over precomputed vectors, normalized on entry.
    pub fn from_vectors(units: Vec<SemanticUnit>, mut vectors: Vec<Vec<f64>>, embedder_id: String) -> Result<Self> {
        if units.len() != vectors.len() {
            return Err(Error::CountMismatch {
                source_len: units.len(),
                target_len: vectors.len(),
            });
        }
        let dim = vectors.first().map_or(0, Vec::len);
        for v in &mut vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::EmptyText);
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self {
            embedder_id,
            dim,
            units,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn units(&self) -> &[SemanticUnit] {
        &self.units
    }

    /// Top-`k` units by cosine to `query` (ties by ascending id).
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(&SemanticUnit, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut hits: Vec<_> = self
            .units
            .iter()
            .zip(&self.vectors)
            .map(|(u, v)| (u, cosine(query, v)))
            .collect();
        rank_with_ties(&mut hits, |h| h.1, |a, b| a.0.id.cmp(&b.0.id));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn retrieve<E: Embedder + ?Sized>(
        &self,
        embedder: &E,
        query: &str,
        k: usize,
    ) -> Result<Vec<(&SemanticUnit, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        self.search(&embedder.embed(query)?, k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub name: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundedTarget {
    pub format_version: String,
    pub organ: ScoredLabel,
    pub region: Option<ScoredLabel>,
    pub auxiliary_organs: Vec<ScoredLabel>,
    pub auxiliary_regions: Vec<ScoredLabel>,
    /// Always null: task type is not inferred by retrieval.
    pub task_type: Option<String>,
    pub evidence: Vec<u64>,
}

struct Tally {
    score: f64,
    key: (u64, usize),
}

fn vote<'a>(items: impl Iterator<Item = (&'a str, f64, (u64, usize))>) -> Vec<ScoredLabel> {
    let mut tally: BTreeMap<&str, Tally> = BTreeMap::new();
    for (name, w, key) in items {
        let t = tally.entry(name).or_insert(Tally { score: 0.0, key });
        t.score += w;
        t.key = t.key.min(key);
    }
    let mut out: Vec<_> = tally.into_iter().collect();
    rank_with_ties(&mut out, |t| t.1.score, |a, b| a.1.key.cmp(&b.1.key));
    out.into_iter()
        .map(|(name, t)| ScoredLabel {
            name: name.to_string(),
            score: t.score,
        })
        .collect()
}

/// Cosine-sum vote: organs over all hits, regions over hits naming the
/// winning organ. Negative cosines contribute zero. Ties go to the label
/// first seen at the smallest unit id, then earliest list position.
pub fn aggregate_targets(hits: &[(&SemanticUnit, f64)]) -> Result<GroundedTarget> {
    if hits.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut organs = vote(hits.iter().map(|(u, c)| (u.organ.as_str(), c.max(0.0), (u.id, 0))));
    let organ = organs.remove(0);
    let mut regions = vote(
        hits.iter()
            .filter(|(u, _)| u.organ == organ.name)
            .flat_map(|(u, c)| {
                u.locations
                    .iter()
                    .enumerate()
                    .map(move |(i, l)| (l.as_str(), c.max(0.0), (u.id, i)))
            }),
    );
    let region = (!regions.is_empty()).then(|| regions.remove(0));
    let mut evidence: Vec<_> = hits.iter().map(|(u, _)| u.id).collect();
    evidence.sort_unstable();
    Ok(GroundedTarget {
        format_version: format_version(),
        organ,
        region,
        auxiliary_organs: organs,
        auxiliary_regions: regions,
        task_type: None,
        evidence,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
}

/// Single-label F1 between predicted and gold labels.
pub fn grounding_f1<L: Ord>(predictions: &[L], gold: &[L], mode: Averaging) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: predictions.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    // (tp, fp, fn) per class
    let mut counts: BTreeMap<&L, [usize; 3]> = BTreeMap::new();
    for (p, g) in predictions.iter().zip(gold) {
        if p == g {
            counts.entry(p).or_default()[0] += 1;
        } else {
            counts.entry(p).or_default()[1] += 1;
            counts.entry(g).or_default()[2] += 1;
        }
    }
    let f1 = |[tp, fp, fn_]: [usize; 3]| {
        let d = 2 * tp + fp + fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * tp as f64 / d as f64
        }
    };
    Ok(match mode {
        Averaging::Macro => counts.values().map(|c| f1(*c)).sum::<f64>() / counts.len() as f64,
        Averaging::Micro => f1(counts.values().fold([0; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]])),
    })
}
