//! Random-image substitution probe and score comparison tables.
//!
//! A probe swaps each record's image features for another image's and
//! compares the resulting scores against a baseline, one delta per
//! (language, subset) cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSplit, FeatureMap, FeatureMatrix};
use crate::metrics::{self, Metric, MetricOptions};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("image id `{image_id}` referenced by record {record_id} has no features")]
    UnresolvedImage { record_id: u64, image_id: String },
    #[error("derangement needs at least 2 distinct images, pool has {0}")]
    PoolTooSmall(usize),
    #[error("split has no records")]
    EmptySplit,
    #[error("score grids differ: {0}")]
    GridMismatch(String),
    #[error("scores line {line}: {message}")]
    Scores { line: usize, message: String },
    #[error("no score sets to compare")]
    NoSystems,
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitution {
    Actual,
    /// Draw with replacement; a record may get its own image back.
    #[default]
    RandomUniform,
    /// Permute the image pool with no fixed points.
    RandomDerangement,
}

impl FromStr for Substitution {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "actual" => Ok(Self::Actual),
            "uniform" | "random_uniform" => Ok(Self::RandomUniform),
            "derangement" | "random_derangement" => Ok(Self::RandomDerangement),
            other => Err(format!("unknown substitution mode `{other}`")),
        }
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Actual => "actual",
            Self::RandomUniform => "uniform",
            Self::RandomDerangement => "derangement",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[default]
    Crop,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    #[default]
    None,
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub substitution: Substitution,
    pub seed: u64,
    pub feature_kind: FeatureKind,
    pub noise_level: NoiseLevel,
}

/// Distinct image ids referenced by the split, sorted.
pub fn image_pool(split: &CorpusSplit) -> Vec<String> {
    split
        .records
        .iter()
        .map(|r| r.image_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// A uniformly random permutation of `0..n` without fixed points.
pub fn random_derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    assert!(n >= 2, "no derangement of fewer than 2 items");
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            p.swap(i, j);
        }
        if p.iter().enumerate().all(|(i, v)| i != *v) {
            return p;
        }
        p.sort_unstable();
    }
}

/// Which image each record's features come from, by record id.
pub fn assign_images(split: &CorpusSplit, config: &ProbeConfig) -> Result<BTreeMap<u64, String>> {
    if split.is_empty() {
        return Err(ProbeError::EmptySplit);
    }
    let pool = image_pool(split);
    let records = &split.records;
    let assignment = match config.substitution {
        Substitution::Actual => records.iter().map(|r| (r.id, r.image_id.clone())).collect(),
        Substitution::RandomUniform => {
            let mut rng = stream_rng(config.seed, "probe-uniform");
            records
                .iter()
                .map(|r| (r.id, pool[rng.random_range(0..pool.len())].clone()))
                .collect()
        }
        Substitution::RandomDerangement => {
            if pool.len() < 2 {
                return Err(ProbeError::PoolTooSmall(pool.len()));
            }
            let mut rng = stream_rng(config.seed, "probe-derangement");
            let perm = random_derangement(pool.len(), &mut rng);
            let index: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            records
                .iter()
                .map(|r| (r.id, pool[perm[index[r.image_id.as_str()]]].clone()))
                .collect()
        }
    };
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Substituted {
    pub assignment: BTreeMap<u64, String>,
    /// Features each record sees, by record id.
    pub features: BTreeMap<u64, FeatureMatrix>,
}

impl Substituted {
    /// Features keyed by record id as a string, for the feature container.
    pub fn to_feature_map(&self) -> FeatureMap {
        self.features
            .iter()
            .map(|(id, m)| {
                let key = id.to_string();
                (
                    key.clone(),
                    FeatureMatrix {
                        image_id: key,
                        ..m.clone()
                    },
                )
            })
            .collect()
    }

    /// `record_id <TAB> original_image <TAB> assigned_image` lines.
    pub fn write_assignment<W: Write>(&self, split: &CorpusSplit, mut out: W) -> io::Result<()> {
        writeln!(out, "record_id\timage_id\tassigned_image_id")?;
        for r in &split.records {
            writeln!(out, "{}\t{}\t{}", r.id, r.image_id, self.assignment[&r.id])?;
        }
        Ok(())
    }
}

pub fn substitute_features(split: &CorpusSplit, features: &FeatureMap, config: &ProbeConfig) -> Result<Substituted> {
    for r in &split.records {
        if !features.contains_key(&r.image_id) {
            return Err(ProbeError::UnresolvedImage {
                record_id: r.id,
                image_id: r.image_id.clone(),
            });
        }
    }
    let assignment = assign_images(split, config)?;
    let features = assignment.iter().map(|(id, img)| (*id, features[img].clone())).collect();
    Ok(Substituted { assignment, features })
}

// ---------------------------------------------------------------- scores

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Test,
    Challenge,
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "test" | "eval" => Ok(Self::Test),
            "challenge" => Ok(Self::Challenge),
            other => Err(format!("unknown subset `{other}`")),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Test => "test",
            Self::Challenge => "challenge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub language: String,
    pub subset: Subset,
    pub bleu: f64,
    pub chrf2: Option<f64>,
    pub ter: Option<f64>,
}

impl ScoreRow {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Bleu => Some(self.bleu),
            Metric::Chrf2 => self.chrf2,
            Metric::Ter => self.ter,
        }
    }
}

/// Scores of one system over a (language, subset) grid, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub label: String,
    pub rows: Vec<ScoreRow>,
}

const SCORE_COLUMNS: [&str; 5] = ["language", "subset", "bleu", "chrf2", "ter"];

impl ScoreSet {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            rows: Vec::new(),
        }
    }

    pub fn find(&self, language: &str, subset: Subset) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.language == language && r.subset == subset)
    }

    pub fn push(&mut self, row: ScoreRow) -> std::result::Result<(), String> {
        if self.find(&row.language, row.subset).is_some() {
            return Err(format!("duplicate cell {} {}", row.language, row.subset));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Tab-separated with a header; `language` `subset` `bleu` are required,
    /// `chrf2` and `ter` optional. `#` lines are comments.
    pub fn read<R: BufRead>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut set = ScoreSet::new(label);
        let mut header: Option<Vec<String>> = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let err = |message: String| ProbeError::Scores { line: lineno, message };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let Some(cols) = &header else {
                let cols: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
                for required in &SCORE_COLUMNS[..3] {
                    if !cols.iter().any(|c| c == required) {
                        return Err(err(format!("header lacks `{required}`")));
                    }
                }
                header = Some(cols);
                continue;
            };
            if fields.len() != cols.len() {
                return Err(err(format!("expected {} fields, got {}", cols.len(), fields.len())));
            }
            let field = |name: &str| cols.iter().position(|c| c == name).map(|i| fields[i]);
            let number = |name: &str| -> std::result::Result<Option<f64>, String> {
                match field(name) {
                    None | Some("") => Ok(None),
                    Some(v) => match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(Some(x)),
                        _ => Err(format!("bad {name} value `{v}`")),
                    },
                }
            };
            let language = field("language").unwrap_or_default().to_string();
            if language.is_empty() {
                return Err(err("empty language".into()));
            }
            let subset = field("subset").unwrap_or_default().parse::<Subset>().map_err(err)?;
            let bleu = number("bleu").map_err(err)?.ok_or_else(|| err("missing bleu".into()))?;
            let row = ScoreRow {
                language,
                subset,
                bleu,
                chrf2: number("chrf2").map_err(err)?,
                ter: number("ter").map_err(err)?,
            };
            set.push(row).map_err(err)?;
        }
        Ok(set)
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", SCORE_COLUMNS.join("\t"))?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{:.2}\t{}\t{}",
                r.language,
                r.subset,
                r.bleu,
                opt(r.chrf2),
                opt(r.ter)
            )?;
        }
        Ok(())
    }
}

/// Scores one hypothesis file against its references.
pub fn score_row<H: AsRef<str>, R: AsRef<str>>(
    language: &str,
    subset: Subset,
    hyps: &[H],
    refs: &[R],
    opts: &MetricOptions,
) -> Result<ScoreRow> {
    let report = metrics::evaluate(hyps, refs, opts, false)?;
    Ok(ScoreRow {
        language: language.to_string(),
        subset,
        bleu: report.bleu,
        chrf2: Some(report.chrf2),
        ter: Some(report.ter),
    })
}

// ---------------------------------------------------------------- comparison

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonCell {
    pub system_a: String,
    pub system_b: String,
    pub subset: Subset,
    pub language: String,
    /// `b - a`; positive means system b scored higher.
    pub delta: f64,
}

/// BLEU deltas, one per grid cell in the order of `a`.
pub fn run_probe(a: &ScoreSet, b: &ScoreSet) -> Result<Vec<ComparisonCell>> {
    run_probe_with(a, b, Metric::Bleu)
}

pub fn run_probe_with(a: &ScoreSet, b: &ScoreSet, metric: Metric) -> Result<Vec<ComparisonCell>> {
    let missing = |x: &ScoreSet, y: &ScoreSet| -> Vec<String> {
        x.rows
            .iter()
            .filter(|r| y.find(&r.language, r.subset).is_none())
            .map(|r| format!("{} {}", r.language, r.subset))
            .collect()
    };
    let (only_a, only_b) = (missing(a, b), missing(b, a));
    if !only_a.is_empty() || !only_b.is_empty() || a.rows.is_empty() {
        return Err(ProbeError::GridMismatch(format!(
            "only in {}: [{}]; only in {}: [{}]",
            a.label,
            only_a.join(", "),
            b.label,
            only_b.join(", ")
        )));
    }
    a.rows
        .iter()
        .map(|ra| {
            let rb = b.find(&ra.language, ra.subset).expect("grid checked");
            let (Some(va), Some(vb)) = (ra.get(metric), rb.get(metric)) else {
                return Err(ProbeError::GridMismatch(format!(
                    "{metric:?} missing for {} {}",
                    ra.language, ra.subset
                )));
            };
            Ok(ComparisonCell {
                system_a: a.label.clone(),
                system_b: b.label.clone(),
                subset: ra.subset,
                language: ra.language.clone(),
                delta: vb - va,
            })
        })
        .collect()
}

/// Deltas of several systems against one baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub metric: Metric,
    pub subsets: Vec<Subset>,
    pub languages: Vec<String>,
    /// One row of cells per compared system.
    pub rows: Vec<Vec<ComparisonCell>>,
}

impl ComparisonTable {
    pub fn build(a: &ScoreSet, systems: &[ScoreSet], metric: Metric) -> Result<Self> {
        if systems.is_empty() {
            return Err(ProbeError::NoSystems);
        }
        let rows = systems
            .iter()
            .map(|b| run_probe_with(a, b, metric))
            .collect::<Result<Vec<_>>>()?;
        let mut subsets: Vec<Subset> = a.rows.iter().map(|r| r.subset).collect();
        subsets.sort();
        subsets.dedup();
        let mut languages: Vec<String> = Vec::new();
        for r in &a.rows {
            if !languages.contains(&r.language) {
                languages.push(r.language.clone());
            }
        }
        Ok(Self {
            baseline: a.label.clone(),
            metric,
            subsets,
            languages,
            rows,
        })
    }

    fn cell<'a>(row: &'a [ComparisonCell], language: &str, subset: Subset) -> Option<&'a ComparisonCell> {
        row.iter().find(|c| c.language == language && c.subset == subset)
    }

    /// Mean delta over the languages present for `subset`.
    pub fn subset_average(row: &[ComparisonCell], subset: Subset) -> Option<f64> {
        let vals: Vec<f64> = row.iter().filter(|c| c.subset == subset).map(|c| c.delta).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    fn columns(&self) -> Vec<(Subset, Option<&str>)> {
        let mut cols = Vec::new();
        for s in &self.subsets {
            for l in &self.languages {
                cols.push((*s, Some(l.as_str())));
            }
            cols.push((*s, None));
        }
        cols
    }

    fn values(&self, row: &[ComparisonCell]) -> Vec<Option<f64>> {
        self.columns()
            .iter()
            .map(|(s, l)| match l {
                Some(l) => Self::cell(row, l, *s).map(|c| c.delta),
                None => Self::subset_average(row, *s),
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut out = String::new();
        let _ = writeln!(out, "{} difference vs {} (positive: system scores higher)", self.metric, self.baseline);
        let _ = writeln!(out);
        out.push_str("| System |");
        for (s, l) in &cols {
            let _ = write!(out, " {} {} |", s, l.unwrap_or("avg"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &cols {
            out.push_str("---:|");
        }
        out.push('\n');
        for row in &self.rows {
            let label = row.first().map_or("", |c| c.system_b.as_str());
            let _ = write!(out, "| {label} |");
            for v in self.values(row) {
                let _ = write!(out, " {} |", v.map(signed).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system");
        for (s, l) in self.columns() {
            let _ = write!(out, ",{}_{}", s, l.unwrap_or("avg"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_field(row.first().map_or("", |c| c.system_b.as_str())));
            for v in self.values(row) {
                let _ = write!(out, ",{}", v.map(signed).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Two decimals with an explicit sign; rounds `-0.00` to `+0.00`.
pub fn signed(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:+.2}")
}
