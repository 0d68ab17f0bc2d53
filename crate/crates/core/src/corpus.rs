//! Parallel multimodal corpora and precomputed image-feature containers.
//!
//! A corpus split is an ordered list of [`TranslationRecord`]s. Order matters:
//! metrics pair hypotheses and references by position, so nothing in this
//! module ever reorders or drops records.
//!
//! Canonical interchange is a headed TSV with the columns
//! `id source target image_id x y w h` (no quoting, one record per line).
//! JSONL with the same keys is also accepted. An absent bounding box is
//! written as four empty fields; a partially present box is rejected.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes at the start of every feature container.
pub const FEATURE_MAGIC: &[u8; 4] = b"FMAT";
/// Feature container format version written and accepted by this crate.
pub const FEATURE_FORMAT_VERSION: u32 = 1;

const TSV_COLUMNS: [&str; 8] = ["id", "source", "target", "image_id", "x", "y", "w", "h"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("header is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("duplicate record id {0}")]
    DuplicateId(u64),
    #[error("feature container magic mismatch")]
    BadMagic,
    #[error("unsupported feature container version {0}")]
    UnsupportedVersion(u32),
    #[error("feature container truncated while reading {0}")]
    Truncated(String),
    #[error("non-finite value in features for image `{0}`")]
    NonFinite(String),
    #[error("feature matrix for `{image_id}` has {len} values, expected {rows}x{cols}")]
    ShapeMismatch {
        image_id: String,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("image id `{0}` is too long for the container format")]
    ImageIdTooLong(String),
    #[error("duplicate image id `{0}` in feature container")]
    DuplicateImage(String),
    #[error("split length mismatch: `{a}` has {a_len} records, `{b}` has {b_len}")]
    LengthMismatch {
        a: String,
        a_len: usize,
        b: String,
        b_len: usize,
    },
    #[error("splits have different names: `{0}` vs `{1}`")]
    NameMismatch(String, String),
    #[error("image id `{image_id}` referenced by record {record_id} has no features")]
    UnresolvedImage { record_id: u64, image_id: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Pixel bounding box of the region a caption describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub id: u64,
    pub source: String,
    pub target: String,
    pub image_id: String,
    pub bbox: Option<BoundingBox>,
    pub lang: Option<String>,
}

impl TranslationRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.source.trim().is_empty() {
            return Err("empty source".into());
        }
        if self.target.trim().is_empty() {
            return Err("empty target".into());
        }
        if let Some(b) = self.bbox {
            if b.width == 0 || b.height == 0 {
                return Err("bounding box must have positive width and height".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
    Challenge,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
            SplitName::Challenge => "challenge",
        })
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "valid" | "dev" | "validation" => Ok(SplitName::Valid),
            "test" | "eval" => Ok(SplitName::Test),
            "challenge" | "chal" => Ok(SplitName::Challenge),
            other => Err(format!("unknown split name `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub name: SplitName,
    pub records: Vec<TranslationRecord>,
}

impl CorpusSplit {
    /// Builds a split, checking the per-record invariants and id uniqueness.
    pub fn new(name: SplitName, records: Vec<TranslationRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|message| CorpusError::Row { line: i + 1, message })?;
            if !seen.insert(r.id) {
                return Err(CorpusError::DuplicateId(r.id));
            }
        }
        Ok(Self { name, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sources(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.source.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.target.as_str()).collect()
    }

    /// Returns the first record id whose image is missing from `features`.
    pub fn ensure_features(&self, features: &FeatureMap) -> Result<()> {
        match self.records.iter().find(|r| !features.contains_key(&r.image_id)) {
            Some(r) => Err(CorpusError::UnresolvedImage {
                record_id: r.id,
                image_id: r.image_id.clone(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json") => {
                CorpusFormat::Jsonl
            }
            _ => CorpusFormat::Tsv,
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat, name: SplitName) -> Result<CorpusSplit> {
    let file = fs::File::open(path)?;
    read_corpus(BufReader::new(file), format, name)
}

pub fn read_corpus<R: BufRead>(reader: R, format: CorpusFormat, name: SplitName) -> Result<CorpusSplit> {
    let records = match format {
        CorpusFormat::Tsv => read_tsv(reader)?,
        CorpusFormat::Jsonl => read_jsonl(reader)?,
    };
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.id) {
            return Err(CorpusError::DuplicateId(r.id));
        }
    }
    Ok(CorpusSplit { name, records })
}

struct TsvLayout {
    id: Option<usize>,
    source: usize,
    target: usize,
    image_id: Option<usize>,
    bbox: Option<[usize; 4]>,
    lang: Option<usize>,
}

impl TsvLayout {
    fn from_header(header: &str) -> Result<Self> {
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let find = |name: &str| cols.iter().position(|c| *c == name);
        let source = find("source").ok_or(CorpusError::MissingColumn("source"))?;
        let target = find("target").ok_or(CorpusError::MissingColumn("target"))?;
        let bbox = match (find("x"), find("y"), find("w"), find("h")) {
            (Some(x), Some(y), Some(w), Some(h)) => Some([x, y, w, h]),
            _ => None,
        };
        Ok(Self {
            id: find("id"),
            source,
            target,
            image_id: find("image_id"),
            bbox,
            lang: find("lang"),
        })
    }
}

fn read_tsv<R: BufRead>(reader: R) -> Result<Vec<TranslationRecord>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Ok(Vec::new()),
    };
    let layout = TsvLayout::from_header(header.trim_start_matches('\u{feff}'))?;
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        // header is line 1
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let record = parse_tsv_row(&layout, &fields, records.len())
            .map_err(|message| CorpusError::Row { line: line_no, message })?;
        records.push(record);
    }
    Ok(records)
}

fn parse_tsv_row(
    layout: &TsvLayout,
    fields: &[&str],
    ordinal: usize,
) -> std::result::Result<TranslationRecord, String> {
    let get = |i: usize| fields.get(i).copied().unwrap_or("");
    let id = match layout.id {
        Some(i) => get(i)
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("invalid id `{}`", get(i)))?,
        None => ordinal as u64,
    };
    let bbox = match layout.bbox {
        Some(cols) => parse_bbox(cols.map(get))?,
        None => None,
    };
    let lang = layout
        .lang
        .map(get)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned);
    let record = TranslationRecord {
        id,
        source: get(layout.source).to_owned(),
        target: get(layout.target).to_owned(),
        image_id: layout.image_id.map(get).unwrap_or("").to_owned(),
        bbox,
        lang,
    };
    record.validate()?;
    Ok(record)
}

fn parse_bbox(fields: [&str; 4]) -> std::result::Result<Option<BoundingBox>, String> {
    let present = fields.iter().filter(|f| !f.trim().is_empty()).count();
    match present {
        0 => Ok(None),
        4 => {
            let mut v = [0u32; 4];
            for (slot, f) in v.iter_mut().zip(fields) {
                *slot = f
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| format!("bounding box field `{f}` is not a non-negative integer"))?;
            }
            Ok(Some(BoundingBox {
                x: v[0],
                y: v[1],
                width: v[2],
                height: v[3],
            }))
        }
        _ => Err("bounding box is partially present".into()),
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<u64>,
    source: Option<String>,
    target: Option<String>,
    #[serde(default)]
    image_id: String,
    x: Option<serde_json::Value>,
    y: Option<serde_json::Value>,
    w: Option<serde_json::Value>,
    h: Option<serde_json::Value>,
    lang: Option<String>,
}

fn json_bbox_field(v: &Option<serde_json::Value>) -> std::result::Result<Option<u32>, String> {
    match v {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::Number(n)) => n
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| format!("bounding box field `{n}` is not a non-negative integer")),
        Some(other) => Err(format!("bounding box field `{other}` is not a non-negative integer")),
    }
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TranslationRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ordinal = records.len();
        let parse = || -> std::result::Result<TranslationRecord, String> {
            let row: JsonRow = serde_json::from_str(&line).map_err(|e| e.to_string())?;
            let parts = [&row.x, &row.y, &row.w, &row.h]
                .map(json_bbox_field)
                .into_iter()
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let bbox = match parts.iter().filter(|p| p.is_some()).count() {
                0 => None,
                4 => Some(BoundingBox {
                    x: parts[0].unwrap(),
                    y: parts[1].unwrap(),
                    width: parts[2].unwrap(),
                    height: parts[3].unwrap(),
                }),
                _ => return Err("bounding box is partially present".into()),
            };
            let record = TranslationRecord {
                id: row.id.unwrap_or(ordinal as u64),
                source: row.source.ok_or("missing source")?,
                target: row.target.ok_or("missing target")?,
                image_id: row.image_id,
                bbox,
                lang: row.lang,
            };
            record.validate()?;
            Ok(record)
        };
        records.push(parse().map_err(|message| CorpusError::Row { line: line_no, message })?);
    }
    Ok(records)
}

/// Writes a split as canonical TSV (with a `lang` column when any record has one).
pub fn write_tsv<W: Write>(split: &CorpusSplit, mut out: W) -> io::Result<()> {
    let with_lang = split.records.iter().any(|r| r.lang.is_some());
    let mut header = TSV_COLUMNS.join("\t");
    if with_lang {
        header.push_str("\tlang");
    }
    writeln!(out, "{header}")?;
    for r in &split.records {
        let bbox = match r.bbox {
            Some(b) => format!("{}\t{}\t{}\t{}", b.x, b.y, b.width, b.height),
            None => "\t\t\t".to_owned(),
        };
        write!(out, "{}\t{}\t{}\t{}\t{}", r.id, r.source, r.target, r.image_id, bbox)?;
        if with_lang {
            write!(out, "\t{}", r.lang.as_deref().unwrap_or(""))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_tsv(split: &CorpusSplit, path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_tsv(split, &mut buf)?;
    fs::write(path, buf)
}

/// An `rows x cols` matrix of image-patch features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub image_id: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(image_id: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let image_id = image_id.into();
        if rows * cols != data.len() {
            return Err(CorpusError::ShapeMismatch {
                image_id,
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(image_id));
        }
        Ok(Self {
            image_id,
            rows,
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Feature matrices keyed by image id. Ordered so serialization is deterministic.
pub type FeatureMap = BTreeMap<String, FeatureMatrix>;

pub fn write_features<W: Write>(features: &FeatureMap, mut out: W) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_FORMAT_VERSION.to_le_bytes())?;
    let count = u32::try_from(features.len()).expect("feature count exceeds u32");
    out.write_all(&count.to_le_bytes())?;
    for (id, m) in features {
        let id_len = u16::try_from(id.len()).map_err(|_| CorpusError::ImageIdTooLong(id.clone()))?;
        out.write_all(&id_len.to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        out.write_all(&(m.rows as u32).to_le_bytes())?;
        out.write_all(&(m.cols as u32).to_le_bytes())?;
        for v in &m.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_features(features: &FeatureMap, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_features(features, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Writes the advisory sidecar index (`image_id TAB byte-offset` per entry).
pub fn write_feature_index<W: Write>(features: &FeatureMap, mut out: W) -> io::Result<()> {
    let mut offset = 12u64;
    for (id, m) in features {
        writeln!(out, "{id}\t{offset}")?;
        offset += 2 + id.len() as u64 + 8 + 4 * m.data.len() as u64;
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CorpusError::Truncated(what.to_owned()),
        _ => CorpusError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_features<R: Read>(mut input: R) -> Result<FeatureMap> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut input, &mut magic, "magic")?;
    if &magic != FEATURE_MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let version = read_u32(&mut input, "version")?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(CorpusError::UnsupportedVersion(version));
    }
    let count = read_u32(&mut input, "entry count")?;
    let mut map = FeatureMap::new();
    for entry in 0..count {
        let mut len = [0u8; 2];
        read_exact_or(&mut input, &mut len, &format!("entry {entry} id length"))?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut input, &mut id, &format!("entry {entry} id"))?;
        let id = String::from_utf8(id)
            .map_err(|_| CorpusError::Truncated(format!("entry {entry} id (invalid utf-8)")))?;
        let rows = read_u32(&mut input, &id)? as usize;
        let cols = read_u32(&mut input, &id)? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| CorpusError::Truncated(id.clone()))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        let mut b = [0u8; 4];
        for _ in 0..n {
            read_exact_or(&mut input, &mut b, &id)?;
            let v = f32::from_le_bytes(b);
            if !v.is_finite() {
                return Err(CorpusError::NonFinite(id));
            }
            data.push(v);
        }
        if map.contains_key(&id) {
            return Err(CorpusError::DuplicateImage(id));
        }
        map.insert(
            id.clone(),
            FeatureMatrix {
                image_id: id,
                rows,
                cols,
                data,
            },
        );
    }
    Ok(map)
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let file = fs::File::open(path)?;
    read_features(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlignmentReport {
    pub split: SplitName,
    pub length: usize,
    /// Positions where any two splits disagree on source text or image id.
    pub mismatches: Vec<usize>,
}

impl AlignmentReport {
    pub fn is_aligned(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares splits of the same name across languages position by position.
pub fn check_alignment(splits: &[CorpusSplit]) -> Result<AlignmentReport> {
    let Some(first) = splits.first() else {
        return Ok(AlignmentReport {
            split: SplitName::Train,
            length: 0,
            mismatches: Vec::new(),
        });
    };
    for s in &splits[1..] {
        if s.name != first.name {
            return Err(CorpusError::NameMismatch(first.name.to_string(), s.name.to_string()));
        }
        if s.len() != first.len() {
            return Err(CorpusError::LengthMismatch {
                a: lang_label(first),
                a_len: first.len(),
                b: lang_label(s),
                b_len: s.len(),
            });
        }
    }
    let mismatches = (0..first.len())
        .filter(|&i| {
            let r0 = &first.records[i];
            splits[1..].iter().any(|s| {
                let r = &s.records[i];
                r.source != r0.source || r.image_id != r0.image_id
            })
        })
        .collect();
    Ok(AlignmentReport {
        split: first.name,
        length: first.len(),
        mismatches,
    })
}

fn lang_label(s: &CorpusSplit) -> String {
    s.records
        .iter()
        .find_map(|r| r.lang.clone())
        .unwrap_or_else(|| s.name.to_string())
}
