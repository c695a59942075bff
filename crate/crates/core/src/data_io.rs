//! Dataset ingestion, normalization and the model container.
//!
//! # Model container
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "PCDBNMDL"
//! version      u32      CONTAINER_VERSION
//! spec         u32 length + UTF-8 JSON of the NetworkSpec
//! layers       u32 count, then per layer:
//!                u32 n_v, u32 n_w, u32 k, u32 pool,
//!                k·n_w² f64 filters, k f64 group biases, f64 visible bias
//! softmax      u32 rows, u32 dim, rows·dim f64
//! ledger       u8 sealed, u32 count, then per entry:
//!                u32 length + UTF-8 stage, f64 delta, f64 epsilon
//! checksum     u64 FNV-1a over every preceding byte
//! ```
//!
//! The metrics trace is not stored (it carries wall-clock times).

use crate::dp_softmax::SoftmaxParams;
use crate::energy_model::{CrbmParams, Geometry, VisibleGrid};
use crate::functional_mech::{LedgerEntry, PrivacyAccountant};
use crate::network::{LabeledGrids, NetworkSpec, TrainedModel};
use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CONTAINER_MAGIC: &[u8; 8] = b"PCDBNMDL";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad IDX magic 0x{found:08x}")]
    BadMagic { found: u32 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("negative feature {value} at instance {instance}, index {index}")]
    NegativeFeature { instance: usize, index: usize, value: f64 },
    #[error("CSV schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("cannot parse {value:?} at row {row}, column {col}")]
    ParseError { row: usize, col: usize, value: String },
    #[error("container version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model container: {0}")]
    CorruptContainer(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Instances as flat row-major values with a common shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub instances: Vec<Vec<f64>>,
    /// Per-instance dimensions, e.g. `[28, 28]`.
    pub shape: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Contents of one IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxFile {
    Images { rows: usize, cols: usize, pixels: Vec<Vec<u8>> },
    Labels(Vec<u8>),
}

/// Parses big-endian IDX bytes (u8 images or u8 labels).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::TruncatedFile { expected: 4, actual: bytes.len() });
    }
    let mut c = Cursor::new(bytes);
    let magic = c.read_u32::<BigEndian>().expect("length checked");
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        found => return Err(DataError::BadMagic { found }),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(DataError::TruncatedFile { expected: header, actual: bytes.len() });
    }
    let dims: Vec<usize> = (0..ndims).map(|_| c.read_u32::<BigEndian>().expect("length checked") as usize).collect();
    let payload = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let expected = payload
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| DataError::DimMismatch(format!("dimensions {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(DataError::TruncatedFile { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::DimMismatch(format!(
            "{} trailing bytes after dimensions {dims:?}",
            bytes.len() - expected
        )));
    }
    let body = &bytes[header..];
    Ok(if ndims == 1 {
        IdxFile::Labels(body.to_vec())
    } else {
        let (rows, cols) = (dims[1], dims[2]);
        let size = rows * cols;
        let pixels = if size == 0 { vec![Vec::new(); dims[0]] } else { body.chunks(size).map(|c| c.to_vec()).collect() };
        IdxFile::Images { rows, cols, pixels }
    })
}

/// Reads an IDX file. Images become instances scaled by 1/255; a label file
/// yields a dataset with labels and no instances.
pub fn load_idx(path: &Path) -> Result<RawDataset, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(match parse_idx(&bytes)? {
        IdxFile::Images { rows, cols, pixels } => RawDataset {
            instances: pixels.iter().map(|p| p.iter().map(|&b| b as f64 / 255.0).collect()).collect(),
            shape: vec![rows, cols],
            labels: None,
        },
        IdxFile::Labels(l) => RawDataset {
            instances: Vec::new(),
            shape: Vec::new(),
            labels: Some(l.into_iter().map(usize::from).collect()),
        },
    })
}

/// Image file plus label file.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<RawDataset, DataError> {
    let mut ds = load_idx(images)?;
    if ds.shape.len() != 2 {
        return Err(DataError::DimMismatch(format!("{} is not an image file", images.display())));
    }
    let l = load_idx(labels)?
        .labels
        .ok_or_else(|| DataError::DimMismatch(format!("{} is not a label file", labels.display())))?;
    if l.len() != ds.len() {
        return Err(DataError::DimMismatch(format!("{} images, {} labels", ds.len(), l.len())));
    }
    ds.labels = Some(l);
    Ok(ds)
}

/// IDX image bytes. Values are mapped back with `round(255·x)`.
pub fn idx_image_bytes(ds: &RawDataset) -> Result<Vec<u8>, DataError> {
    let [rows, cols] = ds.shape[..] else {
        return Err(DataError::DimMismatch(format!("image shape {:?}", ds.shape)));
    };
    let mut out = Vec::with_capacity(16 + ds.len() * rows * cols);
    out.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).expect("vec write");
    for d in [ds.len(), rows, cols] {
        out.write_u32::<BigEndian>(d as u32).expect("vec write");
    }
    for inst in &ds.instances {
        if inst.len() != rows * cols {
            return Err(DataError::DimMismatch("instance length".into()));
        }
        out.extend(inst.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

pub fn idx_label_bytes(labels: &[usize]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC).expect("vec write");
    out.write_u32::<BigEndian>(labels.len() as u32).expect("vec write");
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| DataError::DimMismatch(format!("label {l} exceeds u8")))?);
    }
    Ok(out)
}

/// Writes the images (and labels, if present) as IDX files.
pub fn save_idx(ds: &RawDataset, images: &Path, labels: Option<&Path>) -> Result<(), DataError> {
    std::fs::write(images, idx_image_bytes(ds)?).map_err(io_err(images))?;
    if let (Some(path), Some(l)) = (labels, &ds.labels) {
        std::fs::write(path, idx_label_bytes(l)?).map_err(io_err(path))?;
    }
    Ok(())
}

/// How instances are brought into the unit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Divide each instance by `max(1, ‖x‖₂)`.
    L2,
    /// Divide each instance by `max(1, max_j x_j)`, keeping pixels in [0,1];
    /// sensitivity then uses patch sums.
    PerPixel,
}

impl NormalizationMode {
    pub fn label(&self) -> &'static str {
        match self {
            NormalizationMode::L2 => "l2",
            NormalizationMode::PerPixel => "per-pixel",
        }
    }
}

/// Instances with non-negative entries in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDataset {
    pub instances: Vec<Vec<f64>>,
    pub shape: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    pub mode: NormalizationMode,
    /// Human-readable record of the scaling applied.
    pub provenance: String,
}

pub fn normalize(raw: &RawDataset, mode: NormalizationMode) -> Result<NormalizedDataset, DataError> {
    let mut scaled = 0usize;
    let mut instances = Vec::with_capacity(raw.len());
    for (t, x) in raw.instances.iter().enumerate() {
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(DataError::NegativeFeature { instance: t, index, value });
        }
        let m = match mode {
            NormalizationMode::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormalizationMode::PerPixel => x.iter().copied().fold(0.0, f64::max),
        };
        if m > 1.0 {
            scaled += 1;
            let mut y: Vec<f64> = x.iter().map(|v| (v / m).min(1.0)).collect();
            // rounding can leave the norm a few ulps above 1; a second pass
            // would then rescale again
            if mode == NormalizationMode::L2 {
                while y.iter().map(|v| v * v).sum::<f64>().sqrt() > 1.0 {
                    y.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
                }
            }
            instances.push(y);
        } else {
            instances.push(x.clone());
        }
    }
    let what = match mode {
        NormalizationMode::L2 => "divided by max(1, L2 norm)",
        NormalizationMode::PerPixel => "divided by max(1, largest entry)",
    };
    Ok(NormalizedDataset {
        instances,
        shape: raw.shape.clone(),
        labels: raw.labels.clone(),
        mode,
        provenance: format!("mode={}: each instance {what}; {scaled} of {} rescaled", mode.label(), raw.len()),
    })
}

impl NormalizedDataset {
    /// Square grids with labels, ready for training.
    pub fn to_labeled_grids(&self, classes: usize) -> Result<LabeledGrids, DataError> {
        let side = match self.shape[..] {
            [r, c] if r == c => r,
            [n] => {
                let s = (n as f64).sqrt().round() as usize;
                if s * s != n {
                    return Err(DataError::DimMismatch(format!("{n} features do not form a square grid")));
                }
                s
            }
            _ => return Err(DataError::DimMismatch(format!("shape {:?} is not a square grid", self.shape))),
        };
        let labels = self.labels.clone().ok_or_else(|| DataError::DimMismatch("dataset has no labels".into()))?;
        let grids = self
            .instances
            .iter()
            .map(|x| VisibleGrid::new(side, x.clone()).map_err(|e| DataError::DimMismatch(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        LabeledGrids::new(grids, labels, classes).map_err(|e| DataError::DimMismatch(e.to_string()))
    }
}

/// Feature columns and an optional label column, by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub label: Option<String>,
}

/// Reads a headed CSV. Rows and columns in errors are 1-based; row 1 is the header.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawDataset, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_csv(file, schema)
}

/// Schema taking every column except `label` as a feature, in header order.
pub fn csv_schema_from_header(path: &Path, label: Option<&str>) -> Result<CsvSchema, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers().map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
    let features: Vec<String> =
        headers.iter().map(|h| h.trim().to_string()).filter(|h| Some(h.as_str()) != label).collect();
    if let Some(l) = label {
        if !headers.iter().any(|h| h.trim() == l) {
            return Err(DataError::SchemaMismatch(format!("missing column {l:?}")));
        }
    }
    Ok(CsvSchema { features, label: label.map(str::to_string) })
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<RawDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::SchemaMismatch(e.to_string()))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find = |name: &str| {
        index.get(name).copied().ok_or_else(|| DataError::SchemaMismatch(format!("missing column {name:?}")))
    };
    let feature_cols = schema.features.iter().map(|f| find(f)).collect::<Result<Vec<_>, _>>()?;
    let label_col = schema.label.as_deref().map(find).transpose()?;
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| DataError::SchemaMismatch(format!("row {row}: {e}")))?;
        let cell = |c: usize| -> Result<f64, DataError> {
            let raw = rec.get(c).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| DataError::ParseError { row, col: c + 1, value: raw.to_string() })
        };
        instances.push(feature_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>, _>>()?);
        if let Some(c) = label_col {
            let v = cell(c)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(DataError::ParseError { row, col: c + 1, value: rec.get(c).unwrap_or("").to_string() });
            }
            labels.push(v as usize);
        }
    }
    Ok(RawDataset {
        instances,
        shape: vec![schema.features.len()],
        labels: label_col.map(|_| labels),
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.write_f64::<LittleEndian>(x).expect("vec write");
    }
}

/// Serializes a model to container bytes.
pub fn model_to_bytes(model: &TrainedModel) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.write_u32::<LittleEndian>(CONTAINER_VERSION).expect("vec write");
    let spec = serde_json::to_string(&model.spec).map_err(|e| DataError::CorruptContainer(e.to_string()))?;
    put_str(&mut out, &spec);
    out.write_u32::<LittleEndian>(model.layers.len() as u32).expect("vec write");
    for (p, ls) in model.layers.iter().zip(&model.spec.layers) {
        let g = p.geometry;
        for d in [g.n_v, g.n_w, g.k, ls.pool] {
            out.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        put_f64s(&mut out, &p.filters);
        put_f64s(&mut out, &p.group_bias);
        put_f64s(&mut out, &[p.visible_bias]);
    }
    let w = &model.softmax.weights;
    out.write_u32::<LittleEndian>(w.len() as u32).expect("vec write");
    out.write_u32::<LittleEndian>(model.softmax.dim() as u32).expect("vec write");
    for row in w {
        put_f64s(&mut out, row);
    }
    out.push(u8::from(model.accountant.is_sealed()));
    out.write_u32::<LittleEndian>(model.accountant.entries().len() as u32).expect("vec write");
    for e in model.accountant.entries() {
        put_str(&mut out, &e.stage);
        put_f64s(&mut out, &[e.delta, e.epsilon]);
    }
    let sum = fnv1a(&out);
    out.write_u64::<LittleEndian>(sum).expect("vec write");
    Ok(out)
}

fn corrupt(what: &str) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |_| DataError::CorruptContainer(format!("truncated while reading {what}"))
}

fn get_len(c: &mut Cursor<&[u8]>, what: &str, limit: usize) -> Result<usize, DataError> {
    let n = c.read_u32::<LittleEndian>().map_err(corrupt(what))? as usize;
    if n > limit {
        return Err(DataError::CorruptContainer(format!("{what} length {n} is implausible")));
    }
    Ok(n)
}

fn get_f64s(c: &mut Cursor<&[u8]>, n: usize, what: &str) -> Result<Vec<f64>, DataError> {
    (0..n).map(|_| c.read_f64::<LittleEndian>().map_err(corrupt(what))).collect()
}

fn get_str(c: &mut Cursor<&[u8]>, what: &str) -> Result<String, DataError> {
    let remaining = c.get_ref().len() - c.position() as usize;
    let n = get_len(c, what, remaining)?;
    let mut buf = vec![0u8; n];
    c.read_exact(&mut buf).map_err(corrupt(what))?;
    String::from_utf8(buf).map_err(|_| DataError::CorruptContainer(format!("{what} is not UTF-8")))
}

/// Parses container bytes. The metrics trace of the result is empty.
pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel, DataError> {
    if bytes.len() < 12 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(DataError::CorruptContainer("missing magic".into()));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("slice of 4"));
    if found != CONTAINER_VERSION {
        return Err(DataError::VersionMismatch { found, expected: CONTAINER_VERSION });
    }
    if bytes.len() < 20 {
        return Err(DataError::CorruptContainer("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("slice of 8")) {
        return Err(DataError::CorruptContainer("checksum mismatch".into()));
    }
    let mut c = Cursor::new(body);
    c.set_position(12);
    let spec_json = get_str(&mut c, "spec")?;
    let spec: NetworkSpec =
        serde_json::from_str(&spec_json).map_err(|e| DataError::CorruptContainer(format!("spec: {e}")))?;
    let n_layers = get_len(&mut c, "layer count", 64)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut d = [0usize; 4];
        for x in &mut d {
            *x = get_len(&mut c, "layer header", 1 << 20)?;
        }
        let geometry = Geometry::new(d[0], d[1], d[2]).map_err(|e| DataError::CorruptContainer(e.to_string()))?;
        let filters = get_f64s(&mut c, d[2] * d[1] * d[1], "filters")?;
        let group_bias = get_f64s(&mut c, d[2], "group biases")?;
        let visible_bias = get_f64s(&mut c, 1, "visible bias")?[0];
        layers.push(CrbmParams { geometry, filters, group_bias, visible_bias });
    }
    let rows = get_len(&mut c, "softmax rows", 1 << 16)?;
    let dim = get_len(&mut c, "softmax dim", 1 << 24)?;
    let weights = (0..rows).map(|_| get_f64s(&mut c, dim, "softmax weights")).collect::<Result<_, _>>()?;
    let mut flag = [0u8; 1];
    c.read_exact(&mut flag).map_err(corrupt("ledger"))?;
    let n_entries = get_len(&mut c, "ledger", 1 << 16)?;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let stage = get_str(&mut c, "ledger stage")?;
        let v = get_f64s(&mut c, 2, "ledger entry")?;
        entries.push(LedgerEntry { stage, delta: v[0], epsilon: v[1] });
    }
    if c.position() as usize != body.len() {
        return Err(DataError::CorruptContainer("trailing bytes".into()));
    }
    let accountant = PrivacyAccountant::from_entries(entries, flag[0] == 1)
        .map_err(|e| DataError::CorruptContainer(e.to_string()))?;
    let model = TrainedModel { spec, layers, softmax: SoftmaxParams { weights }, accountant, metrics: Vec::new() };
    model.check().map_err(|e| DataError::CorruptContainer(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), DataError> {
    let bytes = model_to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<TrainedModel, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4, 255, 255, 0, 0, 10, 20, 30, 40]);
        b
    }

    #[test]
    fn idx_fixture_pixels() {
        let IdxFile::Images { rows, cols, pixels } = parse_idx(&fixture()).unwrap() else { panic!() };
        assert_eq!((rows, cols, pixels.len()), (2, 2, 4));
        assert_eq!(pixels[0], vec![0, 255, 51, 102]);
        assert_eq!(pixels[3], vec![10, 20, 30, 40]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = fixture();
        bad[3] = 9;
        assert!(matches!(parse_idx(&bad), Err(DataError::BadMagic { found: 0x809 })));
        let f = fixture();
        assert!(matches!(parse_idx(&f[..f.len() - 1]), Err(DataError::TruncatedFile { .. })));
        assert!(matches!(parse_idx(&f[..6]), Err(DataError::TruncatedFile { .. })));
        let mut long = fixture();
        long.push(0);
        assert!(matches!(parse_idx(&long), Err(DataError::DimMismatch(_))));
    }

    #[test]
    fn normalize_examples() {
        let raw = |x: Vec<f64>| RawDataset { instances: vec![x], shape: vec![2], labels: None };
        let n = normalize(&raw(vec![3.0, 4.0]), NormalizationMode::L2).unwrap();
        assert!((n.instances[0][0] - 0.6).abs() < 1e-15 && (n.instances[0][1] - 0.8).abs() < 1e-15);
        let n = normalize(&raw(vec![0.1, 0.2]), NormalizationMode::L2).unwrap();
        assert_eq!(n.instances[0], vec![0.1, 0.2]);
        let n = normalize(&raw(vec![0.0, 0.0]), NormalizationMode::L2).unwrap();
        assert_eq!(n.instances[0], vec![0.0, 0.0]);
        assert!(matches!(
            normalize(&raw(vec![0.5, -0.1]), NormalizationMode::PerPixel),
            Err(DataError::NegativeFeature { instance: 0, index: 1, .. })
        ));
    }

    #[test]
    fn csv_examples() {
        let schema = CsvSchema { features: vec!["a".into(), "b".into()], label: Some("y".into()) };
        let ds = read_csv("a,b,y\n0.5,1.25,1\n2,3,0\n".as_bytes(), &schema).unwrap();
        assert_eq!(ds.instances, vec![vec![0.5, 1.25], vec![2.0, 3.0]]);
        assert_eq!(ds.labels, Some(vec![1, 0]));
        let missing = CsvSchema { features: vec!["a".into(), "c".into()], label: None };
        assert!(matches!(read_csv("a,b\n1,2\n".as_bytes(), &missing), Err(DataError::SchemaMismatch(_))));
        let plain = CsvSchema { features: vec!["a".into(), "b".into()], label: None };
        assert!(matches!(
            read_csv("a,b\n1,2\n3,x\n".as_bytes(), &plain),
            Err(DataError::ParseError { row: 3, col: 2, .. })
        ));
    }
}
