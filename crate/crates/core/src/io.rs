//! File formats: TNSR tensors, traffic CSV matrices, trace CSV and JSON
//! reports.
//!
//! A TNSR file is the 4-byte magic `TNSR`, a version byte (1), a dtype byte
//! (1 = little-endian `f64`, 2 = `u8` boolean), a rank byte, `rank`
//! little-endian `u32` extents and the row-major payload. All writers go
//! through a temporary file in the target directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::TraceRecord;
use crate::tensor::{RealTensor, Tensor};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F64 = 1,
    Bool = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::Bool),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::Bool => 1,
        }
    }
}

/// Contents of a TNSR file.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    Real(RealTensor),
    Mask(Tensor<bool>),
}

fn header(dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("rank {} exceeds 255", shape.len())))?;
    let mut out = Vec::with_capacity(7 + 4 * shape.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, dtype as u8, rank]);
    for &n in shape {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("extent {n} does not fit in u32")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_real(t: &RealTensor) -> Result<Vec<u8>> {
    let mut out = header(Dtype::F64, t.shape())?;
    out.reserve(8 * t.len());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_mask(t: &Tensor<bool>) -> Result<Vec<u8>> {
    let mut out = header(Dtype::Bool, t.shape())?;
    out.extend(t.data().iter().map(|&b| b as u8));
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TensorData> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TNSR magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported TNSR version {}", bytes[4])));
    }
    let dtype = Dtype::from_code(bytes[5])?;
    let rank = bytes[6] as usize;
    let extents_end = 7 + 4 * rank;
    if bytes.len() < extents_end {
        return Err(Error::Format("truncated extents".into()));
    }
    let shape: Vec<usize> =
        bytes[7..extents_end].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let count = shape.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let payload_len = count.and_then(|c| c.checked_mul(dtype.size())).ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let payload = &bytes[extents_end..];
    if payload.len() != payload_len {
        return Err(Error::Format(format!(
            "payload has {} bytes, shape {shape:?} needs {payload_len}",
            payload.len()
        )));
    }
    match dtype {
        Dtype::F64 => {
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(TensorData::Real(RealTensor::from_vec(shape, data).map_err(|e| Error::Format(e.to_string()))?))
        }
        Dtype::Bool => {
            let data = payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Format(format!("boolean byte {other} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TensorData::Mask(Tensor::from_vec(shape, data).map_err(|e| Error::Format(e.to_string()))?))
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorData> {
    decode(&fs::read(path)?)
}

pub fn read_real(path: impl AsRef<Path>) -> Result<RealTensor> {
    match read_tensor(&path)? {
        TensorData::Real(t) => Ok(t),
        TensorData::Mask(_) => Err(Error::Format(format!("{} holds a boolean tensor, expected float64", path.as_ref().display()))),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Tensor<bool>> {
    match read_tensor(&path)? {
        TensorData::Mask(t) => Ok(t),
        TensorData::Real(_) => Err(Error::Format(format!("{} holds a float64 tensor, expected boolean", path.as_ref().display()))),
    }
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_real(path: impl AsRef<Path>, t: &RealTensor) -> Result<()> {
    write_atomic(path, &encode_real(t)?)
}

pub fn write_mask(path: impl AsRef<Path>, t: &Tensor<bool>) -> Result<()> {
    write_atomic(path, &encode_mask(t)?)
}

/// Pretty-printed JSON, written atomically.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Extents of a traffic matrix: one row per sensor, `intervals * days`
/// columns ordered day by day.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrafficLayout {
    pub sensors: usize,
    pub intervals: usize,
    pub days: usize,
}

impl TrafficLayout {
    /// `sensors x intervals x 1 x days`.
    pub fn shape(&self) -> [usize; 4] {
        [self.sensors, self.intervals, 1, self.days]
    }

    fn columns(&self) -> usize {
        self.intervals * self.days
    }

    /// Tensor offset of the cell in `row`, `col`.
    fn offset(&self, row: usize, col: usize) -> usize {
        let (day, interval) = (col / self.intervals, col % self.intervals);
        (row * self.intervals + interval) * self.days + day
    }

    fn check(&self) -> Result<()> {
        if self.sensors == 0 || self.intervals == 0 || self.days == 0 {
            return Err(Error::InvalidArgument(format!("traffic layout has a zero extent: {self:?}")));
        }
        Ok(())
    }
}

/// Reads a header-less traffic CSV. Empty cells are missing: they become 0
/// and are unobserved in the returned mask.
pub fn read_traffic_csv(path: impl AsRef<Path>, layout: TrafficLayout) -> Result<(RealTensor, Tensor<bool>)> {
    let file = fs::File::open(path)?;
    parse_traffic_csv(file, layout)
}

pub fn parse_traffic_csv(input: impl std::io::Read, layout: TrafficLayout) -> Result<(RealTensor, Tensor<bool>)> {
    layout.check()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let shape = layout.shape();
    let len = shape.iter().product();
    let mut values = vec![0.0; len];
    let mut observed = vec![false; len];
    let mut rows = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if row >= layout.sensors {
            return Err(Error::Format(format!("more than {} sensor rows", layout.sensors)));
        }
        if record.len() != layout.columns() {
            return Err(Error::Format(format!(
                "row {} has {} cells, expected {}",
                row + 1,
                record.len(),
                layout.columns()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Format(format!("row {}, column {}: {cell:?} is not a number", row + 1, col + 1)))?;
            if !v.is_finite() {
                return Err(Error::Format(format!("row {}, column {}: non-finite value", row + 1, col + 1)));
            }
            let at = layout.offset(row, col);
            values[at] = v;
            observed[at] = true;
        }
        rows += 1;
    }
    if rows != layout.sensors {
        return Err(Error::Format(format!("found {rows} sensor rows, expected {}", layout.sensors)));
    }
    Ok((RealTensor::from_vec(shape.to_vec(), values)?, Tensor::from_vec(shape.to_vec(), observed)?))
}

/// Inverse of [`read_traffic_csv`]. Entries outside `observed` are written
/// as empty cells.
pub fn write_traffic_csv(path: impl AsRef<Path>, t: &RealTensor, observed: Option<&Tensor<bool>>) -> Result<()> {
    write_atomic(path, &format_traffic_csv(t, observed)?)
}

pub fn format_traffic_csv(t: &RealTensor, observed: Option<&Tensor<bool>>) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.len() != 4 || shape[2] != 1 {
        return Err(Error::ShapeMismatch(format!("traffic tensors are sensors x intervals x 1 x days, got {shape:?}")));
    }
    if let Some(m) = observed {
        t.same_shape(m)?;
    }
    let layout = TrafficLayout { sensors: shape[0], intervals: shape[1], days: shape[3] };
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in 0..layout.sensors {
        let cells = (0..layout.columns()).map(|col| {
            let at = layout.offset(row, col);
            if observed.is_none_or(|m| m.data()[at]) {
                t.data()[at].to_string()
            } else {
                String::new()
            }
        });
        writer.write_record(cells)?;
    }
    writer.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const TRACE_HEADER: [&str; 6] = ["t", "lambda", "sigma", "eps", "tol_mip", "seconds"];

/// Trace CSV with the fixed header `t,lambda,sigma,eps,tol_mip,seconds`.
/// Absent values are empty cells. Floats use the shortest representation
/// that reads back exactly.
pub fn format_trace_csv(trace: &[TraceRecord]) -> Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(TRACE_HEADER)?;
    for r in trace {
        writer.write_record([
            r.t.to_string(),
            r.lambda.to_string(),
            r.sigma.to_string(),
            opt(r.eps),
            opt(r.tol_mip),
            opt(r.seconds),
        ])?;
    }
    writer.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    write_atomic(path, &format_trace_csv(trace)?)
}
