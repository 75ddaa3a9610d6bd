//! On-disk formats.
//!
//! Matrix record (`SCLM`), little-endian throughout:
//!
//! ```text
//! "SCLM" | u8 version = 1 | u64 rows | u64 cols | rows·cols × f64 (row-major)
//! ```
//!
//! An activation dump is a plain concatenation of matrix records. The
//! covariance file (`SCLC`) and adapter file (`SCLA`) wrap matrix records
//! with a small header; see [`write_covariance`] and [`write_adapter`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterPair, Scheme};
use crate::covariance::{ActivationSample, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::matrix::{symmetrize, Matrix};
use crate::trainer::SweepReport;
use crate::warning::Warning;

pub const MATRIX_MAGIC: &[u8; 4] = b"SCLM";
pub const COVARIANCE_MAGIC: &[u8; 4] = b"SCLC";
pub const ADAPTER_MAGIC: &[u8; 4] = b"SCLA";
pub const FORMAT_VERSION: u8 = 1;

fn format_err(offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

pub fn encode_matrix(m: &Matrix, out: &mut Vec<u8>) {
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte buffer that tracks the absolute offset for errors.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(format_err(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset();
        let v = self.u8("version")?;
        if v != FORMAT_VERSION {
            return Err(format_err(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn matrix(&mut self) -> Result<Matrix> {
        self.magic(MATRIX_MAGIC)?;
        self.version()?;
        let dims_at = self.offset();
        let rows = self.u64("rows")?;
        let cols = self.u64("cols")?;
        if rows == 0 || cols == 0 {
            return Err(format_err(dims_at, format!("empty shape {rows}x{cols}")));
        }
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= (self.buf.len() - self.pos) as u64))
            .ok_or_else(|| {
                format_err(
                    dims_at,
                    format!("shape {rows}x{cols} exceeds the {} remaining bytes", self.buf.len() - self.pos),
                )
            })? as usize;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let at = self.offset();
            let v = f64::from_le_bytes(self.take(8, "entry")?.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(format_err(at, "non-finite entry"));
            }
            data.push(v);
        }
        Matrix::new(rows as usize, cols as usize, data).map_err(|e| format_err(dims_at, e.to_string()))
    }
}

/// Decodes exactly one matrix record.
pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader::new(bytes, 0);
    let m = r.matrix()?;
    if !r.is_empty() {
        return Err(format_err(r.offset(), "trailing bytes after matrix record"));
    }
    Ok(m)
}

/// Decodes a concatenation of matrix records.
pub fn decode_matrix_sequence(bytes: &[u8]) -> Result<Vec<Matrix>> {
    let mut r = Reader::new(bytes, 0);
    let mut out = Vec::new();
    while !r.is_empty() {
        out.push(r.matrix()?);
    }
    Ok(out)
}

/// Headerless CSV, one matrix row per line.
pub fn encode_matrix_csv(m: &Matrix) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn decode_matrix_csv(bytes: &[u8]) -> Result<Matrix> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            format_err(offset, e.to_string())
        })?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(offset, format!("'{f}' is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(
                    offset,
                    format!("row has {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err(0, "no rows"));
    }
    Matrix::from_rows(&rows).map_err(|e| format_err(0, e.to_string()))
}

fn is_csv_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a matrix; binary if the file starts with the `SCLM` magic,
/// headerless CSV otherwise.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MATRIX_MAGIC) {
        decode_matrix(&bytes)
    } else {
        decode_matrix_csv(&bytes)
    }
}

/// Writes CSV when the path ends in `.csv`, binary otherwise.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let bytes = if is_csv_path(path) {
        encode_matrix_csv(m)?
    } else {
        let mut b = Vec::new();
        encode_matrix(m, &mut b);
        b
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_activations(path: &Path) -> Result<Vec<ActivationSample>> {
    let bytes = std::fs::read(path)?;
    Ok(decode_matrix_sequence(&bytes)?
        .into_iter()
        .enumerate()
        .map(|(i, m)| ActivationSample::new(m, i.to_string()))
        .collect())
}

pub fn write_activations(path: &Path, samples: &[ActivationSample]) -> Result<()> {
    let mut bytes = Vec::new();
    for s in samples {
        encode_matrix(&s.tokens, &mut bytes);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// ```text
/// "SCLC" | u8 version | u64 sample_count | u64 token_length | SCLM record
/// ```
pub fn encode_covariance(cov: &CovarianceMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(COVARIANCE_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&cov.sample_count.to_le_bytes());
    out.extend_from_slice(&(cov.token_length as u64).to_le_bytes());
    encode_matrix(cov.matrix.as_matrix(), &mut out);
    out
}

pub fn decode_covariance(bytes: &[u8]) -> Result<CovarianceMatrix> {
    let mut r = Reader::new(bytes, 0);
    r.magic(COVARIANCE_MAGIC)?;
    r.version()?;
    let sample_count = r.u64("sample_count")?;
    let token_length = r.u64("token_length")? as usize;
    let at = r.offset();
    let m = r.matrix()?;
    if !r.is_empty() {
        return Err(format_err(r.offset(), "trailing bytes after covariance"));
    }
    if !m.is_square() {
        return Err(format_err(at, format!("covariance must be square, got {}x{}", m.rows(), m.cols())));
    }
    Ok(CovarianceMatrix {
        matrix: symmetrize(&m)?,
        sample_count,
        token_length,
    })
}

pub fn write_covariance(path: &Path, cov: &CovarianceMatrix) -> Result<()> {
    std::fs::write(path, encode_covariance(cov))?;
    Ok(())
}

pub fn read_covariance(path: &Path) -> Result<CovarianceMatrix> {
    decode_covariance(&std::fs::read(path)?)
}

/// JSON header stored in an adapter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterHeader {
    pub scheme: Scheme,
    pub r: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub warnings: Vec<Warning>,
}

/// ```text
/// "SCLA" | u8 version | u64 header_len | header JSON (UTF-8)
///        | SCLM a | SCLM b | SCLM w_res
/// ```
pub fn encode_adapter(header: &AdapterHeader, pair: &AdapterPair) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Io(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(ADAPTER_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    encode_matrix(pair.a(), &mut out);
    encode_matrix(pair.b(), &mut out);
    encode_matrix(pair.w_res(), &mut out);
    Ok(out)
}

pub fn decode_adapter(bytes: &[u8]) -> Result<(AdapterHeader, AdapterPair)> {
    let mut r = Reader::new(bytes, 0);
    r.magic(ADAPTER_MAGIC)?;
    r.version()?;
    let len = r.u64("header length")?;
    let at = r.offset();
    let len = usize::try_from(len).map_err(|_| format_err(at, "header length overflow"))?;
    let json = r.take(len, "header")?;
    let header: AdapterHeader =
        serde_json::from_slice(json).map_err(|e| format_err(at, format!("bad header JSON: {e}")))?;
    let a_at = r.offset();
    let a = r.matrix()?;
    let b = r.matrix()?;
    let w_res = r.matrix()?;
    if !r.is_empty() {
        return Err(format_err(r.offset(), "trailing bytes after adapter"));
    }
    let pair = AdapterPair::from_parts(header.scheme, a, b, w_res).map_err(|e| format_err(a_at, e.to_string()))?;
    if (pair.rank(), pair.d_in(), pair.d_out()) != (header.r, header.d_in, header.d_out) {
        return Err(format_err(
            at,
            format!(
                "header says r={} d_in={} d_out={}, matrices have r={} d_in={} d_out={}",
                header.r,
                header.d_in,
                header.d_out,
                pair.rank(),
                pair.d_in(),
                pair.d_out()
            ),
        ));
    }
    Ok((header, pair))
}

pub fn write_adapter(path: &Path, header: &AdapterHeader, pair: &AdapterPair) -> Result<()> {
    std::fs::write(path, encode_adapter(header, pair)?)?;
    Ok(())
}

pub fn read_adapter(path: &Path) -> Result<(AdapterHeader, AdapterPair)> {
    decode_adapter(&std::fs::read(path)?)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `report.csv`, `summary.csv` and one `trace_<beta>_<seed>.csv` per
/// record into `dir` (created if missing).
pub fn write_sweep_report(dir: &Path, report: &SweepReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut w = csv_writer(std::fs::File::create(dir.join("report.csv"))?);
    w.write_record(["beta", "seed", "final_plus_loss", "preservation_drift"])
        .map_err(csv_io)?;
    for r in &report.records {
        w.write_record([
            r.beta.to_string(),
            r.seed.to_string(),
            r.final_plus_loss.to_string(),
            r.preservation_drift.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;

    let mut w = csv_writer(std::fs::File::create(dir.join("summary.csv"))?);
    w.write_record(["beta", "mean_final_plus_loss", "mean_preservation_drift"])
        .map_err(csv_io)?;
    for s in &report.summary {
        w.write_record([
            s.beta.to_string(),
            s.mean_final_plus_loss.to_string(),
            s.mean_preservation_drift.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;

    for r in &report.records {
        let name = format!("trace_{}_{}.csv", r.beta, r.seed);
        let mut w = csv_writer(std::fs::File::create(dir.join(name))?);
        w.write_record(["step", "loss"]).map_err(csv_io)?;
        for (step, loss) in r.loss_trace.iter().enumerate() {
            w.write_record([step.to_string(), loss.to_string()]).map_err(csv_io)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::init_pissa;
    use crate::matrix::SymmetricMatrix;
    use proptest::prelude::*;

    #[test]
    fn binary_layout_is_exact() {
        let m = Matrix::from_rows(&[[1.0, -2.5]]).unwrap();
        let mut b = Vec::new();
        encode_matrix(&m, &mut b);
        let mut expected = b"SCLM\x01".to_vec();
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(b, expected);
        assert_eq!(b.len(), 4 + 1 + 8 + 8 + 16);
    }

    #[test]
    fn decode_errors_carry_offsets() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut b = Vec::new();
        encode_matrix(&m, &mut b);

        let mut bad_magic = b.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_matrix(&bad_magic), Err(Error::Format { offset: 0, .. })));

        let mut bad_version = b.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_matrix(&bad_version), Err(Error::Format { offset: 4, .. })));

        let truncated = &b[..b.len() - 3];
        assert!(matches!(decode_matrix(truncated), Err(Error::Format { offset: 5, .. })));

        let mut nan = b.clone();
        nan[29..37].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_matrix(&nan), Err(Error::Format { offset: 29, .. })));

        let mut trailing = b.clone();
        trailing.push(0);
        assert!(matches!(decode_matrix(&trailing), Err(Error::Format { offset: 37, .. })));
    }

    #[test]
    fn sequence_decoding_reports_second_record_offset() {
        let m = Matrix::from_rows(&[[1.0]]).unwrap();
        let mut b = Vec::new();
        encode_matrix(&m, &mut b);
        encode_matrix(&m, &mut b);
        assert_eq!(decode_matrix_sequence(&b).unwrap().len(), 2);
        b[29] = b'Q';
        assert!(matches!(decode_matrix_sequence(&b), Err(Error::Format { offset: 29, .. })));
    }

    #[test]
    fn csv_parsing() {
        let m = decode_matrix_csv(b"1, 2\n3,4.5\n").unwrap();
        assert_eq!(m, Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.5]]).unwrap());
        let err = decode_matrix_csv(b"1,2\n3,abc\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err:?}");
        assert!(decode_matrix_csv(b"").is_err());
        assert!(decode_matrix_csv(b"1,NaN\n").is_err());
    }

    #[test]
    fn covariance_container() {
        let cov = CovarianceMatrix {
            matrix: SymmetricMatrix::from_diag(&[2.0, 1.0]).unwrap(),
            sample_count: 7,
            token_length: 3,
        };
        let bytes = encode_covariance(&cov);
        assert_eq!(decode_covariance(&bytes).unwrap(), cov);
        assert!(decode_covariance(&bytes[..10]).is_err());
    }

    #[test]
    fn adapter_container() {
        let w0 = Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, 1.0, 3.0]]).unwrap();
        let pair = init_pissa(&w0, 1).unwrap();
        let header = AdapterHeader {
            scheme: Scheme::Pissa,
            r: 1,
            d_in: 3,
            d_out: 2,
            beta: None,
            seed: Some(0),
            warnings: vec![],
        };
        let bytes = encode_adapter(&header, &pair).unwrap();
        assert_eq!(decode_adapter(&bytes).unwrap(), (header.clone(), pair.clone()));

        let lying = AdapterHeader { r: 2, ..header };
        let bytes = encode_adapter(&lying, &pair).unwrap();
        assert!(matches!(decode_adapter(&bytes), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn matrix_binary_roundtrip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let m = Matrix::from_fn(rows, cols, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((s >> 12) | 0x3ff0_0000_0000_0000) - 1.5
            }).unwrap();
            let mut b = Vec::new();
            encode_matrix(&m, &mut b);
            prop_assert_eq!(decode_matrix(&b).unwrap(), m.clone());
            prop_assert_eq!(decode_matrix_csv(&encode_matrix_csv(&m).unwrap()).unwrap(), m);
        }
    }
}
