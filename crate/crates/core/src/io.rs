//! Binary file formats, all little-endian.
//!
//! Embedding dump (`REZD`, version 1):
//!
//! ```text
//! magic "REZD" | u32 version | u32 N | u32 d | u32 S
//! S × (u16 byte length, UTF-8 source name)
//! N × u32 source id
//! N·d × f32 values, row-major
//! ```
//!
//! Fitted matrix (`REZM`, version 1):
//!
//! ```text
//! magic "REZM" | u32 version | u32 header length | UTF-8 header
//! D × f64 mean | D × f64 eigenvalues | D·D × f64 eigenvectors, column-major
//! S·D × f64 shrink factors, row-major
//! ```
//!
//! The header is `key=value` lines in a fixed order, so identical matrices
//! serialize to identical bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::eigenspace::EigenBasis;
use crate::error::{RezeError, Result};
use crate::fit::{FitConfig, RezeMatrix};
use crate::matrix::DenseMatrix;
use crate::relations::EmbeddingDump;

pub const DUMP_MAGIC: &[u8; 4] = b"REZD";
pub const MATRIX_MAGIC: &[u8; 4] = b"REZM";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(RezeError::format(
                self.buf.len() as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn finite_f64(&mut self, what: &str) -> Result<f64> {
        let at = self.offset();
        let v = self.f64(what)?;
        if !v.is_finite() {
            return Err(RezeError::format(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(RezeError::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        let at = self.offset();
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(RezeError::format(at, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(RezeError::format(
                self.offset(),
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| RezeError::config(format!("{what} {value} exceeds u32")))
}

pub fn encode_dump(dump: &EmbeddingDump) -> Result<Vec<u8>> {
    let n = dump.len();
    let d = dump.dim();
    let mut out = Vec::with_capacity(20 + 4 * n + 4 * n * d);
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(n, "N")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "d")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dump.num_sources(), "S")?.to_le_bytes());
    for name in dump.source_names() {
        let len = u16::try_from(name.len())
            .map_err(|_| RezeError::config(format!("source name of {} bytes is too long", name.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for &id in dump.source_ids() {
        out.extend_from_slice(&to_u32(id, "source id")?.to_le_bytes());
    }
    for &v in dump.vectors().as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dump(bytes: &[u8]) -> Result<EmbeddingDump> {
    let mut r = Reader::new(bytes);
    r.magic(DUMP_MAGIC)?;
    let n = r.u32("N")? as usize;
    let d = r.u32("d")? as usize;
    let s = r.u32("S")? as usize;
    if n == 0 {
        return Err(RezeError::format(8, "dump declares zero rows"));
    }
    let mut names = Vec::with_capacity(s.min(1 << 16));
    for _ in 0..s {
        let len = r.u16("source name length")? as usize;
        let at = r.offset();
        let raw = r.take(len, "source name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| RezeError::format(at, "source name is not UTF-8"))?;
        names.push(name.to_owned());
    }
    let mut ids = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let at = r.offset();
        let id = r.u32("source id")? as usize;
        if id >= s {
            return Err(RezeError::format(at, format!("source id {id} >= S = {s}")));
        }
        ids.push(id);
    }
    let total = n
        .checked_mul(d)
        .ok_or_else(|| RezeError::format(8, "N·d overflows"))?;
    let mut values = Vec::with_capacity(total.min(1 << 26));
    for _ in 0..total {
        let at = r.offset();
        let v = r.f32("vector value")?;
        if !v.is_finite() {
            return Err(RezeError::format(at, "non-finite vector value"));
        }
        values.push(f64::from(v));
    }
    r.finish()?;
    EmbeddingDump::new(DenseMatrix::from_vec(n, d, values)?, ids, names)
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| RezeError::config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_dump(dump: &EmbeddingDump, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dump(dump)?)
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<EmbeddingDump> {
    decode_dump(&fs::read(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest identifying a fit input: SHA-256 over the encoded anchor dump
/// followed by the encoded positive dump.
pub fn pair_digest(anchors: &EmbeddingDump, positives: &EmbeddingDump) -> Result<String> {
    let mut h = Sha256::new();
    h.update(encode_dump(anchors)?);
    h.update(encode_dump(positives)?);
    Ok(hex::encode(h.finalize()))
}

fn header_text(rm: &RezeMatrix<f64>) -> Result<String> {
    let single_line = |what: &str, s: &str| {
        if s.contains('\n') || s.contains('\r') {
            Err(RezeError::config(format!("{what} must not contain line breaks")))
        } else {
            Ok(())
        }
    };
    let c = &rm.config;
    let mut lines = vec![
        format!("D={}", rm.dim()),
        format!("S={}", rm.num_sources()),
        format!("k={}", rm.active),
        format!("theta={:?}", rm.threshold),
        format!("rho={:?}", c.rho),
        format!("gamma={:?}", c.gamma),
        format!("eta={:?}", c.eta),
        format!("epsilon={:?}", c.epsilon),
        format!("clip_lo={:?}", c.clip_lo),
        format!("clip_hi={:?}", c.clip_hi),
        format!("aggregation={}", c.aggregation),
        format!("shrink_mode={}", c.shrink_mode),
        format!("normalize={}", rm.normalize),
    ];
    for (i, name) in rm.source_names.iter().enumerate() {
        single_line("source name", name)?;
        lines.push(format!("source.{i}={name}"));
    }
    let digest = rm.input_digest.as_deref().unwrap_or("none");
    single_line("digest", digest)?;
    lines.push(format!("fit_digest={digest}"));
    let provenance = rm.provenance.as_deref().unwrap_or("");
    single_line("provenance", provenance)?;
    lines.push(format!("provenance={provenance}"));
    let mut text = lines.join("\n");
    text.push('\n');
    Ok(text)
}

pub fn encode_rzm(rm: &RezeMatrix<f64>) -> Result<Vec<u8>> {
    rm.validate()?;
    let header = header_text(rm)?;
    let d = rm.dim();
    let mut out = Vec::with_capacity(12 + header.len() + 8 * (2 * d + d * d + rm.alphas.as_slice().len()));
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(header.len(), "header length")?.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    rm.mean.iter().for_each(|&v| put(v));
    rm.basis.values.iter().for_each(|&v| put(v));
    for j in 0..d {
        for i in 0..d {
            put(rm.basis.vectors[(i, j)]);
        }
    }
    rm.alphas.as_slice().iter().for_each(|&v| put(v));
    Ok(out)
}

struct Header<'a> {
    entries: Vec<(&'a str, &'a str)>,
    next: usize,
    offset: u64,
}

impl<'a> Header<'a> {
    fn parse(text: &'a str, offset: u64) -> Result<Self> {
        let entries = text
            .lines()
            .map(|line| {
                line.split_once('=')
                    .ok_or_else(|| RezeError::format(offset, format!("malformed header line '{line}'")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            entries,
            next: 0,
            offset,
        })
    }

    fn expect(&mut self, key: &str) -> Result<&'a str> {
        match self.entries.get(self.next) {
            Some(&(k, v)) if k == key => {
                self.next += 1;
                Ok(v)
            }
            Some(&(k, _)) => Err(RezeError::format(
                self.offset,
                format!("header key '{k}' where '{key}' was expected"),
            )),
            None => Err(RezeError::format(self.offset, format!("header missing '{key}'"))),
        }
    }

    fn parse_value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.expect(key)?;
        raw.parse()
            .map_err(|_| RezeError::format(self.offset, format!("invalid value '{raw}' for '{key}'")))
    }
}

pub fn decode_rzm(bytes: &[u8]) -> Result<RezeMatrix<f64>> {
    let mut r = Reader::new(bytes);
    r.magic(MATRIX_MAGIC)?;
    let header_len = r.u32("header length")? as usize;
    let header_at = r.offset();
    let raw = r.take(header_len, "header")?;
    let text = std::str::from_utf8(raw).map_err(|_| RezeError::format(header_at, "header is not UTF-8"))?;
    let mut h = Header::parse(text, header_at)?;
    let d: usize = h.parse_value("D")?;
    let s: usize = h.parse_value("S")?;
    let active: usize = h.parse_value("k")?;
    let threshold: f64 = h.parse_value("theta")?;
    let config = FitConfig {
        rho: h.parse_value("rho")?,
        gamma: h.parse_value("gamma")?,
        eta: h.parse_value("eta")?,
        epsilon: h.parse_value("epsilon")?,
        clip_lo: h.parse_value("clip_lo")?,
        clip_hi: h.parse_value("clip_hi")?,
        aggregation: h.parse_value("aggregation")?,
        shrink_mode: h.parse_value("shrink_mode")?,
    };
    let normalize: bool = h.parse_value("normalize")?;
    let source_names = (0..s)
        .map(|i| h.expect(&format!("source.{i}")).map(str::to_owned))
        .collect::<Result<Vec<_>>>()?;
    let digest = h.expect("fit_digest")?;
    let provenance = h.expect("provenance")?;
    if h.next != h.entries.len() {
        return Err(RezeError::format(header_at, "unexpected extra header lines"));
    }

    let mut read_n = |n: usize, what: &str| -> Result<Vec<f64>> { (0..n).map(|_| r.finite_f64(what)).collect() };
    let mean = read_n(d, "mean")?;
    let values = read_n(d, "eigenvalue")?;
    let column_major = read_n(d * d, "eigenvector entry")?;
    let alphas = read_n(s * d, "shrink factor")?;
    r.finish()?;

    let mut vectors = DenseMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            vectors[(i, j)] = column_major[j * d + i];
        }
    }
    let basis = EigenBasis::new(vectors, values)?;
    let rm = RezeMatrix {
        mean,
        basis,
        active,
        threshold,
        alphas: DenseMatrix::from_vec(s, d, alphas)?,
        config,
        normalize,
        source_names,
        stats: None,
        input_digest: (digest != "none").then(|| digest.to_owned()),
        provenance: (!provenance.is_empty()).then(|| provenance.to_owned()),
    };
    rm.validate()?;
    Ok(rm)
}

pub fn write_rzm(rm: &RezeMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_rzm(rm)?)
}

pub fn read_rzm(path: impl AsRef<Path>) -> Result<RezeMatrix<f64>> {
    decode_rzm(&fs::read(path)?)
}

/// Compares the matrix's recorded fit digest against a supplied dump pair.
/// Returns `None` when they agree or the matrix carries no digest.
pub fn verify_digest(
    rm: &RezeMatrix<f64>,
    anchors: &EmbeddingDump,
    positives: &EmbeddingDump,
) -> Result<Option<String>> {
    let Some(recorded) = rm.input_digest.as_deref() else {
        return Ok(None);
    };
    let actual = pair_digest(anchors, positives)?;
    Ok((actual != recorded).then(|| {
        format!("fit digest mismatch: matrix was fitted on {recorded}, supplied dumps hash to {actual}")
    }))
}
