//! Binary artifact formats: HYRS snapshots, HYRB bases, HYRW networks.
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dnn::{DnnError, Network, NetworkSpec, NetworkWeights, NormStats, SurrogatePair};
use crate::linalg::DenseMatrix;
use crate::pod::{ReducedBasis, SnapshotMatrix, SnapshotMeta};

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("file truncated")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Network(#[from] DnnError),
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(VERSION);
        w
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self, IoError> {
        if buf.len() < 8 {
            return Err(IoError::Truncated);
        }
        if &buf[..4] != magic {
            return Err(IoError::BadMagic {
                expected: String::from_utf8_lossy(magic).into(),
                found: String::from_utf8_lossy(&buf[..4]).into(),
            });
        }
        let mut r = Reader { buf, pos: 4 };
        let v = r.u32()?;
        if v != VERSION {
            return Err(IoError::Version(v));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).ok_or(IoError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(IoError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize, IoError> {
        usize::try_from(self.u64()?).map_err(|_| IoError::Corrupt("length overflow".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let bytes = self.take(n.checked_mul(8).ok_or(IoError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn finish(self) -> Result<(), IoError> {
        if self.pos != self.buf.len() {
            return Err(IoError::Corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<DenseMatrix, IoError> {
    DenseMatrix::from_col_major(rows, cols, data).map_err(|e| IoError::Corrupt(e.to_string()))
}

/// HYRS layout: magic, version, rows u64, cols u64, meta-record size u32,
/// column-major data, then per column `P × f64` parameter, `u32 n`, `u32 k`.
pub fn encode_snapshots(s: &SnapshotMatrix) -> Vec<u8> {
    let mut w = Writer::new(b"HYRS");
    w.u64(s.rows() as u64);
    w.u64(s.cols() as u64);
    w.u32((8 * s.param_dim + 8) as u32);
    w.f64s(s.data.as_slice());
    for m in &s.meta {
        w.f64s(&m.mu);
        w.u32(m.n);
        w.u32(m.k);
    }
    w.0
}

pub fn decode_snapshots(buf: &[u8]) -> Result<SnapshotMatrix, IoError> {
    let mut r = Reader::new(buf, b"HYRS")?;
    let rows = r.len()?;
    let cols = r.len()?;
    let rec = r.u32()? as usize;
    if rec < 8 || rec % 8 != 0 {
        return Err(IoError::Corrupt(format!("meta record size {rec}")));
    }
    let p = (rec - 8) / 8;
    let data = r.f64s(rows.checked_mul(cols).ok_or(IoError::Truncated)?)?;
    let mut meta = Vec::with_capacity(cols);
    for _ in 0..cols {
        let mu = r.f64s(p)?;
        let n = r.u32()?;
        let k = r.u32()?;
        meta.push(SnapshotMeta { mu, n, k });
    }
    r.finish()?;
    Ok(SnapshotMatrix {
        data: matrix(rows, cols, data)?,
        meta,
        param_dim: p,
    })
}

/// HYRB layout: magic, version, rows u64, cols u64, singular value count
/// u64, RIC tolerance f64, total energy f64, column-major basis, singular
/// values.
pub fn encode_basis(b: &ReducedBasis) -> Vec<u8> {
    let mut w = Writer::new(b"HYRB");
    w.u64(b.v.rows() as u64);
    w.u64(b.v.cols() as u64);
    w.u64(b.singular_values.len() as u64);
    w.f64s(&[b.ric_tolerance, b.total_energy]);
    w.f64s(b.v.as_slice());
    w.f64s(&b.singular_values);
    w.0
}

pub fn decode_basis(buf: &[u8]) -> Result<ReducedBasis, IoError> {
    let mut r = Reader::new(buf, b"HYRB")?;
    let rows = r.len()?;
    let cols = r.len()?;
    let ns = r.len()?;
    let head = r.f64s(2)?;
    let v = r.f64s(rows.checked_mul(cols).ok_or(IoError::Truncated)?)?;
    let singular_values = r.f64s(ns)?;
    r.finish()?;
    Ok(ReducedBasis {
        v: matrix(rows, cols, v)?,
        singular_values,
        ric_tolerance: head[0],
        total_energy: head[1],
    })
}

/// HYRW layout: magic, version, descriptor length u32 and UTF-8 JSON spec,
/// seed u64, max Newton index u64, weight count u64, input width u64,
/// output width u64, then weights, input mean and sd, output mean and sd.
pub fn encode_network(net: &Network, max_k: usize) -> Vec<u8> {
    let desc = net.spec.descriptor();
    let mut w = Writer::new(b"HYRW");
    w.u32(desc.len() as u32);
    w.0.extend_from_slice(desc.as_bytes());
    w.u64(net.weights.seed);
    w.u64(max_k as u64);
    w.u64(net.weights.data.len() as u64);
    w.u64(net.input_stats.dim() as u64);
    w.u64(net.output_stats.dim() as u64);
    w.f64s(&net.weights.data);
    for s in [&net.input_stats, &net.output_stats] {
        w.f64s(&s.mean);
        w.f64s(&s.sd);
    }
    w.0
}

pub fn decode_network(buf: &[u8]) -> Result<(Network, usize), IoError> {
    let mut r = Reader::new(buf, b"HYRW")?;
    let dl = r.u32()? as usize;
    let desc = std::str::from_utf8(r.take(dl)?).map_err(|e| IoError::Corrupt(e.to_string()))?;
    let spec = NetworkSpec::from_descriptor(desc)?;
    let seed = r.u64()?;
    let max_k = r.len()?;
    let nw = r.len()?;
    let ni = r.len()?;
    let no = r.len()?;
    let data = r.f64s(nw)?;
    let mut stats = |n| -> Result<NormStats, IoError> {
        Ok(NormStats {
            mean: r.f64s(n)?,
            sd: r.f64s(n)?,
        })
    };
    let input_stats = stats(ni)?;
    let output_stats = stats(no)?;
    r.finish()?;
    let weights = NetworkWeights::from_data(&spec, data, seed)?;
    Ok((Network::new(spec, weights, input_stats, output_stats)?, max_k))
}

pub fn write_snapshots(path: &Path, s: &SnapshotMatrix) -> Result<(), IoError> {
    Ok(fs::write(path, encode_snapshots(s))?)
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotMatrix, IoError> {
    decode_snapshots(&fs::read(path)?)
}

pub fn write_basis(path: &Path, b: &ReducedBasis) -> Result<(), IoError> {
    Ok(fs::write(path, encode_basis(b))?)
}

pub fn read_basis(path: &Path) -> Result<ReducedBasis, IoError> {
    decode_basis(&fs::read(path)?)
}

/// Writes `rho.hyrw` and `iota.hyrw` into `dir`.
pub fn write_pair(dir: &Path, pair: &SurrogatePair) -> Result<(), IoError> {
    fs::write(dir.join("rho.hyrw"), encode_network(&pair.residual, pair.max_k))?;
    fs::write(dir.join("iota.hyrw"), encode_network(&pair.jacobian, pair.max_k))?;
    Ok(())
}

pub fn read_pair(dir: &Path) -> Result<SurrogatePair, IoError> {
    let (residual, max_k) = decode_network(&fs::read(dir.join("rho.hyrw"))?)?;
    let (jacobian, _) = decode_network(&fs::read(dir.join("iota.hyrw"))?)?;
    let pair = SurrogatePair {
        residual,
        jacobian,
        max_k,
    };
    pair.check()?;
    Ok(pair)
}
