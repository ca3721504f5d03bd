//! Binary model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "MPSC"            4 bytes
//! version           u32 (= 1)
//! scalar kind       u8  (0 = real64, 1 = complex128)
//! N, d, N_L         u32 each
//! label_site        u32
//! map kind          u8
//! per site:         left extent u32, right extent u32,
//!                   row-major payload of (left, d, [N_L,] right) values,
//!                   f64 each, complex stored as (re, im)
//! ```

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::feature_map::{LocalFeatureMap, MapKind};
use crate::scalar::{Scalar, ScalarKind};
use crate::tensor::Tensor;

use super::MpsClassifier;

pub const MAGIC: &[u8; 4] = b"MPSC";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 4 + 4 + 1 + 4 * 4 + 1;

impl<T: Scalar> MpsClassifier<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = T::KIND.width();
        let payload: usize = self.sites().iter().map(|s| 8 + s.len() * width).sum();
        let mut out = Vec::with_capacity(HEADER_BYTES + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match T::KIND {
            ScalarKind::Real => 0,
            ScalarKind::Complex => 1,
        });
        for v in [self.n_sites(), self.d(), self.n_labels(), self.label_site()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(self.map().kind().code());
        for (j, site) in self.sites().iter().enumerate() {
            out.extend_from_slice(&(self.left_dim(j) as u32).to_le_bytes());
            out.extend_from_slice(&(self.right_dim(j) as u32).to_le_bytes());
            for v in site.data() {
                out.extend_from_slice(&v.re().to_le_bytes());
                if T::KIND == ScalarKind::Complex {
                    out.extend_from_slice(&v.im().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            0 => ScalarKind::Real,
            1 => ScalarKind::Complex,
            k => return Err(Error::Format(format!("unknown scalar kind {k}"))),
        };
        if kind != T::KIND {
            return Err(Error::ScalarKind {
                expected: T::KIND.name(),
                found: kind.name(),
            });
        }
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let n_labels = r.u32()? as usize;
        let label_site = r.u32()? as usize;
        let map_kind = r.u8()?;
        let map_kind = MapKind::from_code(map_kind).ok_or_else(|| Error::Format(format!("unknown map kind {map_kind}")))?;
        let map = LocalFeatureMap::new(map_kind, d).map_err(|e| Error::Format(e.to_string()))?;
        if n == 0 || n_labels == 0 || label_site >= n {
            return Err(Error::Format(format!("invalid header N = {n}, N_L = {n_labels}, label_site = {label_site}")));
        }
        let mut sites = Vec::with_capacity(n.min(1 << 16));
        for j in 0..n {
            let l = r.u32()? as usize;
            let rr = r.u32()? as usize;
            if l == 0 || rr == 0 {
                return Err(Error::Format(format!("site {j} has a zero extent")));
            }
            let shape = if j == label_site { vec![l, d, n_labels, rr] } else { vec![l, d, rr] };
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Format("site size overflows".into()))?;
            let need = count
                .checked_mul(kind.width())
                .ok_or_else(|| Error::Format("site size overflows".into()))?;
            let raw = r.take(need)?;
            let mut data = Vec::with_capacity(count);
            for c in raw.chunks_exact(kind.width()) {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = if kind == ScalarKind::Complex {
                    f64::from_le_bytes(c[8..16].try_into().unwrap())
                } else {
                    0.0
                };
                if !re.is_finite() || !im.is_finite() {
                    return Err(Error::Format(format!("non-finite payload in site {j}")));
                }
                data.push(T::from_complex(Complex64::new(re, im)).expect("kind checked"));
            }
            sites.push(Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        MpsClassifier::from_sites(sites, label_site, n_labels, map).map_err(|e| Error::Format(e.to_string()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Scalar kind recorded in a model file header.
pub fn scalar_kind_of(bytes: &[u8]) -> Result<ScalarKind> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    match bytes[8] {
        0 => Ok(ScalarKind::Real),
        1 => Ok(ScalarKind::Complex),
        k => Err(Error::Format(format!("unknown scalar kind {k}"))),
    }
}

/// Writes the model through a temporary file and an atomic rename.
pub fn save<T: Scalar>(model: &MpsClassifier<T>, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&model.to_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<MpsClassifier<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MpsClassifier::from_bytes(&bytes)
}
