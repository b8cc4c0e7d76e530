//! Binary model container.
//!
//! ```text
//! "DMDL" | version u16 | kind u8 (1 = gmm, 2 = ocsvm)
//! PCA:   in_dim u32 | out_dim u32 | degenerate u8 | mean f64[in_dim]
//!        | components f64[out_dim × in_dim] (row-major) | explained f64[out_dim]
//! GMM:   k u32 | weights f64[k] | means f64[k × out_dim]
//!        | covariances f64[k × out_dim × out_dim] (row-major)
//! OCSVM: gamma f64 | nu f64 | rho f64 | n_train u64 | m u32
//!        | alphas f64[m] | support vectors f64[m × out_dim] (row-major)
//! ```
//!
//! All integers and floats are little-endian. Loading re-checks every model
//! invariant.

use nalgebra::{DMatrix, DVector};

use super::{DensityModel, GmmModel, OcsvmModel, PcaTransform};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DMDL";
pub const VERSION: u16 = 1;
const KIND_GMM: u8 = 1;
const KIND_OCSVM: u8 = 2;

pub fn encode_model(model: &DensityModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    match model {
        DensityModel::Gmm(m) => {
            w.u8(KIND_GMM);
            w.pca(m.preprocessing());
            w.u32(m.k() as u32);
            w.f64s(m.weights());
            for mean in m.means() {
                w.f64s(mean.as_slice());
            }
            for cov in m.covariances() {
                w.f64s(cov.transpose().as_slice());
            }
        }
        DensityModel::Ocsvm(m) => {
            w.u8(KIND_OCSVM);
            w.pca(m.preprocessing());
            w.f64(m.gamma());
            w.f64(m.nu());
            w.f64(m.rho());
            w.u64(m.n_train() as u64);
            w.u32(m.alphas().len() as u32);
            w.f64s(m.alphas());
            w.f64s(m.support_vectors().transpose().as_slice());
        }
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<DensityModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected DMDL".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let kind = r.u8()?;
    let pca = r.pca()?;
    let dim = pca.output_dim();
    let model = match kind {
        KIND_GMM => {
            let k = r.u32()? as usize;
            let weights = r.f64s(k)?;
            let means = (0..k)
                .map(|_| r.f64s(dim).map(DVector::from_vec))
                .collect::<Result<Vec<_>>>()?;
            let covs = (0..k)
                .map(|_| r.f64s(dim * dim).map(|v| DMatrix::from_row_slice(dim, dim, &v)))
                .collect::<Result<Vec<_>>>()?;
            DensityModel::Gmm(GmmModel::from_parts(weights, means, covs, pca)?)
        }
        KIND_OCSVM => {
            let gamma = r.f64()?;
            let nu = r.f64()?;
            let rho = r.f64()?;
            let n_train = r.u64()? as usize;
            let m = r.u32()? as usize;
            let alphas = r.f64s(m)?;
            let svs = DMatrix::from_row_slice(m, dim, &r.f64s(m * dim)?);
            DensityModel::Ocsvm(OcsvmModel::from_parts(svs, alphas, rho, gamma, nu, n_train, pca)?)
        }
        other => return Err(Error::Format(format!("unknown estimator tag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_model(path: &std::path::Path, model: &DensityModel) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &std::path::Path) -> Result<DensityModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[derive(Default)]
pub(crate) struct Writer(pub(crate) Vec<u8>);

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub(crate) fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn pca(&mut self, p: &PcaTransform) {
        self.u32(p.input_dim() as u32);
        self.u32(p.output_dim() as u32);
        self.u8(p.is_degenerate() as u8);
        self.f64s(p.mean().as_slice());
        self.f64s(p.components().transpose().as_slice());
        self.f64s(p.explained_variance());
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
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
    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn pca(&mut self) -> Result<PcaTransform> {
        let input = self.u32()? as usize;
        let output = self.u32()? as usize;
        let degenerate = self.u8()? != 0;
        let mean = DVector::from_vec(self.f64s(input)?);
        let components = DMatrix::from_row_slice(output, input, &self.f64s(output * input)?);
        let explained = self.f64s(output)?;
        PcaTransform::from_parts(mean, components, explained, degenerate)
    }
}
