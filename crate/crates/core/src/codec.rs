//! Versioned little-endian binary formats.
//!
//! `MRC1`:
//!
//! ```text
//! "MRC1" | u32 n_v | u32 n_n | f64 rho_th
//! | W[n_v*n_n] | slopes[n_v*n_n](x,y) | intercepts[n_v*n_n](x,y)
//! | vascular corners[n_v](x,y) | non-vascular corners[n_n](x,y)
//! ```
//!
//! `GPR1`:
//!
//! ```text
//! "GPR1" | u32 n_v | u32 n_n | f64 v_threshold | f64 sigma_n | u32 kernel
//! | per (i, j, axis): u8 trained [u32 n | f64 c | f64 eta | x[n] | y[n]]
//! | corners as above
//! ```
//!
//! `FLW1` (dense displacement fields):
//!
//! ```text
//! "FLW1" | u32 width | u32 height | u32 frames | per frame, row-major (dx, dy)
//! ```
//!
//! All floats are IEEE-754 binary64, so round-trips are bit-exact.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::features::CornerSet;
use crate::geom::Vec2;
use crate::gpr::{GprEnsemble, GprPairModel, Kernel};
use crate::imaging::DisplacementField;
use crate::mrc::MrcModel;

pub const MRC_MAGIC: &[u8; 4] = b"MRC1";
pub const GPR_MAGIC: &[u8; 4] = b"GPR1";
pub const FLOW_MAGIC: &[u8; 4] = b"FLW1";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn vec2(&mut self, v: Vec2) {
        self.f64(v.x);
        self.f64(v.y);
    }

    fn corners(&mut self, c: &CornerSet) {
        c.vascular.iter().chain(&c.non_vascular).for_each(|p| self.vec2(*p));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            bail!(Decode, "bad magic, expected {}", core::str::from_utf8(magic).unwrap_or("?"));
        }
        Ok(Reader { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Decode, "truncated at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    fn vec2(&mut self) -> Result<Vec2> {
        Ok(Vec2::new(self.f64()?, self.f64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.check_room(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn vec2s(&mut self, n: usize) -> Result<Vec<Vec2>> {
        self.check_room(n, 16)?;
        (0..n).map(|_| self.vec2()).collect()
    }

    // Reject absurd counts before allocating.
    fn check_room(&self, n: usize, size: usize) -> Result<()> {
        match n.checked_mul(size) {
            Some(b) if b <= self.buf.len() - self.pos => Ok(()),
            _ => bail!(Decode, "declared {n} items exceed remaining {} bytes", self.buf.len() - self.pos),
        }
    }

    fn corners(&mut self, nv: usize, nn: usize) -> Result<CornerSet> {
        Ok(CornerSet::new(self.vec2s(nv)?, self.vec2s(nn)?))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            bail!(Decode, "{} trailing bytes", self.buf.len() - self.pos);
        }
        Ok(())
    }
}

pub fn encode_mrc(model: &MrcModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MRC_MAGIC);
    w.u32(model.n_vascular());
    w.u32(model.n_non_vascular());
    w.f64(model.rho_th);
    model.weights().iter().for_each(|v| w.f64(*v));
    model.slopes().iter().for_each(|v| w.vec2(*v));
    model.intercepts().iter().for_each(|v| w.vec2(*v));
    w.corners(&model.corners);
    w.0
}

pub fn decode_mrc(buf: &[u8]) -> Result<MrcModel> {
    let mut r = Reader::new(buf, MRC_MAGIC)?;
    let nv = r.u32()?;
    let nn = r.u32()?;
    let rho_th = r.f64()?;
    let Some(pairs) = nv.checked_mul(nn) else { bail!(Decode, "corner counts overflow") };
    let weights = r.f64s(pairs)?;
    let slopes = r.vec2s(pairs)?;
    let intercepts = r.vec2s(pairs)?;
    let corners = r.corners(nv, nn)?;
    r.finish()?;
    MrcModel::from_parts(weights, slopes, intercepts, rho_th, corners)
}

fn kernel_code(k: Kernel) -> usize {
    match k {
        Kernel::Exponential => 0,
        Kernel::Squared => 1,
    }
}

pub fn encode_gpr(e: &GprEnsemble) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(GPR_MAGIC);
    w.u32(e.n_vascular());
    w.u32(e.n_non_vascular());
    w.f64(e.v_threshold);
    w.f64(e.sigma_n);
    w.u32(kernel_code(e.kernel));
    for m in e.models() {
        match m {
            None => w.u8(0),
            Some(m) => {
                w.u8(1);
                w.u32(m.len());
                w.f64(m.c);
                w.f64(m.eta);
                m.train_x.iter().for_each(|v| w.f64(*v));
                m.train_y.iter().for_each(|v| w.f64(*v));
            }
        }
    }
    w.corners(&e.corners);
    w.0
}

pub fn decode_gpr(buf: &[u8]) -> Result<GprEnsemble> {
    let mut r = Reader::new(buf, GPR_MAGIC)?;
    let nv = r.u32()?;
    let nn = r.u32()?;
    let v_threshold = r.f64()?;
    let sigma_n = r.f64()?;
    let kernel = match r.u32()? {
        0 => Kernel::Exponential,
        1 => Kernel::Squared,
        k => bail!(Decode, "unknown kernel code {k}"),
    };
    let Some(triples) = nv.checked_mul(nn).and_then(|p| p.checked_mul(2)) else { bail!(Decode, "corner counts overflow") };
    r.check_room(triples, 1)?;
    let mut models = Vec::with_capacity(triples);
    for _ in 0..triples {
        match r.u8()? {
            0 => models.push(None),
            1 => {
                let n = r.u32()?;
                let c = r.f64()?;
                let eta = r.f64()?;
                let x = r.f64s(n)?;
                let y = r.f64s(n)?;
                models.push(Some(GprPairModel::new(x, y, c, eta, sigma_n, kernel)?));
            }
            t => bail!(Decode, "bad trained flag {t}"),
        }
    }
    let corners = r.corners(nv, nn)?;
    r.finish()?;
    GprEnsemble::from_parts(models, corners, v_threshold, sigma_n, kernel)
}

pub fn encode_flows(fields: &[DisplacementField]) -> Result<Vec<u8>> {
    let (w0, h0) = fields.first().map_or((0, 0), |f| (f.width, f.height));
    if fields.iter().any(|f| f.width != w0 || f.height != h0 || f.vectors.len() != w0 * h0) {
        bail!(Structure, "displacement fields differ in shape");
    }
    let mut w = Writer(Vec::with_capacity(16 + fields.len() * w0 * h0 * 16));
    w.0.extend_from_slice(FLOW_MAGIC);
    w.u32(w0);
    w.u32(h0);
    w.u32(fields.len());
    for f in fields {
        f.vectors.iter().for_each(|v| w.vec2(*v));
    }
    Ok(w.0)
}

pub fn decode_flows(buf: &[u8]) -> Result<Vec<DisplacementField>> {
    let mut r = Reader::new(buf, FLOW_MAGIC)?;
    let width = r.u32()?;
    let height = r.u32()?;
    let frames = r.u32()?;
    let Some(n) = width.checked_mul(height) else { bail!(Decode, "field size overflow") };
    let mut out = Vec::with_capacity(frames.min(buf.len()));
    for _ in 0..frames {
        out.push(DisplacementField { width, height, vectors: r.vec2s(n)? });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn mrc_layout() {
        let c = CornerSet::new(vec![Vec2::new(1.0, 2.0)], vec![Vec2::new(3.0, 4.0)]);
        let m = MrcModel::from_parts(vec![1.0], vec![Vec2::new(2.0, 2.0)], vec![Vec2::new(1.0, 1.0)], 0.9, c).unwrap();
        let b = encode_mrc(&m);
        assert_eq!(&b[..4], b"MRC1");
        assert_eq!(b.len(), 4 + 4 + 4 + 8 + 8 + 16 + 16 + 32);
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[12..20], &0.9f64.to_le_bytes());
        assert_eq!(decode_mrc(&b).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let c = CornerSet::new(vec![Vec2::new(1.0, 2.0)], vec![Vec2::new(3.0, 4.0)]);
        let m = MrcModel::from_parts(vec![1.0], vec![Vec2::ZERO], vec![Vec2::ZERO], 0.9, c).unwrap();
        let mut b = encode_mrc(&m);
        assert!(decode_mrc(&b[..b.len() - 1]).is_err());
        b.push(0);
        assert!(decode_mrc(&b).is_err());
        assert!(decode_mrc(b"GPR1").is_err());
        let mut huge = b"MRC1".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&0.5f64.to_le_bytes());
        assert!(decode_mrc(&huge).is_err());
    }

    #[test]
    fn flows_round_trip() {
        let f = DisplacementField { width: 2, height: 1, vectors: vec![Vec2::new(0.5, -1.0), Vec2::new(f64::MIN_POSITIVE, 3.0)] };
        let b = encode_flows(&[f.clone(), f.clone()]).unwrap();
        assert_eq!(decode_flows(&b).unwrap(), vec![f.clone(), f]);
    }
}
