//! Low-rank adapters over a frozen base matrix, gradient accumulation and
//! blockwise 4-bit absmax quantization.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 32;
pub const DEFAULT_ALPHA: f64 = 64.0;
pub const QUANT_BLOCK: usize = 64;

/// `W = W0 + (α / r) · B · A` with `B: d×r`, `A: r×k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    base: DMatrix<f64>,
    b: DMatrix<f64>,
    a: DMatrix<f64>,
    alpha: f64,
}

impl LoraAdapter {
    pub fn new(base: DMatrix<f64>, b: DMatrix<f64>, a: DMatrix<f64>, alpha: f64) -> Result<Self> {
        let (d, k) = base.shape();
        let r = b.ncols();
        if b.nrows() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: b.nrows() });
        }
        if a.shape() != (r, k) {
            return Err(Error::InvalidArgument(format!(
                "A must be {r}x{k}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if r == 0 || r > d.min(k) {
            return Err(Error::InvalidArgument(format!("rank {r} must be in 1..={}", d.min(k))));
        }
        if !(alpha / r as f64).is_finite() {
            return Err(Error::InvalidArgument("alpha / r must be finite".into()));
        }
        Ok(LoraAdapter { base, b, a, alpha })
    }

    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.base.clone(), self.b.clone(), self.a.clone(), alpha)
    }

    /// `W0·x + (α/r)·B·(A·x)` without forming `B·A`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.base.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.base.ncols(),
                actual: x.len(),
            });
        }
        let low = &self.a * x;
        Ok(&self.base * x + (&self.b * low) * self.scale())
    }

    /// `(α/r)·B·A`
    pub fn delta(&self) -> DMatrix<f64> {
        (&self.b * &self.a) * self.scale()
    }

    pub fn merge(&self) -> DMatrix<f64> {
        &self.base + self.delta()
    }
}

/// Parameters trained by an adapter: `d·r + r·k`.
pub fn trainable_params(d: usize, k: usize, r: usize) -> usize {
    d * r + r * k
}

pub fn dense_params(d: usize, k: usize) -> usize {
    d * k
}

/// Singular values above `tol · σ_max` counted.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// Size-weighted mean of per-micro-batch mean gradients. For losses that are
/// means over examples this equals the full-batch gradient.
pub fn accumulate_gradients(micro_batches: &[DMatrix<f64>], sizes: &[usize]) -> Result<DMatrix<f64>> {
    if micro_batches.is_empty() || micro_batches.len() != sizes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients with {} batch sizes",
            micro_batches.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("batch sizes must be positive".into()));
    }
    let shape = micro_batches[0].shape();
    let mut acc = DMatrix::zeros(shape.0, shape.1);
    for (g, &n) in micro_batches.iter().zip(sizes) {
        if g.shape() != shape {
            return Err(Error::InvalidArgument(format!(
                "gradient shape {:?} differs from {:?}",
                g.shape(),
                shape
            )));
        }
        acc += g * n as f64;
    }
    let total: usize = sizes.iter().sum();
    Ok(acc / total as f64)
}

/// Gradient of `mean((X·w − y)²)` with respect to `w`, as a column matrix.
pub fn linear_mse_gradient(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let residual = x * w - y;
    let g = x.transpose() * residual * (2.0 / x.nrows() as f64);
    DMatrix::from_column_slice(g.len(), 1, g.as_slice())
}

/// Row-major 4-bit codes in `[-8, 7]`, two per byte, with one absmax per block
/// of [`QUANT_BLOCK`] values. The block scale is `absmax / 7`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    packed: Vec<u8>,
    absmax: Vec<f64>,
}

impl QuantizedMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_count(&self) -> usize {
        self.absmax.len()
    }

    pub fn block_absmax(&self) -> &[f64] {
        &self.absmax
    }

    pub fn scale(&self, block: usize) -> f64 {
        self.absmax[block] / 7.0
    }

    pub fn code(&self, i: usize) -> i8 {
        let byte = self.packed[i / 2];
        let nibble = if i.is_multiple_of(2) { byte & 0x0f } else { byte >> 4 };
        // sign-extend the low 4 bits
        ((nibble << 4) as i8) >> 4
    }

    /// Packed bytes plus one `f32` scale per block, the storage a 4-bit
    /// matrix would occupy on disk.
    pub fn storage_bytes(&self) -> usize {
        self.packed.len() + 4 * self.absmax.len()
    }
}

pub fn quantize4(m: &DMatrix<f64>) -> Result<QuantizedMatrix> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("cannot quantize non-finite values".into()));
    }
    let (rows, cols) = m.shape();
    let values: Vec<f64> = m.transpose().as_slice().to_vec(); // row-major
    let mut packed = vec![0u8; values.len().div_ceil(2)];
    let mut absmax = Vec::with_capacity(values.len().div_ceil(QUANT_BLOCK));
    for (bi, block) in values.chunks(QUANT_BLOCK).enumerate() {
        let amax = block.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        absmax.push(amax);
        for (j, &v) in block.iter().enumerate() {
            let code = if amax == 0.0 {
                0
            } else {
                (v / amax * 7.0).round().clamp(-8.0, 7.0) as i8
            };
            let i = bi * QUANT_BLOCK + j;
            let nibble = (code as u8) & 0x0f;
            if i.is_multiple_of(2) {
                packed[i / 2] |= nibble;
            } else {
                packed[i / 2] |= nibble << 4;
            }
        }
    }
    Ok(QuantizedMatrix {
        rows,
        cols,
        packed,
        absmax,
    })
}

/// `code · absmax / 7`, evaluated as `absmax · (code / 7)` so the extreme
/// codes ±7 reproduce ±absmax exactly.
pub fn dequantize(qm: &QuantizedMatrix) -> DMatrix<f64> {
    let n = qm.rows * qm.cols;
    let values: Vec<f64> = (0..n)
        .map(|i| qm.absmax[i / QUANT_BLOCK] * (f64::from(qm.code(i)) / 7.0))
        .collect();
    DMatrix::from_row_slice(qm.rows, qm.cols, &values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AdapterHeader {
    d: usize,
    k: usize,
    r: usize,
    alpha: f64,
}

/// Adapter factors without the base weights they attach to.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights {
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub alpha: f64,
}

impl AdapterWeights {
    pub fn attach(self, base: DMatrix<f64>) -> Result<LoraAdapter> {
        LoraAdapter::new(base, self.b, self.a, self.alpha)
    }
}

impl From<&LoraAdapter> for AdapterWeights {
    fn from(a: &LoraAdapter) -> Self {
        AdapterWeights {
            b: a.b.clone(),
            a: a.a.clone(),
            alpha: a.alpha,
        }
    }
}

/// One JSON header line `{"d","k","r","alpha"}` terminated by `\n`, then `B`
/// and `A` as row-major little-endian `f32`.
pub fn encode_adapter(w: &AdapterWeights) -> Vec<u8> {
    let header = AdapterHeader {
        d: w.b.nrows(),
        k: w.a.ncols(),
        r: w.b.ncols(),
        alpha: w.alpha,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for m in [&w.b, &w.a] {
        for v in m.transpose().iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_adapter(bytes: &[u8]) -> Result<AdapterWeights> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Corrupt("adapter file has no header line".into()))?;
    let h: AdapterHeader = serde_json::from_slice(&bytes[..nl])?;
    let body = &bytes[nl + 1..];
    let nb = h.d * h.r;
    let na = h.r * h.k;
    if body.len() != 4 * (nb + na) {
        return Err(Error::Corrupt(format!(
            "adapter body has {} bytes, expected {}",
            body.len(),
            4 * (nb + na)
        )));
    }
    let floats: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(AdapterWeights {
        b: DMatrix::from_row_slice(h.d, h.r, &floats[..nb]),
        a: DMatrix::from_row_slice(h.r, h.k, &floats[nb..]),
        alpha: h.alpha,
    })
}

pub fn save_adapter(path: impl AsRef<Path>, w: &AdapterWeights) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_adapter(w)).map_err(|e| Error::io(path, e))
}

pub fn load_adapter(path: impl AsRef<Path>) -> Result<AdapterWeights> {
    let path = path.as_ref();
    decode_adapter(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn two_by_two() -> LoraAdapter {
        LoraAdapter::new(
            DMatrix::identity(2, 2),
            dmatrix![1.0; 0.0],
            dmatrix![1.0, 1.0],
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_case() {
        let ad = two_by_two();
        assert_eq!(ad.delta(), dmatrix![2.0, 2.0; 0.0, 0.0]);
        assert_eq!(ad.merge(), dmatrix![3.0, 2.0; 0.0, 1.0]);
        let y = ad.apply(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(y, DVector::from_vec(vec![3.0, 0.0]));
    }

    #[test]
    fn zero_b_is_base() {
        let base = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        let ad = LoraAdapter::new(base.clone(), DMatrix::zeros(2, 1), dmatrix![1.0, 1.0, 1.0], 8.0).unwrap();
        assert_eq!(ad.merge(), base);
        let x = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        assert_eq!(ad.apply(&x).unwrap(), &base * &x);
    }

    #[test]
    fn dimension_errors() {
        let ad = two_by_two();
        assert!(ad.apply(&DVector::zeros(3)).is_err());
        assert!(LoraAdapter::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 1), DMatrix::zeros(1, 2), 1.0).is_err());
        assert!(LoraAdapter::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 3), DMatrix::zeros(3, 2), 1.0).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(trainable_params(2560, 2560, 32), 163_840);
        assert_eq!(dense_params(2560, 2560), 6_553_600);
        assert!((trainable_params(2560, 2560, 32) as f64 / dense_params(2560, 2560) as f64 - 0.025).abs() < 1e-12);
        assert_eq!(trainable_params(10, 10, 1), 20);
        assert!(trainable_params(10, 10, 10) >= dense_params(10, 10));
    }

    #[test]
    fn accumulation_identities() {
        let g = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(accumulate_gradients(std::slice::from_ref(&g), &[5]).unwrap(), g);
        assert_eq!(accumulate_gradients(&[g.clone(), g.clone()], &[4, 4]).unwrap(), g);
        assert!(accumulate_gradients(&[g.clone(), DMatrix::zeros(1, 2)], &[1, 1]).is_err());
        assert!(accumulate_gradients(&[g], &[0]).is_err());
    }

    #[test]
    fn quantize_exact_cases() {
        let zero = DMatrix::zeros(3, 70);
        assert_eq!(dequantize(&quantize4(&zero).unwrap()), zero);

        let v = 0.1234567;
        let constant = DMatrix::from_element(4, 32, v);
        let q = quantize4(&constant).unwrap();
        assert_eq!(q.block_count(), 2);
        assert!((0..128).all(|i| q.code(i) == 7));
        assert_eq!(dequantize(&q), constant);

        let neg = DMatrix::from_element(1, 64, -v);
        assert_eq!(dequantize(&quantize4(&neg).unwrap()), neg);
    }

    #[test]
    fn quantize_codes_in_range() {
        let m = DMatrix::from_fn(5, 13, |i, j| ((i * 13 + j) as f64 * 0.37).sin());
        let q = quantize4(&m).unwrap();
        assert!((0..65).all(|i| (-8..=7).contains(&q.code(i))));
        assert_eq!(q.storage_bytes(), 33 + 4 * 2);
        assert!(quantize4(&DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn adapter_file_round_trip() {
        let w = AdapterWeights {
            b: dmatrix![1.0, -2.0; 0.5, 0.25; 3.0, 4.0],
            a: dmatrix![1.0, 0.0, 2.0, 3.0; -1.0, 0.5, 0.0, 1.0],
            alpha: 64.0,
        };
        let bytes = encode_adapter(&w);
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&bytes[..header_end], br#"{"d":3,"k":4,"r":2,"alpha":64.0}"#);
        assert_eq!(bytes.len(), header_end + 1 + 4 * (6 + 8));
        assert_eq!(decode_adapter(&bytes).unwrap(), w);
        assert!(decode_adapter(&bytes[..bytes.len() - 1]).is_err());
    }
}
