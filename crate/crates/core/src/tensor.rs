//! Dense row-major `f64` tensors and the raw numeric kernels shared by the
//! forward functions here and the differentiable graph in [`crate::autodiff`].

use crate::error::{Error, Result};

/// Variance guard for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Additive score for masked attention positions.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input; meant
    /// for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data).expect("non-empty rows")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensors have rank >= 1")
    }

    /// Number of rows when viewed as `[len / cols, cols]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Exact equality of shapes and of every element's bit pattern.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub(crate) fn check_rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension(format!(
            "{what} must be rank 2, got {s:?}"
        ))),
    }
}

/// `[n×k] · [k×m]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = check_rank2(a, "matmul lhs")?;
    let (k2, m) = check_rank2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; n * m];
    gemm_nn(a.data(), b.data(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

/// `out += A·B` with `A:[n×k]`, `B:[k×m]`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += A·Bᵀ` with `A:[n×k]`, `B:[m×k]`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    let mut bt = vec![0.0; k * m];
    for j in 0..m {
        for p in 0..k {
            bt[p * m + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, out, n, k, m);
}

/// `out += Aᵀ·B` with `A:[k×n]`, `B:[k×m]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize, m: usize) {
    for p in 0..k {
        let arow = &a[p * n..(p + 1) * n];
        let brow = &b[p * m..(p + 1) * m];
        for (i, &aval) in arow.iter().enumerate() {
            if aval == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aval * bv;
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Softmax over the last axis with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

/// Normalized rows and per-row inverse standard deviations.
pub(crate) fn normalize_rows(x: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / cols);
    for (src, dst) in x.chunks(cols).zip(xhat.chunks_mut(cols)) {
        let mean = src.iter().sum::<f64>() / cols as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

/// Layer normalization over the last axis with population variance.
/// `gamma` and `beta` are the effective (already scaled) affine parameters.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Dimension(format!(
            "layer_norm over last dim {d} with gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let (mut xhat, _) = normalize_rows(x.data(), d);
    for row in xhat.chunks_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Tensor::new(x.shape().to_vec(), xhat)
}

/// Additive causal mask `[t×t]`: position `i` may attend to `j <= i`.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = MASK_VALUE;
        }
    }
    m
}

pub(crate) struct AttentionDims {
    pub heads: usize,
    pub tq: usize,
    pub tk: usize,
    pub dk: usize,
    pub dv: usize,
}

pub(crate) fn attention_dims(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&Tensor>,
) -> Result<AttentionDims> {
    let mismatch = || {
        Error::Dimension(format!(
            "attention shapes q {:?}, k {:?}, v {:?}, mask {:?}",
            q.shape(),
            k.shape(),
            v.shape(),
            mask.map(|m| m.shape().to_vec())
        ))
    };
    let (&[h, tq, dk], &[h2, tk, dk2], &[h3, tk2, dv]) = (q.shape(), k.shape(), v.shape()) else {
        return Err(mismatch());
    };
    if h != h2 || h != h3 || dk != dk2 || tk != tk2 {
        return Err(mismatch());
    }
    if let Some(m) = mask {
        if m.shape() != [tq, tk] {
            return Err(mismatch());
        }
    }
    Ok(AttentionDims {
        heads: h,
        tq,
        tk,
        dk,
        dv,
    })
}

/// Attention probabilities `[h×Tq×Tk]` for `softmax(q·kᵀ/√dk + mask)`.
pub(crate) fn attention_probs(
    q: &Tensor,
    k: &Tensor,
    mask: Option<&Tensor>,
    dims: &AttentionDims,
) -> Vec<f64> {
    let AttentionDims {
        heads, tq, tk, dk, ..
    } = *dims;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut probs = vec![0.0; heads * tq * tk];
    for h in 0..heads {
        let qh = &q.data()[h * tq * dk..(h + 1) * tq * dk];
        let kh = &k.data()[h * tk * dk..(h + 1) * tk * dk];
        let ph = &mut probs[h * tq * tk..(h + 1) * tq * tk];
        gemm_nt(qh, kh, ph, tq, dk, tk);
        for (i, row) in ph.chunks_mut(tk).enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                *s *= scale;
                if let Some(m) = mask {
                    *s += m.data()[i * tk + j];
                }
            }
            softmax_in_place(row);
        }
    }
    probs
}

/// `softmax(q·kᵀ/√dk + mask)·v` per head. Shapes `[h×Tq×dk]`, `[h×Tk×dk]`,
/// `[h×Tk×dv]`, mask `[Tq×Tk]` additive.
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let dims = attention_dims(q, k, v, mask)?;
    let probs = attention_probs(q, k, mask, &dims);
    Ok(attention_apply(&probs, v, &dims))
}

pub(crate) fn attention_apply(probs: &[f64], v: &Tensor, dims: &AttentionDims) -> Tensor {
    let AttentionDims {
        heads, tq, tk, dv, ..
    } = *dims;
    let mut out = vec![0.0; heads * tq * dv];
    for h in 0..heads {
        gemm_nn(
            &probs[h * tq * tk..(h + 1) * tq * tk],
            &v.data()[h * tk * dv..(h + 1) * tk * dv],
            &mut out[h * tq * dv..(h + 1) * tq * dv],
            tq,
            tk,
            dv,
        );
    }
    Tensor::new(vec![heads, tq, dv], out).expect("attention output shape")
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sq / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, &[]);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng::standard_normal(&mut r)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let id = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
        let r = matmul(
            &Tensor::from_rows(&[&[1.0, 2.0]]),
            &Tensor::from_rows(&[&[3.0], &[4.0]]),
        )
        .unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[3, 4], 1);
        let b = random(&[4, 2], 2);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_kernels_agree_with_plain() {
        let a = random(&[3, 5], 3);
        let b = random(&[4, 5], 4);
        let mut nt = vec![0.0; 12];
        gemm_nt(a.data(), b.data(), &mut nt, 3, 5, 4);
        let c = random(&[3, 4], 5);
        let mut tn = vec![0.0; 20];
        gemm_tn(a.data(), c.data(), &mut tn, 3, 5, 4);
        for i in 0..3 {
            for j in 0..4 {
                let s: f64 = (0..5)
                    .map(|p| a.data()[i * 5 + p] * b.data()[j * 5 + p])
                    .sum();
                assert!((nt[i * 4 + j] - s).abs() < 1e-12);
            }
        }
        for i in 0..5 {
            for j in 0..4 {
                let s: f64 = (0..3)
                    .map(|p| a.data()[p * 5 + i] * c.data()[p * 4 + j])
                    .sum();
                assert!((tn[i * 4 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let ones = Tensor::full(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let y = layer_norm(&x, &ones, &zeros).unwrap();
        // mean 2, population variance 2/3
        let s = 1.0 / (2.0f64 / 3.0 + LAYER_NORM_EPS).sqrt();
        for (got, want) in y.data().iter().zip([-s, 0.0, s]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((y.data()[0] + 1.22474).abs() < 1e-4);

        let flat = Tensor::full(&[3], 5.0);
        assert_eq!(
            layer_norm(&flat, &ones, &zeros).unwrap().data(),
            &[0.0, 0.0, 0.0]
        );

        let affine = layer_norm(&x, &Tensor::full(&[3], 2.0), &Tensor::full(&[3], 1.0)).unwrap();
        for (a, b) in affine.data().iter().zip(y.data()) {
            assert!((a - (2.0 * b + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rejects_gamma_width() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(layer_norm(&x, &Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::new(vec![2], vec![1000.0, 1000.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::new(vec![2], vec![0.0, 3f64.ln()]).unwrap());
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn attention_single_key_returns_value() {
        let q = random(&[2, 3, 4], 7);
        let k = random(&[2, 1, 4], 8);
        let v = random(&[2, 1, 5], 9);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        for h in 0..2 {
            for t in 0..3 {
                for j in 0..5 {
                    let got = out.data()[(h * 3 + t) * 5 + j];
                    assert!((got - v.data()[h * 5 + j]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn attention_causal_first_query_sees_first_key() {
        let q = random(&[1, 3, 4], 10);
        let k = random(&[1, 3, 4], 11);
        let v = random(&[1, 3, 2], 12);
        let out = scaled_dot_attention(&q, &k, &v, Some(&causal_mask(3))).unwrap();
        assert!((out.data()[0] - v.data()[0]).abs() < 1e-15);
        assert!((out.data()[1] - v.data()[1]).abs() < 1e-15);
    }

    #[test]
    fn attention_uniform_scores_average_values() {
        let q = random(&[1, 2, 3], 13);
        let key = random(&[1, 1, 3], 14);
        let mut kd = key.data().to_vec();
        kd.extend_from_slice(key.data());
        let k = Tensor::new(vec![1, 2, 3], kd).unwrap();
        let v = random(&[1, 2, 2], 15);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        for t in 0..2 {
            for j in 0..2 {
                let mean = 0.5 * (v.data()[j] + v.data()[2 + j]);
                assert!((out.data()[t * 2 + j] - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_shape_error() {
        let q = Tensor::zeros(&[1, 2, 3]);
        let k = Tensor::zeros(&[1, 2, 4]);
        assert!(scaled_dot_attention(&q, &k, &k, None).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = random(&[3, 4], 20);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = a.map(|x| x + 1.0);
        assert!((mse(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = random(&[3, 4], 21);
        let mut sum = 0.0;
        for i in 0..12 {
            let d = a.data()[i] - c.data()[i];
            sum += d * d;
        }
        assert!((mse(&a, &c).unwrap() - sum / 12.0).abs() < 1e-12);
        assert!(mse(&a, &Tensor::zeros(&[4, 3])).is_err());
    }
}
