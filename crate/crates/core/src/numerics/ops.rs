use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_RMS_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.7978845608;
const GELU_A: f64 = 0.044715;

fn dims2<F: Real>(t: &Tensor<F>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::Shape(format!("{what} must be 2-D, got {s:?}"))),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, summing over `k` in ascending order.
pub(crate) fn gemm_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// `out[m×n] += aᵀ · b` where `a` is `[k×m]` and `b` is `[k×n]`.
pub(crate) fn gemm_tn_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let crow = &mut out[i * n..(i + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

pub(crate) fn transpose_slice<F: Real>(a: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `out[m×n] += a[m×k] · bᵀ` where `b` is `[n×k]`.
pub(crate) fn gemm_nt_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    let bt = transpose_slice(b, n, k);
    gemm_acc(a, &bt, out, m, k, n);
}

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul [{m}×{k}]·[{k2}×{n}]")));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    let out = Tensor::matrix(m, n, out)?;
    out.ensure_finite("matmul output")?;
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (n, k2) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul [{m}×{k}]·[{n}×{k2}]ᵀ")));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_nt_acc(a.data(), b.data(), &mut out, m, k, n);
    let out = Tensor::matrix(m, n, out)?;
    out.ensure_finite("matmul output")?;
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (k, m) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul [{k}×{m}]ᵀ·[{k2}×{n}]")));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_tn_acc(a.data(), b.data(), &mut out, k, m, n);
    let out = Tensor::matrix(m, n, out)?;
    out.ensure_finite("matmul output")?;
    Ok(out)
}

/// Returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<F: Real>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    dc: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    Ok((matmul_nt(dc, b)?, matmul_tn(a, dc)?))
}

pub(crate) fn softmax_row_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        // fully masked row; leave as zeros
        row.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN input to softmax".into()));
    }
    let mut y = x.clone();
    let n = y.cols();
    if n == 0 {
        return Ok(y);
    }
    for row in y.data_mut().chunks_mut(n) {
        softmax_row_in_place(row);
    }
    y.ensure_finite("softmax output")?;
    Ok(y)
}

pub(crate) fn softmax_row_backward_in_place<F: Real>(y: &[F], g: &mut [F]) {
    let dot: F = y.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
    for (gv, &yv) in g.iter_mut().zip(y) {
        *gv = yv * (*gv - dot);
    }
}

/// Given the softmax output `y` and upstream `g`, returns `y ⊙ (g − ⟨g,y⟩)` per row.
pub fn softmax_rows_backward<F: Real>(y: &Tensor<F>, g: &Tensor<F>) -> Result<Tensor<F>> {
    if y.shape() != g.shape() {
        return Err(Error::Shape("softmax backward shape mismatch".into()));
    }
    let mut dx = g.clone();
    let n = y.cols();
    if n == 0 {
        return Ok(dx);
    }
    for (yr, gr) in y.data().chunks(n).zip(dx.data_mut().chunks_mut(n)) {
        softmax_row_backward_in_place(yr, gr);
    }
    Ok(dx)
}

pub(crate) fn inv_rms<F: Real>(row: &[F], eps: F) -> F {
    let d = F::of(row.len() as f64);
    let ms = row.iter().map(|&v| v * v).sum::<F>() / d;
    F::one() / (ms + eps).sqrt()
}

pub fn rmsnorm<F: Real>(x: &Tensor<F>, gain: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
    let d = x.cols();
    if d == 0 || gain.len() != d {
        return Err(Error::Shape(format!(
            "rmsnorm over {d} channels with gain of {}",
            gain.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Numeric("rmsnorm eps must be positive".into()));
    }
    let eps = F::of(eps);
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(d) {
        let r = inv_rms(row, eps);
        for (v, &g) in row.iter_mut().zip(gain.data()) {
            *v = g * *v * r;
        }
    }
    y.ensure_finite("rmsnorm output")?;
    Ok(y)
}

/// Returns `(dx, dgain)`.
pub fn rmsnorm_backward<F: Real>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    eps: f64,
    dy: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d = x.cols();
    if x.shape() != dy.shape() || gain.len() != d {
        return Err(Error::Shape("rmsnorm backward shape mismatch".into()));
    }
    let eps = F::of(eps);
    let df = F::of(d as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = Tensor::zeros(&[d]);
    for ((xr, dyr), dxr) in x
        .data()
        .chunks(d)
        .zip(dy.data().chunks(d))
        .zip(dx.data_mut().chunks_mut(d))
    {
        let r = inv_rms(xr, eps);
        let mut dot = F::zero();
        for c in 0..d {
            let gdy = gain.data()[c] * dyr[c];
            dot += gdy * xr[c];
            dgain.data_mut()[c] += dyr[c] * xr[c] * r;
        }
        let coef = r * r * r * dot / df;
        for c in 0..d {
            dxr[c] = r * gain.data()[c] * dyr[c] - coef * xr[c];
        }
    }
    Ok((dx, dgain))
}

#[inline]
pub(crate) fn gelu_scalar<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}

/// GELU, tanh approximation.
pub fn gelu<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
    y.ensure_finite("gelu output")?;
    Ok(y)
}

pub fn gelu_backward<F: Real>(x: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape("gelu backward shape mismatch".into()));
    }
    let mut dx = dy.clone();
    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        *d *= gelu_grad_scalar(xv);
    }
    Ok(dx)
}

/// Mean next-token cross-entropy and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy<F> {
    pub loss: f64,
    pub grad: Tensor<F>,
    pub count: usize,
}

/// `mask[i] == true` excludes row `i` from the mean.
pub fn cross_entropy<F: Real>(
    logits: &Tensor<F>,
    targets: &[u32],
    mask: &[bool],
) -> Result<CrossEntropy<F>> {
    let (m, v) = dims2(logits, "logits")?;
    if targets.len() != m || mask.len() != m {
        return Err(Error::Shape(format!(
            "{m} logit rows, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&masked| !masked).count();
    if count == 0 {
        return Err(Error::DegenerateInput(
            "cross-entropy over zero unmasked positions".into(),
        ));
    }
    let scale = F::of(1.0 / count as f64);
    let mut grad = Tensor::zeros(&[m, v]);
    let mut total = 0.0f64;
    for i in 0..m {
        if mask[i] {
            continue;
        }
        let t = targets[i] as usize;
        if t >= v {
            return Err(Error::UnknownId {
                id: targets[i],
                vocab_size: v,
            });
        }
        let row = logits.row(i);
        let g = grad.row_mut(i);
        g.copy_from_slice(row);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max.as_f64()
            + row
                .iter()
                .map(|&z| (z.as_f64() - max.as_f64()).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[t].as_f64();
        softmax_row_in_place(g);
        g[t] -= F::one();
        g.iter_mut().for_each(|x| *x *= scale);
    }
    let loss = total / count as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite cross-entropy".into()));
    }
    Ok(CrossEntropy { loss, grad, count })
}
