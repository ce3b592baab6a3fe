//! Convolution, pooling, ReLU and batch normalization with analytic backward passes.

use crate::error::{Error, Result};
use crate::neural::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Patch matrix of one `C x H x W` image for a 3x3, pad-1 convolution: `(C*9) x (H*W)`.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::ZERO;
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients into `dx`.
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
}

fn check_conv<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, k: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, wd) = x.nchw()?;
    let ok = w.dims.len() == 4 && w.dims[1] == c && w.dims[2] == k && w.dims[3] == k && b.dims == [w.dims[0]];
    if !ok {
        return Err(Error::ShapeMismatch(format!("conv{k}x{k}: input {:?}, weight {:?}, bias {:?}", x.dims, w.dims, b.dims)));
    }
    Ok((n, c, h, wd, w.dims[0]))
}

/// 3x3 cross-correlation, stride 1, zero padding 1. `w`: `[Cout, Cin, 3, 3]`, `b`: `[Cout]`.
pub fn conv3x3<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, wd, co) = check_conv(x, w, b, 3)?;
    let hw = h * wd;
    let mut y = Tensor::zeros(&[n, co, h, wd]);
    let mut col = vec![T::ZERO; c * 9 * hw];
    for i in 0..n {
        im2col(&x.data[i * c * hw..(i + 1) * c * hw], c, h, wd, &mut col);
        let out = &mut y.data[i * co * hw..(i + 1) * co * hw];
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(b.data[o]);
        }
        T::gemm(co, c * 9, hw, T::ONE, &w.data, false, &col, false, T::ONE, out);
    }
    Ok(y)
}

pub struct ConvGrads<T: Real> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Backward of [`conv3x3`]; patches are recomputed from `x`.
pub fn conv3x3_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Result<ConvGrads<T>> {
    let b = Tensor::zeros(&[w.dims[0]]);
    let (n, c, h, wd, co) = check_conv(x, w, &b, 3)?;
    if dy.dims != [n, co, h, wd] {
        return Err(Error::ShapeMismatch(format!("conv3x3 grad {:?} for output [{n}, {co}, {h}, {wd}]", dy.dims)));
    }
    let hw = h * wd;
    let mut dx = Tensor::zeros(if need_dx { &x.dims[..] } else { &[1][..] });
    let mut dw = Tensor::zeros(&w.dims);
    let mut db = Tensor::zeros(&[co]);
    let mut col = vec![T::ZERO; c * 9 * hw];
    for i in 0..n {
        let g = &dy.data[i * co * hw..(i + 1) * co * hw];
        for (o, row) in g.chunks(hw).enumerate() {
            db.data[o] += row.iter().copied().sum::<T>();
        }
        im2col(&x.data[i * c * hw..(i + 1) * c * hw], c, h, wd, &mut col);
        T::gemm(co, hw, c * 9, T::ONE, g, false, &col, true, T::ONE, &mut dw.data);
        if need_dx {
            T::gemm(c * 9, co, hw, T::ONE, &w.data, true, g, false, T::ZERO, &mut col);
            col2im(&col, c, h, wd, &mut dx.data[i * c * hw..(i + 1) * c * hw]);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Pointwise convolution. `w`: `[Cout, Cin, 1, 1]`, `b`: `[Cout]`.
pub fn conv1x1<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, wd, co) = check_conv(x, w, b, 1)?;
    let hw = h * wd;
    let mut y = Tensor::zeros(&[n, co, h, wd]);
    for i in 0..n {
        let out = &mut y.data[i * co * hw..(i + 1) * co * hw];
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(b.data[o]);
        }
        T::gemm(co, c, hw, T::ONE, &w.data, false, &x.data[i * c * hw..(i + 1) * c * hw], false, T::ONE, out);
    }
    Ok(y)
}

pub fn conv1x1_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let b = Tensor::zeros(&[w.dims[0]]);
    let (n, c, h, wd, co) = check_conv(x, w, &b, 1)?;
    if dy.dims != [n, co, h, wd] {
        return Err(Error::ShapeMismatch(format!("conv1x1 grad {:?} for output [{n}, {co}, {h}, {wd}]", dy.dims)));
    }
    let hw = h * wd;
    let mut dx = Tensor::zeros(&x.dims);
    let mut dw = Tensor::zeros(&w.dims);
    let mut db = Tensor::zeros(&[co]);
    for i in 0..n {
        let g = &dy.data[i * co * hw..(i + 1) * co * hw];
        for (o, row) in g.chunks(hw).enumerate() {
            db.data[o] += row.iter().copied().sum::<T>();
        }
        let xi = &x.data[i * c * hw..(i + 1) * c * hw];
        T::gemm(co, hw, c, T::ONE, g, false, xi, true, T::ONE, &mut dw.data);
        T::gemm(c, co, hw, T::ONE, &w.data, true, g, false, T::ZERO, &mut dx.data[i * c * hw..(i + 1) * c * hw]);
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Non-overlapping 2x2 max; also returns the flat input index of each maximum
/// (first in row-major order on ties).
pub fn maxpool2x2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.nchw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimension(h, w));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let cands = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cands[0];
                for &k in &cands[1..] {
                    if x.data[k] > x.data[best] {
                        best = k;
                    }
                }
                let o = p * ho * wo + i * wo + j;
                y.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2x2_backward<T: Real>(input_dims: &[usize], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_dims);
    for (g, &k) in dy.data.iter().zip(argmax) {
        dx.data[k as usize] += *g;
    }
    dx
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor { dims: x.dims.clone(), data: x.data.iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect() }
}

/// Gradient of ReLU given its output (positive output iff positive input).
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        dims: dy.dims.clone(),
        data: y.data.iter().zip(&dy.data).map(|(&o, &g)| if o > T::ZERO { g } else { T::ZERO }).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Saved state for [`batchnorm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<T: Real> {
    pub mode: BnMode,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance, for the running estimate.
    pub batch_var_unbiased: Vec<T>,
}

/// Per-channel batch normalization. Train mode uses batch statistics (biased variance);
/// eval mode uses the running statistics.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, h, w) = x.nchw()?;
    if [gamma, beta, running_mean, running_var].iter().any(|t| t.dims != [c]) {
        return Err(Error::ShapeMismatch(format!("batchnorm params for {c} channels")));
    }
    let hw = h * w;
    let m = n * hw;
    let eps = T::from_f64(BN_EPS);
    let mut mean = vec![T::ZERO; c];
    let mut var_unbiased = vec![T::ZERO; c];
    let mut inv_std = vec![T::ZERO; c];
    for ch in 0..c {
        let (mu, var) = match mode {
            BnMode::Train => {
                let mut s = 0.0f64;
                for i in 0..n {
                    s += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().map(|v| v.to_f64()).sum::<f64>();
                }
                let mu = s / m as f64;
                let mut q = 0.0f64;
                for i in 0..n {
                    q += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().map(|v| (v.to_f64() - mu).powi(2)).sum::<f64>();
                }
                var_unbiased[ch] = T::from_f64(if m > 1 { q / (m - 1) as f64 } else { 0.0 });
                (T::from_f64(mu), T::from_f64(q / m as f64))
            }
            BnMode::Eval => (running_mean.data[ch], running_var.data[ch]),
        };
        mean[ch] = mu;
        inv_std[ch] = T::ONE / (var + eps).sqrt();
    }
    let mut xhat = Tensor::zeros(&x.dims);
    let mut y = Tensor::zeros(&x.dims);
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data[ch], beta.data[ch]);
            for k in r {
                let xh = (x.data[k] - mu) * is;
                xhat.data[k] = xh;
                y.data[k] = g * xh + b;
            }
        }
    }
    Ok((y, BnCache { mode, xhat, inv_std, batch_mean: mean, batch_var_unbiased: var_unbiased }))
}

/// Running-statistics update after a train-mode pass: `r <- momentum * r + (1 - momentum) * batch`.
pub fn batchnorm_update_running<T: Real>(cache: &BnCache<T>, running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>) {
    let mom = T::from_f64(BN_MOMENTUM);
    let rest = T::ONE - mom;
    for ch in 0..running_mean.data.len() {
        running_mean.data[ch] = mom * running_mean.data[ch] + rest * cache.batch_mean[ch];
        running_var.data[ch] = mom * running_var.data[ch] + rest * cache.batch_var_unbiased[ch];
    }
}

pub struct BnGrads<T: Real> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn batchnorm_backward<T: Real>(cache: &BnCache<T>, gamma: &Tensor<T>, dy: &Tensor<T>) -> Result<BnGrads<T>> {
    let (n, c, h, w) = dy.nchw()?;
    let hw = h * w;
    let m = T::from_f64((n * hw) as f64);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for k in r {
                dbeta.data[ch] += dy.data[k];
                dgamma.data[ch] += dy.data[k] * cache.xhat.data[k];
            }
        }
    }
    let mut dx = Tensor::zeros(&dy.dims);
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma.data[ch] * cache.inv_std[ch];
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            match cache.mode {
                BnMode::Train => {
                    let (sb, sg) = (dbeta.data[ch], dgamma.data[ch]);
                    for k in r {
                        dx.data[k] = scale / m * (m * dy.data[k] - sb - cache.xhat.data[k] * sg);
                    }
                }
                BnMode::Eval => {
                    for k in r {
                        dx.data[k] = scale * dy.data[k];
                    }
                }
            }
        }
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{check_gradient, random_tensor};
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn conv_identity_kernel() {
        let mut rng = seeded(1);
        let x = random_tensor(&[2, 1, 5, 6], &mut rng);
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        w.data[4] = 1.0;
        let y = conv3x3(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones_counts_neighbors() {
        let x = Tensor::<f64>::filled(&[1, 1, 5, 5], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv3x3(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data[2 * 5 + 2], 9.0);
        assert_eq!(y.data[0], 4.0);
        assert_eq!(y.data[24], 4.0);
        assert_eq!(y.data[2], 6.0);
    }

    /// Direct 7-loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, wd) = x.nchw().unwrap();
        let (co, k) = (w.dims[0], w.dims[2]);
        let pad = (k / 2) as isize;
        let mut y = Tensor::zeros(&[n, co, h, wd]);
        for i in 0..n {
            for o in 0..co {
                for yy in 0..h {
                    for xx in 0..wd {
                        let mut acc = b.data[o];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = yy as isize + ky as isize - pad;
                                    let sx = xx as isize + kx as isize - pad;
                                    if sy >= 0 && sx >= 0 && sy < h as isize && sx < wd as isize {
                                        acc += w.data[((o * c + ci) * k + ky) * k + kx]
                                            * x.data[((i * c + ci) * h + sy as usize) * wd + sx as usize];
                                    }
                                }
                            }
                        }
                        y.data[((i * co + o) * h + yy) * wd + xx] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = seeded(2);
        for _ in 0..5 {
            let (n, c, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
            let x = random_tensor(&[n, c, h, w], &mut rng);
            let w3 = random_tensor(&[co, c, 3, 3], &mut rng);
            let w1 = random_tensor(&[co, c, 1, 1], &mut rng);
            let b = random_tensor(&[co], &mut rng);
            for (got, expect) in [
                (conv3x3(&x, &w3, &b).unwrap(), naive_conv(&x, &w3, &b)),
                (conv1x1(&x, &w1, &b).unwrap(), naive_conv(&x, &w1, &b)),
            ] {
                for (a, e) in got.data.iter().zip(&expect.data) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        assert!(matches!(conv3x3(&x, &w, &Tensor::zeros(&[3])), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().0.data, vec![4.0]);
        let c = Tensor::<f64>::filled(&[1, 2, 4, 4], 0.5);
        let (y, arg) = maxpool2x2(&c).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.5));
        // Ties route to the top-left element.
        assert_eq!(arg[0], 0);
        assert!(matches!(maxpool2x2(&Tensor::<f64>::zeros(&[1, 1, 3, 4])), Err(Error::OddDimension(3, 4))));
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::<f64>::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data, vec![0.0, 2.0]);
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut rng = seeded(3);
        let x = random_tensor(&[4, 3, 5, 5], &mut rng);
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let (y, _) = batchnorm(&x, &ones, &zeros, &zeros, &ones, BnMode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|i| y.data[(i * 3 + ch) * 25..(i * 3 + ch + 1) * 25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_running_update() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::filled(&[1], 1.0);
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::filled(&[1], 1.0);
        let (_, cache) = batchnorm(&x, &ones, &Tensor::zeros(&[1]), &rm, &rv, BnMode::Train).unwrap();
        batchnorm_update_running(&cache, &mut rm, &mut rv);
        // mean 2.5, unbiased variance 5/3
        assert!((rm.data[0] - 0.25).abs() < 1e-12);
        assert!((rv.data[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = seeded(11);
        for trial in 0..20 {
            let n = rng.random_range(1..3);
            let c = rng.random_range(1..4);
            let co = rng.random_range(1..4);
            let h = 2 * rng.random_range(1..4);
            let w = 2 * rng.random_range(1..4);
            let x = random_tensor(&[n, c, h, w], &mut rng);
            let w3 = random_tensor(&[co, c, 3, 3], &mut rng);
            let w1 = random_tensor(&[co, c, 1, 1], &mut rng);
            let b = random_tensor(&[co], &mut rng);
            let proj = random_tensor(&[n, co, h, w], &mut rng);
            let dot = |y: &Tensor<f64>, p: &Tensor<f64>| y.data.iter().zip(&p.data).map(|(a, b)| a * b).sum::<f64>();

            let g = conv3x3_backward(&x, &w3, &proj, true).unwrap();
            check_gradient(&x, &g.dx, |t| dot(&conv3x3(t, &w3, &b).unwrap(), &proj), &mut rng, "conv3x3 dx");
            check_gradient(&w3, &g.dw, |t| dot(&conv3x3(&x, t, &b).unwrap(), &proj), &mut rng, "conv3x3 dw");
            check_gradient(&b, &g.db, |t| dot(&conv3x3(&x, &w3, t).unwrap(), &proj), &mut rng, "conv3x3 db");

            let g = conv1x1_backward(&x, &w1, &proj).unwrap();
            check_gradient(&x, &g.dx, |t| dot(&conv1x1(t, &w1, &b).unwrap(), &proj), &mut rng, "conv1x1 dx");
            check_gradient(&w1, &g.dw, |t| dot(&conv1x1(&x, t, &b).unwrap(), &proj), &mut rng, "conv1x1 dw");

            // Pooling: distinct values keep the argmax stable under perturbation.
            let mut xs = x.clone();
            for (i, v) in xs.data.iter_mut().enumerate() {
                *v += i as f64 * 0.01;
            }
            let (y, arg) = maxpool2x2(&xs).unwrap();
            let pp = random_tensor(&y.dims, &mut rng);
            let dx = maxpool2x2_backward(&xs.dims, &arg, &pp);
            check_gradient(&xs, &dx, |t| dot(&maxpool2x2(t).unwrap().0, &pp), &mut rng, "maxpool");

            // ReLU away from the kink.
            let mut xr = x.clone();
            xr.data.iter_mut().for_each(|v| {
                if v.abs() < 1e-3 {
                    *v = 0.5
                }
            });
            let pr = random_tensor(&xr.dims, &mut rng);
            let dx = relu_backward(&relu(&xr), &pr);
            check_gradient(&xr, &dx, |t| dot(&relu(t), &pr), &mut rng, "relu");

            // Batch norm in both modes.
            let gamma = random_tensor(&[c], &mut rng);
            let beta = random_tensor(&[c], &mut rng);
            let rm = random_tensor(&[c], &mut rng);
            let rv = Tensor::filled(&[c], 0.7);
            let pb = random_tensor(&x.dims, &mut rng);
            for mode in [BnMode::Train, BnMode::Eval] {
                if mode == BnMode::Train && n * h * w < 2 {
                    continue;
                }
                let (_, cache) = batchnorm(&x, &gamma, &beta, &rm, &rv, mode).unwrap();
                let g = batchnorm_backward(&cache, &gamma, &pb).unwrap();
                let f = |xx: &Tensor<f64>, gg: &Tensor<f64>, bb: &Tensor<f64>| {
                    dot(&batchnorm(xx, gg, bb, &rm, &rv, mode).unwrap().0, &pb)
                };
                check_gradient(&x, &g.dx, |t| f(t, &gamma, &beta), &mut rng, &format!("bn dx {mode:?} trial {trial}"));
                check_gradient(&gamma, &g.dgamma, |t| f(&x, t, &beta), &mut rng, "bn dgamma");
                check_gradient(&beta, &g.dbeta, |t| f(&x, &gamma, t), &mut rng, "bn dbeta");
            }
        }
    }
}
