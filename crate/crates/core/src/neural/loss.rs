//! Detector cross-entropy, descriptor hinge loss and their weighted sum, with gradients.

use crate::error::{Error, Result};
use crate::neural::arch::DETECTOR_OUT;
use crate::neural::decode::{CellLabels, Correspondences};
use crate::neural::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the descriptor loss in the total.
    pub lambda: f64,
    /// Weight of positive descriptor pairs.
    pub lambda_d: f64,
    pub m_p: f64,
    pub m_n: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.0001, lambda_d: 250.0, m_p: 1.0, m_n: 0.2 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda_d > 0.0 && self.m_p > 0.0 && self.m_n > 0.0 && self.m_p > self.m_n) {
            return Err(Error::InvalidConfig(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }
}

/// Mean over all cells of the batch of `-log softmax(x)[label]`; returns the loss and `dL/dx`.
pub fn loss_detector<T: Real>(logits: &Tensor<T>, labels: &[CellLabels]) -> Result<(f64, Tensor<T>)> {
    let (n, c, hc, wc) = logits.nchw()?;
    if c != DETECTOR_OUT || labels.len() != n || labels.iter().any(|l| (l.hc, l.wc) != (hc, wc)) {
        return Err(Error::ShapeMismatch(format!("logits {:?} vs {} label grids", logits.dims, labels.len())));
    }
    let p = hc * wc;
    let cells = (n * p) as f64;
    let inv = T::from_f64(1.0 / cells);
    let mut grad = Tensor::zeros(&logits.dims);
    let mut total = 0.0f64;
    for (i, lab) in labels.iter().enumerate() {
        let base = i * c * p;
        for cell in 0..p {
            let mut m = logits.data[base + cell];
            for k in 1..c {
                m = m.max(logits.data[base + k * p + cell]);
            }
            let mut s = T::ZERO;
            for k in 0..c {
                s += (logits.data[base + k * p + cell] - m).exp();
            }
            let y = lab.labels[cell] as usize;
            let log_z = m + s.ln();
            total += (log_z - logits.data[base + y * p + cell]).to_f64();
            for k in 0..c {
                let idx = base + k * p + cell;
                let prob = (logits.data[idx] - log_z).exp();
                let target = if k == y { T::ONE } else { T::ZERO };
                grad.data[idx] = (prob - target) * inv;
            }
        }
    }
    Ok((total / cells, grad))
}

/// Hinge term of one descriptor pair given its dot product.
pub fn pair_term(dot: f64, s: bool, cfg: &LossConfig) -> f64 {
    if s {
        cfg.lambda_d * (cfg.m_p - dot).max(0.0)
    } else {
        (dot - cfg.m_n).max(0.0)
    }
}

const ROW_BLOCK: usize = 256;

/// Per-location normalized copy plus the norms (for the backward pass).
fn normalize_with_norms<T: Real>(d: &[T], dim: usize, p: usize) -> (Vec<T>, Vec<T>) {
    let mut out = d.to_vec();
    let mut norms = vec![T::ZERO; p];
    for loc in 0..p {
        let s: f64 = (0..dim).map(|k| d[k * p + loc].to_f64().powi(2)).sum();
        let n = s.sqrt().max(1e-12);
        norms[loc] = T::from_f64(n);
        let inv = T::from_f64(1.0 / n);
        for k in 0..dim {
            out[k * p + loc] *= inv;
        }
    }
    (out, norms)
}

/// Backward of per-location normalization: `dd = (g - u (u . g)) / |d|`.
fn normalize_backward<T: Real>(unit: &[T], norms: &[T], g: &[T], dim: usize, p: usize, out: &mut [T]) {
    for loc in 0..p {
        let mut dot = T::ZERO;
        for k in 0..dim {
            dot += unit[k * p + loc] * g[k * p + loc];
        }
        for k in 0..dim {
            let i = k * p + loc;
            out[i] = (g[i] - unit[i] * dot) / norms[loc];
        }
    }
}

/// Mean over all `(Hc*Wc)^2` cell pairs and the batch of the hinge loss on normalized
/// descriptors. Returns the loss and gradients for both raw descriptor tensors.
pub fn loss_descriptor<T: Real>(
    d: &Tensor<T>,
    d_warped: &Tensor<T>,
    s: &[Correspondences],
    cfg: &LossConfig,
) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    let (n, dim, hc, wc) = d.nchw()?;
    if d_warped.dims != d.dims || s.len() != n || s.iter().any(|c| (c.hc, c.wc) != (hc, wc)) {
        return Err(Error::ShapeMismatch(format!("descriptors {:?} / {:?} with {} correspondence sets", d.dims, d_warped.dims, s.len())));
    }
    let p = hc * wc;
    let per = dim * p;
    let norm = 1.0 / ((p * p * n) as f64);
    let mut total = 0.0f64;
    let mut grad_a = Tensor::zeros(&d.dims);
    let mut grad_b = Tensor::zeros(&d.dims);
    let (lambda_d, m_p, m_n) = (T::from_f64(cfg.lambda_d), T::from_f64(cfg.m_p), T::from_f64(cfg.m_n));
    let scale = T::from_f64(norm);
    for i in 0..n {
        let (a, na) = normalize_with_norms(&d.data[i * per..(i + 1) * per], dim, p);
        let (b, nb) = normalize_with_norms(&d_warped.data[i * per..(i + 1) * per], dim, p);
        let mut ga = vec![T::ZERO; per];
        let mut gb = vec![T::ZERO; per];
        let corr = &s[i];
        let mut row_mask = vec![false; p];
        for start in (0..p).step_by(ROW_BLOCK) {
            let rows = ROW_BLOCK.min(p - start);
            // G[r, q] = a_{start + r} . b_q
            let mut g = vec![T::ZERO; rows * p];
            let a_block: Vec<T> = (0..dim).flat_map(|k| a[k * p + start..k * p + start + rows].to_vec()).collect();
            T::gemm(rows, dim, p, T::ONE, &a_block, true, &b, false, T::ZERO, &mut g);
            let mut dg = vec![T::ZERO; rows * p];
            for r in 0..rows {
                for &q in &corr.pairs[start + r] {
                    row_mask[q as usize] = true;
                }
                let mut row_sum = 0.0f64;
                for q in 0..p {
                    let dot = g[r * p + q];
                    let (term, slope) = if row_mask[q] {
                        let v = m_p - dot;
                        if v > T::ZERO {
                            (lambda_d * v, -lambda_d)
                        } else {
                            (T::ZERO, T::ZERO)
                        }
                    } else {
                        let v = dot - m_n;
                        if v > T::ZERO {
                            (v, T::ONE)
                        } else {
                            (T::ZERO, T::ZERO)
                        }
                    };
                    row_sum += term.to_f64();
                    dg[r * p + q] = slope * scale;
                }
                total += row_sum;
                for &q in &corr.pairs[start + r] {
                    row_mask[q as usize] = false;
                }
            }
            // dA_block (dim x rows) = B (dim x p) . dG^T ; dB (dim x p) += A_block (dim x rows) . dG
            let mut ga_block = vec![T::ZERO; dim * rows];
            T::gemm(dim, p, rows, T::ONE, &b, false, &dg, true, T::ZERO, &mut ga_block);
            for k in 0..dim {
                ga[k * p + start..k * p + start + rows].copy_from_slice(&ga_block[k * rows..(k + 1) * rows]);
            }
            T::gemm(dim, rows, p, T::ONE, &a_block, false, &dg, false, T::ONE, &mut gb);
        }
        normalize_backward(&a, &na, &ga, dim, p, &mut grad_a.data[i * per..(i + 1) * per]);
        normalize_backward(&b, &nb, &gb, dim, p, &mut grad_b.data[i * per..(i + 1) * per]);
    }
    Ok((total * norm, grad_a, grad_b))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub det: f64,
    pub det_warped: f64,
    pub desc: f64,
}

pub struct TotalGrads<T: Real> {
    pub logits: Tensor<T>,
    pub logits_warped: Tensor<T>,
    pub desc: Tensor<T>,
    pub desc_warped: Tensor<T>,
}

/// `Lp(X, Y) + Lp(X', Y') + lambda * Ld(D, D', S)`.
#[allow(clippy::too_many_arguments)]
pub fn loss_total<T: Real>(
    x: &Tensor<T>,
    x_warped: &Tensor<T>,
    d: &Tensor<T>,
    d_warped: &Tensor<T>,
    y: &[CellLabels],
    y_warped: &[CellLabels],
    s: &[Correspondences],
    cfg: &LossConfig,
) -> Result<(LossParts, TotalGrads<T>)> {
    let (det, gx) = loss_detector(x, y)?;
    let (det_warped, gxw) = loss_detector(x_warped, y_warped)?;
    let (desc, mut gd, mut gdw) = loss_descriptor(d, d_warped, s, cfg)?;
    let lam = T::from_f64(cfg.lambda);
    gd.scale(lam);
    gdw.scale(lam);
    let parts = LossParts { total: det + det_warped + cfg.lambda * desc, det, det_warped, desc };
    Ok((parts, TotalGrads { logits: gx, logits_warped: gxw, desc: gd, desc_warped: gdw }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Homography;
    use crate::neural::decode::correspondences;
    use crate::neural::gradcheck::{check_gradient, random_tensor};
    use crate::rng::seeded;
    use rand::Rng;

    fn random_labels<R: Rng>(n: usize, hc: usize, wc: usize, rng: &mut R) -> Vec<CellLabels> {
        (0..n).map(|_| CellLabels { hc, wc, labels: (0..hc * wc).map(|_| rng.random_range(0..65u8)).collect() }).collect()
    }

    #[test]
    fn detector_loss_examples() {
        let mut rng = seeded(1);
        let labels = random_labels(2, 3, 4, &mut rng);
        let (l, _) = loss_detector(&Tensor::<f64>::zeros(&[2, 65, 3, 4]), &labels).unwrap();
        assert!((l - 4.17438727).abs() < 1e-8);
        assert!((l - 65f64.ln()).abs() < 1e-12);

        let mut x = Tensor::<f64>::zeros(&[2, 65, 3, 4]);
        for (i, lab) in labels.iter().enumerate() {
            for cell in 0..12 {
                x.data[(i * 65 + lab.labels[cell] as usize) * 12 + cell] = 1000.0;
            }
        }
        assert!(loss_detector(&x, &labels).unwrap().0 < 1e-6);
        assert!(matches!(loss_detector(&Tensor::<f64>::zeros(&[1, 65, 3, 4]), &labels), Err(Error::ShapeMismatch(_))));
    }

    /// Direct double loop over all pairs.
    fn naive_descriptor_loss(d: &Tensor<f64>, dw: &Tensor<f64>, s: &[Correspondences], cfg: &LossConfig) -> f64 {
        let (n, dim, hc, wc) = d.nchw().unwrap();
        let p = hc * wc;
        let mut total = 0.0;
        for i in 0..n {
            let vec_at = |t: &Tensor<f64>, loc: usize| -> Vec<f64> {
                let v: Vec<f64> = (0..dim).map(|k| t.data[(i * dim + k) * p + loc]).collect();
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / nrm).collect()
            };
            for a in 0..p {
                let va = vec_at(d, a);
                for b in 0..p {
                    let vb = vec_at(dw, b);
                    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
                    total += pair_term(dot, s[i].contains(a, b), cfg);
                }
            }
        }
        total / (n * p * p) as f64
    }

    #[test]
    fn descriptor_pair_terms() {
        let cfg = LossConfig::default();
        assert_eq!(pair_term(1.0, true, &cfg), 0.0);
        assert!((pair_term(1.0, false, &cfg) - 0.8).abs() < 1e-15);
        assert_eq!(pair_term(0.0, false, &cfg), 0.0);
        assert_eq!(pair_term(0.0, true, &cfg), 250.0);
    }

    #[test]
    fn blockwise_equals_naive() {
        let mut rng = seeded(2);
        let cfg = LossConfig::default();
        for (hc, wc) in [(3, 4), (17, 16)] {
            let d = random_tensor(&[2, 5, hc, wc], &mut rng);
            let dw = random_tensor(&[2, 5, hc, wc], &mut rng);
            let s: Vec<Correspondences> = (0..2)
                .map(|_| correspondences(&Homography::translation(rng.random_range(-9.0..9.0), 3.0), hc, wc).unwrap())
                .collect();
            let (l, _, _) = loss_descriptor(&d, &dw, &s, &cfg).unwrap();
            assert!((l - naive_descriptor_loss(&d, &dw, &s, &cfg)).abs() < 1e-6);
        }
    }

    #[test]
    fn perfectly_correlated_fields_have_zero_loss() {
        // One-hot descriptors per cell: positives dot to 1, negatives to 0 <= m_n.
        let (hc, wc) = (3, 3);
        let p = hc * wc;
        let mut d = Tensor::<f64>::zeros(&[1, p, hc, wc]);
        for loc in 0..p {
            d.data[loc * p + loc] = 1.0;
        }
        let s = vec![Correspondences { hc, wc, pairs: (0..p).map(|i| vec![i as u32]).collect() }];
        let (l, _, _) = loss_descriptor(&d, &d, &s, &LossConfig::default()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = seeded(3);
        let cfg = LossConfig { lambda: 0.5, ..LossConfig::default() };
        for _ in 0..20 {
            let (n, hc, wc) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let x = random_tensor(&[n, 65, hc, wc], &mut rng);
            let labels = random_labels(n, hc, wc, &mut rng);
            let (_, g) = loss_detector(&x, &labels).unwrap();
            check_gradient(&x, &g, |t| loss_detector(t, &labels).unwrap().0, &mut rng, "detector loss");

            let dim = rng.random_range(2..6);
            let d = random_tensor(&[n, dim, hc, wc], &mut rng);
            let dw = random_tensor(&[n, dim, hc, wc], &mut rng);
            let s: Vec<Correspondences> = (0..n)
                .map(|_| correspondences(&Homography::translation(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)), hc, wc).unwrap())
                .collect();
            // Loose margins keep most pairs off the hinge kinks.
            let c2 = LossConfig { m_p: 0.9, m_n: 0.1, lambda_d: 3.0, ..cfg };
            let (_, ga, gb) = loss_descriptor(&d, &dw, &s, &c2).unwrap();
            check_gradient(&d, &ga, |t| loss_descriptor(t, &dw, &s, &c2).unwrap().0, &mut rng, "descriptor loss a");
            check_gradient(&dw, &gb, |t| loss_descriptor(&d, t, &s, &c2).unwrap().0, &mut rng, "descriptor loss b");
        }
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let mut rng = seeded(4);
        for _ in 0..10 {
            let (n, hc, wc, dim) = (2, rng.random_range(1..4), rng.random_range(1..4), 4);
            let x = random_tensor(&[n, 65, hc, wc], &mut rng);
            let xw = random_tensor(&[n, 65, hc, wc], &mut rng);
            let d = random_tensor(&[n, dim, hc, wc], &mut rng);
            let dw = random_tensor(&[n, dim, hc, wc], &mut rng);
            let y = random_labels(n, hc, wc, &mut rng);
            let yw = random_labels(n, hc, wc, &mut rng);
            let s: Vec<Correspondences> = (0..n).map(|_| correspondences(&Homography::identity(), hc, wc).unwrap()).collect();
            let cfg = LossConfig { lambda: rng.random_range(0.0..1.0), ..LossConfig::default() };
            let (parts, _) = loss_total(&x, &xw, &d, &dw, &y, &yw, &s, &cfg).unwrap();
            let manual = loss_detector(&x, &y).unwrap().0
                + loss_detector(&xw, &yw).unwrap().0
                + cfg.lambda * loss_descriptor(&d, &dw, &s, &cfg).unwrap().0;
            assert!((parts.total - manual).abs() < 1e-7);
            let zero = LossConfig { lambda: 0.0, ..cfg };
            let (p0, _) = loss_total(&x, &xw, &d, &dw, &y, &yw, &s, &zero).unwrap();
            assert_eq!(p0.total, p0.det + p0.det_warped);
        }
    }
}
