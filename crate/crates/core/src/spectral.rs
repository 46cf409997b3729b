//! Green values of translation-invariant models by torus quadrature.
//!
//! `G(z) = e^{-<pbar, k>} (2 pi)^{-d} int e^{i<k, xi>} / (U - V~(xi + i pbar)) dxi`
//! with `k = z / h` and a contour shift `pbar` inside the polar body.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finsler::dual_point;
use crate::hamiltonian::{dot, Fiber};
use crate::model::ModelSpec;
use crate::symbol::{phase_index, unit_roots};

/// Largest gradient magnitude of the fields tolerated for a model to count
/// as translation invariant.
pub const TI_TOLERANCE: f64 = 1e-12;

/// Refuse models whose fields vary in space, by sampled gradients.
pub fn check_translation_invariant(m: &ModelSpec) -> Result<()> {
    if m.is_structurally_translation_invariant() {
        return Ok(());
    }
    let d = m.dim();
    let mut worst: f64 = 0.0;
    for s in 0..64 {
        let x: Vec<f64> = (0..d).map(|i| ((s * (2 * i + 3) + i) % 17) as f64 * 0.37 - 3.0).collect();
        let pd = crate::hamiltonian::phase_derivs(m, &x, &vec![0.3; d])?;
        worst = worst.max(pd.dhdx.amax());
    }
    if worst > TI_TOLERANCE {
        return Err(Error::NotTranslationInvariant(worst));
    }
    Ok(())
}

/// `0.9 p(z / |z|)`, the default contour shift.
pub fn default_shift(m: &ModelSpec, k: &[i64]) -> Result<Vec<f64>> {
    let d = m.dim();
    if k.iter().all(|&a| a == 0) {
        return Ok(vec![0.0; d]);
    }
    let v: Vec<f64> = k.iter().map(|&a| a as f64).collect();
    let p = dual_point(m, &vec![0.0; d], &v)?.p;
    Ok(p.iter().map(|a| 0.9 * a).collect())
}

#[derive(Debug, Clone)]
pub struct SpectralValue {
    pub value: f64,
    /// imaginary part of the quadrature, which vanishes analytically
    pub imag_residual: f64,
    pub nodes: usize,
    pub shift: Vec<f64>,
    /// `U - T(pbar)`, a lower bound for the real part of the denominator
    pub margin: f64,
    /// relative rounding level of the quadrature sum
    pub noise: f64,
}

fn pairwise(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        // Neumaier summation on the leaves
        let mut s = 0.0;
        let mut c = 0.0;
        for &x in v {
            let t = s + x;
            if s.abs() >= x.abs() {
                c += (s - t) + x;
            } else {
                c += (x - t) + s;
            }
            s = t;
        }
        return s + c;
    }
    let mid = v.len() / 2;
    pairwise(&v[..mid]) + pairwise(&v[mid..])
}

/// Trapezoid quadrature with `n` nodes per dimension; `k = z / h`.
pub fn green_spectral_nodes(m: &ModelSpec, k: &[i64], shift: &[f64], n: usize) -> Result<SpectralValue> {
    let d = m.dim();
    if d > 3 {
        return Err(Error::InvalidInput("spectral quadrature is limited to d <= 3".into()));
    }
    if k.len() != d || shift.len() != d {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    check_translation_invariant(m)?;
    let origin = vec![0.0; d];
    let fiber = Fiber::at(m, &origin)?;
    let u = fiber.onsite_u();
    let margin = -fiber.h(shift);
    if margin < 1e-10 {
        return Err(Error::DenominatorMargin(margin));
    }
    let mut re_w = Vec::new();
    let mut im_w = Vec::new();
    let mut offs: Vec<Vec<i64>> = Vec::new();
    for (i, pair) in m.pairs().iter().enumerate() {
        let v = m.pair_v_by_index(i, &origin)?;
        let a = dot(&pair.offset_f64(), shift);
        re_w.push(2.0 * v * a.cosh());
        im_w.push(-2.0 * v * a.sinh());
        offs.push(pair.offset.clone());
    }
    let (cs, sn) = unit_roots(n);

    let slices: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j0| {
            let inner = n.pow(d as u32 - 1);
            let mut re = Vec::with_capacity(inner);
            let mut im = Vec::with_capacity(inner);
            let mut abs_sum = Vec::with_capacity(inner);
            let mut j = vec![0usize; d];
            j[0] = j0;
            for flat in 0..inner {
                let mut r = flat;
                for a in 1..d {
                    j[a] = r % n;
                    r /= n;
                }
                let mut den_re = u;
                let mut den_im = 0.0;
                for ((l, wr), wi) in offs.iter().zip(&re_w).zip(&im_w) {
                    let q = phase_index(l, &j, n);
                    den_re -= wr * cs[q];
                    den_im -= wi * sn[q];
                }
                let q = phase_index(k, &j, n);
                let (c, s) = (cs[q], sn[q]);
                let inv = 1.0 / (den_re * den_re + den_im * den_im);
                // e^{i phase} / den
                let fr = (c * den_re + s * den_im) * inv;
                let fi = (s * den_re - c * den_im) * inv;
                abs_sum.push(inv.sqrt());
                re.push(fr);
                im.push(fi);
            }
            (pairwise(&re), pairwise(&im), pairwise(&abs_sum))
        })
        .collect();
    let re_rows: Vec<f64> = slices.iter().map(|s| s.0).collect();
    let im_rows: Vec<f64> = slices.iter().map(|s| s.1).collect();
    let abs_total: f64 = slices.iter().map(|s| s.2).sum();
    let total = (n as f64).powi(d as i32);
    let sum_re = pairwise(&re_rows) / total;
    let sum_im = pairwise(&im_rows) / total;
    let scale = (-dot(&k.iter().map(|&a| a as f64).collect::<Vec<_>>(), shift)).exp();
    // condition number of the sum times the pairwise rounding growth
    let noise = if sum_re != 0.0 {
        4.0 * f64::EPSILON * total.log2().max(1.0).sqrt() * (abs_total / total) / sum_re.abs()
    } else {
        f64::INFINITY
    };
    Ok(SpectralValue {
        value: scale * sum_re,
        imag_residual: (scale * sum_im).abs(),
        nodes: n,
        shift: shift.to_vec(),
        margin,
        noise,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub start: usize,
    pub rel_tol: f64,
    /// node cap per dimension
    pub cap: usize,
}

impl RefineOptions {
    pub fn for_dim(d: usize) -> Self {
        RefineOptions {
            start: 16,
            rel_tol: 1e-12,
            cap: if d <= 2 { 4096 } else { 256 },
        }
    }
}

/// Rounding levels above this mean the result is lost in cancellation.
const NOISE_LIMIT: f64 = 1e-8;

/// Double the node count until successive values agree to `rel_tol`, or to
/// the rounding level of the sum when that is larger.
pub fn quadrature_refine(m: &ModelSpec, k: &[i64], shift: &[f64], opts: &RefineOptions) -> Result<SpectralValue> {
    // fewer nodes than 2|k| alias the coefficient onto lower frequencies
    let kmax = k.iter().map(|a| a.unsigned_abs() as usize).max().unwrap_or(0);
    let mut n = opts.start.max(2 * kmax + 2 * m.radius() as usize + 3).next_power_of_two();
    let mut prev = green_spectral_nodes(m, k, shift, n)?;
    loop {
        let next_n = 2 * n;
        if next_n > opts.cap {
            return Err(Error::QuadratureCap(opts.cap));
        }
        let cur = green_spectral_nodes(m, k, shift, next_n)?;
        let tol = opts.rel_tol.max(cur.noise);
        if cur.noise <= NOISE_LIMIT && (cur.value - prev.value).abs() <= tol * cur.value.abs() {
            return Ok(cur);
        }
        prev = cur;
        n = next_n;
    }
}

/// `(E''(0)^{-1})_{xy}` for `x - y = h k` with the default shift.
pub fn green_spectral(m: &ModelSpec, k: &[i64]) -> Result<SpectralValue> {
    let shift = default_shift(m, k)?;
    quadrature_refine(m, k, &shift, &RefineOptions::for_dim(m.dim()))
}
