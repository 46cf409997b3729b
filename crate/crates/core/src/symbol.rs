//! The trigonometric symbol `V~(x, xi) = sum_l V(x, l) e^{i<xi, l>}` and the
//! Weyl-quantization identity `E''(0) = Op(U_h - V~)` on the lattice.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::dot;
use crate::model::{LatticeSite, ModelSpec};

/// `V~(x, xi + i p)` from the cosh/sin decomposition over `+-` pairs.
pub fn v_tilde(m: &ModelSpec, x: &[f64], xi: &[f64], p: &[f64]) -> Result<Complex64> {
    let mut re = 0.0;
    let mut im = 0.0;
    for (i, pair) in m.pairs().iter().enumerate() {
        let v = m.pair_v_by_index(i, x)?;
        let l = pair.offset_f64();
        let (a, b) = (dot(&l, p), dot(&l, xi));
        re += 2.0 * v * a.cosh() * b.cos();
        im -= 2.0 * v * a.sinh() * b.sin();
    }
    Ok(Complex64::new(re, im))
}

/// `sum_{all l} V(x, l) exp(i <l, xi + i p>)`, summed term by term.
pub fn v_tilde_direct(m: &ModelSpec, x: &[f64], xi: &[f64], p: &[f64]) -> Result<Complex64> {
    let mut s = Complex64::new(0.0, 0.0);
    for (i, pair) in m.pairs().iter().enumerate() {
        let v = m.pair_v_by_index(i, x)?;
        let l = pair.offset_f64();
        for sign in [1.0, -1.0] {
            let z = Complex64::new(sign * dot(&l, xi), sign * dot(&l, p));
            s += v * (Complex64::i() * z).exp();
        }
    }
    Ok(s)
}

/// `a(x, xi) = i V~(x, xi + i grad phi) - i U(x)` for a linear weight.
pub fn principal_symbol_a(m: &ModelSpec, x: &[f64], xi: &[f64], phi_grad: &[f64]) -> Result<Complex64> {
    let vt = v_tilde(m, x, xi, phi_grad)?;
    let u = m.onsite_u(x)?;
    Ok(Complex64::i() * (vt - u))
}

/// `cos(2 pi j / n), sin(2 pi j / n)` for `j = 0..n`.
pub(crate) fn unit_roots(n: usize) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|j| {
            let a = TAU * j as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip()
}

pub(crate) fn phase_index(k: &[i64], j: &[usize], n: usize) -> usize {
    let nn = n as i64;
    let mut s = 0i64;
    for (a, b) in k.iter().zip(j) {
        s = (s + a.rem_euclid(nn) * (*b as i64)) % nn;
    }
    s as usize
}

/// Iterate over all multi-indices of `[0, n)^d`.
pub(crate) fn for_each_node(d: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut j = vec![0usize; d];
    loop {
        f(&j);
        let mut a = 0;
        loop {
            if a == d {
                return;
            }
            j[a] += 1;
            if j[a] < n {
                break;
            }
            j[a] = 0;
            a += 1;
        }
    }
}

/// Trapezoid Fourier coefficient `h^d a^(x, z)` of `a = U_h(x) - V~(x, .)`
/// at `z = h k`, with `n` nodes per dimension. Returns real and imaginary
/// parts; the latter vanishes for an even symbol.
pub fn fourier_coefficient(m: &ModelSpec, x: &[f64], h: f64, k: &[i64], n: usize) -> Result<Complex64> {
    let d = m.dim();
    if k.len() != d {
        return Err(Error::InvalidInput("offset dimension mismatch".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("quadrature needs at least one node".into()));
    }
    let (cs, sn) = unit_roots(n);
    let uh = m.onsite_uh(x, h)?;
    let mut weights = Vec::with_capacity(m.pairs().len());
    let mut offs = Vec::with_capacity(m.pairs().len());
    for (i, pair) in m.pairs().iter().enumerate() {
        weights.push(2.0 * m.pair_v_by_index(i, x)?);
        offs.push(pair.offset.clone());
    }
    let mut re = 0.0;
    let mut im = 0.0;
    for_each_node(d, n, |j| {
        // a(x, xi) is real for real xi
        let mut a = uh;
        for (w, l) in weights.iter().zip(&offs) {
            a -= w * cs[phase_index(l, j, n)];
        }
        let q = phase_index(k, j, n);
        re += a * cs[q];
        im -= a * sn[q];
    });
    let norm = (n as f64).powi(d as i32);
    Ok(Complex64::new(re / norm, im / norm))
}

/// `|sum_y E''(x, y) f(y) - h^d sum_y a^((x + y)/2, y - x) f(y)|`, with the
/// Fourier coefficients of `U_h - V~` computed by quadrature.
pub fn verify_matrix_symbol_identity(
    m: &ModelSpec,
    h: f64,
    x: &LatticeSite,
    test_fn: &[(LatticeSite, f64)],
    n: usize,
) -> Result<f64> {
    let mut direct = 0.0;
    let mut weyl = 0.0;
    for (y, fy) in test_fn {
        if y.h != h || x.h != h {
            return Err(Error::MismatchedSpacing(x.h, y.h));
        }
        direct += m.matrix_entry(x, y)? * fy;
        let mid: Vec<f64> = x.k.iter().zip(&y.k).map(|(a, b)| 0.5 * h * (a + b) as f64).collect();
        let k: Vec<i64> = y.k.iter().zip(&x.k).map(|(a, b)| a - b).collect();
        weyl += fourier_coefficient(m, &mid, h, &k, n)?.re * fy;
    }
    Ok((direct - weyl).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::hamiltonian;
    use crate::model::examples::{model_a, model_b};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_a_values() {
        let a = model_a();
        let v = v_tilde(&a, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v.re - 1.6).abs() < 1e-15 && v.im == 0.0);
        let q = 0.7;
        let v = v_tilde(&a, &[0.0, 0.0], &[0.0, 0.0], &[q, 0.0]).unwrap();
        assert!((v.re - 0.8 * (q.cosh() + 1.0)).abs() < 1e-14);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn split_matches_direct_and_is_periodic() {
        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let xi: Vec<f64> = (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let p: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = v_tilde(&b, &x, &xi, &p).unwrap();
            let c = v_tilde_direct(&b, &x, &xi, &p).unwrap();
            assert!((a - c).norm() <= 1e-14 * a.norm().max(1.0));
            let shifted = [xi[0] + TAU, xi[1] - 2.0 * TAU];
            let s = v_tilde(&b, &x, &shifted, &p).unwrap();
            assert!((a - s).norm() <= 1e-13 * a.norm().max(1.0));
        }
    }

    #[test]
    fn principal_symbol_properties() {
        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let dir: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = crate::finsler::figuratrix_radius(&b, &x, &{
                let n = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
                vec![dir[0] / n, dir[1] / n]
            })
            .unwrap();
            let n = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
            let s: f64 = rng.gen_range(0.0..1.0);
            let phi = [s * r * dir[0] / n, s * r * dir[1] / n];
            let a0 = principal_symbol_a(&b, &x, &[0.0, 0.0], &phi).unwrap();
            let h = hamiltonian(&b, &x, &phi).unwrap();
            assert!(a0.re.abs() < 1e-14 && (a0.im - h).abs() < 1e-13);
            let xi: Vec<f64> = (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect();
            assert!(principal_symbol_a(&b, &x, &xi, &phi).unwrap().im <= 1e-14);
            // on the figuratrix the imaginary part vanishes on the dual lattice
            let phi1 = [r * dir[0] / n, r * dir[1] / n];
            let at = principal_symbol_a(&b, &x, &[TAU, -TAU], &phi1).unwrap();
            assert!(at.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_coefficients_of_the_symbol() {
        let b = model_b();
        let h = 0.125;
        let x = [0.3, -0.2];
        let n = 2 * b.radius() as usize + 3;
        for k in [[1i64, 0], [0, 1], [-1, 0], [0, -1]] {
            let c = fourier_coefficient(&b, &x, h, &k, n).unwrap();
            let v = b.pair_v(&x, &k).unwrap();
            assert!((c.re + v).abs() < 1e-13 && c.im.abs() < 1e-13);
        }
        for k in [[1i64, 1], [2, 0], [0, 3]] {
            let c = fourier_coefficient(&b, &x, h, &k, n).unwrap();
            assert!(c.norm() < 1e-13);
        }
        let c0 = fourier_coefficient(&b, &x, h, &[0, 0], n).unwrap();
        assert!((c0.re - b.onsite_uh(&x, h).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn matrix_symbol_identity() {
        let a = model_a();
        let h = 0.25;
        let x = LatticeSite::new(vec![2, -1], h);
        let y = LatticeSite::new(vec![3, -1], h);
        let r = verify_matrix_symbol_identity(&a, h, &x, &[(y, 1.0)], 5).unwrap();
        assert!(r <= 1e-12);

        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let cx: Vec<i64> = (0..2).map(|_| rng.gen_range(-20..20)).collect();
            let x = LatticeSite::new(cx.clone(), h);
            let mut f = Vec::new();
            for i in -2..=2 {
                for j in -2..=2 {
                    f.push((LatticeSite::new(vec![cx[0] + i, cx[1] + j], h), rng.gen_range(-1.0..1.0)));
                }
            }
            assert!(verify_matrix_symbol_identity(&b, h, &x, &f, 8).unwrap() <= 1e-12);
        }
    }
}
