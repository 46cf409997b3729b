//! Quadratic data of the spin model at the zero configuration.
//!
//! A model is given by the on-site curvature field `dpp(x) = D''(x, 0)` and
//! one pair-curvature field `wpp[l](x) = W''(x, l, 0)` per offset pair
//! `{l, -l}` with `0 < |l| <= R`. From these we derive
//!
//! * `V(x, l) = J * wpp[l](x)`
//! * `U(x)    = dpp(x) + sum_l V(x, l)`
//! * `U_h(x)  = dpp(x) + J * sum_l wpp[l](x + h l / 2)`
//!
//! and the lattice Hessian `E''(0)` on `h Z^d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::ScalarField;
use crate::finsler;
use crate::jet::{Jet, MAX_DIM};

/// An offset pair `{l, -l}`, stored by its canonical representative (first
/// nonzero coordinate positive).
#[derive(Debug, Clone, PartialEq)]
pub struct PairField {
    pub offset: Vec<i64>,
    pub wpp: ScalarField,
}

impl PairField {
    pub fn offset_f64(&self) -> Vec<f64> {
        self.offset.iter().map(|&o| o as f64).collect()
    }

    pub fn is_unit(&self) -> bool {
        norm2(&self.offset) == 1
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    dim: usize,
    radius: u32,
    coupling: f64,
    dpp: ScalarField,
    pairs: Vec<PairField>,
}

fn norm2(l: &[i64]) -> i64 {
    l.iter().map(|v| v * v).sum()
}

/// Canonical representative of `{l, -l}` and whether `l` itself was flipped.
pub fn canonical(l: &[i64]) -> (Vec<i64>, bool) {
    match l.iter().find(|&&v| v != 0) {
        Some(&first) if first < 0 => (l.iter().map(|v| -v).collect(), true),
        _ => (l.to_vec(), false),
    }
}

/// All canonical offsets `l` with `0 < |l| <= radius`, in lexicographic order.
pub fn canonical_offsets(dim: usize, radius: u32) -> Vec<Vec<i64>> {
    let r = radius as i64;
    let mut out = Vec::new();
    let mut cur = vec![-r; dim];
    loop {
        let n2 = norm2(&cur);
        if n2 > 0 && n2 <= r * r && canonical(&cur).1 == false {
            out.push(cur.clone());
        }
        let mut k = dim;
        loop {
            if k == 0 {
                out.sort();
                return out;
            }
            k -= 1;
            if cur[k] < r {
                cur[k] += 1;
                break;
            }
            cur[k] = -r;
        }
    }
}

impl ModelSpec {
    /// Builds a model. `wpp` lists `(offset, field)`; offsets may be given in
    /// either orientation but each pair at most once. Pairs in range that are
    /// not listed get the zero field.
    pub fn new(
        dim: usize,
        radius: u32,
        coupling: f64,
        dpp: ScalarField,
        wpp: Vec<(Vec<i64>, ScalarField)>,
    ) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidInput(format!(
                "dimension must be in 2..={MAX_DIM}, got {dim}"
            )));
        }
        if radius < 1 {
            return Err(Error::InvalidInput("interaction radius must be >= 1".into()));
        }
        if !(coupling > 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidInput(format!("coupling must be > 0, got {coupling}")));
        }
        if dpp.dim() != dim {
            return Err(Error::InvalidInput("dpp field has the wrong dimension".into()));
        }
        let mut pairs: Vec<PairField> = canonical_offsets(dim, radius)
            .into_iter()
            .map(|offset| PairField {
                offset,
                wpp: ScalarField::constant(0.0, dim),
            })
            .collect();
        let mut seen = vec![false; pairs.len()];
        for (l, field) in wpp {
            if l.len() != dim {
                return Err(Error::InvalidInput(format!("offset {l:?} has wrong length")));
            }
            if field.dim() != dim {
                return Err(Error::InvalidInput("wpp field has the wrong dimension".into()));
            }
            let (c, _) = canonical(&l);
            let Some(idx) = pairs.iter().position(|p| p.offset == c) else {
                return Err(Error::OffsetOutOfRange(l));
            };
            if seen[idx] {
                return Err(Error::InvalidInput(format!(
                    "offset pair {c:?} given twice (wpp[l] and wpp[-l] share one field)"
                )));
            }
            seen[idx] = true;
            pairs[idx].wpp = field;
        }
        Ok(ModelSpec {
            dim,
            radius,
            coupling,
            dpp,
            pairs,
        })
    }

    /// Same field for every unit offset; longer offsets get zero.
    pub fn nearest_neighbour(dim: usize, coupling: f64, dpp: ScalarField, wpp: ScalarField) -> Result<Self> {
        let wpp = (0..dim)
            .map(|i| {
                let mut l = vec![0; dim];
                l[i] = 1;
                (l, wpp.clone())
            })
            .collect();
        ModelSpec::new(dim, 1, coupling, dpp, wpp)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn dpp(&self) -> &ScalarField {
        &self.dpp
    }

    pub fn pairs(&self) -> &[PairField] {
        &self.pairs
    }

    /// True if no field depends on position.
    pub fn is_structurally_translation_invariant(&self) -> bool {
        self.dpp.is_constant() && self.pairs.iter().all(|p| p.wpp.is_constant())
    }

    fn pair_index(&self, l: &[i64]) -> Result<usize> {
        let n2 = norm2(l);
        if l.len() != self.dim || n2 == 0 || n2 > (self.radius as i64).pow(2) {
            return Err(Error::OffsetOutOfRange(l.to_vec()));
        }
        let (c, _) = canonical(l);
        self.pairs
            .iter()
            .position(|p| p.offset == c)
            .ok_or(Error::OffsetOutOfRange(l.to_vec()))
    }

    /// `V(x, l) = J * wpp[l](x)`.
    pub fn pair_v(&self, x: &[f64], l: &[i64]) -> Result<f64> {
        let i = self.pair_index(l)?;
        Ok(self.coupling * self.pairs[i].wpp.eval(x)?)
    }

    /// `V(x, l)` for the pair with index `i` in [`ModelSpec::pairs`].
    pub fn pair_v_by_index(&self, i: usize, x: &[f64]) -> Result<f64> {
        Ok(self.coupling * self.pairs[i].wpp.eval(x)?)
    }

    pub fn pair_v_jet(&self, i: usize, x: &[f64]) -> Result<Jet> {
        let j = self.pairs[i].wpp.eval_jet(x)?;
        let mut out = j;
        out.v *= self.coupling;
        for a in 0..MAX_DIM {
            out.g[a] *= self.coupling;
            for b in 0..MAX_DIM {
                out.h[a][b] *= self.coupling;
            }
        }
        Ok(out)
    }

    /// `U(x) = dpp(x) + sum over all offsets of V(x, l)`.
    pub fn onsite_u(&self, x: &[f64]) -> Result<f64> {
        let mut u = self.dpp.eval(x)?;
        for i in 0..self.pairs.len() {
            u += 2.0 * self.pair_v_by_index(i, x)?;
        }
        Ok(u)
    }

    /// `U_h(x) = dpp(x) + J * sum over all offsets of wpp[l](x + h l / 2)`.
    pub fn onsite_uh(&self, x: &[f64], h: f64) -> Result<f64> {
        let mut u = self.dpp.eval(x)?;
        let mut shifted = vec![0.0; self.dim];
        for p in &self.pairs {
            for sign in [1.0, -1.0] {
                for k in 0..self.dim {
                    shifted[k] = x[k] + sign * 0.5 * h * p.offset[k] as f64;
                }
                u += self.coupling * p.wpp.eval(&shifted)?;
            }
        }
        Ok(u)
    }

    /// Entry `(E''(0))_{xy}` of the lattice Hessian.
    pub fn matrix_entry(&self, x: &LatticeSite, y: &LatticeSite) -> Result<f64> {
        if x.h != y.h {
            return Err(Error::MismatchedSpacing(x.h, y.h));
        }
        if x.k.len() != self.dim || y.k.len() != self.dim {
            return Err(Error::InvalidInput("site dimension mismatch".into()));
        }
        let diff: Vec<i64> = x.k.iter().zip(&y.k).map(|(a, b)| a - b).collect();
        let n2 = norm2(&diff);
        if n2 == 0 {
            return self.onsite_uh(&x.point(), x.h);
        }
        if n2 > (self.radius as i64).pow(2) {
            return Ok(0.0);
        }
        let mid: Vec<f64> = x
            .k
            .iter()
            .zip(&y.k)
            .map(|(a, b)| 0.5 * x.h * (a + b) as f64)
            .collect();
        Ok(-self.pair_v(&mid, &diff)?)
    }

    /// Sampled verification of the structural hypotheses on a box.
    pub fn check_hypotheses(&self, sample_box: &SampleBox, n_samples: usize, seed: u64) -> HypothesisReport {
        let d = self.dim;
        let points = sample_box.quasi_random(n_samples, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

        let mut errors = Vec::new();
        let mut inf_dpp = f64::INFINITY;
        let mut sup_dpp = f64::NEG_INFINITY;
        let mut min_wpp = f64::INFINITY;
        let mut min_wpp_unit = f64::INFINITY;
        let mut max_h0 = f64::NEG_INFINITY;
        let mut inf_f = f64::INFINITY;
        let mut f_failures = 0usize;

        for x in &points {
            match self.dpp.eval(x) {
                Ok(v) => {
                    inf_dpp = inf_dpp.min(v);
                    sup_dpp = sup_dpp.max(v);
                    // H(x, 0) = -dpp(x)
                    max_h0 = max_h0.max(-v);
                }
                Err(e) => errors.push(format!("dpp at {x:?}: {e}")),
            }
            for p in &self.pairs {
                match p.wpp.eval(x) {
                    Ok(v) => {
                        min_wpp = min_wpp.min(v);
                        if p.is_unit() {
                            min_wpp_unit = min_wpp_unit.min(v);
                        }
                    }
                    Err(e) => errors.push(format!("wpp{:?} at {x:?}: {e}", p.offset)),
                }
            }
        }

        // Support function on unit directions, sampled on a subset when the
        // polar body is well defined.
        if max_h0 < 0.0 {
            let n_dir = points.len().min(2000);
            for x in points.iter().take(n_dir) {
                let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n < 1e-3 {
                    v = vec![0.0; d];
                    v[0] = 1.0;
                } else {
                    v.iter_mut().for_each(|a| *a /= n);
                }
                match finsler::support_function(self, x, &v) {
                    Ok(f) => inf_f = inf_f.min(f),
                    Err(_) => f_failures += 1,
                }
            }
        }

        let mut checks = vec![
            Check::new("wpp >= 0", min_wpp >= 0.0, format!("min wpp = {min_wpp}")),
            Check::new(
                "wpp >= 1 on unit offsets",
                min_wpp_unit >= 1.0,
                format!("min unit wpp = {min_wpp_unit}"),
            ),
            Check::new(
                "2 inf dpp > sup dpp",
                2.0 * inf_dpp > sup_dpp,
                format!("inf dpp = {inf_dpp}, sup dpp = {sup_dpp}"),
            ),
            Check::new("H(x,0) < 0", max_h0 < 0.0, format!("max H(x,0) = {max_h0}")),
            Check::new(
                "inf F(x, unit v) > 0",
                max_h0 < 0.0 && inf_f > 0.0 && f_failures == 0,
                format!("inf F = {inf_f}, failed support evaluations = {f_failures}"),
            ),
        ];
        if !errors.is_empty() {
            checks.push(Check::new(
                "fields evaluable",
                false,
                format!("{} evaluation errors, first: {}", errors.len(), errors[0]),
            ));
        }
        HypothesisReport {
            samples: points.len(),
            inf_dpp,
            sup_dpp,
            min_wpp,
            min_wpp_unit,
            max_h_at_zero: max_h0,
            inf_support: inf_f,
            checks,
        }
    }
}

/// A point `h k` of the lattice `h Z^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSite {
    pub k: Vec<i64>,
    pub h: f64,
}

impl LatticeSite {
    pub fn new(k: Vec<i64>, h: f64) -> Self {
        LatticeSite { k, h }
    }

    /// The site at physical point `x`, if `x / h` is an integer vector.
    pub fn from_point(x: &[f64], h: f64) -> Result<Self> {
        let mut k = Vec::with_capacity(x.len());
        for &xi in x {
            let r = (xi / h).round();
            if (xi / h - r).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "point {x:?} is not on the lattice of spacing {h}"
                )));
            }
            k.push(r as i64);
        }
        Ok(LatticeSite { k, h })
    }

    pub fn point(&self) -> Vec<f64> {
        self.k.iter().map(|&k| k as f64 * self.h).collect()
    }
}

/// Axis-aligned box used for sampling field properties.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        SampleBox {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    /// Halton points with a seeded random rotation (Cranley-Patterson shift).
    pub fn quasi_random(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        const PRIMES: [u64; MAX_DIM] = [2, 3, 5, 7];
        let d = self.lo.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        (1..=n as u64)
            .map(|i| {
                (0..d)
                    .map(|k| {
                        let u = (radical_inverse(i, PRIMES[k]) + shift[k]).fract();
                        self.lo[k] + u * (self.hi[k] - self.lo[k])
                    })
                    .collect()
            })
            .collect()
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub samples: usize,
    pub inf_dpp: f64,
    pub sup_dpp: f64,
    pub min_wpp: f64,
    pub min_wpp_unit: f64,
    pub max_h_at_zero: f64,
    pub inf_support: f64,
    pub checks: Vec<Check>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// The bundled example models.
pub mod examples {
    use super::*;

    /// Translation-invariant nearest-neighbour model: `d = 2`, `J = 0.2`,
    /// `dpp = 1`, `wpp = 2`.
    pub fn model_a() -> ModelSpec {
        ModelSpec::nearest_neighbour(
            2,
            0.2,
            ScalarField::constant(1.0, 2),
            ScalarField::constant(2.0, 2),
        )
        .expect("model A is valid")
    }

    /// Position-dependent model: `dpp = 1 + 0.2 sin(x1 + x2)`,
    /// `wpp = 2 (1 + 0.1 cos x1)` on every unit offset.
    pub fn model_b() -> ModelSpec {
        ModelSpec::nearest_neighbour(
            2,
            0.2,
            ScalarField::parse("1 + 0.2*sin(x1 + x2)", 2).unwrap(),
            ScalarField::parse("2*(1 + 0.1*cos(x1))", 2).unwrap(),
        )
        .expect("model B is valid")
    }

    /// A model with a heavy mass bump midway between `(0,0)` and `(4,0)`,
    /// mirror symmetric in `x2`, so two geodesics of equal length pass on
    /// either side of it.
    pub fn model_bump() -> ModelSpec {
        ModelSpec::nearest_neighbour(
            2,
            0.2,
            ScalarField::parse(BUMP_DPP, 2).unwrap(),
            ScalarField::constant(2.0, 2),
        )
        .expect("bump model is valid")
    }

    pub const BUMP_DPP: &str = "1 + 0.9*exp(-((x1 - 2)*(x1 - 2) + x2*x2)/0.18)";
}
