//! Finite-box ground truth for `(E''(0)^{-1})_{xy}`.
//!
//! The operator is truncated to a box of `hZ^d` with Dirichlet conditions.
//! An optional tilt `pbar` conjugates it by `e^{<pbar, x>/h}`, which keeps
//! the solution of order one when the target entry is exponentially small.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finsler::{dual_point, radius_on_fiber, support_function};
use crate::hamiltonian::Fiber;
use crate::model::{LatticeSite, ModelSpec};

pub const DEFAULT_SITE_CAP: usize = 4_000_000;

/// Inclusive integer ranges per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxSpec {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl BoxSpec {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidInput(format!("empty box {lo:?}..{hi:?}")));
        }
        Ok(BoxSpec { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extents(&self) -> Vec<usize> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a + 1) as usize).collect()
    }

    pub fn sites(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.iter().zip(&self.lo).zip(&self.hi).all(|((a, lo), hi)| a >= lo && a <= hi)
    }

    /// Box grown by `by` sites on every side.
    pub fn grown(&self, by: i64) -> Self {
        BoxSpec {
            lo: self.lo.iter().map(|a| a - by).collect(),
            hi: self.hi.iter().map(|a| a + by).collect(),
        }
    }
}

/// Site numbering with the longest axis varying slowest, which keeps the
/// matrix bandwidth at `R` times the product of the shorter extents.
#[derive(Debug, Clone)]
struct Layout {
    lo: Vec<i64>,
    ext: Vec<usize>,
    /// stride per axis
    stride: Vec<usize>,
}

impl Layout {
    fn new(b: &BoxSpec) -> Self {
        let ext = b.extents();
        let mut order: Vec<usize> = (0..ext.len()).collect();
        order.sort_by_key(|&a| (ext[a], a));
        let mut stride = vec![0; ext.len()];
        let mut s = 1;
        for &a in &order {
            stride[a] = s;
            s *= ext[a];
        }
        Layout {
            lo: b.lo.clone(),
            ext,
            stride,
        }
    }

    fn index(&self, k: &[i64]) -> usize {
        k.iter()
            .zip(&self.lo)
            .zip(&self.stride)
            .map(|((a, lo), s)| (a - lo) as usize * s)
            .sum()
    }

    fn site(&self, mut idx: usize) -> Vec<i64> {
        let d = self.ext.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by_key(|&a| std::cmp::Reverse(self.stride[a]));
        let mut k = vec![0i64; d];
        for a in order {
            k[a] = self.lo[a] + (idx / self.stride[a]) as i64;
            idx %= self.stride[a];
        }
        k
    }
}

/// Sparse `E''(0)` restricted to a box, in compressed row form.
#[derive(Debug, Clone)]
pub struct BoxOperator {
    pub spec: BoxSpec,
    pub h: f64,
    pub tilt: Option<Vec<f64>>,
    layout: Layout,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// `min_rows (|a_ii| - sum_j |a_ij|)`
    pub dominance_margin: f64,
    pub bandwidth: usize,
}

impl BoxOperator {
    pub fn sites(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        self.spec.contains(k).then(|| self.layout.index(k))
    }

    pub fn site_of(&self, idx: usize) -> Vec<i64> {
        self.layout.site(idx)
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    /// Maximal number of off-diagonal entries in a row.
    pub fn max_off_diagonal(&self) -> usize {
        (0..self.sites()).map(|i| self.row(i).count() - 1).max().unwrap_or(0)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        });
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.sites()).all(|i| self.row(i).all(|(j, v)| self.entry(j, i) == v))
    }
}

/// Assemble `E''(0)` on a box, optionally tilted by `e^{<pbar, x - y>/h}`.
pub fn assemble(m: &ModelSpec, spec: &BoxSpec, h: f64, tilt: Option<&[f64]>, site_cap: usize) -> Result<BoxOperator> {
    let d = m.dim();
    if spec.dim() != d {
        return Err(Error::InvalidInput("box dimension mismatch".into()));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidInput(format!("spacing {h} outside (0, 1]")));
    }
    let n = spec.sites();
    if n > site_cap {
        return Err(Error::BoxCap { sites: n, cap: site_cap });
    }
    let layout = Layout::new(spec);
    let offsets: Vec<(usize, Vec<i64>, f64)> = m
        .pairs()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            let neg: Vec<i64> = p.offset.iter().map(|a| -a).collect();
            let t = |l: &[i64]| match tilt {
                // x - y = -h l
                Some(pb) => (-pb.iter().zip(l).map(|(a, b)| a * *b as f64).sum::<f64>()).exp(),
                None => 1.0,
            };
            let (tp, tn) = (t(&p.offset), t(&neg));
            [(i, p.offset.clone(), tp), (i, neg, tn)]
        })
        .collect();

    let rows: Vec<Result<(Vec<usize>, Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let k = layout.site(idx);
            let x: Vec<f64> = k.iter().map(|&a| h * a as f64).collect();
            let mut entries = vec![(idx, m.onsite_uh(&x, h)?)];
            for (pi, l, t) in &offsets {
                let nb: Vec<i64> = k.iter().zip(l).map(|(a, b)| a + b).collect();
                if !spec.contains(&nb) {
                    continue;
                }
                let mid: Vec<f64> = k.iter().zip(l).map(|(a, b)| h * (*a as f64 + 0.5 * *b as f64)).collect();
                let v = m.pair_v_by_index(*pi, &mid)?;
                entries.push((layout.index(&nb), -v * t));
            }
            entries.sort_by_key(|e| e.0);
            let diag = entries.iter().find(|e| e.0 == idx).map(|e| e.1.abs()).unwrap_or(0.0);
            let off: f64 = entries.iter().filter(|e| e.0 != idx).map(|e| e.1.abs()).sum();
            let (c, v) = entries.into_iter().unzip();
            Ok((c, v, diag - off))
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut margin = f64::INFINITY;
    let mut bandwidth = 0usize;
    row_ptr.push(0);
    for (i, r) in rows.into_iter().enumerate() {
        let (c, v, mg) = r?;
        margin = margin.min(mg);
        for &j in &c {
            bandwidth = bandwidth.max(j.abs_diff(i));
        }
        cols.extend(c);
        vals.extend(v);
        row_ptr.push(cols.len());
    }
    Ok(BoxOperator {
        spec: spec.clone(),
        h,
        tilt: tilt.map(|t| t.to_vec()),
        layout,
        row_ptr,
        cols,
        vals,
        dominance_margin: margin,
        bandwidth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// banded LU without pivoting, for the (possibly tilted) diagonally
    /// dominant matrix
    BandedLu,
    /// Jacobi-preconditioned conjugate gradients, untilted only
    ConjugateGradient,
}

/// Dense band storage LU, `L` unit lower triangular.
struct BandLu {
    n: usize,
    bw: usize,
    /// row `i`, column `j` at `i * (2 bw + 1) + (j + bw - i)`
    a: Vec<f64>,
}

impl BandLu {
    fn factor(op: &BoxOperator) -> Result<Self> {
        let n = op.sites();
        let bw = op.bandwidth;
        let w = 2 * bw + 1;
        let mut a = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in op.row(i) {
                a[i * w + j + bw - i] = v;
            }
        }
        for k in 0..n {
            let piv = a[k * w + bw];
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::SolverBreakdown(format!("zero pivot at row {k}")));
            }
            let iend = (k + bw + 1).min(n);
            let (head, tail) = a.split_at_mut((k + 1) * w);
            let krow = &head[k * w..];
            tail[..(iend - k - 1) * w].par_chunks_mut(w).enumerate().for_each(|(off, row)| {
                let i = k + 1 + off;
                let lik_pos = k + bw - i;
                let l = row[lik_pos] / piv;
                if l == 0.0 {
                    return;
                }
                row[lik_pos] = l;
                for j in (k + 1)..iend {
                    let ukj = krow[j + bw - k];
                    if ukj != 0.0 {
                        row[j + bw - i] -= l * ukj;
                    }
                }
            });
        }
        Ok(BandLu { n, bw, a })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = 2 * bw + 1;
        let mut x = b.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut s = x[i];
            for j in j0..i {
                s -= self.a[i * w + j + bw - i] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let j1 = (i + bw + 1).min(n);
            let mut s = x[i];
            for j in i + 1..j1 {
                s -= self.a[i * w + j + bw - i] * x[j];
            }
            x[i] = s / self.a[i * w + bw];
        }
        x
    }
}

fn residual(op: &BoxOperator, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut ax = vec![0.0; x.len()];
    op.matvec(x, &mut ax);
    b.iter().zip(&ax).map(|(a, c)| a - c).collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn pcg(op: &BoxOperator, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let diag: Vec<f64> = (0..n).map(|i| op.entry(i, i)).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = DVector::from_column_slice(b).norm();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, c)| a * c).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        op.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, c)| a * c).sum();
        if pap <= 0.0 {
            return Err(Error::SolverBreakdown("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        if rn <= rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, c)| a * c).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        what: "conjugate gradients",
        iterations: max_iter,
        residual: r.iter().map(|a| a * a).sum::<f64>().sqrt() / bnorm,
    })
}

/// The column `G(., y)` on the box.
#[derive(Debug, Clone)]
pub struct GreenColumn {
    pub y: Vec<i64>,
    /// untilted values `G(z, y)` in site order
    pub values: Vec<f64>,
    /// solution of the (tilted) system
    pub tilted: Vec<f64>,
    /// relative residual `|b - A u|_inf / |b|_inf` of the solved system
    pub residual: f64,
    pub solver: Solver,
}

impl GreenColumn {
    pub fn value_at(&self, op: &BoxOperator, k: &[i64]) -> Option<f64> {
        op.index_of(k).map(|i| self.values[i])
    }
}

pub fn green_column(op: &BoxOperator, y: &[i64], solver: Solver) -> Result<GreenColumn> {
    let n = op.sites();
    let iy = op
        .index_of(y)
        .ok_or_else(|| Error::InvalidInput(format!("site {y:?} lies outside the box")))?;
    let mut b = vec![0.0; n];
    b[iy] = 1.0;
    let u = match solver {
        Solver::BandedLu => {
            let lu = BandLu::factor(op)?;
            let mut u = lu.solve(&b);
            for _ in 0..2 {
                let r = residual(op, &u, &b);
                if inf_norm(&r) <= 1e-15 {
                    break;
                }
                let c = lu.solve(&r);
                u.iter_mut().zip(&c).for_each(|(a, d)| *a += d);
            }
            u
        }
        Solver::ConjugateGradient => {
            if op.tilt.is_some() {
                return Err(Error::InvalidInput("conjugate gradients need the untilted symmetric operator".into()));
            }
            pcg(op, &b, 1e-14, 20 * n + 100)?
        }
    };
    let res = inf_norm(&residual(op, &u, &b));
    let tol = if op.tilt.is_some() { 1e-11 } else { 1e-13 };
    if !(res <= tol) {
        return Err(Error::SolverBreakdown(format!("relative residual {res:e} above {tol:e}")));
    }
    let values = match &op.tilt {
        None => u.clone(),
        Some(pb) => (0..n)
            .map(|i| {
                let z = op.site_of(i);
                let s: f64 = pb.iter().zip(z.iter().zip(y)).map(|(p, (a, c))| p * (a - c) as f64).sum();
                u[i] * (-s).exp()
            })
            .collect(),
    };
    Ok(GreenColumn {
        y: y.to_vec(),
        values,
        tilted: u,
        residual: res,
        solver,
    })
}

fn boundary_points(spec: &BoxSpec, h: f64, per_face: usize) -> Vec<Vec<f64>> {
    let d = spec.dim();
    let mut pts = Vec::new();
    for axis in 0..d {
        for side in [spec.lo[axis], spec.hi[axis]] {
            let others: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
            let m = per_face.max(2);
            let count = m.pow(others.len() as u32);
            for flat in 0..count {
                let mut p = vec![0.0; d];
                p[axis] = h * side as f64;
                let mut r = flat;
                for &a in &others {
                    let t = (r % m) as f64 / (m - 1) as f64;
                    r /= m;
                    p[a] = h * (spec.lo[a] as f64 + t * (spec.hi[a] - spec.lo[a]) as f64);
                }
                pts.push(p);
            }
        }
    }
    pts
}

/// Smallest box around `x` and `y` whose boundary is at least
/// `h ln(1 / target)` in excess path length away, measured with the metric
/// frozen at the midpoint. The margin is never below `2 R h`.
pub fn choose_box(m: &ModelSpec, x: &LatticeSite, y: &LatticeSite, target: f64, site_cap: usize) -> Result<BoxSpec> {
    if x.h != y.h {
        return Err(Error::MismatchedSpacing(x.h, y.h));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidInput(format!("target {target} outside (0, 1)")));
    }
    let h = x.h;
    let d = m.dim();
    let lo: Vec<i64> = x.k.iter().zip(&y.k).map(|(a, b)| *a.min(b)).collect();
    let hi: Vec<i64> = x.k.iter().zip(&y.k).map(|(a, b)| *a.max(b)).collect();
    let core = BoxSpec::new(lo, hi)?;
    let floor = 2 * m.radius() as i64;
    let need = h * (1.0 / target).ln();
    let center: Vec<f64> = x.point().iter().zip(y.point()).map(|(a, b)| 0.5 * (a + b)).collect();
    let xp = x.point();
    let yp = y.point();
    let f = |v: &[f64]| support_function(m, &center, v);
    let direct = f(&xp.iter().zip(&yp).map(|(a, b)| a - b).collect::<Vec<_>>())?;
    let per_face = if d == 2 { 64 } else { 16 };
    let excess = |margin: i64| -> Result<f64> {
        let b = core.grown(margin);
        let mut worst = f64::INFINITY;
        for z in boundary_points(&b, h, per_face) {
            let a: Vec<f64> = xp.iter().zip(&z).map(|(p, q)| p - q).collect();
            let c: Vec<f64> = z.iter().zip(&yp).map(|(p, q)| p - q).collect();
            worst = worst.min(f(&a)? + f(&c)? - direct);
        }
        Ok(worst)
    };
    let mut hi_m = floor.max(1);
    while excess(hi_m)? < need {
        hi_m *= 2;
        if core.grown(hi_m).sites() > site_cap {
            return Err(Error::BoxCap {
                sites: core.grown(hi_m).sites(),
                cap: site_cap,
            });
        }
    }
    let mut lo_m = floor.max(hi_m / 2);
    if lo_m < hi_m && excess(lo_m)? >= need {
        hi_m = lo_m;
    }
    while hi_m - lo_m > 1 {
        let mid = (lo_m + hi_m) / 2;
        if excess(mid)? >= need {
            hi_m = mid;
        } else {
            lo_m = mid;
        }
    }
    let b = core.grown(hi_m.max(floor));
    if b.sites() > site_cap {
        return Err(Error::BoxCap {
            sites: b.sites(),
            cap: site_cap,
        });
    }
    Ok(b)
}

/// `0.9 p(x - y)` at the midpoint, shrunk further so that it stays inside
/// the polar body at every sampled site of the box.
pub fn default_tilt(m: &ModelSpec, x: &LatticeSite, y: &LatticeSite, spec: &BoxSpec) -> Result<Vec<f64>> {
    let d = m.dim();
    let v: Vec<f64> = x.k.iter().zip(&y.k).map(|(a, b)| (a - b) as f64).collect();
    if v.iter().all(|&a| a == 0.0) {
        return Ok(vec![0.0; d]);
    }
    let h = x.h;
    let center: Vec<f64> = x.point().iter().zip(y.point()).map(|(a, b)| 0.5 * (a + b)).collect();
    let p = dual_point(m, &center, &v)?.p;
    let r0 = p.norm();
    let u = &p / r0;
    let mut ratio: f64 = 1.0;
    let ext = spec.extents();
    let steps = 20usize;
    let count = (steps + 1).pow(d as u32);
    for flat in 0..count {
        let mut r = flat;
        let mut z = vec![0.0; d];
        for a in 0..d {
            let t = (r % (steps + 1)) as f64 / steps as f64;
            r /= steps + 1;
            z[a] = h * (spec.lo[a] as f64 + t * (ext[a] - 1) as f64);
        }
        let rz = radius_on_fiber(&Fiber::at(m, &z)?, u.as_slice())?;
        ratio = ratio.min(rz / r0);
    }
    Ok(p.iter().map(|a| 0.9 * ratio * a).collect())
}

#[derive(Debug, Clone)]
pub enum Tilt {
    None,
    Default,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct LatticeOptions {
    pub target: f64,
    pub tilt: Tilt,
    pub solver: Solver,
    pub site_cap: usize,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        LatticeOptions {
            target: 1e-10,
            tilt: Tilt::Default,
            solver: Solver::BandedLu,
            site_cap: DEFAULT_SITE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatticeValue {
    pub value: f64,
    pub spec: BoxSpec,
    pub sites: usize,
    pub tilt: Option<Vec<f64>>,
    pub residual: f64,
}

/// `(E''(0)^{-1})_{xy}` from a box solve.
pub fn lattice_green(m: &ModelSpec, x: &LatticeSite, y: &LatticeSite, opts: &LatticeOptions) -> Result<LatticeValue> {
    let spec = choose_box(m, x, y, opts.target, opts.site_cap)?;
    lattice_green_on(m, x, y, &spec, opts)
}

pub fn lattice_green_on(m: &ModelSpec, x: &LatticeSite, y: &LatticeSite, spec: &BoxSpec, opts: &LatticeOptions) -> Result<LatticeValue> {
    let tilt = match &opts.tilt {
        Tilt::None => None,
        Tilt::Default => Some(default_tilt(m, x, y, spec)?),
        Tilt::Fixed(p) => Some(p.clone()),
    };
    if let Some(pb) = &tilt {
        let h_at = Fiber::at(m, &x.point())?.h(pb);
        if h_at >= 0.0 {
            return Err(Error::InvalidInput(format!("tilt {pb:?} lies outside the polar body")));
        }
    }
    let op = assemble(m, spec, x.h, tilt.as_deref(), opts.site_cap)?;
    if op.tilt.is_none() && op.dominance_margin <= 0.0 {
        return Err(Error::Hypothesis(format!(
            "box operator is not strictly diagonally dominant (margin {:e})",
            op.dominance_margin
        )));
    }
    let col = green_column(&op, &y.k, opts.solver)?;
    let value = col
        .value_at(&op, &x.k)
        .ok_or_else(|| Error::InvalidInput("x lies outside the box".into()))?;
    Ok(LatticeValue {
        value,
        spec: spec.clone(),
        sites: op.sites(),
        tilt,
        residual: col.residual,
    })
}
