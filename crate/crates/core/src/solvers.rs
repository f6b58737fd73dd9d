//! Direct linear solvers and Newton's method.
//!
//! Everything in this crate is solved with direct factorizations: banded LU
//! for chain-like operators, banded Cholesky for mass matrices, a bordered
//! (Schur complement) solve when a handful of dense enrichment columns is
//! appended to a banded Galerkin matrix, and dense LU/Cholesky otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{AccError, Result};

/// Relative pivot threshold below which a factorization reports a singular system.
const PIVOT_RTOL: f64 = 1e-13;

/// Square matrix with `kl` sub-diagonals and `ku` super-diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        m.data.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && i + self.ku >= j
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Column range `[lo, hi)` of the band in row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.kl), (i + self.ku + 1).min(self.n))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let (lo, hi) = self.row_range(i);
                (lo..hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                y[j] += self.data[self.idx(i, j)] * x[i];
            }
        }
        y
    }

    /// Applies the matrix to every column of `x`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n {
                let (lo, hi) = self.row_range(i);
                let mut s = 0.0;
                for j in lo..hi {
                    s += self.data[self.idx(i, j)] * x[(j, c)];
                }
                y[(i, c)] = s;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Copies the banded part of a dense matrix; entries outside the band are dropped.
    pub fn from_dense(a: &DMatrix<f64>, kl: usize, ku: usize) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let mut m = Self::zeros(a.nrows(), kl, ku);
        for i in 0..m.n {
            let (lo, hi) = m.row_range(i);
            for j in lo..hi {
                m.set(i, j, a[(i, j)]);
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Largest `|a_ij - a_ji|` over the band.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Row `i` of the matrix as dense values over its band range.
    pub fn row(&self, i: usize) -> (usize, Vec<f64>) {
        let (lo, hi) = self.row_range(i);
        (lo, (lo..hi).map(|j| self.get(i, j)).collect())
    }

    pub fn lu(&self) -> Result<BandLu> {
        BandLu::factor(self)
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::factor(self)
    }

    /// Eigenvalue counts `(negative, zero)` of the symmetric part, from an unpivoted `LDLᵀ`.
    pub fn inertia(&self) -> (usize, usize) {
        let n = self.n;
        let b = self.kl.max(self.ku);
        let sym = |i: usize, j: usize| 0.5 * (self.get(i, j) + self.get(j, i));
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        // l[i * b + (i - k - 1)] holds L[i][k] for k in i-b..i
        let mut l = vec![0.0; n * b.max(1)];
        let mut d = vec![0.0; n];
        let (mut neg, mut zero) = (0, 0);
        for j in 0..n {
            let lo = j.saturating_sub(b);
            let lj = |k: usize| l[j * b + (j - k - 1)];
            let mut dj = sym(j, j);
            for k in lo..j {
                dj -= lj(k) * lj(k) * d[k];
            }
            if dj.abs() <= 1e-14 * scale {
                zero += 1;
                dj = if dj < 0.0 { -1e-14 * scale } else { 1e-14 * scale };
            } else if dj < 0.0 {
                neg += 1;
            }
            d[j] = dj;
            for i in j + 1..(j + b + 1).min(n) {
                let lo_i = i.saturating_sub(b).max(lo);
                let mut v = sym(i, j);
                for k in lo_i..j {
                    v -= l[i * b + (i - k - 1)] * l[j * b + (j - k - 1)] * d[k];
                }
                l[i * b + (i - j - 1)] = v / dj;
            }
        }
        (neg, zero)
    }
}

/// LU factorization with partial pivoting of a band matrix, LAPACK `gbtrf` layout.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    fn factor(a: &BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let ldab = 2 * kl + ku + 1;
        let mut lu = Self { n, kl, ku, ldab, ab: vec![0.0; ldab * n], ipiv: vec![0; n] };
        for i in 0..n {
            let (lo, hi) = a.row_range(i);
            for j in lo..hi {
                *lu.at_mut(i, j) = a.get(i, j);
            }
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let kv = kl + ku;
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = lu.at(j, j).abs();
            for i in j + 1..=last {
                let v = lu.at(i, j).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= PIVOT_RTOL * scale {
                return Err(AccError::SingularSystem { row: j, pivot: best });
            }
            lu.ipiv[j] = p;
            let cmax = (j + kv).min(n - 1);
            if p != j {
                for c in j..=cmax {
                    let t = lu.at(j, c);
                    *lu.at_mut(j, c) = lu.at(p, c);
                    *lu.at_mut(p, c) = t;
                }
            }
            let piv = lu.at(j, j);
            for i in j + 1..=last {
                let l = lu.at(i, j) / piv;
                *lu.at_mut(i, j) = l;
                if l != 0.0 {
                    for c in j + 1..=cmax {
                        let u = lu.at(j, c);
                        *lu.at_mut(i, c) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[j * self.ldab + (self.kl + self.ku + i - j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.ab[j * self.ldab + (self.kl + self.ku + i - j)]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                for i in j + 1..=(j + self.kl).min(n - 1) {
                    b[i] -= self.at(i, j) * bj;
                }
            }
        }
        let kv = self.kl + self.ku;
        for j in (0..n).rev() {
            b[j] /= self.at(j, j);
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.at(i, j) * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for c in 0..x.ncols() {
            let mut col: Vec<f64> = x.column(c).iter().copied().collect();
            self.solve_in_place(&mut col);
            x.set_column(c, &DVector::from_vec(col));
        }
        x
    }
}

/// Cholesky factorization `A = L Lᵀ` of a symmetric positive-definite band matrix.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row-major lower band: `l[i * (bw + 1) + (j + bw - i)]` for `i - bw <= j <= i`.
    l: Vec<f64>,
}

impl BandCholesky {
    fn factor(a: &BandMatrix) -> Result<Self> {
        let bw = a.kl.max(a.ku);
        let n = a.n;
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                // symmetric input: read the lower triangle
                let mut s = a.get(i, j);
                for k in i.saturating_sub(bw).max(j.saturating_sub(bw))..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= PIVOT_RTOL * scale {
                        return Err(AccError::SingularSystem { row: i, pivot: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.l[i * (self.bw + 1) + self.bw]).collect()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Matrix of the form `[[core, right], [bottom, corner]]` with a banded core.
#[derive(Clone, Debug)]
pub struct BorderedMatrix {
    pub core: BandMatrix,
    pub right: DMatrix<f64>,
    pub bottom: DMatrix<f64>,
    pub corner: DMatrix<f64>,
}

impl BorderedMatrix {
    pub fn banded(core: BandMatrix) -> Self {
        let n = core.n();
        Self {
            core,
            right: DMatrix::zeros(n, 0),
            bottom: DMatrix::zeros(0, n),
            corner: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.core.n() + self.corner.nrows()
    }

    pub fn border(&self) -> usize {
        self.corner.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, k) = (self.core.n(), self.border());
        let mut d = DMatrix::zeros(n + k, n + k);
        d.view_mut((0, 0), (n, n)).copy_from(&self.core.to_dense());
        d.view_mut((0, n), (n, k)).copy_from(&self.right);
        d.view_mut((n, 0), (k, n)).copy_from(&self.bottom);
        d.view_mut((n, n), (k, k)).copy_from(&self.corner);
        d
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.core.n();
        let (x1, x2) = x.split_at(n);
        let x2 = DVector::from_column_slice(x2);
        let mut y1 = self.core.matvec(x1);
        let r = &self.right * &x2;
        y1.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
        let y2 = &self.bottom * DVector::from_column_slice(x1) + &self.corner * x2;
        y1.extend(y2.iter());
        y1
    }

    pub fn factor(&self) -> Result<BorderedLu> {
        let core = self.core.lu()?;
        let k = self.border();
        if k == 0 {
            return Ok(BorderedLu { core, y: None, bottom: self.bottom.clone(), schur: None });
        }
        let y = core.solve_dense(&self.right);
        let s = &self.corner - &self.bottom * &y;
        let schur = dense_lu_checked(&s)?;
        Ok(BorderedLu { core, y: Some(y), bottom: self.bottom.clone(), schur: Some(schur) })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.factor()?.solve(rhs))
    }

    /// Eigenvalue counts `(negative, zero)` of the symmetric part via the Schur complement of the core.
    pub fn inertia(&self) -> Result<(usize, usize)> {
        let (mut neg, mut zero) = self.core.inertia();
        if self.border() == 0 {
            return Ok((neg, zero));
        }
        let right = (&self.right + self.bottom.transpose()) * 0.5;
        let core = symmetric_part(&self.core);
        let y = core.lu()?.solve_dense(&right);
        let s = (&self.corner + self.corner.transpose()) * 0.5 - right.transpose() * y;
        let s = (&s + s.transpose()) * 0.5;
        let scale = s.amax().max(f64::MIN_POSITIVE);
        for ev in s.symmetric_eigenvalues().iter() {
            if ev.abs() <= 1e-14 * scale {
                zero += 1;
            } else if *ev < 0.0 {
                neg += 1;
            }
        }
        Ok((neg, zero))
    }
}

#[derive(Clone, Debug)]
pub struct BorderedLu {
    core: BandLu,
    y: Option<DMatrix<f64>>,
    bottom: DMatrix<f64>,
    schur: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl BorderedLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.core.n();
        let mut x1 = rhs[..n].to_vec();
        self.core.solve_in_place(&mut x1);
        let (Some(y), Some(schur)) = (&self.y, &self.schur) else {
            return x1;
        };
        let r2 = DVector::from_column_slice(&rhs[n..]);
        let t = r2 - &self.bottom * DVector::from_column_slice(&x1);
        let x2 = schur.solve(&t).expect("Schur complement checked at factorization");
        let corr = y * &x2;
        x1.iter_mut().zip(corr.iter()).for_each(|(a, b)| *a -= b);
        x1.extend(x2.iter());
        x1
    }
}

fn symmetric_part(a: &BandMatrix) -> BandMatrix {
    let b = a.kl().max(a.ku());
    let mut s = BandMatrix::zeros(a.n(), b, b);
    for i in 0..a.n() {
        let (lo, hi) = s.row_range(i);
        for j in lo..hi {
            s.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }
    s
}

fn dense_lu_checked(a: &DMatrix<f64>) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let lu = a.clone().lu();
    let u = lu.u();
    for i in 0..u.nrows() {
        if u[(i, i)].abs() <= PIVOT_RTOL * scale {
            return Err(AccError::SingularSystem { row: i, pivot: u[(i, i)].abs() });
        }
    }
    Ok(lu)
}

/// Structure assumed by [`direct_solve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    Spd,
    Symmetric,
    General,
}

/// Dense direct solve: Cholesky for SPD input, partially pivoted LU otherwise.
pub fn direct_solve(a: &DMatrix<f64>, rhs: &[f64], symmetry: Symmetry) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() {
        return Err(AccError::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    if rhs.len() != a.nrows() {
        return Err(AccError::DimensionMismatch { expected: a.nrows(), got: rhs.len() });
    }
    let b = DVector::from_column_slice(rhs);
    let x = match symmetry {
        Symmetry::Spd => {
            let chol = a.clone().cholesky().ok_or(AccError::SingularSystem { row: 0, pivot: 0.0 })?;
            let scale = a.amax().max(f64::MIN_POSITIVE);
            let l = chol.l_dirty();
            for i in 0..l.nrows() {
                let d = l[(i, i)] * l[(i, i)];
                if d <= PIVOT_RTOL * scale {
                    return Err(AccError::SingularSystem { row: i, pivot: d });
                }
            }
            chol.solve(&b)
        }
        Symmetry::Symmetric | Symmetry::General => {
            let lu = dense_lu_checked(a)?;
            lu.solve(&b).ok_or(AccError::SingularSystem { row: 0, pivot: 0.0 })?
        }
    };
    Ok(x.iter().copied().collect())
}

/// Step length control for Newton's method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StepControl {
    #[default]
    None,
    /// Halve the step until the residual max-norm decreases (at most 30 times).
    Halving,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub step_control: StepControl,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iters: 50, step_control: StepControl::None }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Residual max-norm before each iteration and after the last one.
    pub history: Vec<f64>,
}

/// A nonlinear system `r(x) = 0` together with solves against its Jacobian.
pub trait NewtonSystem {
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    /// Solves `J(x) dx = rhs` with `J = dr/dx`.
    fn solve_linearized(&self, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>>;

    /// Factor applied to the absolute tolerance at `x`.
    fn tolerance_scale(&self, _x: &[f64]) -> f64 {
        1.0
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn newton<S: NewtonSystem + ?Sized>(sys: &S, x0: Vec<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome> {
    let mut x = x0;
    let mut r = sys.residual(&x);
    let mut rn = max_norm(&r);
    let mut history = vec![rn];
    let mut it = 0;
    while rn > opts.tol * sys.tolerance_scale(&x) || !rn.is_finite() {
        if it >= opts.max_iters || !rn.is_finite() {
            return Err(AccError::NonConvergence { iterations: it, residual: rn });
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = sys.solve_linearized(&x, &neg).map_err(|e| match e {
            AccError::SingularSystem { .. } => AccError::SingularJacobian { iteration: it },
            other => other,
        })?;
        let mut step = 1.0;
        let mut trial: Vec<f64>;
        let mut tr: Vec<f64>;
        let mut halvings = 0;
        loop {
            trial = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            tr = sys.residual(&trial);
            let tn = max_norm(&tr);
            if opts.step_control == StepControl::None || tn < rn || halvings >= 30 {
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        x = trial;
        r = tr;
        rn = max_norm(&r);
        history.push(rn);
        it += 1;
    }
    Ok(NewtonOutcome { x, iterations: it, residual: rn, history })
}

struct DenseSystem<R, J> {
    residual_fn: R,
    jacobian_fn: J,
}

impl<R, J> NewtonSystem for DenseSystem<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        (self.residual_fn)(x)
    }

    fn solve_linearized(&self, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        direct_solve(&(self.jacobian_fn)(x), rhs, Symmetry::General)
    }
}

/// Newton's method with a dense Jacobian supplied as a closure.
pub fn newton_dense<R, J>(residual_fn: R, jacobian_fn: J, x0: Vec<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    newton(&DenseSystem { residual_fn, jacobian_fn }, x0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            let (lo, hi) = a.row_range(i);
            for j in lo..hi {
                a.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        a
    }

    #[test]
    fn band_lu_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (30, 2, 2), (40, 3, 1), (25, 0, 4)] {
            let mut a = random_band(n, kl, ku, &mut rng);
            // keep the triangular cases well conditioned
            for i in 0..n {
                a.add(i, i, 2.0);
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = a.lu().unwrap().solve(&b);
            let r = a.matvec(&x);
            let err = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} kl={kl} ku={ku} err={err}");
        }
    }

    #[test]
    fn band_lu_needs_pivoting() {
        // zero leading pivot
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 2, 2.0);
        a.set(2, 1, 1.0);
        a.set(2, 2, 1.0);
        let x = a.lu().unwrap().solve(&[1.0, 2.0, 3.0]);
        let r = a.matvec(&x);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn band_cholesky_solves_laplacian() {
        let n = 50;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, 2.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
                a.set(i - 1, i, -1.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let r = a.matvec(&x);
        assert!(r.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-11));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = BandMatrix::zeros(2, 1, 1);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 1.0);
        assert!(matches!(a.cholesky(), Err(AccError::SingularSystem { .. })));
    }

    #[test]
    fn bordered_solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let k = 5;
        let mut core = random_band(n, 2, 2, &mut rng);
        for i in 0..n {
            core.add(i, i, 6.0);
        }
        let m = BorderedMatrix {
            core,
            right: DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)),
            bottom: DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0)),
            corner: DMatrix::from_fn(k, k, |i, j| if i == j { 4.0 } else { 0.1 }),
        };
        let rhs: Vec<f64> = (0..n + k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = m.solve(&rhs).unwrap();
        let r = m.matvec(&x);
        assert!(r.iter().zip(&rhs).all(|(p, q)| (p - q).abs() < 1e-11));
        let xd = direct_solve(&m.to_dense(), &rhs, Symmetry::General).unwrap();
        assert!(x.iter().zip(&xd).all(|(p, q)| (p - q).abs() < 1e-11));
    }

    #[test]
    fn direct_solve_identity() {
        let a = DMatrix::<f64>::identity(4, 4);
        let x = direct_solve(&a, &[1.0, 2.0, 3.0, 4.0], Symmetry::Spd).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn direct_solve_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::from_fn(50, 50, |_, _| rng.random_range(-1.0..1.0));
        let a = &g * g.transpose() + DMatrix::identity(50, 50) * 50.0;
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = direct_solve(&a, &b, Symmetry::Spd).unwrap();
        let r = &a * DVector::from_vec(x) - DVector::from_vec(b.clone());
        assert!(r.norm() / DVector::from_vec(b).norm() <= 1e-12);
    }

    #[test]
    fn direct_solve_detects_rank_deficiency() {
        // third row = first + second
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 5.0, 7.0, 9.0]);
        let err = direct_solve(&a, &[1.0, 1.0, 2.0], Symmetry::General).unwrap_err();
        assert!(matches!(err, AccError::SingularSystem { .. }));
        let spd_fail = direct_solve(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), &[1.0, 1.0], Symmetry::Spd);
        assert!(matches!(spd_fail, Err(AccError::SingularSystem { .. })));
    }

    #[test]
    fn newton_affine_converges_in_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = [1.0, -2.0];
        let res = |x: &[f64]| {
            let v = &a * DVector::from_column_slice(x);
            vec![v[0] - b[0], v[1] - b[1]]
        };
        let out = newton_dense(res, |_| a.clone(), vec![0.0, 0.0], &NewtonOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn newton_cube_root() {
        let out = newton_dense(
            |x| vec![x[0].powi(3) - 8.0],
            |x| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]),
            vec![3.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-12);
        assert!(out.iterations <= 8, "{} iterations", out.iterations);
    }

    #[test]
    fn newton_with_perturbed_jacobian_degrades_to_linear_rate() {
        let exact = newton_dense(
            |x| vec![x[0].powi(3) - 8.0],
            |x| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]),
            vec![3.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        let faulty = newton_dense(
            |x| vec![x[0].powi(3) - 8.0],
            |x| DMatrix::from_element(1, 1, 1.3 * 3.0 * x[0] * x[0]),
            vec![3.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((faulty.x[0] - 2.0).abs() < 1e-12);
        assert!(faulty.iterations > exact.iterations + 5, "{} vs {}", faulty.iterations, exact.iterations);
        // linear convergence: successive residual ratios approach a constant
        let h = &faulty.history;
        let n = h.len();
        let r1 = h[n - 2] / h[n - 3];
        let r2 = h[n - 3] / h[n - 4];
        assert!((r1 - r2).abs() < 0.05, "ratios {r1} {r2}");
    }

    #[test]
    fn newton_reports_nonconvergence() {
        let opts = NewtonOptions { max_iters: 3, ..Default::default() };
        let err = newton_dense(
            |x| vec![x[0].atan()],
            |x| DMatrix::from_element(1, 1, 1.0 / (1.0 + x[0] * x[0])),
            vec![10.0],
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, AccError::NonConvergence { .. }));
    }

    #[test]
    fn newton_halving_rescues_atan() {
        let opts = NewtonOptions { step_control: StepControl::Halving, ..Default::default() };
        let out = newton_dense(
            |x| vec![x[0].atan()],
            |x| DMatrix::from_element(1, 1, 1.0 / (1.0 + x[0] * x[0])),
            vec![10.0],
            &opts,
        )
        .unwrap();
        assert!(out.x[0].abs() < 1e-12);
    }

    #[test]
    fn newton_is_deterministic() {
        let run = || {
            newton_dense(
                |x| vec![x[0].powi(3) - 8.0 + x[1], x[1] - 0.5 * x[0]],
                |x| DMatrix::from_row_slice(2, 2, &[3.0 * x[0] * x[0], 1.0, -0.5, 1.0]),
                vec![3.0, 0.0],
                &NewtonOptions::default(),
            )
            .unwrap()
            .x
        };
        let (a, b) = (run(), run());
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn inertia_counts_match_dense_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, b) in &[(12, 1), (40, 2), (30, 4)] {
            let mut a = BandMatrix::zeros(n, b, b);
            for i in 0..n {
                for j in i..(i + b + 1).min(n) {
                    let v = rng.random_range(-1.0..1.0) + if i == j { 2.0 * rng.random_range(-1.0..1.0) } else { 0.0 };
                    a.set(i, j, v);
                    a.set(j, i, v);
                }
            }
            let expected = a.to_dense().symmetric_eigenvalues().iter().filter(|v| **v < 0.0).count();
            assert_eq!(a.inertia(), (expected, 0));
            let k = 3;
            let right = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
            let corner = DMatrix::from_fn(k, k, |i, j| if i == j { -1.0 } else { 0.1 });
            let m = BorderedMatrix { core: a, bottom: right.transpose(), right, corner };
            let expected = m.to_dense().symmetric_eigenvalues().iter().filter(|v| **v < 0.0).count();
            assert_eq!(m.inertia().unwrap().0, expected);
        }
    }
}
