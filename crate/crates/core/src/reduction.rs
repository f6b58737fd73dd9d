//! Coarse effective models and the Galerkin solver.
//!
//! The solver works on a space spanned by the rows of `Φ` and, optionally, a
//! block `V` of extra fine-scale vectors orthogonal to them. Displacements are
//! reconstructed as `u = Φᵀ c + V d` and the force balance is tested against
//! the same space. The coarse block `Φ K Φᵀ` is banded in node order; the
//! extra columns form a dense border solved by a Schur complement.

use nalgebra::{DMatrix, DVector};

use crate::cgspace::CGMap;
use crate::error::{AccError, Result};
use crate::model::{Chain, DisplacementField, ExternalForce, ForceModel};
use crate::qr::orthogonal_complement;
use crate::quadrature::quadrature_model;
use crate::solvers::{
    max_norm, newton, BandMatrix, BorderedMatrix, NewtonOptions, NewtonOutcome, NewtonSystem,
};

/// Largest chain accepted by the dense A1 oracle.
pub const ORACLE_CAP: usize = 4096;

/// Outcome of a coarse or coupled solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Reconstructed displacement at every atom.
    pub u: DisplacementField,
    /// Coefficients of the trial space (coarse first, then enrichment).
    pub coeffs: Vec<f64>,
    /// Max-norm of the projected force balance at return.
    pub residual_norm: f64,
    /// Newton iterations (one for a linear model).
    pub newton_iters: usize,
    pub method_tag: String,
    /// Number of unknowns solved for.
    pub dofs: usize,
}

/// `Φ K Φᵀ` for a banded atom-level operator, banded in active node order.
pub fn project_band(cg: &CGMap, k: &BandMatrix) -> BandMatrix {
    let n = cg.n_atoms();
    assert_eq!(k.n(), n);
    let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|j| cg.row_entries(j)).collect();
    let mut bw = 0;
    for i in 0..n {
        let (lo, hi) = k.row_range(i);
        for j in lo..hi {
            for &(s, _) in &rows[i] {
                for &(t, _) in &rows[j] {
                    bw = bw.max(s.abs_diff(t));
                }
            }
        }
    }
    let mut out = BandMatrix::zeros(cg.dim(), bw, bw);
    for i in 0..n {
        if rows[i].is_empty() {
            continue;
        }
        let (lo, hi) = k.row_range(i);
        for j in lo..hi {
            let v = k.get(i, j);
            if v == 0.0 {
                continue;
            }
            for &(s, ps) in &rows[i] {
                for &(t, pt) in &rows[j] {
                    out.add(s, t, ps * v * pt);
                }
            }
        }
    }
    out
}

/// `A0 = Φ A Φᵀ`.
pub fn assemble_a0(cg: &CGMap, a: &BandMatrix) -> Result<BandMatrix> {
    if a.n() != cg.n_atoms() {
        return Err(AccError::DimensionMismatch { expected: cg.n_atoms(), got: a.n() });
    }
    Ok(project_band(cg, a))
}

/// Indices of free atoms.
fn free_atoms(cg: &CGMap) -> Vec<usize> {
    cg.free().iter().enumerate().filter(|(_, &f)| f).map(|(j, _)| j).collect()
}

/// Dense pieces of the exact reduction restricted to free atoms: `(A, Φ, Ψ)`.
fn dense_reduction(cg: &CGMap, a: &BandMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = cg.n_atoms();
    if n > ORACLE_CAP {
        return Err(AccError::OracleCapExceeded { n, cap: ORACLE_CAP });
    }
    if a.n() != n {
        return Err(AccError::DimensionMismatch { expected: n, got: a.n() });
    }
    let free = free_atoms(cg);
    let ad = a.to_dense().select_rows(&free).select_columns(&free);
    let phi = cg.phi_dense().select_columns(&free);
    let psi = orthogonal_complement(&phi.transpose()).transpose();
    Ok((ad, phi, psi))
}

/// `A1 = Φ A Ψᵀ (Ψ A Ψᵀ)⁻¹ Ψ A Φᵀ` with an explicit complement basis `Ψ`.
pub fn exact_a1_oracle(cg: &CGMap, a: &BandMatrix) -> Result<DMatrix<f64>> {
    let (ad, phi, psi) = dense_reduction(cg, a)?;
    if psi.nrows() == 0 {
        return Ok(DMatrix::zeros(phi.nrows(), phi.nrows()));
    }
    let c = &phi * &ad * psi.transpose();
    let s = &psi * &ad * psi.transpose();
    let chol = s.cholesky().ok_or(AccError::SingularSystem { row: 0, pivot: 0.0 })?;
    let x = chol.solve(&c.transpose());
    let a1 = &c * x;
    Ok((&a1 + a1.transpose()) * 0.5)
}

/// Coarse effective system of a linear model.
#[derive(Clone, Debug)]
pub struct EffectiveSystem {
    pub a0: BandMatrix,
    pub a1: Option<DMatrix<f64>>,
    /// `Φ (ε² f)`.
    pub rhs: Vec<f64>,
}

impl EffectiveSystem {
    pub fn new(cg: &CGMap, a: &BandMatrix, scaled_load: &[f64], with_a1: bool) -> Result<Self> {
        let a0 = assemble_a0(cg, a)?;
        let a1 = if with_a1 { Some(exact_a1_oracle(cg, a)?) } else { None };
        Ok(Self { a0, a1, rhs: cg.restrict(scaled_load) })
    }

    /// Solves `(A0 − A1) p = Φ f` (or `A0 p = Φ f` without `A1`).
    pub fn solve(&self) -> Result<Vec<f64>> {
        match &self.a1 {
            None => Ok(self.a0.lu()?.solve(&self.rhs)),
            Some(a1) => {
                let m = self.a0.to_dense() - a1;
                crate::solvers::direct_solve(&m, &self.rhs, crate::solvers::Symmetry::Symmetric)
            }
        }
    }
}

/// Fine-scale reconstruction `u = R q + Q_u A⁻¹ f` with `R = A⁻¹Φᵀ(ΦA⁻¹Φᵀ)⁻¹`
/// for coarse values `q` (dense, free atoms only; fixed atoms stay zero).
pub fn reconstruct_exact(cg: &CGMap, a: &BandMatrix, q: &[f64], scaled_load: &[f64]) -> Result<Vec<f64>> {
    let (ad, phi, _) = dense_reduction(cg, a)?;
    let free = free_atoms(cg);
    let lu = ad.clone().lu();
    let ainv_phit = lu.solve(&phi.transpose()).ok_or(AccError::SingularSystem { row: 0, pivot: 0.0 })?;
    let s = &phi * &ainv_phit;
    let f = DVector::from_fn(free.len(), |i, _| scaled_load[free[i]]);
    let ainv_f = lu.solve(&f).ok_or(AccError::SingularSystem { row: 0, pivot: 0.0 })?;
    let q = DVector::from_column_slice(q);
    // R q + (I − R Φ) A⁻¹ f = A⁻¹f + R (q − Φ A⁻¹ f)
    let t = s.lu().solve(&(q - &phi * &ainv_f)).ok_or(AccError::SingularSystem { row: 0, pivot: 0.0 })?;
    let uf = &ainv_f + &ainv_phit * t;
    let mut u = vec![0.0; cg.n_atoms()];
    for (k, &j) in free.iter().enumerate() {
        u[j] = uf[k];
    }
    Ok(u)
}

/// Galerkin projection of a force model onto `Range(Φᵀ) ⊕ Range(V)`.
pub struct GalerkinSolver<'a, M: ForceModel + ?Sized> {
    model: &'a M,
    cg: &'a CGMap,
    /// `N × k` enrichment block, zero on fixed atoms.
    extra: DMatrix<f64>,
}

impl<'a, M: ForceModel + ?Sized> GalerkinSolver<'a, M> {
    pub fn new(model: &'a M, cg: &'a CGMap) -> Self {
        Self::with_extra(model, cg, DMatrix::zeros(cg.n_atoms(), 0))
    }

    pub fn with_extra(model: &'a M, cg: &'a CGMap, extra: DMatrix<f64>) -> Self {
        assert_eq!(model.n_atoms(), cg.n_atoms());
        assert_eq!(extra.nrows(), cg.n_atoms());
        Self { model, cg, extra }
    }

    pub fn dim(&self) -> usize {
        self.cg.dim() + self.extra.ncols()
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let nc = self.cg.dim();
        let mut u = self.cg.prolong(&x[..nc]);
        if self.extra.ncols() > 0 {
            let v = &self.extra * DVector::from_column_slice(&x[nc..]);
            u.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
        }
        u
    }

    /// Test vectors applied to an atom-level vector: `[Φ r; Vᵀ r]`.
    pub fn test(&self, r: &[f64]) -> Vec<f64> {
        let mut out = self.cg.restrict(r);
        if self.extra.ncols() > 0 {
            let v = self.extra.transpose() * DVector::from_column_slice(r);
            out.extend(v.iter());
        }
        out
    }

    /// Projected out-of-balance force, negated so that its Jacobian is the stiffness.
    pub fn residual_at(&self, x: &[f64]) -> Vec<f64> {
        let u = self.reconstruct(x);
        let f = self.model.force(&u);
        self.test(&f).iter().map(|v| -v).collect()
    }

    /// `X K Xᵀ` at coefficients `x`.
    pub fn jacobian_at(&self, x: &[f64]) -> BorderedMatrix {
        let u = self.reconstruct(x);
        self.project_operator(&self.model.stiffness(&u))
    }

    /// `X K Xᵀ` for an arbitrary atom-level band operator.
    pub fn project_operator(&self, k: &BandMatrix) -> BorderedMatrix {
        let core = project_band(self.cg, k);
        let kk = self.extra.ncols();
        if kk == 0 {
            return BorderedMatrix::banded(core);
        }
        let kv = k.mul_dense(&self.extra);
        let mut ktv = DMatrix::zeros(self.cg.n_atoms(), kk);
        for c in 0..kk {
            let col: Vec<f64> = self.extra.column(c).iter().copied().collect();
            ktv.set_column(c, &DVector::from_vec(k.transpose_matvec(&col)));
        }
        let nc = self.cg.dim();
        let mut right = DMatrix::zeros(nc, kk);
        let mut bottom = DMatrix::zeros(kk, nc);
        for c in 0..kk {
            let col: Vec<f64> = kv.column(c).iter().copied().collect();
            right.set_column(c, &DVector::from_vec(self.cg.restrict(&col)));
            let col: Vec<f64> = ktv.column(c).iter().copied().collect();
            bottom.set_row(c, &DVector::from_vec(self.cg.restrict(&col)).transpose());
        }
        let corner = self.extra.transpose() * kv;
        BorderedMatrix { core, right, bottom, corner }
    }

    pub fn solve(&self, x0: Option<Vec<f64>>, opts: &NewtonOptions) -> Result<NewtonOutcome> {
        let x0 = x0.unwrap_or_else(|| vec![0.0; self.dim()]);
        if x0.len() != self.dim() {
            return Err(AccError::DimensionMismatch { expected: self.dim(), got: x0.len() });
        }
        newton(self, x0, opts)
    }

    /// Solves from zero coefficients and packages the result.
    pub fn report(&self, tag: &str, opts: &NewtonOptions) -> Result<SolveReport> {
        self.report_from(tag, None, opts)
    }

    pub fn report_from(&self, tag: &str, x0: Option<Vec<f64>>, opts: &NewtonOptions) -> Result<SolveReport> {
        let out = self.solve(x0, opts)?;
        let u = DisplacementField::new(self.reconstruct(&out.x))?;
        Ok(SolveReport {
            u,
            residual_norm: out.residual,
            newton_iters: out.iterations,
            method_tag: tag.to_string(),
            dofs: self.dim(),
            coeffs: out.x,
        })
    }
}

impl<M: ForceModel + ?Sized> NewtonSystem for GalerkinSolver<'_, M> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.residual_at(x)
    }

    fn solve_linearized(&self, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        self.jacobian_at(x).solve(rhs)
    }
}

/// Standard Galerkin solve on `Range(Φᵀ)`, with exact summation or quadrature
/// on continuum elements.
pub fn solve_standard_galerkin(cg: &CGMap, chain: &Chain, f: &ExternalForce, quadrature: bool) -> Result<SolveReport> {
    let tag = if quadrature { "galerkin_quadrature" } else { "galerkin" };
    if quadrature {
        let model = quadrature_model(chain, cg.partition(), f)?;
        GalerkinSolver::new(&model, cg).report(tag, &NewtonOptions::default())
    } else {
        let model = chain.term_model(f)?;
        GalerkinSolver::new(&model, cg).report(tag, &NewtonOptions::default())
    }
}

/// Max-norm of `a − b`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    max_norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}
