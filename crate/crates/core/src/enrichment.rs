//! Interface enrichment by block Lanczos on `QA`.
//!
//! The seed block is `W̃ = Q A Φ̃ᵀ` for a few coarse bases `Φ̃` next to the
//! interfaces. Because every block is kept in `Range(Q)`, the operator `QA`
//! is symmetric there and the short recurrence applies; blocks are still
//! re-orthogonalized against all earlier ones.

use nalgebra::DMatrix;

use crate::cgspace::CGMap;
use crate::error::{AccError, Result};
use crate::model::{Chain, ExternalForce, ForceModel};
use crate::qr::pivoted_qr;
use crate::quadrature::quadrature_model;
use crate::reduction::{GalerkinSolver, SolveReport};
use crate::solvers::{BandMatrix, NewtonOptions};

/// Default relative threshold of the rank-revealing QR.
pub const DEFLATION_TOL: f64 = 1e-10;

/// Which coarse bases seed the Krylov space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedRule {
    /// The interface node, then alternating continuum-side and atomistic-side nodes by distance.
    Balanced,
    /// The interface node, then continuum-side nodes only.
    ContinuumSide,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnrichmentConfig {
    /// Number of seed bases (shared round-robin between interfaces).
    pub m: usize,
    /// Krylov depth; the basis has `ell + 1` block levels.
    pub ell: usize,
    pub selection: SeedRule,
    pub deflation_tol: f64,
}

impl EnrichmentConfig {
    pub fn new(m: usize, ell: usize) -> Self {
        Self { m, ell, selection: SeedRule::Balanced, deflation_tol: DEFLATION_TOL }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.deflation_tol > 0.0 && self.deflation_tol < 1.0) {
            return Err(AccError::InvalidParameter(format!(
                "deflation tolerance must lie in (0, 1), got {}",
                self.deflation_tol
            )));
        }
        Ok(())
    }
}

/// Orthonormal block Krylov basis with its block-tridiagonal projection.
#[derive(Clone, Debug)]
pub struct KrylovBasis {
    /// `N × k`, columns orthonormal and orthogonal to the rows of `Φ`.
    pub vectors: DMatrix<f64>,
    /// `A_j = V_jᵀ (QA) V_j`.
    pub t_diag: Vec<DMatrix<f64>>,
    /// `B_j = V_{j+1}ᵀ (QA) V_j`, `p_{j+1} × p_j`.
    pub t_offdiag: Vec<DMatrix<f64>>,
    pub block_sizes: Vec<usize>,
    /// QR factor of the seed block: `W̃ = V_1 R`.
    pub seed_factor: DMatrix<f64>,
}

impl KrylovBasis {
    pub fn empty(n: usize) -> Self {
        Self {
            vectors: DMatrix::zeros(n, 0),
            t_diag: Vec::new(),
            t_offdiag: Vec::new(),
            block_sizes: Vec::new(),
            seed_factor: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Columns of level `j` (0-based).
    pub fn block(&self, j: usize) -> DMatrix<f64> {
        let start: usize = self.block_sizes[..j].iter().sum();
        self.vectors.columns(start, self.block_sizes[j]).into_owned()
    }

    /// Assembled block-tridiagonal `T`.
    pub fn t_matrix(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut t = DMatrix::zeros(k, k);
        let mut offs = 0;
        for (j, a) in self.t_diag.iter().enumerate() {
            let p = self.block_sizes[j];
            t.view_mut((offs, offs), (p, p)).copy_from(a);
            if let Some(b) = self.t_offdiag.get(j) {
                let q = b.nrows();
                t.view_mut((offs + p, offs), (q, p)).copy_from(b);
                t.view_mut((offs, offs + p), (p, q)).copy_from(&b.transpose());
            }
            offs += p;
        }
        t
    }
}

/// Rank-revealing QR of a block; returns the orthonormal part and the factor in input column order.
fn deflate(z: &DMatrix<f64>, tol: f64, scale: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let col_max = (0..z.ncols()).map(|c| z.column(c).norm()).fold(0.0, f64::max);
    let f = pivoted_qr(z, tol * col_max.max(scale));
    let r = f.r_unpermuted();
    (f.q, r)
}

/// Block Lanczos on `QA` from `seed`, producing `ell + 1` levels (fewer if the space is exhausted).
///
/// `apply_a` and `apply_q` act column-wise on `N × p` blocks; `scale` is a norm estimate of `A`
/// used to make the deflation threshold absolute for blocks that are already tiny.
pub fn block_lanczos<FA, FQ>(apply_a: FA, apply_q: FQ, seed: &DMatrix<f64>, ell: usize, tol: f64, scale: f64) -> Result<KrylovBasis>
where
    FA: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    FQ: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let n = seed.nrows();
    if seed.ncols() == 0 {
        return Ok(KrylovBasis::empty(n));
    }
    let (v1, r0) = deflate(seed, tol, 0.0);
    if v1.ncols() == 0 {
        return Err(AccError::SeedExhausted);
    }
    let mut basis: Vec<DMatrix<f64>> = vec![v1];
    let mut diag = Vec::new();
    let mut off: Vec<DMatrix<f64>> = Vec::new();
    for j in 0..=ell {
        let vj = &basis[j];
        let mut z = apply_q(&apply_a(vj));
        if j > 0 {
            z -= &basis[j - 1] * off[j - 1].transpose();
        }
        let aj = vj.transpose() * &z;
        z -= vj * &aj;
        diag.push((&aj + aj.transpose()) * 0.5);
        if j == ell {
            break;
        }
        for _ in 0..2 {
            for v in &basis {
                let c = v.transpose() * &z;
                z -= v * c;
            }
        }
        z = apply_q(&z);
        let (vn, b) = deflate(&z, tol, scale);
        if vn.ncols() == 0 {
            break;
        }
        // a second projection and sweep: normalizing a nearly exhausted direction
        // amplifies the roundoff left by the first one
        let mut vn = apply_q(&vn);
        for v in &basis {
            let c = v.transpose() * &vn;
            vn -= v * c;
        }
        let (vn, fix) = deflate(&vn, tol, 1.0);
        if vn.ncols() == 0 {
            break;
        }
        off.push(fix * b);
        basis.push(vn);
    }
    let block_sizes: Vec<usize> = basis.iter().map(|b| b.ncols()).collect();
    let k: usize = block_sizes.iter().sum();
    let mut vectors = DMatrix::zeros(n, k);
    let mut offs = 0;
    for b in &basis {
        vectors.columns_mut(offs, b.ncols()).copy_from(b);
        offs += b.ncols();
    }
    Ok(KrylovBasis { vectors, t_diag: diag, t_offdiag: off, block_sizes, seed_factor: r0 })
}

/// Active coarse slots used as seeds, nearest to the interfaces first.
pub fn select_seeds(cg: &CGMap, m: usize, rule: SeedRule) -> Vec<usize> {
    let part = cg.partition();
    let nodes = part.nodes();
    let mut queues: Vec<Vec<usize>> = Vec::new();
    for &a in part.interfaces() {
        let Ok(k0) = nodes.binary_search(&a) else { continue };
        // direction of the continuum side
        let dir: isize = if a + 1 < part.n_atoms() && !part.is_atomistic_atom(a + 1) { 1 } else { -1 };
        let mut q = vec![k0];
        for i in 1..nodes.len() as isize {
            let c = k0 as isize + dir * i;
            let at = k0 as isize - dir * i;
            let in_range = |x: isize| x >= 0 && (x as usize) < nodes.len();
            if !in_range(c) && (rule == SeedRule::ContinuumSide || !in_range(at)) {
                break;
            }
            if in_range(c) {
                q.push(c as usize);
            }
            if rule == SeedRule::Balanced && in_range(at) {
                q.push(at as usize);
            }
        }
        queues.push(q);
    }
    let mut out = Vec::new();
    let mut pos = vec![0; queues.len()];
    while out.len() < m {
        let mut progressed = false;
        for (qi, q) in queues.iter().enumerate() {
            while pos[qi] < q.len() {
                let k = q[pos[qi]];
                pos[qi] += 1;
                if let Some(s) = cg.slot_of_atom(nodes[k]) {
                    if !out.contains(&s) {
                        out.push(s);
                        progressed = true;
                        break;
                    }
                }
            }
            if out.len() == m {
                break;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Symmetric Hessian with fixed rows and columns removed (zeroed).
pub fn free_hessian<M: ForceModel + ?Sized>(model: &M, u: &[f64]) -> BandMatrix {
    let mut a = model.hessian(u);
    let fixed = model.fixed();
    for i in 0..a.n() {
        let (lo, hi) = a.row_range(i);
        for j in lo..hi {
            if fixed[i] || fixed[j] {
                a.set(i, j, 0.0);
            }
        }
    }
    a
}

/// Krylov enrichment of `cg` for operator `a` (already restricted to free atoms).
pub fn build_enrichment(cg: &CGMap, a: &BandMatrix, config: &EnrichmentConfig) -> Result<KrylovBasis> {
    config.validate()?;
    let n = cg.n_atoms();
    if a.n() != n {
        return Err(AccError::DimensionMismatch { expected: n, got: a.n() });
    }
    let seeds = select_seeds(cg, config.m, config.selection);
    if seeds.is_empty() {
        return Ok(KrylovBasis::empty(n));
    }
    let mut phi_t = DMatrix::zeros(n, seeds.len());
    for j in 0..n {
        for (s, v) in cg.row_entries(j) {
            if let Some(c) = seeds.iter().position(|&x| x == s) {
                phi_t[(j, c)] = v;
            }
        }
    }
    let apply_a = |x: &DMatrix<f64>| a.mul_dense(x);
    let apply_q = |x: &DMatrix<f64>| cg.apply_q_dense(x);
    let seed = apply_q(&apply_a(&phi_t));
    let scale = (0..n).map(|i| a.row(i).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    block_lanczos(apply_a, apply_q, &seed, config.ell, config.deflation_tol, scale)
}

/// Checks that the extra block is a valid direct-sum complement and returns it.
pub fn extend_space(cg: &CGMap, kb: &KrylovBasis) -> Result<DMatrix<f64>> {
    let v = &kb.vectors;
    let k = v.ncols();
    if k == 0 {
        return Ok(v.clone());
    }
    let gram = v.transpose() * v - DMatrix::identity(k, k);
    let mut cross = 0.0f64;
    for c in 0..k {
        let col: Vec<f64> = v.column(c).iter().copied().collect();
        cross = cross.max(cg.restrict(&col).iter().fold(0.0, |m, x| m.max(x.abs())));
    }
    if gram.amax() > 1e-8 || cross > 1e-8 {
        return Err(AccError::RankDeficient(format!(
            "enrichment block not orthonormal to the coarse space (gram {:.2e}, overlap {:.2e})",
            gram.amax(),
            cross
        )));
    }
    Ok(v.clone())
}

/// `[M 0; 0 VᵀV]`, the Gram matrix of the extended space.
pub fn extended_mass(cg: &CGMap, kb: &KrylovBasis) -> DMatrix<f64> {
    let n = cg.dim();
    let k = kb.dim();
    let mut g = DMatrix::zeros(n + k, n + k);
    g.view_mut((0, 0), (n, n)).copy_from(&cg.mass().to_dense());
    let phi = cg.phi_dense();
    let cross = &phi * &kb.vectors;
    g.view_mut((0, n), (n, k)).copy_from(&cross);
    g.view_mut((n, 0), (k, n)).copy_from(&cross.transpose());
    g.view_mut((n, n), (k, k)).copy_from(&(kb.vectors.transpose() * &kb.vectors));
    g
}

/// Low-rank Schur correction `C T⁻¹ Cᵀ` with `C = Φ A V`.
pub fn approx_a1(cg: &CGMap, a: &BandMatrix, kb: &KrylovBasis) -> Result<DMatrix<f64>> {
    let n = cg.dim();
    if kb.dim() == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let av = a.mul_dense(&kb.vectors);
    let mut c = DMatrix::zeros(n, kb.dim());
    for col in 0..kb.dim() {
        let v: Vec<f64> = av.column(col).iter().copied().collect();
        c.column_mut(col).copy_from_slice(&cg.restrict(&v));
    }
    let t = kb.t_matrix();
    let lu = t.clone().lu();
    let piv = lu.u().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if !(piv > 1e-13 * t.amax()) {
        return Err(AccError::SingularT);
    }
    let x = lu.solve(&c.transpose()).ok_or(AccError::SingularT)?;
    let out = &c * x;
    Ok((&out + out.transpose()) * 0.5)
}

/// Galerkin solve on `Range(Φᵀ) ⊕ Range(V)`; bases stay fixed through Newton.
pub fn solve_enriched(cg: &CGMap, kb: &KrylovBasis, chain: &Chain, f: &ExternalForce, quadrature: bool) -> Result<SolveReport> {
    let extra = extend_space(cg, kb)?;
    let opts = NewtonOptions::default();
    let tag = if quadrature { "enriched_quadrature" } else { "enriched" };
    if quadrature {
        let model = quadrature_model(chain, cg.partition(), f)?;
        GalerkinSolver::with_extra(&model, cg, extra).report(tag, &opts)
    } else {
        let model = chain.term_model(f)?;
        GalerkinSolver::with_extra(&model, cg, extra).report(tag, &opts)
    }
}

/// Builds the enrichment from the reference-state Hessian of `chain` and solves.
pub fn enrich_and_solve(cg: &CGMap, chain: &Chain, f: &ExternalForce, config: &EnrichmentConfig, quadrature: bool) -> Result<(KrylovBasis, SolveReport)> {
    let model = chain.term_model(&ExternalForce::Zero)?;
    let a = free_hessian(&model, &vec![0.0; chain.n()]);
    let kb = build_enrichment(cg, &a, config)?;
    let report = solve_enriched(cg, &kb, chain, f, quadrature)?;
    Ok((kb, report))
}
