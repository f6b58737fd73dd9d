//! The 1D chain with first- and second-neighbour bonds.
//!
//! Atoms are numbered `1..=N` in the public API and stored 0-based. The
//! energy is `E = ε² V`, with `V` the dimensionless sum of bond energies minus
//! the work of the external load. With this scaling the harmonic Hessian has
//! the stencil `[−K1, −K0, 2K0 + 2K1, −K0, −K1]` and the load enters the
//! force balance as `ε² f`.
//!
//! Bonds are stored as a list of [`Term`]s over *sites* `0..=N+1`; site `s`
//! is atom `s` and sites `0`, `N+1` are ghost atoms whose displacement is a
//! fixed linear combination of real atoms.

use std::ops::Deref;

use crate::error::{AccError, Result};
use crate::solvers::{newton, BandMatrix, NewtonOptions, NewtonOutcome, NewtonSystem};

/// Smallest chain that fits the second-neighbour stencil and the ghost extrapolation.
pub const MIN_ATOMS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shell {
    First,
    Second,
}

impl Shell {
    /// Reference bond length in lattice units.
    pub fn reference(self) -> f64 {
        match self {
            Shell::First => 1.0,
            Shell::Second => 2.0,
        }
    }
}

/// Interatomic potential as a function of the bond length measured in lattice units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    /// `½ K0 (r − 1)²` for first neighbours, `½ K1 (r − 2)²` for second neighbours.
    Harmonic { k0: f64, k1: f64 },
    /// `D [(σ/r)¹² − 2 (σ/r)⁶]`, shared by both shells.
    LennardJones { depth: f64, spacing: f64 },
}

impl Potential {
    pub fn harmonic(k0: f64, k1: f64) -> Self {
        Potential::Harmonic { k0, k1 }
    }

    /// Lennard-Jones with its minimum at the lattice spacing and `U''(1) = k0`.
    pub fn lennard_jones_matching(k0: f64) -> Self {
        Potential::LennardJones { depth: k0 / 72.0, spacing: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::Harmonic { k0, k1 } => {
                if !(k0 > 0.0 && k0.is_finite()) {
                    return Err(AccError::InvalidParameter(format!("K0 must be positive, got {k0}")));
                }
                if !(k1 >= 0.0 && k1.is_finite()) {
                    return Err(AccError::InvalidParameter(format!("K1 must be non-negative, got {k1}")));
                }
            }
            Potential::LennardJones { depth, spacing } => {
                if !(depth > 0.0 && depth.is_finite()) {
                    return Err(AccError::InvalidParameter(format!("well depth must be positive, got {depth}")));
                }
                if !(spacing > 0.0 && spacing.is_finite()) {
                    return Err(AccError::InvalidParameter(format!(
                        "equilibrium distance must be positive, got {spacing}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_harmonic(&self) -> bool {
        matches!(self, Potential::Harmonic { .. })
    }

    /// Returns `(U, U', U'')` at bond length `r`.
    pub fn eval(&self, shell: Shell, r: f64) -> (f64, f64, f64) {
        self.eval_stretch(shell, r - shell.reference())
    }

    /// As [`Potential::eval`] at `r = reference + d`; harmonic bonds never form `r`,
    /// which keeps small strains free of cancellation.
    pub fn eval_stretch(&self, shell: Shell, d: f64) -> (f64, f64, f64) {
        match *self {
            Potential::Harmonic { k0, k1 } => {
                let k = match shell {
                    Shell::First => k0,
                    Shell::Second => k1,
                };
                (0.5 * k * d * d, k * d, k)
            }
            Potential::LennardJones { depth, spacing } => {
                let r = shell.reference() + d;
                let s = spacing / r;
                let s6 = s.powi(6);
                let s12 = s6 * s6;
                let e = depth * (s12 - 2.0 * s6);
                let d1 = depth * (-12.0 * s12 + 12.0 * s6) / r;
                let d2 = depth * (156.0 * s12 - 84.0 * s6) / (r * r);
                (e, d1, d2)
            }
        }
    }

    /// Force constants `(U''(1), U''(2))` of the reference lattice.
    pub fn linearized(&self) -> (f64, f64) {
        (self.eval(Shell::First, 1.0).2, self.eval(Shell::Second, 2.0).2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundarySpec {
    /// `u_1 = u_N = 0`; ghost atoms sit at zero displacement.
    DirichletPinned,
    /// `u_1 = u_N = 0`; ghost displacements are extrapolated from the first three atoms.
    DirichletExtrapolated,
    /// Free left end loaded by `load`, right end pinned. Only meaningful for the crack model.
    Traction { load: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExternalForce {
    Zero,
    /// Force of `magnitude` on the 1-based `atom`.
    PointForce { atom: usize, magnitude: f64 },
    /// `sin(πx)` on `(1/2, 1]`, zero elsewhere.
    HalfSine,
    /// `sin(πx)` on `[0, 1]`.
    FullSine,
    Custom(Vec<f64>),
}

impl ExternalForce {
    /// Per-atom values `f_j` (unscaled).
    pub fn values(&self, chain: &Chain) -> Result<Vec<f64>> {
        let n = chain.n();
        match self {
            ExternalForce::Zero => Ok(vec![0.0; n]),
            ExternalForce::PointForce { atom, magnitude } => {
                if *atom < 1 || *atom > n {
                    return Err(AccError::InvalidParameter(format!("point force atom {atom} outside [1, {n}]")));
                }
                let mut f = vec![0.0; n];
                f[atom - 1] = *magnitude;
                Ok(f)
            }
            ExternalForce::HalfSine => Ok((0..n)
                .map(|j| {
                    let x = chain.x(j);
                    if x > 0.5 {
                        (std::f64::consts::PI * x).sin()
                    } else {
                        0.0
                    }
                })
                .collect()),
            ExternalForce::FullSine => Ok((0..n).map(|j| (std::f64::consts::PI * chain.x(j)).sin()).collect()),
            ExternalForce::Custom(v) => {
                if v.len() != n {
                    return Err(AccError::DimensionMismatch { expected: n, got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(AccError::InvalidParameter("custom force has non-finite entries".into()));
                }
                Ok(v.clone())
            }
        }
    }

    /// True for loads that are a single concentrated force.
    pub fn is_point(&self) -> bool {
        matches!(self, ExternalForce::PointForce { .. })
    }
}

/// Per-atom displacements `u_j = y_j − x_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    values: Vec<f64>,
}

impl DisplacementField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AccError::InvalidParameter("displacement has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for DisplacementField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    n: usize,
    potential: Potential,
    boundary: BoundarySpec,
}

impl Chain {
    pub fn new(n: usize, potential: Potential, boundary: BoundarySpec) -> Result<Self> {
        if n < MIN_ATOMS {
            return Err(AccError::InvalidParameter(format!("chain needs at least {MIN_ATOMS} atoms, got {n}")));
        }
        potential.validate()?;
        if let BoundarySpec::Traction { load } = boundary {
            if !load.is_finite() {
                return Err(AccError::InvalidParameter("traction load must be finite".into()));
            }
        }
        Ok(Self { n, potential, boundary })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Reference position of the 0-based atom `j`.
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.epsilon()
    }

    pub fn potential(&self) -> Potential {
        self.potential
    }

    pub fn boundary(&self) -> BoundarySpec {
        self.boundary
    }

    pub fn with_boundary(&self, boundary: BoundarySpec) -> Self {
        Self { boundary, ..self.clone() }
    }

    /// Every bond of the full atomistic model.
    pub fn atomistic_terms(&self) -> Vec<Term> {
        let n = self.n;
        let mut terms = Vec::with_capacity(2 * n);
        let left_ghost = !matches!(self.boundary, BoundarySpec::Traction { .. });
        if left_ghost {
            terms.push(Term::pair(0, 2, Shell::Second));
        }
        for s in 1..n {
            terms.push(Term::pair(s, s + 1, Shell::First));
            if s + 2 <= n {
                terms.push(Term::pair(s, s + 2, Shell::Second));
            }
        }
        terms.push(Term::pair(n - 1, n + 1, Shell::Second));
        terms
    }

    pub fn ghosts(&self) -> (GhostMap, GhostMap) {
        let n = self.n;
        match self.boundary {
            BoundarySpec::DirichletPinned | BoundarySpec::Traction { .. } => (GhostMap::zero(), GhostMap::zero()),
            BoundarySpec::DirichletExtrapolated => (
                GhostMap::new(vec![(0, 3.0), (1, -3.0), (2, 1.0)]),
                GhostMap::new(vec![(n - 1, 3.0), (n - 2, -3.0), (n - 3, 1.0)]),
            ),
        }
    }

    pub fn fixed(&self) -> Vec<bool> {
        let mut fixed = vec![false; self.n];
        if !matches!(self.boundary, BoundarySpec::Traction { .. }) {
            fixed[0] = true;
        }
        fixed[self.n - 1] = true;
        fixed
    }

    /// The full atomistic model with load `f`.
    pub fn term_model(&self, f: &ExternalForce) -> Result<TermModel> {
        TermModel::new(self, self.atomistic_terms(), f)
    }
}

/// Ghost displacement as a linear combination of 0-based atoms; empty means pinned at zero.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GhostMap {
    pub coeffs: Vec<(usize, f64)>,
}

impl GhostMap {
    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn new(coeffs: Vec<(usize, f64)>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * u[j]).sum()
    }
}

/// Displacement of ghost atom 0 from the first three atoms, exact on quadratic sequences.
pub fn ghost_extrapolation(u1: f64, u2: f64, u3: f64) -> f64 {
    3.0 * u1 - 3.0 * u2 + u3
}

/// One energy contribution over sites `0..=N+1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    /// Bond between sites `i < j`.
    Pair { i: usize, j: usize, shell: Shell, weight: f64 },
    /// Second-neighbour bond reconstructed from the first bond `(i, i+1)`:
    /// `U₂(2 + 2 (u_{i+1} − u_i)/ε)`.
    Recon { i: usize, weight: f64 },
}

impl Term {
    pub fn pair(i: usize, j: usize, shell: Shell) -> Self {
        Term::Pair { i, j, shell, weight: 1.0 }
    }

    /// `(left site, right site, shell, stretch factor, weight)`.
    #[inline]
    fn parts(&self) -> (usize, usize, Shell, f64, f64) {
        match *self {
            Term::Pair { i, j, shell, weight } => (i, j, shell, 1.0, weight),
            Term::Recon { i, weight } => (i, i + 1, Shell::Second, 2.0, weight),
        }
    }
}

/// Anything that produces an out-of-balance force and its linearization on the chain.
pub trait ForceModel {
    fn n_atoms(&self) -> usize;

    /// Atoms held at zero displacement.
    fn fixed(&self) -> &[bool];

    /// `−∇E` plus the scaled load; zero at equilibrium. Rows of fixed atoms are zero.
    fn force(&self, u: &[f64]) -> Vec<f64>;

    /// `K = −∂force/∂u`, including boundary extrapolation. Rows of fixed atoms are zero.
    fn stiffness(&self, u: &[f64]) -> BandMatrix;

    /// Symmetric energy Hessian used to build coarse operators and enrichment.
    fn hessian(&self, u: &[f64]) -> BandMatrix;

    fn is_linear(&self) -> bool;
}

/// Energy and forces assembled from an explicit list of bond terms.
#[derive(Clone, Debug)]
pub struct TermModel {
    n: usize,
    eps: f64,
    potential: Potential,
    terms: Vec<Term>,
    left: GhostMap,
    right: GhostMap,
    fixed: Vec<bool>,
    /// `ε² f`, already scaled.
    load: Vec<f64>,
}

impl TermModel {
    pub fn new(chain: &Chain, terms: Vec<Term>, f: &ExternalForce) -> Result<Self> {
        let load = f.values(chain)?;
        Self::with_load(chain, terms, load)
    }

    /// `load` holds unscaled per-atom forces.
    pub fn with_load(chain: &Chain, terms: Vec<Term>, load: Vec<f64>) -> Result<Self> {
        let n = chain.n();
        if load.len() != n {
            return Err(AccError::DimensionMismatch { expected: n, got: load.len() });
        }
        for t in &terms {
            let (a, b, _, _, _) = t.parts();
            if a >= b || b > n + 1 {
                return Err(AccError::InvalidParameter(format!("bond ({a}, {b}) invalid for {n} atoms")));
            }
        }
        let eps = chain.epsilon();
        let (left, right) = chain.ghosts();
        Ok(Self {
            n,
            eps,
            potential: chain.potential(),
            terms,
            left,
            right,
            fixed: chain.fixed(),
            load: load.iter().map(|v| v * eps * eps).collect(),
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Scaled load `ε² f`.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    #[inline]
    fn site(&self, u: &[f64], s: usize, ghosts: bool) -> f64 {
        if s == 0 {
            if ghosts {
                self.left.eval(u)
            } else {
                0.0
            }
        } else if s == self.n + 1 {
            if ghosts {
                self.right.eval(u)
            } else {
                0.0
            }
        } else {
            u[s - 1]
        }
    }

    #[inline]
    fn bond(&self, u: &[f64], t: &Term, ghosts: bool) -> (usize, usize, f64, (f64, f64, f64)) {
        let (a, b, shell, stretch, w) = t.parts();
        let d = stretch * (self.site(u, b, ghosts) - self.site(u, a, ghosts)) / self.eps;
        let (e, d1, d2) = self.potential.eval_stretch(shell, d);
        (a, b, stretch, (w * e, w * d1, w * d2))
    }

    /// `E = ε² Σ w U(r) − ε² Σ f u`, with ghost atoms at zero.
    pub fn energy(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.n);
        let eps2 = self.eps * self.eps;
        let bonds: f64 = self.terms.iter().map(|t| self.bond(u, t, false).3 .0).sum();
        let work: f64 = self.load.iter().zip(u).map(|(f, v)| f * v).sum();
        eps2 * bonds - work
    }

    /// Gradient of the bond energy with respect to real atoms, ghosts evaluated through their maps.
    fn bond_gradient(&self, u: &[f64], ghosts: bool) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for t in &self.terms {
            let (a, b, s, (_, d1, _)) = self.bond(u, t, ghosts);
            let c = self.eps * s * d1;
            if (1..=self.n).contains(&a) {
                g[a - 1] -= c;
            }
            if (1..=self.n).contains(&b) {
                g[b - 1] += c;
            }
        }
        g
    }

    /// Adds the linearization of all terms into `k` (`ghosts` selects extrapolated ghosts).
    fn assemble(&self, u: &[f64], ghosts: bool, k: &mut BandMatrix) {
        for t in &self.terms {
            let (a, b, s, (_, _, d2)) = self.bond(u, t, ghosts);
            let c = s * s * d2;
            // row a gets c (u_a − u_b), row b gets c (u_b − u_a)
            for (row, sign) in [(a, 1.0), (b, -1.0)] {
                if row == 0 || row == self.n + 1 {
                    continue;
                }
                self.add_site(k, row - 1, a, sign * c, ghosts);
                self.add_site(k, row - 1, b, -sign * c, ghosts);
            }
        }
    }

    #[inline]
    fn add_site(&self, k: &mut BandMatrix, row: usize, site: usize, v: f64, ghosts: bool) {
        if site == 0 || site == self.n + 1 {
            if ghosts {
                let map = if site == 0 { &self.left } else { &self.right };
                for &(j, c) in &map.coeffs {
                    k.add(row, j, v * c);
                }
            }
        } else {
            k.add(row, site - 1, v);
        }
    }

    fn bandwidth(&self) -> usize {
        let mut bw = 2;
        for t in &self.terms {
            let (a, b, _, _, _) = t.parts();
            bw = bw.max(b - a);
        }
        bw
    }
}

impl ForceModel for TermModel {
    fn n_atoms(&self) -> usize {
        self.n
    }

    fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    fn force(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        let g = self.bond_gradient(u, true);
        g.iter()
            .zip(&self.load)
            .zip(&self.fixed)
            .map(|((g, f), &fx)| if fx { 0.0 } else { f - g })
            .collect()
    }

    fn stiffness(&self, u: &[f64]) -> BandMatrix {
        let bw = self.bandwidth();
        let mut k = BandMatrix::zeros(self.n, bw, bw);
        self.assemble(u, true, &mut k);
        zero_fixed_rows(&mut k, &self.fixed);
        k
    }

    fn hessian(&self, u: &[f64]) -> BandMatrix {
        let bw = self.bandwidth();
        let mut k = BandMatrix::zeros(self.n, bw, bw);
        self.assemble(u, false, &mut k);
        k
    }

    fn is_linear(&self) -> bool {
        self.potential.is_harmonic()
    }
}

pub(crate) fn zero_fixed_rows(k: &mut BandMatrix, fixed: &[bool]) {
    for (i, &fx) in fixed.iter().enumerate() {
        if fx {
            let (lo, hi) = k.row_range(i);
            for j in lo..hi {
                k.set(i, j, 0.0);
            }
        }
    }
}

fn check_len(chain: &Chain, u: &[f64]) -> Result<()> {
    if u.len() != chain.n() {
        return Err(AccError::DimensionMismatch { expected: chain.n(), got: u.len() });
    }
    Ok(())
}

/// Total energy `ε² V` of the atomistic chain.
pub fn total_energy(chain: &Chain, u: &[f64], f: &ExternalForce) -> Result<f64> {
    check_len(chain, u)?;
    Ok(chain.term_model(f)?.energy(u))
}

/// Out-of-balance force of the atomistic chain; zero at equilibrium.
pub fn force(chain: &Chain, u: &[f64], f: &ExternalForce) -> Result<Vec<f64>> {
    check_len(chain, u)?;
    Ok(chain.term_model(f)?.force(u))
}

/// Symmetric force-constant matrix of the atomistic chain (ghost atoms pinned).
pub fn hessian(chain: &Chain, u: &[f64]) -> Result<BandMatrix> {
    check_len(chain, u)?;
    Ok(chain.term_model(&ExternalForce::Zero)?.hessian(u))
}

struct FullSystem<'a, M: ForceModel + ?Sized> {
    model: &'a M,
}

impl<M: ForceModel + ?Sized> NewtonSystem for FullSystem<'_, M> {
    fn residual(&self, u: &[f64]) -> Vec<f64> {
        self.model.force(u).iter().map(|v| -v).collect()
    }

    fn solve_linearized(&self, u: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let mut k = self.model.stiffness(u);
        for (i, &fx) in self.model.fixed().iter().enumerate() {
            if fx {
                k.set(i, i, 1.0);
                let (lo, hi) = k.row_range(i);
                for r in lo..hi {
                    if r != i {
                        k.set(r, i, 0.0);
                    }
                }
            }
        }
        Ok(k.lu()?.solve(rhs))
    }
}

/// Newton iteration on every free atom of `model` starting from `u0`.
pub fn solve_equilibrium<M: ForceModel + ?Sized>(model: &M, u0: Vec<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome> {
    newton(&FullSystem { model }, u0, opts)
}

/// The reference atomistic solution.
pub fn solve_atomistic(chain: &Chain, f: &ExternalForce) -> Result<DisplacementField> {
    if let BoundarySpec::Traction { .. } = chain.boundary() {
        return Err(AccError::InvalidParameter("traction boundary is only supported by the crack model".into()));
    }
    let model = chain.term_model(f)?;
    let out = solve_equilibrium(&model, vec![0.0; chain.n()], &NewtonOptions::default())?;
    DisplacementField::new(out.x)
}
