//! The lattice fracture model: an upper chain on breakable vertical bonds.
//!
//! Atoms `1..n` (1-based) have lost their vertical bond, atom `n` sits on the
//! softening tip bond `γ`, and atoms beyond `n` are held by harmonic bonds of
//! stiffness `K2`. The left end carries a traction `P`, the right end is pinned.
//! Energies are stored as `ε² V`, matching [`TermModel`].

use log::warn;
use nalgebra::DMatrix;

use crate::baselines::{left_local, local_terms, qnl_terms, ForceBasedModel};
use crate::cgspace::{CGMap, RegionPartition};
use crate::enrichment::{build_enrichment, extend_space, free_hessian, EnrichmentConfig};
use crate::error::{AccError, Result};
use crate::model::{BoundarySpec, Chain, DisplacementField, ForceModel, TermModel};
use crate::reduction::{GalerkinSolver, SolveReport};
use crate::solvers::{newton, BandMatrix, BorderedMatrix, NewtonOptions, NewtonSystem};

/// How the tip bond is scaled relative to the intact bonds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GammaScale {
    /// `γ'' (0) = K2 / ε²`, half the stiffness of an intact bond.
    #[default]
    Single,
    /// Doubled so that an unstretched tip bond matches an intact one.
    Matched,
}

#[derive(Clone, Debug)]
pub struct CrackModel {
    chain: Chain,
    k2: f64,
    u_cut: f64,
    /// 1-based tip atom `n`.
    tip: usize,
    gamma_scale: GammaScale,
}

impl CrackModel {
    /// The load is taken from the traction boundary; any other boundary is replaced by a zero traction.
    pub fn new(chain: &Chain, k2: f64, u_cut: f64, tip: usize) -> Result<Self> {
        if !(k2 > 0.0 && k2.is_finite()) {
            return Err(AccError::InvalidParameter(format!("K2 must be positive, got {k2}")));
        }
        if !(u_cut > 0.0 && u_cut.is_finite()) {
            return Err(AccError::InvalidParameter(format!("u_cut must be positive, got {u_cut}")));
        }
        if tip < 1 || tip >= chain.n() {
            return Err(AccError::InvalidParameter(format!("tip atom {tip} outside [1, {})", chain.n())));
        }
        let chain = match chain.boundary() {
            BoundarySpec::Traction { .. } => chain.clone(),
            _ => chain.with_boundary(BoundarySpec::Traction { load: 0.0 }),
        };
        Ok(Self { chain, k2, u_cut, tip, gamma_scale: GammaScale::Single })
    }

    pub fn with_gamma_scale(mut self, scale: GammaScale) -> Self {
        self.gamma_scale = scale;
        self
    }

    pub fn with_load(&self, load: f64) -> Self {
        Self { chain: self.chain.with_boundary(BoundarySpec::Traction { load }), ..self.clone() }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn load(&self) -> f64 {
        match self.chain.boundary() {
            BoundarySpec::Traction { load } => load,
            _ => unreachable!("crack chains always carry a traction"),
        }
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn u_cut(&self) -> f64 {
        self.u_cut
    }

    /// 1-based tip atom.
    pub fn tip(&self) -> usize {
        self.tip
    }

    fn gamma_coeff(&self) -> f64 {
        match self.gamma_scale {
            GammaScale::Single => self.k2,
            GammaScale::Matched => 2.0 * self.k2,
        }
    }

    /// `(ε²γ, ε²γ', ε²γ'')` at `u`; the quartic continues below zero.
    pub fn tip_bond(&self, u: f64) -> (f64, f64, f64) {
        let (k, c) = (self.gamma_coeff(), self.u_cut);
        if u >= c {
            return (k * c * c / 12.0, 0.0, 0.0);
        }
        let s = k / (c * c);
        let e = s * (u.powi(4) / 4.0 - 2.0 * c * u.powi(3) / 3.0 + c * c * u * u / 2.0);
        (e, s * u * (u - c) * (u - c), s * (u - c) * (3.0 * u - c))
    }

    /// Per-atom traction loads, unscaled.
    pub fn load_vector(&self) -> Vec<f64> {
        let (f1, f2) = traction_forces(self);
        let mut f = vec![0.0; self.chain.n()];
        f[0] = f1;
        f[1] = f2;
        f
    }

    fn vertical(&self) -> VerticalBonds {
        VerticalBonds { tip: self.tip - 1, model: self.clone() }
    }

    fn wrap<M: ForceModel>(&self, base: M) -> CrackSystem<M> {
        CrackSystem { base, vertical: self.vertical() }
    }

    /// Full atomistic force model.
    pub fn atomistic(&self) -> Result<CrackSystem<TermModel>> {
        Ok(self.wrap(TermModel::with_load(&self.chain, self.chain.atomistic_terms(), self.load_vector())?))
    }

    /// QNL bonds with atoms left of the 0-based `interface` local.
    pub fn qnl(&self, interface: usize) -> Result<CrackSystem<TermModel>> {
        check_interface(&self.chain, interface)?;
        let terms = qnl_terms(&self.chain, &left_local(self.chain.n(), interface))?;
        Ok(self.wrap(TermModel::with_load(&self.chain, terms, self.load_vector())?))
    }

    /// Force-based mixing of the atomistic and local crack systems.
    pub fn force_based(&self, interface: usize) -> Result<ForceBasedModel<CrackSystem<TermModel>, CrackSystem<TermModel>>> {
        check_interface(&self.chain, interface)?;
        let local = self.wrap(TermModel::with_load(&self.chain, local_terms(&self.chain), self.load_vector())?);
        ForceBasedModel::new(self.atomistic()?, local, left_local(self.chain.n(), interface))
    }
}

fn check_interface(chain: &Chain, interface: usize) -> Result<()> {
    if interface == 0 || interface >= chain.n() {
        return Err(AccError::InvalidParameter(format!("interface atom {} outside the chain", interface + 1)));
    }
    Ok(())
}

/// Surface energy `γ(u)` of the tip bond, in the units of `V`.
pub fn gamma(u: f64, model: &CrackModel) -> f64 {
    let eps = model.chain.epsilon();
    model.tip_bond(u).0 / (eps * eps)
}

/// Traction split over the first two atoms that keeps the strain uniform at the free end.
pub fn traction_forces(model: &CrackModel) -> (f64, f64) {
    let (k0, k1) = model.chain.potential().linearized();
    let p = model.load();
    let c = k0 + 4.0 * k1;
    ((k0 + 2.0 * k1) / c * p, 2.0 * k1 / c * p)
}

/// Total energy `V` including the `(n − 1) γ0` of the broken bonds.
pub fn crack_energy(model: &CrackModel, u: &[f64]) -> Result<f64> {
    let n = model.chain.n();
    if u.len() != n {
        return Err(AccError::DimensionMismatch { expected: n, got: u.len() });
    }
    let eps = model.chain.epsilon();
    let scaled = model.atomistic()?.energy(u);
    Ok(scaled / (eps * eps) + (model.tip - 1) as f64 * gamma(model.u_cut, model))
}

/// Tip bond and intact vertical bonds as on-site terms.
#[derive(Clone, Debug)]
struct VerticalBonds {
    /// 0-based tip atom.
    tip: usize,
    model: CrackModel,
}

impl VerticalBonds {
    fn energy(&self, u: &[f64]) -> f64 {
        let k2 = self.model.k2;
        self.model.tip_bond(u[self.tip]).0 + u[self.tip + 1..].iter().map(|v| k2 * v * v).sum::<f64>()
    }

    fn add_gradient(&self, u: &[f64], g: &mut [f64]) {
        g[self.tip] += self.model.tip_bond(u[self.tip]).1;
        for j in self.tip + 1..u.len() {
            g[j] += 2.0 * self.model.k2 * u[j];
        }
    }

    fn add_hessian(&self, u: &[f64], k: &mut BandMatrix) {
        k.add(self.tip, self.tip, self.model.tip_bond(u[self.tip]).2);
        for j in self.tip + 1..u.len() {
            k.add(j, j, 2.0 * self.model.k2);
        }
    }
}

/// A bond model plus the vertical bonds of the crack.
#[derive(Clone, Debug)]
pub struct CrackSystem<M> {
    base: M,
    vertical: VerticalBonds,
}

impl CrackSystem<TermModel> {
    /// `ε² V` without the constant surface energy of the broken bonds.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.base.energy(u) + self.vertical.energy(u)
    }
}

impl<M: ForceModel> ForceModel for CrackSystem<M> {
    fn n_atoms(&self) -> usize {
        self.base.n_atoms()
    }

    fn fixed(&self) -> &[bool] {
        self.base.fixed()
    }

    fn force(&self, u: &[f64]) -> Vec<f64> {
        let mut f = self.base.force(u);
        let mut g = vec![0.0; u.len()];
        self.vertical.add_gradient(u, &mut g);
        for ((f, g), &fx) in f.iter_mut().zip(&g).zip(self.base.fixed()) {
            if !fx {
                *f -= g;
            }
        }
        f
    }

    fn stiffness(&self, u: &[f64]) -> BandMatrix {
        let mut k = self.base.stiffness(u);
        self.vertical.add_hessian(u, &mut k);
        crate::model::zero_fixed_rows(&mut k, self.base.fixed());
        k
    }

    fn hessian(&self, u: &[f64]) -> BandMatrix {
        let mut k = self.base.hessian(u);
        self.vertical.add_hessian(u, &mut k);
        k
    }

    fn is_linear(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CrackMethod {
    Atomistic,
    Galerkin,
    Enriched(EnrichmentConfig),
    Qnl,
    ForceBased,
}

impl CrackMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            CrackMethod::Atomistic => "atomistic",
            CrackMethod::Galerkin => "galerkin",
            CrackMethod::Enriched(_) => "enriched",
            CrackMethod::Qnl => "qnl",
            CrackMethod::ForceBased => "force_based",
        }
    }
}

/// Residual tolerance `1e-12` in the units of `V`, relative to the load once it exceeds one.
pub fn crack_newton_options(model: &CrackModel) -> NewtonOptions {
    let eps = model.chain.epsilon();
    NewtonOptions { tol: 1e-12 * eps * eps * model.load().abs().max(1.0), ..NewtonOptions::default() }
}

/// A method bound to its force model, trial space and load direction.
struct Discretization {
    model: Box<dyn ForceModel>,
    /// The same model at zero load; the residual is affine in the load.
    unloaded: Box<dyn ForceModel>,
    cg: CGMap,
    extra: DMatrix<f64>,
    tag: &'static str,
}

impl Discretization {
    fn new(model: &CrackModel, method: &CrackMethod, cg: Option<&CGMap>) -> Result<Self> {
        let n = model.chain.n();
        let need_cg = || {
            cg.cloned()
                .ok_or_else(|| AccError::InvalidParameter(format!("method {} needs a coarse-graining map", method.tag())))
        };
        let atomistic_cg = || CGMap::new(&RegionPartition::all_atomistic(n), &model.chain.fixed());
        let interface = || -> Result<usize> {
            let cg = need_cg()?;
            cg.partition()
                .interfaces()
                .first()
                .copied()
                .ok_or_else(|| AccError::InvalidParameter("partition has no interface".into()))
        };
        let build = |m: &CrackModel| -> Result<Box<dyn ForceModel>> {
            Ok(match method {
                CrackMethod::Atomistic | CrackMethod::Galerkin | CrackMethod::Enriched(_) => Box::new(m.atomistic()?),
                CrackMethod::Qnl => Box::new(m.qnl(interface()?)?),
                CrackMethod::ForceBased => Box::new(m.force_based(interface()?)?),
            })
        };
        let cgmap = match method {
            CrackMethod::Galerkin | CrackMethod::Enriched(_) => need_cg()?,
            _ => atomistic_cg()?,
        };
        if cgmap.n_atoms() != n {
            return Err(AccError::DimensionMismatch { expected: n, got: cgmap.n_atoms() });
        }
        let extra = match method {
            CrackMethod::Enriched(config) => {
                let reference = model.with_load(0.0).atomistic()?;
                let a = free_hessian(&reference, &vec![0.0; n]);
                extend_space(&cgmap, &build_enrichment(&cgmap, &a, config)?)?
            }
            _ => DMatrix::zeros(n, 0),
        };
        Ok(Self { model: build(model)?, unloaded: build(&model.with_load(0.0))?, cg: cgmap, extra, tag: method.tag() })
    }

    fn solver(&self) -> GalerkinSolver<'_, dyn ForceModel> {
        GalerkinSolver::with_extra(self.model.as_ref(), &self.cg, self.extra.clone())
    }
}

/// Equilibrium of the crack model by Newton from zero displacement.
pub fn solve_crack(model: &CrackModel, method: &CrackMethod, cg: Option<&CGMap>) -> Result<SolveReport> {
    solve_crack_from(model, method, cg, |k| vec![0.0; k])
}

/// As [`solve_crack`], starting Newton from `init(k)` for a trial space of dimension `k`.
pub fn solve_crack_from(
    model: &CrackModel,
    method: &CrackMethod,
    cg: Option<&CGMap>,
    init: impl FnOnce(usize) -> Vec<f64>,
) -> Result<SolveReport> {
    let d = Discretization::new(model, method, cg)?;
    let solver = d.solver();
    let x0 = init(solver.dim());
    solver.report_from(d.tag, Some(x0), &crack_newton_options(model))
}

/// One equilibrium on a traced branch.
#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub load: f64,
    pub u: DisplacementField,
    /// Smallest eigenvalue of the projected Hessian relative to the trial-space Gram matrix (`ε² V` units).
    pub min_eigenvalue: f64,
    pub negative_eigenvalues: usize,
    pub stable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldKind {
    /// Local maximum of the load: the stable branch ends and the crack advances.
    Upper,
    /// Local minimum of the load.
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fold {
    pub load: f64,
    pub tip_displacement: f64,
    pub kind: FoldKind,
}

#[derive(Clone, Debug)]
pub struct BifurcationDiagram {
    pub method_tag: String,
    pub points: Vec<BranchPoint>,
    pub folds: Vec<Fold>,
    /// Load at which the trace stopped early, when Newton failed after every step halving.
    pub branch_lost: Option<f64>,
}

/// Tip-displacement control: unknowns are the trial coefficients and the load.
struct ControlledSystem<'a> {
    solver: GalerkinSolver<'a, dyn ForceModel>,
    unloaded: GalerkinSolver<'a, dyn ForceModel>,
    /// Projected force of a unit load.
    unit: Vec<f64>,
    /// Trial-space row of the tip displacement.
    tip_row: Vec<f64>,
    target: f64,
}

impl<'a> ControlledSystem<'a> {
    fn new(d: &'a Discretization, model: &CrackModel) -> Self {
        let solver = d.solver();
        let unloaded = GalerkinSolver::with_extra(d.unloaded.as_ref(), &d.cg, d.extra.clone());
        let eps = model.chain.epsilon();
        let unit_load: Vec<f64> = model.with_load(1.0).load_vector().iter().map(|v| v * eps * eps).collect();
        let unit = solver.test(&unit_load);
        let mut tip_row = vec![0.0; solver.dim()];
        let tip = model.tip - 1;
        for (slot, v) in d.cg.row_entries(tip) {
            tip_row[slot] = v;
        }
        let nc = d.cg.dim();
        for c in 0..d.extra.ncols() {
            tip_row[nc + c] = d.extra[(tip, c)];
        }
        Self { solver, unloaded, unit, tip_row, target: 0.0 }
    }

    fn dim(&self) -> usize {
        self.solver.dim()
    }
}

impl NewtonSystem for ControlledSystem<'_> {
    fn residual(&self, z: &[f64]) -> Vec<f64> {
        let (x, p) = z.split_at(self.dim());
        let mut r = self.unloaded.residual_at(x);
        r.iter_mut().zip(&self.unit).for_each(|(r, g)| *r -= p[0] * g);
        r.push(x.iter().zip(&self.tip_row).map(|(a, b)| a * b).sum::<f64>() - self.target);
        r
    }

    /// The residual grows with the load, so the tolerance does too.
    fn tolerance_scale(&self, z: &[f64]) -> f64 {
        z[self.dim()].abs().max(1.0)
    }

    fn solve_linearized(&self, z: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let x = &z[..self.dim()];
        let j = self.unloaded.jacobian_at(x);
        let (nc, kk) = (j.core.n(), j.border());
        let mut right = DMatrix::zeros(nc, kk + 1);
        right.view_mut((0, 0), (nc, kk)).copy_from(&j.right);
        let mut bottom = DMatrix::zeros(kk + 1, nc);
        bottom.view_mut((0, 0), (kk, nc)).copy_from(&j.bottom);
        let mut corner = DMatrix::zeros(kk + 1, kk + 1);
        corner.view_mut((0, 0), (kk, kk)).copy_from(&j.corner);
        for i in 0..nc {
            right[(i, kk)] = -self.unit[i];
            bottom[(kk, i)] = self.tip_row[i];
        }
        for c in 0..kk {
            corner[(c, kk)] = -self.unit[nc + c];
            corner[(kk, c)] = self.tip_row[nc + c];
        }
        let m = BorderedMatrix { core: j.core, right, bottom, corner };
        m.solve(rhs)
    }
}

/// Projected Hessian and Gram matrix at `x`, for stability.
fn stability(d: &Discretization, x: &[f64]) -> Result<(f64, usize)> {
    let solver = d.solver();
    let u = solver.reconstruct(x);
    let h = solver.project_operator(&d.model.hessian(&u));
    let mass = d.cg.mass().clone();
    let count_below = |sigma: f64| -> Result<usize> {
        let mut core = h.core.clone();
        let b = core.kl().max(mass.kl());
        let mut shifted = BandMatrix::zeros(core.n(), b.max(core.ku()), b.max(core.ku()));
        for i in 0..core.n() {
            let (lo, hi) = core.row_range(i);
            for j in lo..hi {
                shifted.add(i, j, core.get(i, j));
            }
            let (lo, hi) = mass.row_range(i);
            for j in lo..hi {
                shifted.add(i, j, -sigma * mass.get(i, j));
            }
        }
        core = shifted;
        let kk = h.border();
        let corner = &h.corner - DMatrix::identity(kk, kk) * sigma;
        let m = BorderedMatrix { core, right: h.right.clone(), bottom: h.bottom.clone(), corner };
        let (neg, zero) = m.inertia()?;
        Ok(neg + zero)
    };
    let negatives = count_below(0.0)?;
    let scale = h.core.max_abs().max(h.corner.amax()).max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (-scale, scale);
    while count_below(lo)? > 0 {
        lo *= 2.0;
    }
    while count_below(hi)? == 0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-13 * scale || mid == lo || mid == hi {
            break;
        }
        if count_below(mid)? > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((0.5 * (lo + hi), negatives))
}

/// Branch tracer under tip-displacement control.
struct Tracer<'a> {
    d: &'a Discretization,
    sys: ControlledSystem<'a>,
    opts: NewtonOptions,
}

impl Tracer<'_> {
    fn solve_at(&mut self, target: f64, guess: &[f64]) -> Result<Vec<f64>> {
        self.sys.target = target;
        Ok(newton(&self.sys, guess.to_vec(), &self.opts)?.x)
    }

    fn point(&self, z: &[f64]) -> Result<BranchPoint> {
        let n = self.sys.dim();
        let (min_eigenvalue, negatives) = stability(self.d, &z[..n])?;
        Ok(BranchPoint {
            load: z[n],
            u: DisplacementField::new(self.sys.solver.reconstruct(&z[..n]))?,
            min_eigenvalue,
            negative_eigenvalues: negatives,
            stable: negatives == 0,
        })
    }

    /// Golden-section refinement of a load extremum on `[a, b]`.
    fn refine(&mut self, mut a: f64, mut b: f64, guess: &[f64], kind: FoldKind) -> Result<Fold> {
        let sign = if kind == FoldKind::Upper { 1.0 } else { -1.0 };
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let n = self.sys.dim();
        let mut z = guess.to_vec();
        let eval = |t: &mut Self, s: f64, z: &mut Vec<f64>| -> Result<f64> {
            *z = t.solve_at(s, z)?;
            Ok(sign * z[n])
        };
        let mut c = b - g * (b - a);
        let mut e = a + g * (b - a);
        let mut fc = eval(self, c, &mut z)?;
        let mut fe = eval(self, e, &mut z)?;
        for _ in 0..60 {
            if (b - a).abs() <= 1e-12 * self.d.cg.n_atoms() as f64 * b.abs().max(1e-300) {
                break;
            }
            if fc > fe {
                b = e;
                e = c;
                fe = fc;
                c = b - g * (b - a);
                fc = eval(self, c, &mut z)?;
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + g * (b - a);
                fe = eval(self, e, &mut z)?;
            }
        }
        let (s, f) = if fc > fe { (c, fc) } else { (e, fe) };
        Ok(Fold { load: sign * f, tip_displacement: s, kind })
    }
}

/// Traces the equilibrium branches for loads in `load_range`.
///
/// The tip displacement is stepped from zero to `1.5 u_cut` in `steps` increments,
/// with the load as an extra unknown, so all three branches are followed in one pass.
/// Points whose load falls outside `load_range` are dropped; folds are refined
/// by golden-section search on the load.
pub fn bifurcation_sweep(
    model: &CrackModel,
    method: &CrackMethod,
    cg: Option<&CGMap>,
    load_range: (f64, f64),
    steps: usize,
) -> Result<BifurcationDiagram> {
    if steps < 2 || !(load_range.0 <= load_range.1) {
        return Err(AccError::InvalidParameter("sweep needs at least two steps and an ordered load range".into()));
    }
    let d = Discretization::new(&model.with_load(0.0), method, cg)?;
    let sys = ControlledSystem::new(&d, model);
    let eps = model.chain.epsilon();
    let opts = NewtonOptions { tol: 1e-12 * eps * eps, ..NewtonOptions::default() };
    let n = sys.dim();
    let mut tracer = Tracer { d: &d, sys, opts };
    let delta_max = 1.5 * model.u_cut;
    let h0 = delta_max / steps as f64;
    let mut z = vec![0.0; n + 1];
    let mut s = 0.0;
    let mut trace: Vec<(f64, Vec<f64>)> = vec![(0.0, z.clone())];
    let mut prev: Option<Vec<f64>> = None;
    let mut branch_lost = None;
    'trace: while s < delta_max - 1e-12 * delta_max {
        let mut h = h0.min(delta_max - s);
        let mut halvings = 0;
        loop {
            let guess: Vec<f64> = match &prev {
                Some(p) => z.iter().zip(p).map(|(a, b)| a + (a - b) * h / h0).collect(),
                None => z.clone(),
            };
            match tracer.solve_at(s + h, &guess) {
                Ok(next) => {
                    prev = Some(z.clone());
                    z = next;
                    s += h;
                    break;
                }
                Err(_) if halvings < 10 => {
                    h *= 0.5;
                    halvings += 1;
                }
                Err(_) => {
                    warn!("{}", AccError::BranchLost { load: z[n] });
                    branch_lost = Some(z[n]);
                    break 'trace;
                }
            }
        }
        trace.push((s, z.clone()));
    }
    let mut folds = Vec::new();
    for k in 1..trace.len() - 1 {
        let (pl, pc, pr) = (trace[k - 1].1[n], trace[k].1[n], trace[k + 1].1[n]);
        let kind = if pc > pl && pc >= pr {
            FoldKind::Upper
        } else if pc < pl && pc <= pr {
            FoldKind::Lower
        } else {
            continue;
        };
        let guess = trace[k].1.clone();
        folds.push(tracer.refine(trace[k - 1].0, trace[k + 1].0, &guess, kind)?);
    }
    let mut points = Vec::new();
    for (_, z) in &trace {
        let p = z[n];
        if p >= load_range.0 && p <= load_range.1 {
            points.push(tracer.point(z)?);
        }
    }
    Ok(BifurcationDiagram { method_tag: d.tag.to_string(), points, folds, branch_lost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgspace::{build_cgmap, Grading};
    use crate::model::Potential;
    use crate::solvers::max_norm;

    fn standard_model(n: usize, load: f64) -> CrackModel {
        let chain = Chain::new(n, Potential::harmonic(4.0, 0.4), BoundarySpec::Traction { load }).unwrap();
        CrackModel::new(&chain, 0.5, 0.5, n / 2 + 2).unwrap()
    }

    #[test]
    fn gamma_endpoints_and_smoothness() {
        let m = standard_model(64, 1.0);
        assert_eq!(gamma(0.0, &m), 0.0);
        let g0 = gamma(m.u_cut(), &m);
        for u in [0.5, 0.7, 3.0] {
            assert_eq!(gamma(u, &m), g0);
        }
        assert_eq!(m.tip_bond(0.5).1, 0.0);
        assert!(m.tip_bond(0.5 - 1e-9).1.abs() < 1e-15);
    }

    #[test]
    fn gamma_matches_numeric_integral() {
        let m = standard_model(64, 1.0);
        let (c, eps) = (m.u_cut(), m.chain().epsilon());
        let integrand = |v: f64| m.k2() / (c * c) * v * ((v - c) / eps).powi(2);
        // composite Simpson on a polynomial integrand of degree three is exact up to rounding
        let (a, b, k) = (0.0, c / 2.0, 64);
        let h = (b - a) / k as f64;
        let mut s = integrand(a) + integrand(b);
        for i in 1..k {
            s += integrand(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let numeric = s * h / 3.0;
        assert!((numeric - gamma(c / 2.0, &m)).abs() <= 1e-12 * numeric.abs(), "{numeric} {}", gamma(c / 2.0, &m));
    }

    #[test]
    fn traction_split_for_paper_parameters() {
        let (f1, f2) = traction_forces(&standard_model(64, 1.0));
        assert!((f1 - 6.0 / 7.0).abs() < 1e-15 && (f2 - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(traction_forces(&standard_model(64, 0.0)), (0.0, 0.0));
    }

    #[test]
    fn energy_at_rest_is_surface_energy() {
        let m = standard_model(64, 0.0);
        let e = crack_energy(&m, &vec![0.0; 64]).unwrap();
        let expected = (m.tip() - 1) as f64 * gamma(m.u_cut(), &m);
        assert!((e - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn force_and_hessian_are_energy_derivatives() {
        let m = standard_model(48, 3.0);
        let sys = m.atomistic().unwrap();
        let eps = m.chain().epsilon();
        let u: Vec<f64> = (0..48).map(|j| if j == 47 { 0.0 } else { 0.02 * (((j * 5) % 7) as f64 + 1.0) }).collect();
        let f = sys.force(&u);
        let h = 1e-6;
        for j in 0..47 {
            let mut up = u.clone();
            up[j] += h;
            let mut dn = u.clone();
            dn[j] -= h;
            let g = (crack_energy(&m, &up).unwrap() - crack_energy(&m, &dn).unwrap()) / (2.0 * h) * eps * eps;
            assert!((g + f[j]).abs() <= 1e-6 * max_norm(&f), "atom {j}: {g} vs {}", -f[j]);
            let fu = sys.force(&up);
            let fd = sys.force(&dn);
            let hess = sys.hessian(&u);
            for i in j.saturating_sub(2)..(j + 3).min(47) {
                let fdh = -(fu[i] - fd[i]) / (2.0 * h);
                assert!((fdh - hess.get(i, j)).abs() <= 1e-5 * hess.max_abs(), "({i}, {j})");
            }
        }
    }

    #[test]
    fn zero_load_gives_zero_displacement() {
        let m = standard_model(64, 0.0);
        let r = solve_crack(&m, &CrackMethod::Atomistic, None).unwrap();
        assert!(r.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn traction_gives_uniform_strain_at_free_end() {
        let m = standard_model(256, 1.0);
        let r = solve_crack(&m, &CrackMethod::Atomistic, None).unwrap();
        let eps = m.chain().epsilon();
        let grads: Vec<f64> = (0..10).map(|j| (r.u[j + 1] - r.u[j]) / eps).collect();
        let spread = grads.iter().fold(0.0f64, |a, g| a.max((g - grads[0]).abs()));
        assert!(spread <= 1e-8 * grads[0].abs(), "{grads:?}");
        assert!(r.u[0] > r.u[1], "the load opens the free end most");
    }

    #[test]
    fn truncation_is_exponentially_small() {
        // with the load scaled by 1/ε² the discrete problems differ only in the right truncation
        let short = standard_model(128, 1.0);
        let long_chain = Chain::new(256, Potential::harmonic(4.0, 0.4), BoundarySpec::Traction { load: 4.0 }).unwrap();
        let long = CrackModel::new(&long_chain, 0.5, 0.5, short.tip()).unwrap();
        let a = solve_crack(&short, &CrackMethod::Atomistic, None).unwrap();
        let b = solve_crack(&long, &CrackMethod::Atomistic, None).unwrap();
        let tip = short.tip() - 1;
        let rel = (a.u[tip] - b.u[tip]).abs() / b.u[tip].abs();
        assert!(rel <= 1e-12, "{rel}");
        assert!((a.u[0] - b.u[0]).abs() <= 1e-12 * b.u[0].abs());
    }

    #[test]
    fn galerkin_on_atomistic_partition_matches_atomistic() {
        let m = standard_model(64, 2.0);
        let cg = build_cgmap(m.chain(), &RegionPartition::all_atomistic(64)).unwrap();
        let a = solve_crack(&m, &CrackMethod::Atomistic, None).unwrap();
        let g = solve_crack(&m, &CrackMethod::Galerkin, Some(&cg)).unwrap();
        assert!(crate::reduction::max_abs_diff(&a.u, &g.u) <= 1e-14);
        let two = RegionPartition::two_region(64, 32, &Grading::Uniform { stride: 4 }, 0).unwrap();
        let cg2 = build_cgmap(m.chain(), &two).unwrap();
        assert!(solve_crack(&m, &CrackMethod::Qnl, Some(&cg2)).is_ok());
        assert!(solve_crack(&m, &CrackMethod::ForceBased, Some(&cg2)).is_ok());
    }
}
