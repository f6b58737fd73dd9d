//! Builds models from a configuration and runs the four experiment kinds.

use std::time::{Duration, Instant};

use acc_core::analysis::{compare as compare_fields, fit_rates, ConvergenceStudy, ErrorReport};
use acc_core::baselines::{force_based_model, qnl_model};
use acc_core::cgspace::{build_cgmap, CGMap, Grading, RegionPartition};
use acc_core::crack::{bifurcation_sweep, solve_crack, solve_crack_from, BifurcationDiagram, CrackMethod, CrackModel, GammaScale};
use acc_core::enrichment::{build_enrichment, extend_space, free_hessian, EnrichmentConfig, SeedRule};
use acc_core::model::{solve_equilibrium, BoundarySpec, Chain, DisplacementField, ExternalForce, ForceModel, Potential};
use acc_core::quadrature::quadrature_model;
use acc_core::reduction::{exact_a1_oracle, GalerkinSolver, SolveReport};
use acc_core::solvers::NewtonOptions;
use acc_core::AccError;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::*;
use crate::error::RunError;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub jobs: usize,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, seed: 0 }
    }
}

/// A chain with its load, or a crack model.
struct Problem {
    chain: Chain,
    force: ExternalForce,
    crack: Option<CrackModel>,
}

fn setup<T>(r: acc_core::Result<T>) -> Result<T, RunError> {
    r.map_err(RunError::Setup)
}

/// Sorts core errors into configuration problems and numerical failures.
fn classify(method: &str, atoms: usize, e: AccError) -> RunError {
    match e {
        AccError::InvalidParameter(_)
        | AccError::InvalidPartition(_)
        | AccError::DimensionMismatch { .. }
        | AccError::OracleCapExceeded { .. } => RunError::Setup(e),
        source => RunError::Solver { method: method.to_string(), atoms, source },
    }
}

fn atom_index(lc: &LoadedConfig, table: &str, key: &str, pos: AtomPosition, n: usize) -> Result<usize, RunError> {
    let j = pos.resolve(n);
    if j < 1 || j > n as i64 {
        return Err(lc.error(table, 0, key, format!("atom {j} lies outside the chain of {n} atoms")).into());
    }
    Ok(j as usize)
}

fn build_problem(lc: &LoadedConfig, n: usize) -> Result<Problem, RunError> {
    let c = &lc.config;
    let potential = match c.chain.potential {
        PotentialKind::Harmonic => Potential::harmonic(c.chain.k0, c.chain.k1.unwrap_or(0.0)),
        PotentialKind::LennardJones => Potential::lennard_jones_matching(c.chain.k0),
    };
    let boundary = match c.chain.boundary {
        BoundaryKind::Pinned => BoundarySpec::DirichletPinned,
        BoundaryKind::Extrapolated => BoundarySpec::DirichletExtrapolated,
        BoundaryKind::Traction => BoundarySpec::Traction { load: c.chain.traction.unwrap_or(0.0) },
    };
    let chain = setup(Chain::new(n, potential, boundary))?;
    let force = match c.force.kind {
        ForceKind::Zero => ExternalForce::Zero,
        ForceKind::Point => ExternalForce::PointForce {
            atom: atom_index(lc, "force", "atom_offset", c.force.atom(), n)?,
            magnitude: c.force.magnitude,
        },
        ForceKind::HalfSine => ExternalForce::HalfSine,
        ForceKind::FullSine => ExternalForce::FullSine,
    };
    let force = match (&force, c.force.magnitude) {
        (ExternalForce::HalfSine | ExternalForce::FullSine, m) if m != 1.0 => {
            ExternalForce::Custom(setup(force.values(&chain))?.into_iter().map(|v| v * m).collect())
        }
        _ => force,
    };
    let crack = match &c.crack {
        Some(cr) => {
            let tip = atom_index(lc, "crack", "tip_offset", cr.tip(), n)?;
            let scale = match cr.gamma_scale {
                GammaScaleKind::Single => GammaScale::Single,
                GammaScaleKind::Matched => GammaScale::Matched,
            };
            Some(setup(CrackModel::new(&chain, cr.k2, cr.u_cut, tip))?.with_gamma_scale(scale))
        }
        None => None,
    };
    Ok(Problem { chain, force, crack })
}

fn grading(mesh: &MeshSpec, n: usize) -> Grading {
    let size = match mesh.reference_atoms {
        Some(r) => (mesh.element_size * n / r).max(1),
        None => mesh.element_size,
    };
    match mesh.mesh {
        MeshKind::Uniform => Grading::Uniform { stride: size },
        MeshKind::Doubling => Grading::doubling_repeated(size, mesh.repeat),
    }
}

fn build_partition(lc: &LoadedConfig, mesh: &MeshSpec, n: usize) -> Result<RegionPartition, RunError> {
    let p = &lc.config.partition;
    let g = grading(mesh, n);
    let partition = match p.layout {
        Layout::AllAtomistic => RegionPartition::all_atomistic(n),
        Layout::AllContinuum => setup(RegionPartition::all_continuum(n, &g))?,
        Layout::TwoRegion => {
            let a = atom_index(lc, "partition", "interface_offset", p.interface(), n)?;
            setup(RegionPartition::two_region(n, a - 1, &g, mesh.band))?
        }
        Layout::FiveRegion => {
            let (l, r) = p.block();
            let a = atom_index(lc, "partition", "block_left_offset", l, n)?;
            let b = atom_index(lc, "partition", "block_right_offset", r, n)?;
            setup(RegionPartition::five_region(n, a - 1, b - 1, &g, mesh.band))?
        }
    };
    Ok(partition)
}

/// Result of one method at one chain length.
#[derive(Clone, Debug)]
pub struct Cell {
    pub tag: String,
    pub atoms: usize,
    pub report: SolveReport,
    pub errors: ErrorReport,
    pub m: Option<usize>,
    pub ell: Option<usize>,
    pub elapsed: Duration,
}

fn enrichment_config(method: &MethodConfig, m: usize) -> EnrichmentConfig {
    let mut cfg = EnrichmentConfig::new(m, method.ell.unwrap_or(1));
    cfg.selection = match method.seeds {
        SeedKind::Balanced => SeedRule::Balanced,
        SeedKind::ContinuumSide => SeedRule::ContinuumSide,
    };
    if let Some(t) = method.deflation_tol {
        cfg.deflation_tol = t;
    }
    cfg
}

/// Random or zero starting coefficients; fixed atoms of full-chain models stay at zero.
struct Start {
    guess: InitialGuess,
    amplitude: f64,
    seed: u64,
}

impl Start {
    fn draw(&self, k: usize, fixed: Option<&[bool]>) -> Vec<f64> {
        match self.guess {
            InitialGuess::Zero => vec![0.0; k],
            InitialGuess::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..k)
                    .map(|i| {
                        let v = rng.random_range(-1.0..=1.0) * self.amplitude;
                        if fixed.is_some_and(|f| f[i]) {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect()
            }
        }
    }
}

fn solve_full_from(model: &dyn ForceModel, tag: &str, start: &Start) -> acc_core::Result<SolveReport> {
    let fixed = model.fixed();
    let u0 = start.draw(model.n_atoms(), Some(fixed));
    let out = solve_equilibrium(model, u0, &NewtonOptions::default())?;
    Ok(SolveReport {
        u: DisplacementField::new(out.x.clone())?,
        coeffs: out.x,
        residual_norm: out.residual,
        newton_iters: out.iterations,
        method_tag: tag.to_string(),
        dofs: fixed.iter().filter(|f| !**f).count(),
    })
}

fn galerkin_from(model: &dyn ForceModel, cg: &CGMap, extra: Option<nalgebra::DMatrix<f64>>, tag: &str, start: &Start) -> acc_core::Result<SolveReport> {
    let solver = match extra {
        Some(v) => GalerkinSolver::with_extra(model, cg, v),
        None => GalerkinSolver::new(model, cg),
    };
    let x0 = start.draw(solver.dim(), None);
    solver.report_from(tag, Some(x0), &NewtonOptions::default())
}

fn interface_of(partition: &RegionPartition) -> acc_core::Result<usize> {
    partition
        .interfaces()
        .first()
        .copied()
        .ok_or_else(|| AccError::InvalidPartition("partition has no atomistic/continuum interface".into()))
}

fn run_point(problem: &Problem, method: &MethodConfig, partition: &RegionPartition, m: Option<usize>, tag: &str, start: &Start) -> acc_core::Result<SolveReport> {
    let chain = &problem.chain;
    let f = &problem.force;
    match method.kind {
        MethodKind::Atomistic => solve_full_from(&chain.term_model(f)?, tag, start),
        MethodKind::Galerkin | MethodKind::Enriched => {
            let cg = build_cgmap(chain, partition)?;
            let extra = match method.kind {
                MethodKind::Enriched => {
                    let a = free_hessian(&chain.term_model(&ExternalForce::Zero)?, &vec![0.0; chain.n()]);
                    let cfg = enrichment_config(method, m.unwrap_or(1));
                    Some(extend_space(&cg, &build_enrichment(&cg, &a, &cfg)?)?)
                }
                _ => None,
            };
            if method.quadrature {
                galerkin_from(&quadrature_model(chain, partition, f)?, &cg, extra, tag, start)
            } else {
                galerkin_from(&chain.term_model(f)?, &cg, extra, tag, start)
            }
        }
        MethodKind::Qnl => solve_full_from(&qnl_model(chain, interface_of(partition)?, f)?, tag, start),
        MethodKind::ForceBased => solve_full_from(&force_based_model(chain, interface_of(partition)?, f)?, tag, start),
    }
}

fn crack_method(method: &MethodConfig, m: Option<usize>) -> CrackMethod {
    match method.kind {
        MethodKind::Atomistic => CrackMethod::Atomistic,
        MethodKind::Galerkin => CrackMethod::Galerkin,
        MethodKind::Enriched => CrackMethod::Enriched(enrichment_config(method, m.unwrap_or(1))),
        MethodKind::Qnl => CrackMethod::Qnl,
        MethodKind::ForceBased => CrackMethod::ForceBased,
    }
}

fn run_crack(model: &CrackModel, method: &MethodConfig, partition: &RegionPartition, m: Option<usize>, tag: &str, start: &Start) -> acc_core::Result<SolveReport> {
    let cm = crack_method(method, m);
    let cg = match method.kind {
        MethodKind::Atomistic => None,
        _ => Some(CGMap::new(partition, &model.chain().fixed())?),
    };
    let mut report = solve_crack_from(model, &cm, cg.as_ref(), |k| start.draw(k, None))?;
    report.method_tag = tag.to_string();
    Ok(report)
}

fn reference(problem: &Problem, n: usize) -> Result<DisplacementField, RunError> {
    let r = match &problem.crack {
        Some(model) => solve_crack(model, &CrackMethod::Atomistic, None).map(|r| r.u),
        None => acc_core::model::solve_atomistic(&problem.chain, &problem.force),
    };
    r.map_err(|e| classify("atomistic reference", n, e))
}

/// Everything one method needs at one chain length, resolved before any solve.
struct Job<'a> {
    index: usize,
    method: &'a MethodConfig,
    atoms: usize,
    m: Option<usize>,
}

fn run_job(lc: &LoadedConfig, problem: &Problem, reference: &[f64], job: &Job, opts: &RunOptions) -> Result<Cell, RunError> {
    let c = &lc.config;
    let n = job.atoms;
    let tag = job.method.tag();
    let mesh = job.method.mesh_spec(c.partition.mesh_spec());
    let partition = build_partition(lc, &mesh, n)?;
    let start = Start {
        guess: c.solver.initial_guess,
        amplitude: c.solver.perturbation,
        seed: opts.seed.wrapping_add(job.index as u64),
    };
    let t0 = Instant::now();
    let report = match &problem.crack {
        Some(model) => run_crack(model, job.method, &partition, job.m, &tag, &start),
        None => run_point(problem, job.method, &partition, job.m, &tag, &start),
    }
    .map_err(|e| classify(&tag, n, e))?;
    let elapsed = t0.elapsed();
    let errors = compare_fields(&report.u, reference, problem.chain.epsilon(), &tag).map_err(|e| classify(&tag, n, e))?;
    let ell = (job.method.kind == MethodKind::Enriched).then(|| job.method.ell.unwrap_or(1));
    Ok(Cell { tag, atoms: n, report, errors, m: job.m, ell, elapsed })
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool")
}

/// Runs every configured method on the chain of `chain.atoms` atoms.
pub fn run_methods(lc: &LoadedConfig, mode: Mode, opts: &RunOptions) -> Result<(DisplacementField, Vec<Cell>), RunError> {
    lc.validate(mode)?;
    let n = lc.config.chain.atoms.expect("validated");
    let problem = build_problem(lc, n)?;
    let reference = reference(&problem, n)?;
    let jobs: Vec<Job> = lc
        .config
        .methods
        .iter()
        .enumerate()
        .map(|(index, method)| Job { index, method, atoms: n, m: method.m })
        .collect();
    let cells = pool(opts.jobs).install(|| {
        jobs.par_iter().map(|job| run_job(lc, &problem, &reference, job, opts)).collect::<Result<Vec<_>, _>>()
    })?;
    Ok((reference, cells))
}

/// Exact `A1` row norms for the single configured Galerkin partition: `(node atom, norm)`.
pub fn a1_row_norms(lc: &LoadedConfig) -> Result<Vec<(usize, f64)>, RunError> {
    let c = &lc.config;
    let n = c.chain.atoms.expect("validated");
    let problem = build_problem(lc, n)?;
    let mesh = c.methods[0].mesh_spec(c.partition.mesh_spec());
    let partition = build_partition(lc, &mesh, n)?;
    let cg = setup(build_cgmap(&problem.chain, &partition))?;
    let model = setup(problem.chain.term_model(&ExternalForce::Zero))?;
    let a = free_hessian(&model, &vec![0.0; n]);
    let a1 = exact_a1_oracle(&cg, &a).map_err(|e| classify("a1 oracle", n, e))?;
    let atoms = cg.active_atoms();
    Ok((0..a1.nrows()).map(|i| (atoms[i], a1.row(i).norm())).collect())
}

/// One method's ladder of errors with its fitted rates.
#[derive(Clone, Debug)]
pub struct MethodStudy {
    pub tag: String,
    pub cells: Vec<Cell>,
    /// `None` when too few errors lie above the saturation floor.
    pub fit: Option<ConvergenceStudy>,
}

pub fn run_study(lc: &LoadedConfig, opts: &RunOptions) -> Result<Vec<MethodStudy>, RunError> {
    lc.validate(Mode::Converge)?;
    let c = &lc.config;
    let ladder = &c.study.as_ref().expect("validated").atoms;
    let problems = ladder.iter().map(|&n| build_problem(lc, n)).collect::<Result<Vec<_>, _>>()?;
    let references = pool(opts.jobs).install(|| {
        ladder.par_iter().zip(&problems).map(|(&n, p)| reference(p, n)).collect::<Result<Vec<_>, _>>()
    })?;
    let mut jobs = Vec::new();
    for (mi, method) in c.methods.iter().enumerate() {
        for (k, &n) in ladder.iter().enumerate() {
            let m = method.m_schedule.as_ref().map(|s| s[k]).or(method.m);
            jobs.push((k, Job { index: mi * ladder.len() + k, method, atoms: n, m }));
        }
    }
    let cells = pool(opts.jobs).install(|| {
        jobs.par_iter()
            .map(|(k, job)| run_job(lc, &problems[*k], &references[*k], job, opts))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut out = Vec::new();
    for chunk in cells.chunks(ladder.len()) {
        let tag = chunk[0].tag.clone();
        let fit = match fit_rates(chunk.iter().map(|c| c.errors.clone()).collect()) {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("{tag}: no rate fit: {e}");
                None
            }
        };
        out.push(MethodStudy { tag, cells: chunk.to_vec(), fit });
    }
    Ok(out)
}

pub fn run_sweep(lc: &LoadedConfig, opts: &RunOptions) -> Result<Vec<BifurcationDiagram>, RunError> {
    lc.validate(Mode::Bifurcate)?;
    let c = &lc.config;
    let n = c.chain.atoms.expect("validated");
    let problem = build_problem(lc, n)?;
    let model = problem.crack.as_ref().expect("validated");
    let sweep = c.sweep.as_ref().expect("validated");
    let work: Vec<_> = c
        .methods
        .iter()
        .map(|method| -> Result<_, RunError> {
            let mesh = method.mesh_spec(c.partition.mesh_spec());
            let partition = build_partition(lc, &mesh, n)?;
            let cg = match method.kind {
                MethodKind::Atomistic => None,
                _ => Some(setup(CGMap::new(&partition, &model.chain().fixed()))?),
            };
            Ok((method, cg))
        })
        .collect::<Result<_, _>>()?;
    pool(opts.jobs).install(|| {
        work.par_iter()
            .map(|(method, cg)| {
                let tag = method.tag();
                let mut d = bifurcation_sweep(model, &crack_method(method, method.m), cg.as_ref(), (sweep.load_min, sweep.load_max), sweep.steps)
                    .map_err(|e| classify(&tag, n, e))?;
                d.method_tag = tag;
                Ok(d)
            })
            .collect()
    })
}
