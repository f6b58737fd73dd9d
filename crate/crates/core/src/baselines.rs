//! Quasi-nonlocal and force-based QC on the full chain, every atom a rep-atom.
//!
//! Atoms flagged local use the Cauchy-Born reconstruction `U₂(2F)` of their
//! first bonds in place of second-neighbour bonds; sites outside the chain
//! inherit the flag of the nearest end atom.

use crate::error::{AccError, Result};
use crate::model::{solve_equilibrium, Chain, DisplacementField, ExternalForce, ForceModel, Shell, Term, TermModel};
use crate::reduction::SolveReport;
use crate::solvers::{BandMatrix, NewtonOptions};

/// Atoms `0..interface` (0-based) are local.
pub fn left_local(n: usize, interface: usize) -> Vec<bool> {
    (0..n).map(|j| j < interface).collect()
}

fn site_local(local: &[bool], s: usize) -> bool {
    let n = local.len();
    local[s.clamp(1, n) - 1]
}

/// QNL bonds: a second-neighbour bond is reconstructed only when both ends are local.
pub fn qnl_terms(chain: &Chain, local: &[bool]) -> Result<Vec<Term>> {
    if local.len() != chain.n() {
        return Err(AccError::DimensionMismatch { expected: chain.n(), got: local.len() });
    }
    let mut terms = Vec::new();
    for t in chain.atomistic_terms() {
        match t {
            Term::Pair { i, j, shell: Shell::Second, .. } if site_local(local, i) && site_local(local, j) => {
                terms.push(Term::Recon { i, weight: 0.5 });
                terms.push(Term::Recon { i: i + 1, weight: 0.5 });
            }
            other => terms.push(other),
        }
    }
    Ok(terms)
}

/// Fully local bonds (local QC with every atom a node).
pub fn local_terms(chain: &Chain) -> Vec<Term> {
    qnl_terms(chain, &vec![true; chain.n()]).expect("mask has chain length")
}

/// Row-wise mix of two force laws; no energy exists.
pub struct ForceBasedModel<A, B> {
    exact: A,
    local: B,
    local_mask: Vec<bool>,
}

impl<A: ForceModel, B: ForceModel> ForceBasedModel<A, B> {
    pub fn new(exact: A, local: B, local_mask: Vec<bool>) -> Result<Self> {
        let n = exact.n_atoms();
        if local.n_atoms() != n || local_mask.len() != n {
            return Err(AccError::DimensionMismatch { expected: n, got: local_mask.len() });
        }
        Ok(Self { exact, local, local_mask })
    }

    fn merge_rows(&self, a: BandMatrix, b: BandMatrix) -> BandMatrix {
        let (kl, ku) = (a.kl().max(b.kl()), a.ku().max(b.ku()));
        let mut k = BandMatrix::zeros(a.n(), kl, ku);
        for i in 0..a.n() {
            let src = if self.local_mask[i] { &b } else { &a };
            let (lo, hi) = src.row_range(i);
            for j in lo..hi {
                k.set(i, j, src.get(i, j));
            }
        }
        k
    }
}

impl<A: ForceModel, B: ForceModel> ForceModel for ForceBasedModel<A, B> {
    fn n_atoms(&self) -> usize {
        self.exact.n_atoms()
    }

    fn fixed(&self) -> &[bool] {
        self.exact.fixed()
    }

    fn force(&self, u: &[f64]) -> Vec<f64> {
        let fa = self.exact.force(u);
        let fb = self.local.force(u);
        (0..u.len()).map(|i| if self.local_mask[i] { fb[i] } else { fa[i] }).collect()
    }

    fn stiffness(&self, u: &[f64]) -> BandMatrix {
        self.merge_rows(self.exact.stiffness(u), self.local.stiffness(u))
    }

    /// Row-mixed; not symmetric near the interface.
    fn hessian(&self, u: &[f64]) -> BandMatrix {
        self.merge_rows(self.exact.hessian(u), self.local.hessian(u))
    }

    fn is_linear(&self) -> bool {
        self.exact.is_linear() && self.local.is_linear()
    }
}

pub fn qnl_model(chain: &Chain, interface: usize, f: &ExternalForce) -> Result<TermModel> {
    check_interface(chain, interface)?;
    TermModel::new(chain, qnl_terms(chain, &left_local(chain.n(), interface))?, f)
}

pub fn force_based_model(chain: &Chain, interface: usize, f: &ExternalForce) -> Result<ForceBasedModel<TermModel, TermModel>> {
    check_interface(chain, interface)?;
    ForceBasedModel::new(chain.term_model(f)?, TermModel::new(chain, local_terms(chain), f)?, left_local(chain.n(), interface))
}

fn check_interface(chain: &Chain, interface: usize) -> Result<()> {
    if interface == 0 || interface >= chain.n() {
        return Err(AccError::InvalidParameter(format!("interface atom {} outside the chain", interface + 1)));
    }
    Ok(())
}

/// Solves any full-chain model to equilibrium from zero.
pub fn solve_full<M: ForceModel + ?Sized>(model: &M, tag: &str) -> Result<SolveReport> {
    let n = model.n_atoms();
    let out = solve_equilibrium(model, vec![0.0; n], &NewtonOptions::default())?;
    Ok(SolveReport {
        u: DisplacementField::new(out.x.clone())?,
        coeffs: out.x,
        residual_norm: out.residual,
        newton_iters: out.iterations,
        method_tag: tag.to_string(),
        dofs: model.fixed().iter().filter(|f| !**f).count(),
    })
}

/// Quasi-nonlocal QC; atoms left of the 0-based `interface` are local.
pub fn solve_qnl(chain: &Chain, interface: usize, f: &ExternalForce) -> Result<SolveReport> {
    solve_full(&qnl_model(chain, interface, f)?, "qnl")
}

/// Force-based QC; atoms left of the 0-based `interface` use the local force.
pub fn solve_force_based(chain: &Chain, interface: usize, f: &ExternalForce) -> Result<SolveReport> {
    solve_full(&force_based_model(chain, interface, f)?, "force_based")
}
