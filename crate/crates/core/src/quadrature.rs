//! Cauchy-Born quadrature on continuum elements.
//!
//! On an element of `L` bonds under a linear displacement every first bond
//! sees the same deformation gradient, so the element energy is `L·W(F)` with
//! `W(F) = U₁(F) + U₂(2F)`. This is realized at the bond level: a
//! second-neighbour bond whose two first bonds both lie in quadrature elements
//! is replaced by `½ U₂(2F)` on each of them. Bonds touching any other element
//! stay exact, which keeps the seams free of ghost forces.

use crate::cgspace::{CGMap, ElementKind, RegionPartition};
use crate::error::{AccError, Result};
use crate::model::{Chain, ExternalForce, ForceModel, Potential, Shell, Term, TermModel};
use crate::reduction::project_band;
use crate::solvers::BandMatrix;

/// Continuum energy density of the chain per unit cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CauchyBorn {
    potential: Potential,
}

pub fn cauchy_born(potential: Potential) -> CauchyBorn {
    CauchyBorn { potential }
}

impl CauchyBorn {
    /// `W(F) = U₁(F) + U₂(2F)`.
    pub fn energy_density(&self, f: f64) -> f64 {
        self.potential.eval(Shell::First, f).0 + self.potential.eval(Shell::Second, 2.0 * f).0
    }

    /// `P = dW/dF`.
    pub fn stress(&self, f: f64) -> f64 {
        self.potential.eval(Shell::First, f).1 + 2.0 * self.potential.eval(Shell::Second, 2.0 * f).1
    }

    /// `C = dP/dF`.
    pub fn stiffness(&self, f: f64) -> f64 {
        self.potential.eval(Shell::First, f).2 + 4.0 * self.potential.eval(Shell::Second, 2.0 * f).2
    }
}

/// Element index of each first bond `(j, j+1)`, by 0-based left atom.
fn element_of_bond(partition: &RegionPartition) -> Vec<usize> {
    let mut out = vec![0; partition.n_atoms().saturating_sub(1)];
    for (e, el) in partition.elements().iter().enumerate() {
        out[el.left..el.right].iter_mut().for_each(|v| *v = e);
    }
    out
}

/// Bond terms with second-neighbour bonds reconstructed when both halves lie in continuum elements.
pub fn quadrature_terms(chain: &Chain, partition: &RegionPartition) -> Result<Vec<Term>> {
    let n = chain.n();
    if partition.n_atoms() != n {
        return Err(AccError::DimensionMismatch { expected: n, got: partition.n_atoms() });
    }
    let owner = element_of_bond(partition);
    let elements = partition.elements();
    // first bond between sites (s, s+1) is atoms (s−1, s); ghost bonds are never in an element
    let is_quad = |s: usize| -> bool {
        s >= 1 && s < n && elements[owner[s - 1]].kind == ElementKind::Continuum
    };
    let mut terms = Vec::with_capacity(3 * n);
    for t in chain.atomistic_terms() {
        match t {
            Term::Pair { i, shell: Shell::Second, .. } => {
                // a bond straddling a seam with exact summation stays whole, so uniform strain is reproduced
                if is_quad(i) && is_quad(i + 1) {
                    terms.push(Term::Recon { i, weight: 0.5 });
                    terms.push(Term::Recon { i: i + 1, weight: 0.5 });
                } else {
                    terms.push(t);
                }
            }
            other => terms.push(other),
        }
    }
    Ok(terms)
}

/// Force density at a fractional atom position, for the midpoint rule.
fn density_at(chain: &Chain, f: &ExternalForce, values: &[f64], pos: f64) -> f64 {
    let x = pos * chain.epsilon();
    match f {
        ExternalForce::HalfSine => {
            if x > 0.5 {
                (std::f64::consts::PI * x).sin()
            } else {
                0.0
            }
        }
        ExternalForce::FullSine => (std::f64::consts::PI * x).sin(),
        _ => {
            let lo = pos.floor() as usize;
            let t = pos - lo as f64;
            if t == 0.0 {
                values[lo]
            } else {
                (1.0 - t) * values[lo] + t * values[lo + 1]
            }
        }
    }
}

/// Atom-level load whose projection is the quadrature load vector.
///
/// Atoms inside quadrature elements carry nothing; each node collects, per
/// adjacent element, half of its own force for exact elements or the
/// midpoint share `L·f_mid/2` for quadrature elements. Point forces are summed exactly.
pub fn quadrature_load(chain: &Chain, partition: &RegionPartition, f: &ExternalForce) -> Result<Vec<f64>> {
    let values = f.values(chain)?;
    if f.is_point() {
        return Ok(values);
    }
    let n = chain.n();
    let mut g = vec![0.0; n];
    let elements = partition.elements();
    for el in elements {
        if el.kind == ElementKind::Continuum {
            let len = el.len() as f64;
            let mid = density_at(chain, f, &values, 0.5 * (el.left + el.right) as f64);
            g[el.left] += 0.5 * len * mid;
            g[el.right] += 0.5 * len * mid;
        } else {
            g[el.left] += 0.5 * values[el.left];
            g[el.right] += 0.5 * values[el.right];
            for j in el.left + 1..el.right {
                g[j] += values[j];
            }
        }
    }
    // chain ends have a single adjacent element
    if let (Some(first), Some(last)) = (elements.first(), elements.last()) {
        if first.kind != ElementKind::Continuum {
            g[0] += 0.5 * values[0];
        }
        if last.kind != ElementKind::Continuum {
            g[n - 1] += 0.5 * values[n - 1];
        }
    }
    Ok(g)
}

/// Full chain model with quadrature on the continuum elements of `partition`.
pub fn quadrature_model(chain: &Chain, partition: &RegionPartition, f: &ExternalForce) -> Result<TermModel> {
    let terms = quadrature_terms(chain, partition)?;
    let load = quadrature_load(chain, partition, f)?;
    TermModel::with_load(chain, terms, load)
}

/// Coarse mass, load and stiffness with quadrature on continuum elements.
#[derive(Clone, Debug)]
pub struct QuadratureSystem {
    /// `M̂`, per unit-cell volume.
    pub mass: BandMatrix,
    /// `F̂`, scaled by `ε²` like the atomistic load.
    pub load: Vec<f64>,
    /// `K̂` at the given state.
    pub stiffness: BandMatrix,
}

/// Midpoint-rule coarse operators at displacement `u`.
pub fn assemble_quadrature(cg: &CGMap, chain: &Chain, f: &ExternalForce, u: &[f64]) -> Result<QuadratureSystem> {
    let partition = cg.partition();
    let model = quadrature_model(chain, partition, f)?;
    if u.len() != chain.n() {
        return Err(AccError::DimensionMismatch { expected: chain.n(), got: u.len() });
    }
    let mut mass = BandMatrix::zeros(cg.dim(), 1, 1);
    for el in partition.elements() {
        let (l, r) = (el.left, el.right);
        if el.kind == ElementKind::Continuum {
            let len = el.len() as f64;
            let local = [[len / 3.0, len / 6.0], [len / 6.0, len / 3.0]];
            let slots = [cg.slot_of_atom(l), cg.slot_of_atom(r)];
            for a in 0..2 {
                for b in 0..2 {
                    if let (Some(p), Some(q)) = (slots[a], slots[b]) {
                        mass.add(p, q, local[a][b]);
                    }
                }
            }
        } else {
            for j in l..=r {
                let w = if j == l || j == r { 0.5 } else { 1.0 };
                let nz = cg.row_entries(j);
                for &(p, vp) in &nz {
                    for &(q, vq) in &nz {
                        mass.add(p, q, w * vp * vq);
                    }
                }
            }
        }
    }
    // the two chain-end atoms belong to a single element
    let elements = partition.elements();
    for (j, el) in [(0, elements[0]), (chain.n() - 1, elements[elements.len() - 1])] {
        if el.kind == ElementKind::Continuum {
            continue;
        }
        let nz = cg.row_entries(j);
        for &(p, vp) in &nz {
            for &(q, vq) in &nz {
                mass.add(p, q, 0.5 * vp * vq);
            }
        }
    }
    let load = cg.restrict(model.load());
    let stiffness = project_band(cg, &model.stiffness(u));
    Ok(QuadratureSystem { mass, load, stiffness })
}
