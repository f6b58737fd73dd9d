//! Coarse-grained spaces: region partitions, meshes, the nodal map `Φ`, the
//! mass matrix `M = ΦΦᵀ` and the projections `P = ΦᵀM⁻¹Φ`, `Q = I − P`.
//!
//! Every partition is a sorted set of nodes placed on atom sites. The basis
//! is the piecewise-linear nodal basis on that node set, so in the atomistic
//! region (where every atom is a node) it reduces to Kronecker rows and the
//! node shared by both regions carries an asymmetric hat.
//!
//! Nodes that sit on fixed atoms are inactive: they are kept in the mesh but
//! excluded from `Φ`, so every operator here acts on the free subspace.

use nalgebra::DMatrix;

use crate::error::{AccError, Result};
use crate::model::Chain;
use crate::solvers::{BandCholesky, BandMatrix};

/// Element sizes (in atoms) used when meshing a continuum region.
#[derive(Clone, Debug, PartialEq)]
pub enum Grading {
    Uniform { stride: usize },
    /// Element sizes listed from the interface outward; the last one repeats.
    Graded { sizes: Vec<usize> },
}

impl Grading {
    /// Sizes `1, 2, 4, …` doubling up to `max`.
    pub fn doubling(max: usize) -> Self {
        let mut sizes = vec![1];
        while *sizes.last().unwrap() * 2 <= max {
            sizes.push(sizes.last().unwrap() * 2);
        }
        if *sizes.last().unwrap() != max {
            sizes.push(max);
        }
        Grading::Graded { sizes }
    }

    pub fn size(&self, k: usize) -> usize {
        match self {
            Grading::Uniform { stride } => *stride,
            Grading::Graded { sizes } => sizes[k.min(sizes.len() - 1)],
        }
    }

    /// Sizes `1, 2, 4, …, max` with every size below `max` used `repeat` times.
    pub fn doubling_repeated(max: usize, repeat: usize) -> Self {
        let mut sizes = Vec::new();
        let mut s = 1;
        while s < max {
            sizes.extend(std::iter::repeat_n(s, repeat.max(1)));
            s *= 2;
        }
        sizes.push(max.max(1));
        Grading::Graded { sizes }
    }

    /// Multiplies every size by `factor`, keeping sizes at least one atom.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        match self {
            Grading::Uniform { stride } => Grading::Uniform { stride: s(*stride) },
            Grading::Graded { sizes } => Grading::Graded { sizes: sizes.iter().map(|&v| s(v)).collect() },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Grading::Uniform { stride } => *stride >= 1,
            Grading::Graded { sizes } => !sizes.is_empty() && sizes.iter().all(|&s| s >= 1),
        };
        if ok {
            Ok(())
        } else {
            Err(AccError::InvalidPartition("element sizes must be at least one atom".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Atomistic,
    /// Coarse element next to an interface; forces are summed over atoms exactly.
    Interbedded,
    /// Coarse element eligible for quadrature.
    Continuum,
}

/// Span between consecutive nodes, as 0-based atom indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Element {
    pub left: usize,
    pub right: usize,
    pub kind: ElementKind,
}

impl Element {
    pub fn len(&self) -> usize {
        self.right - self.left
    }

    pub fn is_empty(&self) -> bool {
        self.right == self.left
    }
}

/// Split of the chain into atomistic ranges and meshed continuum ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPartition {
    n: usize,
    nodes: Vec<usize>,
    atomistic: Vec<(usize, usize)>,
    interfaces: Vec<usize>,
    elements: Vec<Element>,
}

/// Nodes from `from` (exclusive) toward `to` (inclusive) following `grading`.
fn mesh_segment(from: usize, to: usize, grading: &Grading) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = from as isize;
    let target = to as isize;
    let dir: isize = if to < from { -1 } else { 1 };
    let mut k = 0;
    loop {
        let s = grading.size(k) as isize;
        let remaining = (target - pos).abs();
        // the last element absorbs any leftover shorter than half a step
        if remaining <= s + s / 2 {
            if remaining > 0 {
                out.push(to);
            }
            break;
        }
        pos += dir * s;
        out.push(pos as usize);
        k += 1;
    }
    out
}

impl RegionPartition {
    /// Every atom is a node.
    pub fn all_atomistic(n: usize) -> Self {
        Self::from_parts(n, (0..n).collect(), vec![(0, n - 1)], 0).expect("trivial partition is valid")
    }

    /// A single continuum region meshed from the left end.
    pub fn all_continuum(n: usize, grading: &Grading) -> Result<Self> {
        grading.validate()?;
        let mut nodes = vec![0];
        nodes.extend(mesh_segment(0, n - 1, grading));
        Self::from_parts(n, nodes, vec![], 0)
    }

    /// Continuum on atoms `0..=interface`, atomistic on `interface..n`.
    ///
    /// The continuum mesh is generated from the interface toward the left end;
    /// `band` elements next to the interface are interbedded.
    pub fn two_region(n: usize, interface: usize, grading: &Grading, band: usize) -> Result<Self> {
        grading.validate()?;
        if interface == 0 || interface >= n - 1 {
            return Err(AccError::InvalidPartition(format!("interface atom {} outside the chain interior", interface + 1)));
        }
        let mut left = mesh_segment(interface, 0, grading);
        left.reverse();
        let mut nodes = left;
        nodes.extend(interface..n);
        Self::from_parts(n, nodes, vec![(interface, n - 1)], band)
    }

    /// Continuum / atomistic / continuum with the atomistic block on atoms `a..=b`.
    pub fn five_region(n: usize, a: usize, b: usize, grading: &Grading, band: usize) -> Result<Self> {
        grading.validate()?;
        if a == 0 || b >= n - 1 || a >= b {
            return Err(AccError::InvalidPartition(format!("atomistic block [{}, {}] must lie inside the chain", a + 1, b + 1)));
        }
        let mut nodes = mesh_segment(a, 0, grading);
        nodes.reverse();
        nodes.extend(a..=b);
        nodes.extend(mesh_segment(b, n - 1, grading));
        Self::from_parts(n, nodes, vec![(a, b)], band)
    }

    /// General constructor: `nodes` must be increasing, start at atom 0 and end at atom `n − 1`;
    /// every atom of an atomistic range must be a node.
    pub fn from_parts(n: usize, nodes: Vec<usize>, atomistic: Vec<(usize, usize)>, band: usize) -> Result<Self> {
        if n < 2 {
            return Err(AccError::InvalidPartition("chain too short".into()));
        }
        if nodes.first() != Some(&0) || nodes.last() != Some(&(n - 1)) {
            return Err(AccError::InvalidPartition("nodes must start at the first atom and end at the last".into()));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AccError::InvalidPartition("nodes must be strictly increasing".into()));
        }
        let mut sorted = atomistic.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(AccError::InvalidPartition("atomistic ranges overlap".into()));
            }
        }
        let is_node = {
            let mut v = vec![false; n];
            nodes.iter().for_each(|&a| v[a] = true);
            v
        };
        for &(a, b) in &sorted {
            if a > b || b >= n {
                return Err(AccError::InvalidPartition(format!("atomistic range [{}, {}] invalid", a + 1, b + 1)));
            }
            if (a..=b).any(|j| !is_node[j]) {
                return Err(AccError::InvalidPartition("every atom of an atomistic range must be a node".into()));
            }
        }
        let in_atomistic = |l: usize, r: usize| sorted.iter().any(|&(a, b)| a <= l && r <= b);
        let mut interfaces = Vec::new();
        for &(a, b) in &sorted {
            if a > 0 {
                interfaces.push(a);
            }
            if b < n - 1 {
                interfaces.push(b);
            }
        }
        let mut elements: Vec<Element> = nodes
            .windows(2)
            .map(|w| Element {
                left: w[0],
                right: w[1],
                kind: if in_atomistic(w[0], w[1]) { ElementKind::Atomistic } else { ElementKind::Continuum },
            })
            .collect();
        // flag `band` continuum elements on each side of every interface
        for &a in &interfaces {
            for dir in [-1isize, 1] {
                let start = if dir < 0 {
                    elements.iter().position(|e| e.right == a)
                } else {
                    elements.iter().position(|e| e.left == a)
                };
                let Some(mut idx) = start.map(|i| i as isize) else { continue };
                let mut count = 0;
                while count < band && idx >= 0 && (idx as usize) < elements.len() {
                    let e = &mut elements[idx as usize];
                    if e.kind == ElementKind::Atomistic {
                        break;
                    }
                    e.kind = ElementKind::Interbedded;
                    count += 1;
                    idx += dir;
                }
            }
        }
        Ok(Self { n, nodes, atomistic: sorted, interfaces, elements })
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    /// Node positions as 0-based atom indices.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn atomistic_ranges(&self) -> &[(usize, usize)] {
        &self.atomistic
    }

    /// Atoms shared by a continuum element and the atomistic region.
    pub fn interfaces(&self) -> &[usize] {
        &self.interfaces
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn is_atomistic_atom(&self, j: usize) -> bool {
        self.atomistic.iter().any(|&(a, b)| a <= j && j <= b)
    }
}

/// Which of the two active nodes touching an atom carry weight, with their values.
#[derive(Clone, Copy, Debug)]
struct AtomWeights {
    /// Index into the node list of the left node of the element holding the atom.
    node: usize,
    left: f64,
    right: f64,
}

/// The coarse-graining map restricted to active nodes, with a cached mass factorization.
#[derive(Clone, Debug)]
pub struct CGMap {
    n: usize,
    partition: RegionPartition,
    /// Active slot of each node, `None` for nodes on fixed atoms.
    slot: Vec<Option<usize>>,
    /// Node index of each active slot.
    active_nodes: Vec<usize>,
    weights: Vec<AtomWeights>,
    free: Vec<bool>,
    mass: BandMatrix,
    mass_chol: BandCholesky,
}

/// Builds `Φ` for `chain` on `partition`.
pub fn build_cgmap(chain: &Chain, partition: &RegionPartition) -> Result<CGMap> {
    CGMap::new(partition, &chain.fixed())
}

impl CGMap {
    pub fn new(partition: &RegionPartition, fixed: &[bool]) -> Result<Self> {
        let n = partition.n_atoms();
        if fixed.len() != n {
            return Err(AccError::DimensionMismatch { expected: n, got: fixed.len() });
        }
        let nodes = partition.nodes();
        for (j, &fx) in fixed.iter().enumerate() {
            if fx && nodes.binary_search(&j).is_err() {
                return Err(AccError::InvalidPartition(format!("fixed atom {} must be a mesh node", j + 1)));
            }
        }
        let mut slot = vec![None; nodes.len()];
        let mut active_nodes = Vec::new();
        for (k, &a) in nodes.iter().enumerate() {
            if !fixed[a] {
                slot[k] = Some(active_nodes.len());
                active_nodes.push(k);
            }
        }
        let mut weights = Vec::with_capacity(n);
        let mut k = 0;
        for j in 0..n {
            while k + 1 < nodes.len() - 1 && nodes[k + 1] <= j {
                k += 1;
            }
            let (a, b) = (nodes[k], nodes[k + 1]);
            let t = (j - a) as f64 / (b - a) as f64;
            weights.push(AtomWeights { node: k, left: 1.0 - t, right: t });
        }
        let mut cg = Self {
            n,
            partition: partition.clone(),
            slot,
            active_nodes,
            weights,
            free: fixed.iter().map(|f| !f).collect(),
            mass: BandMatrix::zeros(0, 1, 1),
            mass_chol: BandMatrix::identity(0).cholesky()?,
        };
        cg.mass = cg.assemble_mass();
        cg.mass_chol = cg.mass.cholesky().map_err(|_| AccError::InvalidPartition("mass matrix is singular".into()))?;
        Ok(cg)
    }

    fn assemble_mass(&self) -> BandMatrix {
        let mut m = BandMatrix::zeros(self.dim(), 1, 1);
        for j in 0..self.n {
            let nz = self.row_entries(j);
            for &(p, vp) in &nz {
                for &(q, vq) in &nz {
                    m.add(p, q, vp * vq);
                }
            }
        }
        m
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    /// Number of active coarse variables.
    pub fn dim(&self) -> usize {
        self.active_nodes.len()
    }

    pub fn partition(&self) -> &RegionPartition {
        &self.partition
    }

    /// Atom (0-based) carrying each active coarse variable.
    pub fn active_atoms(&self) -> Vec<usize> {
        self.active_nodes.iter().map(|&k| self.partition.nodes()[k]).collect()
    }

    /// Active slot of the node on atom `j`, if any.
    pub fn slot_of_atom(&self, j: usize) -> Option<usize> {
        self.partition.nodes().binary_search(&j).ok().and_then(|k| self.slot[k])
    }

    /// Mask of free atoms.
    pub fn free(&self) -> &[bool] {
        &self.free
    }

    /// Nonzero `(slot, φ_slot(x_j))` pairs at atom `j`.
    pub fn row_entries(&self, j: usize) -> Vec<(usize, f64)> {
        let w = self.weights[j];
        let mut out = Vec::with_capacity(2);
        if w.left != 0.0 {
            if let Some(s) = self.slot[w.node] {
                out.push((s, w.left));
            }
        }
        if w.right != 0.0 {
            if let Some(s) = self.slot[w.node + 1] {
                out.push((s, w.right));
            }
        }
        out
    }

    /// `Φ u`.
    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        let mut q = vec![0.0; self.dim()];
        for (j, &uj) in u.iter().enumerate() {
            for (s, v) in self.row_entries(j) {
                q[s] += v * uj;
            }
        }
        q
    }

    /// `Φᵀ c`.
    pub fn prolong(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.dim());
        (0..self.n).map(|j| self.row_entries(j).iter().map(|&(s, v)| v * c[s]).sum()).collect()
    }

    pub fn mass(&self) -> &BandMatrix {
        &self.mass
    }

    pub fn mass_solve(&self, b: &[f64]) -> Vec<f64> {
        self.mass_chol.solve(b)
    }

    /// `P v = Φᵀ M⁻¹ Φ v`.
    pub fn apply_p(&self, v: &[f64]) -> Vec<f64> {
        self.prolong(&self.mass_solve(&self.restrict(v)))
    }

    /// `Q v = v − P v` on free atoms, zero on fixed atoms.
    pub fn apply_q(&self, v: &[f64]) -> Vec<f64> {
        let p = self.apply_p(v);
        v.iter()
            .zip(&p)
            .zip(&self.free)
            .map(|((a, b), &fr)| if fr { a - b } else { 0.0 })
            .collect()
    }

    pub fn apply_q_dense(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = v.clone();
        for c in 0..v.ncols() {
            let col: Vec<f64> = v.column(c).iter().copied().collect();
            let q = self.apply_q(&col);
            out.column_mut(c).copy_from_slice(&q);
        }
        out
    }

    /// Dense `dim × N` matrix of `Φ`; for tests and small oracles.
    pub fn phi_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim(), self.n);
        for j in 0..self.n {
            for (s, v) in self.row_entries(j) {
                d[(s, j)] = v;
            }
        }
        d
    }

    /// Estimated 2-norm condition number of `M` (power and inverse iteration).
    pub fn mass_condition(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
        let iterate = |apply: &dyn Fn(&[f64]) -> Vec<f64>| {
            let mut x = start.clone();
            let mut lambda = 0.0;
            for _ in 0..100 {
                let y = apply(&x);
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                lambda = norm / xn;
                x = y.iter().map(|v| v / norm).collect();
            }
            lambda
        };
        let lmax = iterate(&|x| self.mass.matvec(x));
        let inv_lmin = iterate(&|x| self.mass_solve(x));
        lmax * inv_lmin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundarySpec, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize) -> Chain {
        Chain::new(n, Potential::harmonic(4.0, 1.4), BoundarySpec::DirichletPinned).unwrap()
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn full_size_two_region_partition() {
        let p = RegionPartition::two_region(1024, 512, &Grading::Uniform { stride: 8 }, 2).unwrap();
        assert_eq!(p.nodes().len(), 576);
        assert_eq!(&p.nodes()[..3], &[0, 8, 16]);
        assert_eq!(p.nodes()[64], 512);
        assert_eq!(p.interfaces(), &[512]);
        let kinds: Vec<ElementKind> = p.elements()[61..66].iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                ElementKind::Continuum,
                ElementKind::Interbedded,
                ElementKind::Interbedded,
                ElementKind::Atomistic,
                ElementKind::Atomistic
            ]
        );
    }

    #[test]
    fn graded_mesh_doubles_away_from_interface() {
        let p = RegionPartition::two_region(1024, 512, &Grading::doubling(8), 2).unwrap();
        let nodes = p.nodes();
        let k = nodes.iter().position(|&a| a == 512).unwrap();
        let sizes: Vec<usize> = (0..6).map(|i| nodes[k - i] - nodes[k - i - 1]).collect();
        assert_eq!(sizes, vec![1, 2, 4, 8, 8, 8]);
        assert_eq!(nodes[0], 0);
        assert_eq!(Grading::doubling_repeated(8, 2), Grading::Graded { sizes: vec![1, 1, 2, 2, 4, 4, 8] });
    }

    #[test]
    fn five_region_partition_is_symmetric() {
        let p = RegionPartition::five_region(384, 160, 223, &Grading::doubling(8), 2).unwrap();
        assert_eq!(p.interfaces(), &[160, 223]);
        assert_eq!(p.atomistic_ranges(), &[(160, 223)]);
        let n_inter = p.elements().iter().filter(|e| e.kind == ElementKind::Interbedded).count();
        assert_eq!(n_inter, 4);
    }

    #[test]
    fn invalid_partitions_are_rejected() {
        assert!(RegionPartition::from_parts(16, vec![0, 4, 3, 15], vec![], 0).is_err());
        assert!(RegionPartition::from_parts(16, vec![1, 4, 15], vec![], 0).is_err());
        assert!(RegionPartition::from_parts(16, vec![0, 4, 8, 15], vec![(4, 8)], 0).is_err());
        assert!(RegionPartition::from_parts(16, (0..16).collect(), vec![(2, 8), (6, 10)], 0).is_err());
        assert!(RegionPartition::two_region(16, 0, &Grading::Uniform { stride: 2 }, 0).is_err());
        assert!(RegionPartition::two_region(16, 8, &Grading::Uniform { stride: 0 }, 0).is_err());
    }

    #[test]
    fn atomistic_partition_gives_identity_on_free_atoms() {
        let c = chain(32);
        let cg = build_cgmap(&c, &RegionPartition::all_atomistic(32)).unwrap();
        assert_eq!(cg.dim(), 30);
        let phi = cg.phi_dense();
        for s in 0..30 {
            for j in 0..32 {
                assert_eq!(phi[(s, j)], if j == s + 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mass_matrix_matches_brute_force() {
        let c = chain(128);
        let p = RegionPartition::two_region(128, 64, &Grading::Uniform { stride: 8 }, 2).unwrap();
        let cg = build_cgmap(&c, &p).unwrap();
        let phi = cg.phi_dense();
        let dense = &phi * phi.transpose();
        assert!((dense - cg.mass().to_dense()).amax() < 1e-14);
        // interior stride-8 hat: Σ φ² over the 15 atoms under it
        let s = cg.slot_of_atom(32).unwrap();
        let expected: f64 = (-7i32..=7).map(|d| (1.0 - d.abs() as f64 / 8.0).powi(2)).sum();
        assert!((cg.mass().get(s, s) - expected).abs() < 1e-14);
        // atomistic block is the identity
        let t = cg.slot_of_atom(100).unwrap();
        assert_eq!(cg.mass().get(t, t), 1.0);
        assert_eq!(cg.mass().get(t, t + 1), 0.0);
        assert!(cg.mass_condition() > 1.0);
    }

    #[test]
    fn partition_of_unity_and_linear_reproduction() {
        let c = chain(128);
        let p = RegionPartition::two_region(128, 64, &Grading::doubling(8), 2).unwrap();
        let cg = build_cgmap(&c, &p).unwrap();
        let phi = cg.phi_dense();
        // atoms in the first element also see the inactive node on the fixed atom
        for j in p.nodes()[1]..127 {
            let s: f64 = phi.column(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "atom {j}: {s}");
        }
        // linear field vanishing at the fixed atoms lies in Range(Φᵀ) and is reproduced
        let u: Vec<f64> = (0..128).map(|j| if j == 127 { 0.0 } else { 0.01 * j as f64 }).collect();
        let pu = cg.apply_p(&u);
        for j in 0..128 {
            assert!((pu[j] - u[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn projections_are_complementary() {
        let n = 64;
        let c = chain(n);
        let p = RegionPartition::two_region(n, 32, &Grading::Uniform { stride: 4 }, 2).unwrap();
        let cg = build_cgmap(&c, &p).unwrap();
        let v = rand_vec(n, 1);
        let pv = cg.apply_p(&v);
        assert!(max_diff(&cg.apply_p(&pv), &pv) < 1e-12);
        let w = rand_vec(cg.dim(), 2);
        let qw = cg.apply_q(&cg.prolong(&w));
        assert!(qw.iter().all(|x| x.abs() < 1e-12));
        let qv = cg.apply_q(&v);
        assert!(cg.apply_p(&qv).iter().all(|x| x.abs() < 1e-12));
        let sum: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| a + b).collect();
        let masked: Vec<f64> = v.iter().zip(cg.free()).map(|(a, &f)| if f { *a } else { 0.0 }).collect();
        assert!(max_diff(&sum, &masked) < 1e-12);
        // dense oracle
        let phi = cg.phi_dense();
        let m = &phi * phi.transpose();
        let pd = phi.transpose() * m.try_inverse().unwrap() * &phi;
        let pv2 = &pd * nalgebra::DVector::from_vec(v.clone());
        assert!(max_diff(pv2.as_slice(), &pv) < 1e-12);
        // coefficient space: Φ Φᵀ M⁻¹ acts as the identity
        let back = cg.restrict(&cg.prolong(&cg.mass_solve(&w)));
        assert!(max_diff(&back, &w) < 1e-12);
    }
}
