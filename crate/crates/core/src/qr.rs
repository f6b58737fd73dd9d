//! Householder QR with column pivoting.

use nalgebra::DMatrix;

/// Rank-revealing factorization `A P = Q R` truncated at the numerical rank.
#[derive(Clone, Debug)]
pub struct PivotedQr {
    /// `m × rank` with orthonormal columns.
    pub q: DMatrix<f64>,
    /// `rank × k` upper-trapezoidal factor in pivoted column order.
    pub r: DMatrix<f64>,
    /// `perm[i]` is the original column placed at position `i`.
    pub perm: Vec<usize>,
    pub rank: usize,
    /// Norm of the largest column of the input.
    pub max_col_norm: f64,
}

impl PivotedQr {
    /// The `rank × k` factor with columns back in input order, so that `A ≈ Q · R`.
    pub fn r_unpermuted(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.r.nrows(), self.r.ncols());
        for (pos, &orig) in self.perm.iter().enumerate() {
            out.set_column(orig, &self.r.column(pos));
        }
        out
    }
}

struct Reflector {
    v: Vec<f64>,
    beta: f64,
    start: usize,
}

impl Reflector {
    /// Reflector mapping `x` (rows `start..`) onto a multiple of the first unit vector.
    fn new(x: &[f64], start: usize) -> (Self, f64) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = x.to_vec();
        if norm == 0.0 {
            return (Self { v, beta: 0.0, start }, 0.0);
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        let beta = if vnorm2 == 0.0 { 0.0 } else { 2.0 / vnorm2 };
        (Self { v, beta, start }, alpha)
    }

    fn apply_col(&self, a: &mut DMatrix<f64>, col: usize) {
        if self.beta == 0.0 {
            return;
        }
        let s: f64 = self.v.iter().enumerate().map(|(i, vi)| vi * a[(self.start + i, col)]).sum();
        let s = s * self.beta;
        for (i, vi) in self.v.iter().enumerate() {
            a[(self.start + i, col)] -= s * vi;
        }
    }
}

fn factor(a: &DMatrix<f64>, threshold: Option<f64>) -> (Vec<Reflector>, DMatrix<f64>, Vec<usize>, usize, f64) {
    let (m, k) = a.shape();
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..k).collect();
    let max_col_norm = (0..k).map(|c| w.column(c).norm()).fold(0.0, f64::max);
    let mut refl = Vec::new();
    let steps = m.min(k);
    let mut rank = steps;
    for j in 0..steps {
        // trailing column norms are recomputed: blocks are narrow and this avoids downdating drift
        let (mut best, mut best_norm) = (j, -1.0);
        for c in j..k {
            let nrm = w.view((j, c), (m - j, 1)).norm();
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if let Some(t) = threshold {
            if best_norm <= t {
                rank = j;
                break;
            }
        }
        if best != j {
            w.swap_columns(j, best);
            perm.swap(j, best);
        }
        let x: Vec<f64> = (j..m).map(|i| w[(i, j)]).collect();
        let (h, alpha) = Reflector::new(&x, j);
        w[(j, j)] = alpha;
        for i in j + 1..m {
            w[(i, j)] = 0.0;
        }
        for c in j + 1..k {
            h.apply_col(&mut w, c);
        }
        refl.push(h);
    }
    (refl, w, perm, rank, max_col_norm)
}

fn form_q(m: usize, cols: usize, refl: &[Reflector]) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(m, cols);
    for i in 0..cols.min(m) {
        q[(i, i)] = 1.0;
    }
    for h in refl.iter().rev() {
        for c in 0..cols {
            h.apply_col(&mut q, c);
        }
    }
    q
}

/// Column-pivoted QR that stops once every remaining column norm is `<= threshold`.
pub fn pivoted_qr(a: &DMatrix<f64>, threshold: f64) -> PivotedQr {
    let m = a.nrows();
    let (refl, w, perm, rank, max_col_norm) = factor(a, Some(threshold));
    let q = form_q(m, rank, &refl[..rank]);
    let r = w.rows(0, rank).into_owned();
    PivotedQr { q, r, perm, rank, max_col_norm }
}

/// Orthonormal basis of the orthogonal complement of the column space of `a`.
///
/// `a` must have full column rank; the result is `m × (m − k)`.
pub fn orthogonal_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = a.shape();
    let (refl, _, _, _, _) = factor(a, None);
    let full = form_q(m, m, &refl);
    full.columns(k, m - k).into_owned()
}
