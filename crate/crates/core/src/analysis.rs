//! Discrete Sobolev error norms, log-log rate fits and CSV tables.

use std::io::{self, Write};

use log::warn;

use crate::error::{AccError, Result};

/// Errors below this are treated as saturated at machine precision.
pub const SATURATION_FLOOR: f64 = 1e-14;

/// The three norms of an error field, with their function and gradient parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormTriple {
    pub w11: f64,
    pub h1: f64,
    pub w1inf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub per_atom_error: Vec<f64>,
    /// Full norms.
    pub norms: NormTriple,
    /// `ε Σ|e|`, `sqrt(ε Σ e²)`, `max|e|`.
    pub function_part: NormTriple,
    /// The same for the difference quotient `De`.
    pub gradient_part: NormTriple,
    pub method_tag: String,
    pub epsilon: f64,
}

impl ErrorReport {
    pub fn w11(&self) -> f64 {
        self.norms.w11
    }

    pub fn h1(&self) -> f64 {
        self.norms.h1
    }

    pub fn w1inf(&self) -> f64 {
        self.norms.w1inf
    }
}

fn parts(v: &[f64], eps: f64) -> (f64, f64, f64) {
    let l1 = eps * v.iter().map(|x| x.abs()).sum::<f64>();
    let l2sq = eps * v.iter().map(|x| x * x).sum::<f64>();
    let linf = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (l1, l2sq, linf)
}

/// Norms of `e` with `De_j = (e_{j+1} − e_j)/ε`.
pub fn error_norms(e: &[f64], epsilon: f64, method_tag: &str) -> ErrorReport {
    let de: Vec<f64> = e.windows(2).map(|w| (w[1] - w[0]) / epsilon).collect();
    let (f1, f2, finf) = parts(e, epsilon);
    let (g1, g2, ginf) = parts(&de, epsilon);
    ErrorReport {
        per_atom_error: e.to_vec(),
        norms: NormTriple { w11: f1 + g1, h1: (f2 + g2).sqrt(), w1inf: finf.max(ginf) },
        function_part: NormTriple { w11: f1, h1: f2.sqrt(), w1inf: finf },
        gradient_part: NormTriple { w11: g1, h1: g2.sqrt(), w1inf: ginf },
        method_tag: method_tag.to_string(),
        epsilon,
    }
}

/// Error of `u` against `reference`.
pub fn compare(u: &[f64], reference: &[f64], epsilon: f64, method_tag: &str) -> Result<ErrorReport> {
    if u.len() != reference.len() {
        return Err(AccError::DimensionMismatch { expected: reference.len(), got: u.len() });
    }
    let e: Vec<f64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
    Ok(error_norms(&e, epsilon, method_tag))
}

/// Slope and prefactor of `error ≈ prefactor · ε^rate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFit {
    pub rate: f64,
    pub prefactor: f64,
    /// Points used after dropping saturated errors.
    pub used: usize,
}

/// Least-squares line through `(log ε, log error)`, skipping errors below [`SATURATION_FLOOR`].
pub fn fit_power_law(eps: &[f64], err: &[f64]) -> Result<PowerFit> {
    if eps.len() != err.len() {
        return Err(AccError::DimensionMismatch { expected: eps.len(), got: err.len() });
    }
    if eps.len() < 3 {
        return Err(AccError::DegenerateFit(format!("need at least 3 points, got {}", eps.len())));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&h, &e) in eps.iter().zip(err) {
        if !(e.is_finite() && h > 0.0) {
            return Err(AccError::DegenerateFit(format!("invalid point ({h}, {e})")));
        }
        if e < SATURATION_FLOOR {
            warn!("excluding saturated error {e:e} at epsilon {h:e} from rate fit");
            continue;
        }
        xs.push(h.ln());
        ys.push(e.ln());
    }
    if xs.len() < 2 {
        return Err(AccError::DegenerateFit(format!("only {} unsaturated points", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(AccError::DegenerateFit("all epsilons are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let rate = sxy / sxx;
    Ok(PowerFit { rate, prefactor: (my - rate * mx).exp(), used: xs.len() })
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub method_tag: String,
    pub points: Vec<ErrorReport>,
    /// `(w11, h1, w1inf)` fits.
    pub fits: [PowerFit; 3],
}

impl ConvergenceStudy {
    pub fn rates(&self) -> (f64, f64, f64) {
        (self.fits[0].rate, self.fits[1].rate, self.fits[2].rate)
    }

    pub fn prefactors(&self) -> (f64, f64, f64) {
        (self.fits[0].prefactor, self.fits[1].prefactor, self.fits[2].prefactor)
    }
}

/// Fits all three norms; `points` must have strictly decreasing ε.
pub fn fit_rates(points: Vec<ErrorReport>) -> Result<ConvergenceStudy> {
    if points.windows(2).any(|w| w[1].epsilon >= w[0].epsilon) {
        return Err(AccError::DegenerateFit("epsilons must be strictly decreasing".into()));
    }
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    let col = |f: fn(&ErrorReport) -> f64| points.iter().map(f).collect::<Vec<_>>();
    let fits = [
        fit_power_law(&eps, &col(ErrorReport::w11))?,
        fit_power_law(&eps, &col(ErrorReport::h1))?,
        fit_power_law(&eps, &col(ErrorReport::w1inf))?,
    ];
    let method_tag = points.first().map(|p| p.method_tag.clone()).unwrap_or_default();
    Ok(ConvergenceStudy { method_tag, points, fits })
}

/// Round-trip float formatting with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-atom error table: `atom,x,error` with 1-based atoms.
pub fn write_error_csv<W: Write>(w: &mut W, report: &ErrorReport) -> io::Result<()> {
    writeln!(w, "atom,x,error")?;
    for (j, e) in report.per_atom_error.iter().enumerate() {
        writeln!(w, "{},{},{}", j + 1, fmt_float(j as f64 * report.epsilon), fmt_float(*e))?;
    }
    Ok(())
}

pub const STUDY_HEADER: &str =
    "epsilon,w11,h1,w1inf,m,ell,method_tag,w11_function,w11_gradient,h1_function,h1_gradient,w1inf_function,w1inf_gradient";

/// One study row; `m` and `ell` are blank for methods without enrichment.
pub fn write_study_row<W: Write>(w: &mut W, r: &ErrorReport, m: Option<usize>, ell: Option<usize>) -> io::Result<()> {
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_float(r.epsilon),
        fmt_float(r.w11()),
        fmt_float(r.h1()),
        fmt_float(r.w1inf()),
        opt(m),
        opt(ell),
        r.method_tag,
        fmt_float(r.function_part.w11),
        fmt_float(r.gradient_part.w11),
        fmt_float(r.function_part.h1),
        fmt_float(r.gradient_part.h1),
        fmt_float(r.function_part.w1inf),
        fmt_float(r.gradient_part.w1inf),
    )
}

/// Footer rows `rate,...` and `prefactor,...` for one method.
pub fn write_fit_footer<W: Write>(w: &mut W, study: &ConvergenceStudy) -> io::Result<()> {
    let (r1, r2, r3) = study.rates();
    let (p1, p2, p3) = study.prefactors();
    writeln!(w, "rate,{},{},{},,,{},,,,,,", fmt_float(r1), fmt_float(r2), fmt_float(r3), study.method_tag)?;
    writeln!(w, "prefactor,{},{},{},,,{},,,,,,", fmt_float(p1), fmt_float(p2), fmt_float(p3), study.method_tag)
}
