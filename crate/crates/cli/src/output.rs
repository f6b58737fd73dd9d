//! CSV tables and stdout summaries.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use acc_core::analysis::{fmt_float, write_error_csv, write_fit_footer, write_study_row, STUDY_HEADER};
use acc_core::crack::{BifurcationDiagram, FoldKind};

use crate::config::OutputConfig;
use crate::runner::{Cell, MethodStudy};

fn create(dir: &Path, name: &str, suffix: &str) -> io::Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}_{suffix}.csv"));
    Ok((path.clone(), BufWriter::new(File::create(path)?)))
}

/// `atom,x,u` with 1-based atoms.
pub fn write_solution<W: Write>(w: &mut W, u: &[f64], epsilon: f64) -> io::Result<()> {
    writeln!(w, "atom,x,u")?;
    for (j, v) in u.iter().enumerate() {
        writeln!(w, "{},{},{}", j + 1, fmt_float(j as f64 * epsilon), fmt_float(*v))?;
    }
    Ok(())
}

pub fn solve_files(dir: &Path, name: &str, cell: &Cell, outputs: &OutputConfig, a1: Option<&[(usize, f64)]>) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let eps = cell.errors.epsilon;
    if outputs.solution {
        let (p, mut w) = create(dir, name, "solution")?;
        write_solution(&mut w, &cell.report.u, eps)?;
        w.flush()?;
        written.push(p);
    }
    if outputs.errors {
        let (p, mut w) = create(dir, name, "errors")?;
        write_error_csv(&mut w, &cell.errors)?;
        w.flush()?;
        written.push(p);
    }
    if let Some(rows) = a1 {
        let (p, mut w) = create(dir, name, "a1_rows")?;
        writeln!(w, "atom,x,row_norm")?;
        for &(atom, norm) in rows {
            writeln!(w, "{},{},{}", atom + 1, fmt_float(atom as f64 * eps), fmt_float(norm))?;
        }
        w.flush()?;
        written.push(p);
    }
    Ok(written)
}

/// Joined per-atom errors `atom,x,reference,<tag>...` and a norm table.
pub fn compare_files(dir: &Path, name: &str, reference: &[f64], cells: &[Cell]) -> io::Result<Vec<PathBuf>> {
    let eps = cells.first().map(|c| c.errors.epsilon).unwrap_or(1.0);
    let (p1, mut w) = create(dir, name, "compare")?;
    let tags: Vec<&str> = cells.iter().map(|c| c.tag.as_str()).collect();
    writeln!(w, "atom,x,reference,{}", tags.join(","))?;
    for (j, r) in reference.iter().enumerate() {
        let errs: Vec<String> = cells.iter().map(|c| fmt_float(c.errors.per_atom_error[j])).collect();
        writeln!(w, "{},{},{},{}", j + 1, fmt_float(j as f64 * eps), fmt_float(*r), errs.join(","))?;
    }
    w.flush()?;
    let (p2, mut w) = create(dir, name, "norms")?;
    writeln!(w, "{STUDY_HEADER}")?;
    for c in cells {
        write_study_row(&mut w, &c.errors, c.m, c.ell)?;
    }
    w.flush()?;
    Ok(vec![p1, p2])
}

pub fn study_file(dir: &Path, name: &str, studies: &[MethodStudy]) -> io::Result<PathBuf> {
    let (p, mut w) = create(dir, name, "study")?;
    writeln!(w, "{STUDY_HEADER}")?;
    for s in studies {
        for c in &s.cells {
            write_study_row(&mut w, &c.errors, c.m, c.ell)?;
        }
    }
    for s in studies {
        if let Some(fit) = &s.fit {
            write_fit_footer(&mut w, fit)?;
        }
    }
    w.flush()?;
    Ok(p)
}

pub const BIFURCATION_HEADER: &str = "P,u_1,u_n,min_eigenvalue,stable_flag,method_tag";

pub fn write_branches<W: Write>(w: &mut W, diagrams: &[BifurcationDiagram], tip: usize) -> io::Result<()> {
    writeln!(w, "{BIFURCATION_HEADER}")?;
    for d in diagrams {
        for p in &d.points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_float(p.load),
                fmt_float(p.u[0]),
                fmt_float(p.u[tip - 1]),
                fmt_float(p.min_eigenvalue),
                u8::from(p.stable),
                d.method_tag
            )?;
        }
    }
    Ok(())
}

pub fn bifurcation_files(dir: &Path, name: &str, diagrams: &[BifurcationDiagram], tip: usize) -> io::Result<Vec<PathBuf>> {
    let (p1, mut w) = create(dir, name, "bifurcation")?;
    write_branches(&mut w, diagrams, tip)?;
    w.flush()?;
    let (p2, mut w) = create(dir, name, "folds")?;
    writeln!(w, "kind,P,u_n,method_tag")?;
    for d in diagrams {
        for f in &d.folds {
            let kind = match f.kind {
                FoldKind::Upper => "upper",
                FoldKind::Lower => "lower",
            };
            writeln!(w, "{kind},{},{},{}", fmt_float(f.load), fmt_float(f.tip_displacement), d.method_tag)?;
        }
    }
    w.flush()?;
    Ok(vec![p1, p2])
}

pub fn summary_line(cell: &Cell) -> String {
    let e = &cell.errors;
    format!(
        "{:<22} N={:<5} dofs={:<5} w11={:.3e} h1={:.3e} w1inf={:.3e} newton={} residual={:.2e} time={:.3}s",
        cell.tag,
        cell.atoms,
        cell.report.dofs,
        e.w11(),
        e.h1(),
        e.w1inf(),
        cell.report.newton_iters,
        cell.report.residual_norm,
        cell.elapsed.as_secs_f64()
    )
}
