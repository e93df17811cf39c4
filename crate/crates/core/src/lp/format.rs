use std::io::{self, Write};

use super::LpProblem;

/// Writes `problem` in CPLEX LP syntax. Variables are named `x0, x1, …`,
/// inequality rows `c0, c1, …` and equality rows `e0, e1, …`. The default
/// LP-format bounds (`x ≥ 0`) match the program's domain, so no `Bounds`
/// section is emitted.
pub fn write_lp_format<W: Write>(problem: &LpProblem, out: &mut W) -> io::Result<()> {
    writeln!(out, "Minimize")?;
    let terms: Vec<(usize, f64)> = problem
        .costs()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    write!(out, " obj:")?;
    write_terms(out, &terms)?;
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for (i, (row, rhs)) in problem.ineq().outer_iterator().zip(problem.ineq_rhs()).enumerate() {
        write!(out, " c{i}:")?;
        write_terms(out, &row.iter().map(|(j, &a)| (j, a)).collect::<Vec<_>>())?;
        writeln!(out, " <= {rhs:?}")?;
    }
    for (i, (row, rhs)) in problem.eq().outer_iterator().zip(problem.eq_rhs()).enumerate() {
        write!(out, " e{i}:")?;
        write_terms(out, &row.iter().map(|(j, &a)| (j, a)).collect::<Vec<_>>())?;
        writeln!(out, " = {rhs:?}")?;
    }
    writeln!(out, "End")
}

fn write_terms<W: Write>(out: &mut W, terms: &[(usize, f64)]) -> io::Result<()> {
    if terms.is_empty() {
        return write!(out, " 0 x0");
    }
    for &(j, a) in terms {
        let sign = if a < 0.0 { '-' } else { '+' };
        write!(out, " {sign} {:?} x{j}", a.abs())?;
    }
    Ok(())
}
