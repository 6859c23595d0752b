use std::fmt::Write as _;

use super::{LinearProgram, Sense};

/// Free-format MPS text for `lp`. Variables listed in `binaries` are wrapped
/// in integer markers with bounds [0, 1].
///
/// Column names are `x{j}`, row names `r{i}`; the objective offset is written
/// as a negated RHS on the objective row, which is how most readers interpret
/// it.
pub fn write_mps(lp: &LinearProgram, binaries: &[usize], name: &str) -> String {
    let n = lp.num_vars();
    let mut is_binary = vec![false; n];
    for &j in binaries {
        if j < n {
            is_binary[j] = true;
        }
    }
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            if a != 0.0 {
                columns[j].push((i, a));
            }
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "NAME {name}");
    out.push_str("ROWS\n N obj\n");
    for (i, row) in lp.rows.iter().enumerate() {
        let tag = match row.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        let _ = writeln!(out, " {tag} r{i}");
    }
    out.push_str("COLUMNS\n");
    let mut in_int = false;
    for j in 0..n {
        if is_binary[j] != in_int {
            let marker = if is_binary[j] { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(out, " MARKER 'MARKER' {marker}");
            in_int = is_binary[j];
        }
        if lp.objective[j] != 0.0 {
            let _ = writeln!(out, " x{j} obj {:e}", lp.objective[j]);
        }
        for &(i, a) in &columns[j] {
            let _ = writeln!(out, " x{j} r{i} {a:e}");
        }
        if lp.objective[j] == 0.0 && columns[j].is_empty() {
            let _ = writeln!(out, " x{j} obj 0");
        }
    }
    if in_int {
        out.push_str(" MARKER 'MARKER' 'INTEND'\n");
    }
    out.push_str("RHS\n");
    if lp.offset != 0.0 {
        let _ = writeln!(out, " rhs obj {:e}", -lp.offset);
    }
    for (i, row) in lp.rows.iter().enumerate() {
        if row.rhs != 0.0 {
            let _ = writeln!(out, " rhs r{i} {:e}", row.rhs);
        }
    }
    out.push_str("BOUNDS\n");
    for j in 0..n {
        let (lo, hi) = if is_binary[j] {
            (lp.lower[j].max(0.0), lp.upper[j].min(1.0))
        } else {
            (lp.lower[j], lp.upper[j])
        };
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " FR bnd x{j}");
            }
            _ if lo == hi => {
                let _ = writeln!(out, " FX bnd x{j} {lo:e}");
            }
            (lo_fin, hi_fin) => {
                if !lo_fin {
                    let _ = writeln!(out, " MI bnd x{j}");
                } else if lo != 0.0 {
                    let _ = writeln!(out, " LO bnd x{j} {lo:e}");
                }
                if hi_fin {
                    let _ = writeln!(out, " UP bnd x{j} {hi:e}");
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program_layout() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 0.0, 10.0);
        let y = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(vec![(x, 1.0), (y, 2.0)], Sense::Ge, 3.0);
        let text = write_mps(&lp, &[y], "t");
        assert!(text.starts_with("NAME t\nROWS\n N obj\n G r0\n"));
        assert!(text.contains(" MARKER 'MARKER' 'INTORG'\n x1 r0 2e0\n MARKER 'MARKER' 'INTEND'"));
        assert!(text.contains(" UP bnd x0 1e1"));
        assert!(text.contains(" UP bnd x1 1e0"));
        assert!(text.ends_with("ENDATA\n"));
    }
}
