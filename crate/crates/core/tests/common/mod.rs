//! Test oracles shared by the integration suites.

#![allow(dead_code)]

use cep_core::optimize::{LinearProgram, Sense};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-9;

/// Dense two-phase tableau simplex with Bland's rule. Slow and simple on
/// purpose: it shares no code with the solver under test.
pub fn tableau_solve(lp: &LinearProgram) -> Outcome {
    let n = lp.num_vars();
    // Shift x = y + lower so y >= 0; finite uppers become rows.
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::new();
    for r in &lp.rows {
        let mut a = vec![0.0; n];
        let mut rhs = r.rhs;
        for &(j, v) in &r.coeffs {
            a[j] += v;
            rhs -= v * lp.lower[j];
        }
        rows.push((a, r.sense, rhs));
    }
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] {
            return Outcome::Infeasible;
        }
        if lp.upper[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, Sense::Le, lp.upper[j] - lp.lower[j]));
        }
    }
    let offset = lp.offset + (0..n).map(|j| lp.objective[j] * lp.lower[j]).sum::<f64>();

    // Columns: y, slacks/surpluses, artificials.
    for (a, sense, rhs) in &mut rows {
        if *rhs < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *sense = match *sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }
    let m = rows.len();
    let slacks = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let arts = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let width = n + slacks + arts;
    let mut t = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0; m];
    let (mut s, mut a) = (n, n + slacks);
    for (i, (coef, sense, rhs)) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(coef);
        t[i][width] = *rhs;
        match sense {
            Sense::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Sense::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            Sense::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
        }
    }

    if arts > 0 {
        let cost: Vec<f64> = (0..width).map(|j| if j >= n + slacks { 1.0 } else { 0.0 }).collect();
        assert!(run_restricted(&mut t, &mut basis, &cost, width, width), "phase one is bounded");
        let infeas: f64 = (0..m).filter(|&i| basis[i] >= n + slacks).map(|i| t[i][width]).sum();
        if infeas > 1e-7 {
            return Outcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis.
        let mut i = 0;
        while i < m.min(t.len()) {
            if basis[i] >= n + slacks {
                match (0..n + slacks).find(|&j| t[i][j].abs() > EPS) {
                    Some(j) => pivot(&mut t, &mut basis, i, j),
                    None => {
                        t.remove(i);
                        basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        for row in &mut t {
            for v in &mut row[n + slacks..width] {
                *v = 0.0;
            }
        }
    }
    let cost: Vec<f64> = (0..width).map(|j| if j < n { lp.objective[j] } else { 0.0 }).collect();
    let usable = n + slacks;
    match run_restricted(&mut t, &mut basis, &cost, usable, width) {
        false => Outcome::Unbounded,
        true => {
            let obj: f64 = basis.iter().enumerate().map(|(i, &b)| cost[b] * t[i][width]).sum();
            Outcome::Optimal(obj + offset)
        }
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    t[r].iter_mut().for_each(|v| *v /= p);
    let pr = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r && row[c] != 0.0 {
            let f = row[c];
            row.iter_mut().zip(&pr).for_each(|(v, p)| *v -= f * p);
        }
    }
    basis[r] = c;
}

/// Bland's rule over columns `0..usable`. False when unbounded.
fn run_restricted(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], usable: usize, width: usize) -> bool {
    loop {
        let reduced = |j: usize, t: &[Vec<f64>], basis: &[usize]| {
            cost[j] - basis.iter().enumerate().map(|(i, &b)| cost[b] * t[i][j]).sum::<f64>()
        };
        let Some(c) = (0..usable).find(|&j| !basis.contains(&j) && reduced(j, t, basis) < -EPS) else {
            return true;
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..t.len() {
            if t[i][c] > EPS {
                let ratio = t[i][width] / t[i][c];
                let better = match best {
                    None => true,
                    Some((r, _, b)) => ratio < r - EPS || (ratio <= r + EPS && basis[i] < b),
                };
                if better {
                    best = Some((ratio, i, basis[i]));
                }
            }
        }
        match best {
            None => return false,
            Some((_, r, _)) => pivot(t, basis, r, c),
        }
    }
}

/// Relative difference with an absolute floor of 1.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
