//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use claimvec::bands::Group;
use claimvec::claims::{build_cohort, Cohort};
use claimvec::synth::{generate, PopulationSpec};

pub fn cohort_of(spec: &PopulationSpec) -> Cohort {
    let pop = generate(spec).expect("generate");
    build_cohort(&pop.claims, &pop.members, spec.base_year, spec.target_year).expect("cohort")
}

pub fn default_spec(n_patients: usize) -> PopulationSpec {
    let mut spec = PopulationSpec::default_population();
    spec.n_patients = n_patients;
    spec
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `−ln σ(u_t·c) − Σ_j ln σ(−u_j·c)` with `out` row-major.
pub fn ns_loss(center: &[f64], target: usize, negatives: &[usize], out: &[f64]) -> f64 {
    let dim = center.len();
    let dotrow = |r: usize| -> f64 { (0..dim).map(|k| out[r * dim + k] * center[k]).sum() };
    let mut loss = -log_sigmoid(dotrow(target));
    for &j in negatives {
        loss -= log_sigmoid(-dotrow(j));
    }
    loss
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Ridge on columns standardized to mean 0 / population std 1, centred
/// response, unpenalized intercept: returns standardized-space β.
pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let p = x[0].len();
    let mut z = vec![vec![0.0; p]; n];
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            z[i][j] = (x[i][j] - mean) / sd;
        }
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            b[j] += z[i][j] * (y[i] - ybar);
            for k in 0..p {
                a[j][k] += z[i][j] * z[i][k];
            }
        }
    }
    for j in 0..p {
        a[j][j] += lambda;
    }
    gauss_solve(a, b)
}

pub fn r2_oracle(y: &[f64], yhat: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..y.len() {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    1.0 - ss_res / ss_tot
}

pub fn mae_oracle(y: &[f64], yhat: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - yhat[i]).abs();
    }
    s / y.len() as f64
}

/// Group → (n, predictive ratio) by filtering the whole population per group.
pub fn pr_oracle(
    pred: &[f64],
    actual: &[f64],
    groups: &[Group],
) -> BTreeMap<Group, (usize, Option<f64>)> {
    let n = pred.len() as f64;
    let pm = pred.iter().sum::<f64>() / n;
    let am = actual.iter().sum::<f64>() / n;
    let mut out = BTreeMap::new();
    for g in Group::all() {
        let members: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let mp = members.iter().map(|&i| pred[i] / pm).sum::<f64>() / k;
        let ma = members.iter().map(|&i| actual[i] / am).sum::<f64>() / k;
        out.insert(
            g,
            (members.len(), if ma == 0.0 { None } else { Some(mp / ma) }),
        );
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}
