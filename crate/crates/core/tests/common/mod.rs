//! Shared helpers: random feasible fitting instances and an independent
//! minimum-KL solver to check IPF against.
#![allow(dead_code)]

use rand::Rng;
use shape_synth::ipf::{Design, DesignVariable};

/// Random design with every record assigned a category per variable, plus
/// targets tabulated from a strictly positive weight vector, so a positive
/// solution always exists.
pub fn feasible_instance<R: Rng>(rng: &mut R, n_records: usize, n_vars: usize, max_cats: usize) -> (Design, Vec<Vec<f64>>) {
    let vars: Vec<DesignVariable> = (0..n_vars)
        .map(|v| {
            let k = rng.random_range(2..=max_cats);
            DesignVariable {
                name: format!("v{v}"),
                n_categories: k,
                membership: (0..n_records).map(|_| rng.random_range(0..k as u32)).collect(),
            }
        })
        .collect();
    let design = Design::new(n_records, vars).unwrap();
    let truth: Vec<f64> = (0..n_records).map(|_| rng.random_range(0.2..20.0)).collect();
    let targets = (0..n_vars).map(|v| design.weighted_counts(v, &truth)).collect();
    (design, targets)
}

#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Minimum-KL weights relative to a unit prior, from damped Newton on the
/// convex dual `sum_i exp(eta_i) - theta . m`, `eta_i = sum_v theta[v][c_v(i)]`.
pub fn min_kl_oracle(design: &Design, targets: &[Vec<f64>]) -> Vec<f64> {
    let vars = design.variables();
    let offsets: Vec<usize> = vars
        .iter()
        .scan(0, |acc, v| {
            let o = *acc;
            *acc += v.n_categories;
            Some(o)
        })
        .collect();
    let dim: usize = vars.iter().map(|v| v.n_categories).sum();
    let m: Vec<f64> = targets.iter().flatten().copied().collect();
    let index = |i: usize| -> Vec<usize> {
        vars.iter()
            .zip(&offsets)
            .map(|(v, o)| o + v.membership[i] as usize)
            .collect()
    };
    let rows: Vec<Vec<usize>> = (0..design.n_records()).map(index).collect();
    let dual = |theta: &[f64]| -> f64 {
        let s: f64 = rows.iter().map(|r| r.iter().map(|&k| theta[k]).sum::<f64>().exp()).sum();
        s - theta.iter().zip(&m).map(|(t, m)| t * m).sum::<f64>()
    };
    let mut theta = vec![0.0; dim];
    for _ in 0..500 {
        let w: Vec<f64> = rows.iter().map(|r| r.iter().map(|&k| theta[k]).sum::<f64>().exp()).collect();
        let mut g: Vec<f64> = m.iter().map(|m| -m).collect();
        let mut h = vec![vec![0.0; dim]; dim];
        for (r, &wi) in rows.iter().zip(&w) {
            for &a in r {
                g[a] += wi;
                for &b in r {
                    h[a][b] += wi;
                }
            }
        }
        let gnorm = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if gnorm < 1e-13 {
            break;
        }
        for (k, row) in h.iter_mut().enumerate() {
            row[k] += 1e-9;
        }
        let step = solve(h, g.iter().map(|x| -x).collect());
        let f0 = dual(&theta);
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            if dual(&cand) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                theta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    rows.iter().map(|r| r.iter().map(|&k| theta[k]).sum::<f64>().exp()).collect()
}
