//! Small SVM datasets checked against the dense QP oracle.

use super::qp;
use gpd::classifier::{train, SvmConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub name: &'static str,
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<i8>,
    pub c: f64,
}

fn blobs(rng: &mut impl Rng, n: usize, dim: usize, sep: f32) -> (Vec<Vec<f32>>, Vec<i8>) {
    (0..n)
        .map(|i| {
            let l: i8 = if i % 2 == 0 { 1 } else { -1 };
            let row = (0..dim).map(|_| sep * l as f32 + rng.random_range(-1.0..1.0)).collect();
            (row, l)
        })
        .unzip()
}

pub fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let (rows, labels) = blobs(&mut rng, 40, 2, 2.0);
    out.push(Case { name: "separable", rows, labels, c: 10.0 });
    let (rows, labels) = blobs(&mut rng, 60, 2, 0.3);
    out.push(Case { name: "overlapping", rows, labels, c: 1.0 });
    let (rows, labels) = blobs(&mut rng, 50, 8, 0.2);
    out.push(Case { name: "overlapping-8d", rows, labels, c: 5.0 });
    let (rows, labels): (Vec<Vec<f32>>, Vec<i8>) = (0..48)
        .map(|_| {
            let a: f32 = rng.random_range(-1.0..1.0);
            let b: f32 = rng.random_range(-1.0..1.0);
            (vec![a, b], if a * b > 0.0 { 1 } else { -1 })
        })
        .unzip();
    out.push(Case { name: "xor", rows, labels, c: 100.0 });
    let (rows, labels): (Vec<Vec<f32>>, Vec<i8>) = (0..60)
        .map(|_| {
            let r: Vec<f32> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
            let l = if r[0] + r[1] - r[2] > 0.5 { 1 } else { -1 };
            (r, l)
        })
        .unzip();
    out.push(Case { name: "sparse-rule-20d", rows, labels, c: 1.0 });
    out
}

/// Worst objective gap, or the first disagreement.
pub fn check(case: &Case) -> Result<f64, String> {
    let cfg = SvmConfig { c: case.c, ..Default::default() };
    let (model, report) = train(&case.rows, &case.labels, &cfg).map_err(|e| e.to_string())?;
    if !report.objective_monotone {
        return Err(format!("{}: objective increased during SMO", case.name));
    }
    let mm = qp::MinMax::fit(&case.rows);
    let x: Vec<Vec<f64>> = case.rows.iter().map(|r| mm.apply(r)).collect();
    let gamma = 1.0 / x[0].len() as f64;
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| qp::cubic(&x[i], &x[j], gamma, 1.0));
    let y: Vec<f64> = case.labels.iter().map(|&l| l as f64).collect();
    let sol = qp::solve_dual(&k, &y, case.c);
    let gap = (sol.objective - report.objective).abs();
    if gap > 1e-4 {
        return Err(format!("{}: objective {} vs oracle {}", case.name, report.objective, sol.objective));
    }
    // Training rows plus midpoints between consecutive rows.
    let mut queries: Vec<Vec<f32>> = case.rows.clone();
    for w in case.rows.windows(2) {
        queries.push(w[0].iter().zip(&w[1]).map(|(a, b)| (a + b) / 2.0).collect());
    }
    for q in &queries {
        let oracle = qp::decision(&sol, &x, &y, &mm.apply(q), gamma, 1.0);
        let ours = model.predict(q).map_err(|e| e.to_string())?;
        let oracle_label = if oracle >= 0.0 { 1 } else { -1 };
        if ours.label != oracle_label {
            return Err(format!("{}: prediction differs (score {} vs oracle {})", case.name, ours.score, oracle));
        }
    }
    Ok(gap)
}
