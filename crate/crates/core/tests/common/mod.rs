#![allow(dead_code)]

use l2relax::nalgebra::{DMatrix, DVector};
use l2relax::{compute_gram, GramPair, TimePanel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// `n` controls over `t` periods sharing one factor, and a target that loads
/// on the controls plus noise. The first `train` periods are for training,
/// the rest for evaluation.
pub fn factor_panel(seed: u64, n: usize, t: usize, train: usize) -> TimePanel {
    let mut r = rng(seed);
    let f = normal_vec(&mut r, t);
    let load: Vec<f64> = (0..n).map(|_| r.gen_range(0.2..1.5)).collect();
    let x = DMatrix::from_fn(n, t, |i, s| load[i] * f[s] + normal(&mut r));
    let w = normal_vec(&mut r, n);
    let y = DVector::from_fn(t, |s, _| {
        2.0 + 0.5 * (0..n).map(|i| w[i] * x[(i, s)]).sum::<f64>() + 0.5 * normal(&mut r)
    });
    TimePanel::new(y, x, (0..train).collect(), (train..t).collect()).expect("valid panel")
}

pub fn factor_gram(seed: u64, n: usize, t: usize) -> GramPair {
    compute_gram(&factor_panel(seed, n, t, t)).expect("gram")
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

pub fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Exact minimizer of `1/2 x'Ax - b'x + pen |x|_1` for small dimensions by
/// trying every support and sign pattern and keeping the best point that
/// satisfies the optimality conditions.
pub fn enumerate_l1_qp(a: &DMatrix<f64>, b: &DVector<f64>, pen: f64) -> DVector<f64> {
    let n = b.len();
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(a * x)) - b.dot(x) + pen * x.abs().sum();
    let mut best = DVector::zeros(n);
    let mut best_val = 0.0;
    for code in 0..3usize.pow(n as u32) {
        let mut signs = vec![0.0; n];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = [0.0, 1.0, -1.0][c % 3];
            c /= 3;
        }
        let support: Vec<usize> = (0..n).filter(|&i| signs[i] != 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let sub = DMatrix::from_fn(support.len(), support.len(), |p, q| {
            a[(support[p], support[q])]
        });
        let rhs = DVector::from_fn(support.len(), |p, _| {
            b[support[p]] - pen * signs[support[p]]
        });
        let Some(sol) = sub.lu().solve(&rhs) else {
            continue;
        };
        if support
            .iter()
            .enumerate()
            .any(|(p, &i)| sol[p] * signs[i] <= 0.0)
        {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (p, &i) in support.iter().enumerate() {
            x[i] = sol[p];
        }
        let val = objective(&x);
        if val < best_val {
            best_val = val;
            best = x;
        }
    }
    best
}
