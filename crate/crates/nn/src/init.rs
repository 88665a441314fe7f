//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::Matrix;

/// Uniform in `±gain·sqrt(3 / fan_in)`, which has variance `gain² / fan_in`.
pub fn scaled_uniform<R: Rng + ?Sized>(rows: usize, fan_in: usize, gain: f64, rng: &mut R) -> Matrix {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix::from_fn(rows, fan_in, |_, _| dist.sample(rng))
}

/// A `rows x cols` matrix with orthonormal rows (or columns, whichever is
/// shorter), scaled by `gain`. Built with modified Gram-Schmidt on a
/// Gaussian draw.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Matrix {
    let tall = rows > cols;
    let (n_vec, dim) = if tall { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while vecs.len() < n_vec {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A degenerate draw is astronomically unlikely; redraw if it happens.
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        vecs.push(v);
    }
    if tall {
        Matrix::from_fn(rows, cols, |r, c| gain * vecs[c][r])
    } else {
        Matrix::from_fn(rows, cols, |r, c| gain * vecs[r][c])
    }
}
