use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::numerics::Tensor;

/// Uniform in ±√(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("rows*cols elements")
}

/// Square orthogonal matrix: QR of a Gaussian matrix, with the columns of
/// Q sign-corrected by the diagonal of R so the draw is Haar-distributed.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let gaussian = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = gaussian.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::matrix(n, n, data).expect("n*n elements")
}

/// max |QᵀQ − I| over all entries.
pub fn orthogonality_error(q: &Tensor) -> f64 {
    let (n, m) = q.dims2();
    assert_eq!(n, m, "square matrix expected");
    let d = q.data();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let dot: f64 = (0..n).map(|k| d[k * n + a] * d[k * n + b]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}
