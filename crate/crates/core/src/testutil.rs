//! Independent oracles shared by unit tests.

use crate::numerics::Tensor;

/// Central finite-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// `|a-b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Deterministic pseudo-random tensor in `[-1, 1)` for test inputs.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar-loop reference implementations on row-major `Vec<Vec<f64>>`,
/// written without the tape or the gemm kernel.
pub mod reference {
    use crate::numerics::Tensor;

    pub type Mat = Vec<Vec<f64>>;

    pub fn mat(t: &Tensor) -> Mat {
        let (r, _) = t.dims2().unwrap();
        (0..r).map(|i| t.row(i).to_vec()).collect()
    }

    pub fn matmul(a: &Mat, b: &Mat) -> Mat {
        let n = b[0].len();
        a.iter()
            .map(|row| {
                (0..n)
                    .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn transpose(a: &Mat) -> Mat {
        (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
    }

    pub fn add(a: &Mat, b: &Mat) -> Mat {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    pub fn add_bias(a: &Mat, bias: &[f64]) -> Mat {
        a.iter().map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect()).collect()
    }

    pub fn linear(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
        add_bias(&matmul(x, &mat(w)), b.data())
    }

    pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
        a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
    }

    /// Row softmax; `valid[j] == false` columns get weight 0.
    pub fn masked_softmax(a: &Mat, valid: &[bool]) -> Mat {
        a.iter()
            .map(|r| {
                let m = r.iter().zip(valid).filter(|(_, &v)| v).map(|(x, _)| *x).fold(f64::MIN, f64::max);
                let e: Vec<f64> =
                    r.iter().zip(valid).map(|(x, &v)| if v { (x - m).exp() } else { 0.0 }).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| x / s).collect()
            })
            .collect()
    }

    pub fn layer_norm(a: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
        a.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                r.iter()
                    .enumerate()
                    .map(|(j, x)| gain[j] * (x - mean) / (var + eps).sqrt() + bias[j])
                    .collect()
            })
            .collect()
    }

    pub fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }

    /// Column normalisation with fixed statistics.
    pub fn batch_norm_fixed(a: &Mat, mean: &[f64], var: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Mat {
        a.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, x)| gain[j] * (x - mean[j]) / (var[j] + eps).sqrt() + bias[j])
                    .collect()
            })
            .collect()
    }
}
