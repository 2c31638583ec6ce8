//! Central finite-difference gradient oracle.

use super::{Graph, Tensor};

/// Compare analytic gradients of a scalar-valued tensor function
/// against central finite differences at `x`.
///
/// Returns the max over coordinates of
/// `|analytic - central| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> f64
where
    F: Fn(&Graph, &Tensor) -> Tensor,
{
    let eval = |data: &[f64]| -> f64 {
        let g = Graph::new();
        let t = g.tensor(data.to_vec(), shape);
        f(&g, &t).item()
    };

    let g = Graph::new();
    let t = g.tensor(x.to_vec(), shape);
    let loss = f(&g, &t);
    loss.backward().expect("finite_diff_check needs a scalar loss");
    let analytic = t.grad();

    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = eval(&xp);
        xp[i] = orig - h;
        let fm = eval(&xp);
        xp[i] = orig;
        let central = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - central).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn randn(rng: &mut StdRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sum_is_exact() {
        let err = finite_diff_check(|_, x| x.sum(), &[1.0, -2.0, 0.5], &[3], 1e-5);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softmax_cross_entropy_chain() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let logits = randn(&mut rng, 8);
            let err = finite_diff_check(
                |g, x| {
                    let y = g.tensor(
                        vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                        &[1, 8],
                    );
                    x.softmax().cross_entropy(&y).unwrap()
                },
                &logits,
                &[1, 8],
                1e-5,
            );
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn fft_ifft_chain() {
        let mut rng = StdRng::seed_from_u64(11);
        for n in [8usize, 12] {
            let x = randn(&mut rng, n);
            let err = finite_diff_check(
                |g, x| {
                    let w = g.tensor((0..n).map(|i| 0.1 * i as f64 - 0.3).collect(), &[1, n]);
                    let spec = x.fft().unwrap();
                    spec.ifft().unwrap().mul(&w).sum()
                },
                &x,
                &[1, n],
                1e-5,
            );
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn fft_magnitude_loss() {
        let mut rng = StdRng::seed_from_u64(13);
        let x = randn(&mut rng, 10);
        let err = finite_diff_check(
            |_, x| {
                let spec = x.fft().unwrap();
                spec.re.mul(&spec.re).sum().add(&spec.im.mul(&spec.im).sum())
            },
            &x,
            &[1, 10],
            1e-5,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_and_pool_chain() {
        let mut rng = StdRng::seed_from_u64(17);
        let x = randn(&mut rng, 2 * 1 * 2 * 8);
        let err = finite_diff_check(
            |g, x| {
                let k = g.tensor(vec![0.5, -0.3, 0.2, 0.9, -0.1, 0.4], &[1, 1, 1, 6]);
                let b = g.tensor(vec![0.1], &[1]);
                x.conv2d_valid(&k, &b)
                    .unwrap()
                    .elu(1.0)
                    .avg_pool_time(2)
                    .unwrap()
                    .sum()
            },
            &x,
            &[2, 1, 2, 8],
            1e-5,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn layer_norm_and_stats_chain() {
        let mut rng = StdRng::seed_from_u64(19);
        let x = randn(&mut rng, 12);
        let err = finite_diff_check(
            |g, x| {
                let gain = g.tensor(vec![1.1, 0.9, 1.3, 0.7], &[4]);
                let bias = g.tensor(vec![0.1, -0.2, 0.0, 0.3], &[4]);
                let y = x.layer_norm(&gain, &bias, 1e-5).unwrap();
                let (mu, sigma) = y.row_stats(1e-8).unwrap();
                let inv = sigma.recip();
                let shift = mu.mul(&inv).neg();
                y.scale_shift_rows(&inv, &shift).unwrap().sigmoid().sum()
            },
            &x,
            &[3, 4],
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn matmul_chain() {
        let mut rng = StdRng::seed_from_u64(23);
        let x = randn(&mut rng, 6);
        let err = finite_diff_check(
            |g, x| {
                let w = g.tensor(vec![0.2, -0.4, 0.6, 0.1, 0.5, -0.3], &[3, 2]);
                let b = g.tensor(vec![0.05, -0.05], &[2]);
                x.matmul(&w).unwrap().add_rowvec(&b).unwrap().elu(1.0).sum()
            },
            &x,
            &[2, 3],
            1e-5,
        );
        assert!(err < 1e-6, "{err}");
    }
}
