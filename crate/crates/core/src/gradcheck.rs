//! Central finite differences, the independent oracle for every analytic
//! gradient in the crate. Used by the test suites; not part of any
//! training path.

use alloc::vec::Vec;

use crate::scalar::Scalar;

/// Worst relative error between an analytic gradient and central finite
/// differences of `f` around `x0`.
///
/// `f` must be a pure function of the buffer handed to it. The relative
/// error is `|a - n| / max(1, |a|, |n|)`, so absolute agreement is accepted
/// near zero.
pub fn max_rel_error<T, F>(f: F, x0: &[T], analytic: &[T], eps: f64) -> f64
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    assert_eq!(x0.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut x: Vec<T> = x0.to_vec();
    for i in 0..x0.len() {
        let h = T::from_f64(eps * x0[i].as_f64().abs().max(1.0));
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x).as_f64();
        x[i] = orig - h;
        let fm = f(&x).as_f64();
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h.as_f64());
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Like [`max_rel_error`] but probing only the listed coordinates, for
/// losses that are expensive to evaluate.
pub fn max_rel_error_at<T, F>(f: F, x0: &[T], analytic: &[T], eps: f64, coords: &[usize]) -> f64
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    assert_eq!(x0.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut x: Vec<T> = x0.to_vec();
    for &i in coords {
        let h = T::from_f64(eps * x0[i].as_f64().abs().max(1.0));
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x).as_f64();
        x[i] = orig - h;
        let fm = f(&x).as_f64();
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h.as_f64());
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if err > worst {
            worst = err;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{
        avg_pool2d, batch_norm, conv2d, global_avg_pool, leaky_relu, linear, mul,
        normalize_filter, softmax_cross_entropy, sum_all, BnPhase, BnStats, ConvArgs, Tensor,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;
    const EPS: f64 = 1e-5;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    /// Gradient-check a scalar loss built from one tensor input.
    fn check<F>(rng: &mut ChaCha8Rng, shape: &[usize], build: F)
    where
        F: Fn(&Tensor<f64>) -> Tensor<f64>,
    {
        let n = shape.iter().product();
        let x0 = rand_vec(rng, n);
        let x = Tensor::parameter(shape, x0.clone());
        let loss = build(&x);
        loss.backward().unwrap();
        let analytic = x.grad().expect("gradient populated");
        let f = |vals: &[f64]| build(&Tensor::from_vec(shape, vals.to_vec())).item();
        let err = max_rel_error(f, &x0, &analytic, EPS);
        assert!(err < TOL, "rel err {err} for shape {shape:?}");
    }

    #[test]
    fn leaky_relu_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let n = rng.gen_range(1..32);
            check(&mut rng, &[n], |x| sum_all(&mul(&leaky_relu(x, 0.02), x).unwrap()));
        }
    }

    #[test]
    fn normalize_filter_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(2..24);
            // A non-trivial functional of the normalized filter.
            let probe: Vec<f64> = rand_vec(&mut rng, n);
            check(&mut rng, &[n], |x| {
                let p = Tensor::from_vec(&[n], probe.clone());
                sum_all(&mul(&normalize_filter(x), &p).unwrap())
            });
        }
    }

    #[test]
    fn conv2d_gradcheck_input_and_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let b = rng.gen_range(1..3);
            let g = [1, 2][rng.gen_range(0..2)];
            let cin = g * rng.gen_range(1..3);
            let cout = g * rng.gen_range(1..3);
            let k = rng.gen_range(1..4);
            let d = rng.gen_range(1..3);
            let s = rng.gen_range(1..3);
            let pad = rng.gen_range(0..2);
            let h = (k - 1) * d + 1 + rng.gen_range(0..3);
            let args = ConvArgs { stride: s, dilation: d, groups: g, padding: pad };

            let w_len = cout * (cin / g) * k * k;
            let w0 = rand_vec(&mut rng, w_len);
            let probe_shape = [b, cin, h, h];

            // d/d input
            let w_fixed = w0.clone();
            check(&mut rng, &probe_shape, |x| {
                let w = Tensor::from_vec(&[cout, cin / g, k, k], w_fixed.clone());
                let y = conv2d(x, &w, &args).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            });

            // d/d weight
            let x0 = rand_vec(&mut rng, b * cin * h * h);
            let x_fixed = x0.clone();
            let build = |w: &Tensor<f64>| {
                let x = Tensor::from_vec(&probe_shape, x_fixed.clone());
                let y = conv2d(&x, w, &args).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            };
            let w = Tensor::parameter(&[cout, cin / g, k, k], w0.clone());
            let loss = build(&w);
            loss.backward().unwrap();
            let analytic = w.grad().unwrap();
            let f = |vals: &[f64]| build(&Tensor::from_vec(&[cout, cin / g, k, k], vals.to_vec())).item();
            let err = max_rel_error(f, &w0, &analytic, EPS);
            assert!(err < TOL, "conv weight rel err {err}");
        }
    }

    #[test]
    fn avg_pool_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let b = rng.gen_range(1..3);
            let c = rng.gen_range(1..3);
            let h = rng.gen_range(2..6);
            let win = rng.gen_range(1..=h.min(3));
            let stride = rng.gen_range(1..3);
            check(&mut rng, &[b, c, h, h], |x| {
                let y = avg_pool2d(x, win, stride).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            });
        }
    }

    #[test]
    fn global_avg_pool_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let b = rng.gen_range(1..4);
            let c = rng.gen_range(1..4);
            let h = rng.gen_range(1..5);
            check(&mut rng, &[b, c, h, h], |x| {
                let y = global_avg_pool(x).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            });
        }
    }

    #[test]
    fn linear_gradcheck_all_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let b = rng.gen_range(1..4);
            let c = rng.gen_range(1..5);
            let k = rng.gen_range(1..5);
            let x0 = rand_vec(&mut rng, b * c);
            let w0 = rand_vec(&mut rng, k * c);
            let b0 = rand_vec(&mut rng, k);

            // x
            let (wf, bf) = (w0.clone(), b0.clone());
            check(&mut rng, &[b, c], |x| {
                let w = Tensor::from_vec(&[k, c], wf.clone());
                let bias = Tensor::from_vec(&[k], bf.clone());
                let y = linear(x, &w, &bias).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            });

            // w and bias through the parameter path
            let x_t = Tensor::from_vec(&[b, c], x0.clone());
            let w_t = Tensor::parameter(&[k, c], w0.clone());
            let b_t = Tensor::parameter(&[k], b0.clone());
            let y = linear(&x_t, &w_t, &b_t).unwrap();
            sum_all(&mul(&y, &y).unwrap()).backward().unwrap();
            let (ga, gb) = (w_t.grad().unwrap(), b_t.grad().unwrap());
            let xf = x0.clone();
            let bff = b0.clone();
            let f_w = |vals: &[f64]| {
                let x = Tensor::from_vec(&[b, c], xf.clone());
                let w = Tensor::from_vec(&[k, c], vals.to_vec());
                let bias = Tensor::from_vec(&[k], bff.clone());
                let y = linear(&x, &w, &bias).unwrap();
                sum_all(&mul(&y, &y).unwrap()).item()
            };
            assert!(max_rel_error(f_w, &w0, &ga, EPS) < TOL);
            let xf2 = x0.clone();
            let wf2 = w0.clone();
            let f_b = |vals: &[f64]| {
                let x = Tensor::from_vec(&[b, c], xf2.clone());
                let w = Tensor::from_vec(&[k, c], wf2.clone());
                let bias = Tensor::from_vec(&[k], vals.to_vec());
                let y = linear(&x, &w, &bias).unwrap();
                sum_all(&mul(&y, &y).unwrap()).item()
            };
            assert!(max_rel_error(f_b, &b0, &gb, EPS) < TOL);
        }
    }

    #[test]
    fn softmax_ce_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..20 {
            let b = rng.gen_range(1..5);
            let k = rng.gen_range(2..7);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
            let labels_c = labels.clone();
            check(&mut rng, &[b, k], move |x| softmax_cross_entropy(x, &labels_c).unwrap());
        }
    }

    #[test]
    fn batch_norm_train_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..20 {
            let b = rng.gen_range(2..5);
            let c = rng.gen_range(1..4);
            let h = rng.gen_range(1..4);
            let gamma0 = rand_vec(&mut rng, c);
            let beta0 = rand_vec(&mut rng, c);
            let (gf, bf) = (gamma0.clone(), beta0.clone());
            check(&mut rng, &[b, c, h, h], move |x| {
                let gamma = Tensor::from_vec(&[c], gf.clone());
                let beta = Tensor::from_vec(&[c], bf.clone());
                let stats = BnStats::new(c);
                let y = batch_norm(x, &gamma, &beta, &stats, 0, BnPhase::Train, 0.1, 1e-5).unwrap();
                sum_all(&mul(&y, &y).unwrap())
            });
        }
    }
}
