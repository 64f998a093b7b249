//! Central finite-difference gradient checks.
//!
//! The scalar probed is `sum(r * f(inputs))` for a fixed random projection
//! `r`; the numeric side evaluates that projection in `f64` directly from the
//! forward outputs so only the operation itself is checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;
use crate::losses;

pub const DEFAULT_PERTURBATION: f32 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

fn projected(y: &Tensor, r: &[f32]) -> f64 {
    y.data().iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Largest gradient discrepancy over all elements of all `inputs`, relative
/// to the largest gradient magnitude among them.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f32, seed: u64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = f(inputs)?;
    let r: Vec<f32> = (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let proj = Tensor::new(y.shape(), r.clone())?;
    for x in inputs {
        x.zero_grad();
    }
    sum(&mul(&y, &proj)?).backward()?;
    drop(y);

    let mut pairs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let analytic = x.grad();
        let mut numeric = vec![0.0f64; x.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = x.data()[i];
            x.update_data(|d| d[i] = orig + eps);
            let plus = projected(&f(inputs)?, &r);
            x.update_data(|d| d[i] = orig - eps);
            let minus = projected(&f(inputs)?, &r);
            x.update_data(|d| d[i] = orig);
            // the perturbation actually applied in f32
            let h = ((orig + eps) as f64) - ((orig - eps) as f64);
            *slot = (plus - minus) / h;
        }
        x.zero_grad();
        pairs.push((analytic, numeric));
    }
    let scale = pairs
        .iter()
        .flat_map(|(a, n)| a.iter().map(|&v| (v as f64).abs()).chain(n.iter().map(|v| v.abs())))
        .fold(1e-6, f64::max);
    let worst = pairs
        .iter()
        .flat_map(|(a, n)| a.iter().zip(n).map(|(&a, &n)| (a as f64 - n).abs()))
        .fold(0.0, f64::max);
    Ok(worst / scale)
}

/// A named operation exercised on several random shapes.
pub struct GradCase {
    pub name: &'static str,
    run: fn(&mut ChaCha8Rng) -> Result<Vec<f64>>,
}

impl GradCase {
    /// Max relative error for each shape tried.
    pub fn run(&self, seed: u64) -> Result<Vec<f64>> {
        (self.run)(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

fn rand_param(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).to_param()
}

/// Values bounded away from 0 so kinked activations stay differentiable
/// under the perturbation.
fn kink_free_param(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..numel(shape))
        .map(|_| {
            let v: f32 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::param(shape, data).expect("shape")
}

fn check(f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> Result<f64> {
    grad_check(f, inputs, DEFAULT_PERTURBATION, rng.gen())
}

const SHAPES: [[usize; 4]; 3] = [[1, 2, 3, 4], [2, 3, 5, 5], [1, 4, 6, 3]];

// Scalar losses are mean-reduced, so their gradients shrink with the number
// of locations while the f32 loss value keeps a fixed resolution.
const LOSS_SHAPES: [[usize; 4]; 3] = [[1, 2, 2, 3], [2, 3, 1, 2], [1, 4, 2, 2]];

fn conv_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cfgs = [
        ([1, 2, 4, 4], [3, 2, 3, 3], ConvSpec::new(2, 1)),
        ([2, 1, 5, 6], [2, 1, 3, 3], ConvSpec::new(1, 1)),
        ([1, 3, 7, 7], [2, 3, 4, 4], ConvSpec::new(2, 1)),
    ];
    cfgs.iter()
        .map(|&(xs, ws, spec)| {
            let x = rand_param(&xs, rng);
            let w = rand_param(&ws, rng);
            let b = rand_param(&[ws[0]], rng);
            check(|t| conv2d(&t[0], &t[1], Some(&t[2]), spec), &[x, w, b], rng)
        })
        .collect()
}

fn conv_transpose_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cfgs = [
        ([1, 2, 3, 3], [2, 3, 3, 3], ConvSpec::new(2, 1).with_output_padding(1)),
        ([2, 1, 2, 4], [1, 2, 2, 2], ConvSpec::new(2, 0)),
        ([1, 3, 4, 3], [3, 2, 3, 3], ConvSpec::new(1, 1)),
    ];
    cfgs.iter()
        .map(|&(xs, ws, spec)| {
            let x = rand_param(&xs, rng);
            let w = rand_param(&ws, rng);
            let b = rand_param(&[ws[1]], rng);
            check(|t| conv_transpose2d(&t[0], &t[1], Some(&t[2]), spec), &[x, w, b], rng)
        })
        .collect()
}

fn instance_norm_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    SHAPES
        .iter()
        .map(|s| {
            let x = rand_param(s, rng);
            let g = rand_param(&[s[1]], rng);
            let b = rand_param(&[s[1]], rng);
            check(|t| instance_norm2d(&t[0], Some(&t[1]), Some(&t[2]), 1e-5), &[x, g, b], rng)
        })
        .collect()
}

fn batch_norm_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut errs = Vec::new();
    for (i, s) in SHAPES.iter().enumerate() {
        let x = rand_param(s, rng);
        let g = rand_param(&[s[1]], rng);
        let b = rand_param(&[s[1]], rng);
        let c = s[1];
        // alternate between batch statistics and fixed inference statistics
        let mean: Vec<f32> = (0..c).map(|k| 0.1 * k as f32).collect();
        let var: Vec<f32> = (0..c).map(|k| 0.5 + 0.25 * k as f32).collect();
        let fixed = i % 2 == 1;
        errs.push(check(
            |t| {
                let stats = fixed.then_some((mean.as_slice(), var.as_slice()));
                Ok(batch_norm2d(&t[0], &t[1], &t[2], stats, 1e-5)?.0)
            },
            &[x, g, b],
            rng,
        )?);
    }
    Ok(errs)
}

fn elementwise(f: fn(&Tensor) -> Tensor, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    SHAPES
        .iter()
        .map(|s| {
            let x = kink_free_param(s, rng);
            check(|t| Ok(f(&t[0])), &[x], rng)
        })
        .collect()
}

fn binary(f: fn(&Tensor, &Tensor) -> Result<Tensor>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    SHAPES
        .iter()
        .map(|s| {
            let a = rand_param(s, rng);
            let b = rand_param(s, rng);
            check(|t| f(&t[0], &t[1]), &[a, b], rng)
        })
        .collect()
}

fn composite_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cfgs = [([1, 2, 5, 5], 3), ([2, 3, 4, 4], 2), ([1, 1, 6, 5], 4)];
    cfgs.iter()
        .map(|&(xs, cout)| {
            // resample until no pre-activation sits near the ReLU kink
            let (x, w, b) = loop {
                let x = rand_param(&xs, rng);
                let w = rand_param(&[cout, xs[1], 3, 3], rng);
                let b = rand_param(&[cout], rng);
                let pre = instance_norm2d(&conv2d(&x, &w, Some(&b), ConvSpec::new(1, 1))?, None, None, 1e-5)?;
                if pre.data().iter().all(|v| v.abs() > 0.05) {
                    break (x, w, b);
                }
            };
            check(
                |t| {
                    let y = conv2d(&t[0], &t[1], Some(&t[2]), ConvSpec::new(1, 1))?;
                    let y = instance_norm2d(&y, None, None, 1e-5)?;
                    // the checker's projected sum closes the chain
                    Ok(relu(&y))
                },
                &[x, w, b],
                rng,
            )
        })
        .collect()
}

fn kl_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    LOSS_SHAPES
        .iter()
        .map(|s| {
            let a = Tensor::uniform(s, -2.0, 2.0, rng).to_param();
            let b = Tensor::uniform(s, -2.0, 2.0, rng).to_param();
            check(|t| Ok(losses::kl_cycle_loss(&t[0], &t[1])?.tensor().clone()), &[a, b], rng)
        })
        .collect()
}

fn lsgan_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    LOSS_SHAPES
        .iter()
        .map(|s| {
            let real = rand_param(s, rng);
            let fake = rand_param(s, rng);
            let d = check(
                |t| Ok(losses::lsgan_d_loss(&t[0], &t[1]).tensor().clone()),
                &[real, fake.clone()],
                rng,
            )?;
            let g = check(|t| Ok(losses::lsgan_g_loss(&t[0]).tensor().clone()), &[fake], rng)?;
            Ok(d.max(g))
        })
        .collect()
}

fn cross_entropy_case(rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    LOSS_SHAPES
        .iter()
        .map(|s| {
            let x = Tensor::uniform(s, -2.0, 2.0, rng).to_param();
            let k = s[1];
            let labels: Vec<u8> = (0..s[0] * s[2] * s[3])
                .map(|i| {
                    if i % 7 == 3 {
                        losses::IGNORE_INDEX
                    } else {
                        rng.gen_range(0..k) as u8
                    }
                })
                .collect();
            check(
                |t| Ok(losses::cross_entropy(&t[0], &labels, losses::IGNORE_INDEX)?.tensor().clone()),
                &[x],
                rng,
            )
        })
        .collect()
}

/// Every differentiable operation, each checked on three shapes.
pub fn registry() -> Vec<GradCase> {
    vec![
        GradCase { name: "conv2d", run: conv_case },
        GradCase { name: "conv_transpose2d", run: conv_transpose_case },
        GradCase { name: "instance_norm2d", run: instance_norm_case },
        GradCase { name: "batch_norm2d", run: batch_norm_case },
        GradCase { name: "relu", run: |r| elementwise(relu, r) },
        GradCase { name: "leaky_relu", run: |r| elementwise(|x| leaky_relu(x, 0.2), r) },
        GradCase { name: "tanh", run: |r| elementwise(tanh, r) },
        GradCase { name: "exp", run: |r| elementwise(exp, r) },
        GradCase { name: "square", run: |r| elementwise(square, r) },
        GradCase {
            name: "softmax_over_channels",
            run: |r| elementwise(|x| softmax_over_channels(x).expect("4-D"), r),
        },
        GradCase {
            name: "log_softmax_over_channels",
            run: |r| elementwise(|x| log_softmax_over_channels(x).expect("4-D"), r),
        },
        GradCase {
            name: "upsample_bilinear",
            run: |r| elementwise(|x| upsample_bilinear(x, 7, 9).expect("4-D"), r),
        },
        GradCase {
            name: "pad2d",
            run: |r| elementwise(|x| pad2d(x, [1, 2, 0, 1]).expect("4-D"), r),
        },
        GradCase {
            name: "crop2d",
            run: |r| {
                elementwise(
                    |x| {
                        let s = x.shape();
                        crop2d(x, 1, 1, s[2] - 1, s[3] - 1).expect("4-D")
                    },
                    r,
                )
            },
        },
        GradCase { name: "mean", run: |r| elementwise(mean, r) },
        GradCase { name: "add", run: |r| binary(add, r) },
        GradCase { name: "sub", run: |r| binary(sub, r) },
        GradCase { name: "mul", run: |r| binary(mul, r) },
        GradCase { name: "conv_norm_relu", run: composite_case },
        GradCase { name: "kl_cycle_loss", run: kl_case },
        GradCase { name: "lsgan", run: lsgan_case },
        GradCase { name: "cross_entropy", run: cross_entropy_case },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_slope_at_zero_is_one() {
        let x = Tensor::param(&[1], vec![0.0]).unwrap();
        let plus = tanh(&Tensor::scalar(1e-3)).item() as f64;
        let minus = tanh(&Tensor::scalar(-1e-3)).item() as f64;
        assert!(((plus - minus) / 2e-3 - 1.0).abs() < 1e-4);
        sum(&tanh(&x)).backward().unwrap();
        assert_eq!(x.grad(), vec![1.0]);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // forward doubles, backward claims identity
        let bogus = |t: &[Tensor]| -> Result<Tensor> {
            let y = t[0].data().iter().map(|v| 2.0 * v).collect();
            Ok(Tensor::from_op(
                t[0].shape().to_vec(),
                y,
                &[&t[0]],
                Box::new(|_, g| vec![Some(g.to_vec())]),
            ))
        };
        let x = Tensor::param(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(grad_check(bogus, &[x], 1e-3, 0).unwrap() > 0.4);
    }
}

#[cfg(test)]
mod registry_tests {
    use super::*;

    #[test]
    fn every_registered_op_passes() {
        for case in registry() {
            let errs = case.run(7).unwrap();
            assert!(errs.len() >= 3, "{}", case.name);
            for e in errs {
                assert!(e < DEFAULT_TOLERANCE, "{}: {e}", case.name);
            }
        }
    }
}
