//! Backprop against finite differences for every layer family.
//! Draws whose ReLU inputs or pool winners sit within 1e-3 of a kink are
//! skipped: finite differences straddle the kink there.
//!
//! Batch norm yields parameter gradients near 1e-7 whose central difference
//! at h = 1e-4 is truncation-limited, so the deep cases use a five-point
//! stencil here; `gradient_check` itself is exercised on shallow nets.
//! The second sample of each batch is rescaled so pooled batch-normalized
//! features differ between samples and the loss depends on every layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tidewatch::classifier::{residual_block, resnet_specs};
use tidewatch::denoiser::unet_specs;
use tidewatch::detector::autoencoder_specs;
use tidewatch::nn::{gradient_check, LayerSpec, Loss, Mode, Network, Tensor};

const STEP: f64 = 1e-4;
/// The stencil's roundoff is about 1e-12 absolute on O(1) losses; gradients
/// below this floor are compared absolutely.
const FLOOR: f64 = 1e-6;

const MARGIN: f64 = 1e-3;
const TOL: f64 = 1e-4;

#[derive(Clone, Copy)]
enum Target {
    Labels,
    Regression,
    Reconstruction,
}

/// Worst relative error against `(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h`.
fn stencil_check(net: &mut Network<f64>, x: &Tensor<f64>, loss: &Loss<'_, f64>) -> f64 {
    net.zero_grad();
    let out = net.forward(x, Mode::Train).unwrap();
    net.backward(&loss.evaluate(&out).unwrap().1);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()])).collect();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = net.params()[pi].data()[i];
            let mut f = [0.0; 4];
            for (v, k) in f.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                net.params()[pi].data_mut()[i] = orig + k * STEP;
                *v = loss.evaluate(&net.forward(x, Mode::Train).unwrap()).unwrap().0;
            }
            net.params()[pi].data_mut()[i] = orig;
            let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * STEP);
            let e = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(e);
        }
    }
    worst
}

fn uniform(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst error over `seeds` accepted draws.
fn check(dims: &[usize], specs: &[LayerSpec], target: Target, seeds: usize) -> f64 {
    check_with(dims, specs, target, seeds, stencil_check)
}

fn check_with(dims: &[usize], specs: &[LayerSpec], target: Target, seeds: usize, oracle: fn(&mut Network<f64>, &Tensor<f64>, &Loss<'_, f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut accepted = 0;
    for seed in 0..2_000u64 {
        if accepted == seeds {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9));
        let mut net = Network::<f64>::new(dims.to_vec(), specs, seed).unwrap();
        let mut x = uniform([vec![2], dims.to_vec()].concat(), &mut rng);
        // Distinct per-sample scales keep pooled batch-normalized features apart.
        let half = x.len() / 2;
        x.data_mut()[half..].iter_mut().for_each(|v| *v = 1.5 * *v + 0.25);
        net.forward(&x, Mode::Train).unwrap();
        if net.kink_margin() < MARGIN {
            continue;
        }
        accepted += 1;
        let out_dims = [vec![2], net.output_dims().to_vec()].concat();
        let e = match target {
            Target::Labels => oracle(&mut net, &x, &Loss::CrossEntropy(&[1, 0])),
            Target::Regression => {
                let t = uniform(out_dims, &mut rng);
                oracle(&mut net, &x, &Loss::Mse(&t))
            }
            Target::Reconstruction => {
                let t = Tensor::new(x.dims().to_vec(), x.data().iter().map(|v| (v + 1.0) / 2.0).collect()).unwrap();
                oracle(&mut net, &x, &Loss::Bce(&t))
            }
        };
        worst = worst.max(e);
    }
    assert_eq!(accepted, seeds, "too few draws cleared the kink margin");
    worst
}

#[test]
fn dense_stack() {
    let specs = [LayerSpec::Dense { inputs: 6, units: 5 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 5, units: 3 }];
    assert!(check(&[6], &specs, Target::Labels, 8) < TOL);
}

#[test]
fn strided_convolution() {
    let specs = [LayerSpec::conv3x3(2, 3, 2), LayerSpec::Relu, LayerSpec::GlobalAvgPool, LayerSpec::Dense { inputs: 3, units: 2 }];
    assert!(check(&[2, 7, 6], &specs, Target::Labels, 8) < TOL);
}

#[test]
fn max_pool_and_upsample() {
    let specs = [LayerSpec::conv3x3(1, 2, 1), LayerSpec::MaxPool { size: 2 }, LayerSpec::Upsample { factor: 2 }, LayerSpec::conv3x3(2, 1, 1)];
    assert!(check(&[1, 6, 6], &specs, Target::Regression, 8) < TOL);
}

#[test]
fn batch_norm_in_training_mode() {
    let specs = [LayerSpec::conv_nobias(2, 3, 3, 1), LayerSpec::BatchNorm { channels: 3 }, LayerSpec::GlobalAvgPool, LayerSpec::Dense { inputs: 3, units: 2 }];
    assert!(check(&[2, 5, 5], &specs, Target::Labels, 8) < TOL);
}

#[test]
fn residual_block_with_projection() {
    let mut specs = residual_block(2, 4, 2);
    specs.extend([LayerSpec::GlobalAvgPool, LayerSpec::Dense { inputs: 4, units: 2 }]);
    assert!(check(&[2, 6, 6], &specs, Target::Labels, 8) < TOL);
}

#[test]
fn small_resnet() {
    let specs = resnet_specs(1, 2, &[2, 3], 3);
    assert!(check(&[1, 16, 16], &specs, Target::Labels, 4) < TOL);
}

#[test]
fn unet_two_levels() {
    assert!(check(&[1, 4, 4], &unet_specs(1, &[2, 3]), Target::Regression, 8) < TOL);
}

#[test]
fn autoencoder_with_sigmoid_output() {
    assert!(check(&[10], &autoencoder_specs(10, &[6], 3), Target::Reconstruction, 8) < TOL);
}

fn central(net: &mut Network<f64>, x: &Tensor<f64>, loss: &Loss<'_, f64>) -> f64 {
    gradient_check(net, x, loss).unwrap()
}

#[test]
fn library_check_on_shallow_nets() {
    let dense = [LayerSpec::Dense { inputs: 6, units: 5 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 5, units: 3 }];
    assert!(check_with(&[6], &dense, Target::Labels, 8, central) < TOL);
    let conv = [LayerSpec::conv3x3(2, 3, 2), LayerSpec::Relu, LayerSpec::GlobalAvgPool, LayerSpec::Dense { inputs: 3, units: 2 }];
    assert!(check_with(&[2, 7, 6], &conv, Target::Labels, 8, central) < TOL);
    assert!(check_with(&[10], &autoencoder_specs(10, &[6], 3), Target::Reconstruction, 8, central) < TOL);
}
