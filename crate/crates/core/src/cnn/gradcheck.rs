//! Finite-difference verification of whole-network gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, Tensor};
use super::network::Network;
use super::train::{euclidean_loss, euclidean_loss_grad};
use crate::error::Result;

/// Result for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the
    /// checked entries.
    pub rel_error: f64,
    pub max_abs_grad: f64,
}

/// Norm-wise relative error with a floor on the denominator.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Move BN scales/shifts and dense biases off their initial values so no
/// gradient vanishes by symmetry.
pub fn jitter_affine(net: &mut Network<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut net.layers {
        match l {
            Layer::BatchNorm(bn) => {
                bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            Layer::Dense(d) => d.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1)),
            _ => {}
        }
    }
}

fn loss_with(net: &Network<f64>, x: &Tensor<f64>, labels: &[f64], dropout_seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (pred, _) = net.forward_train(x.clone(), &mut rng)?;
    euclidean_loss(&pred, labels)
}

/// Compare backprop against central differences of the training loss for
/// up to `per_group` seeded entries of every parameter group (all entries
/// when `per_group == 0`). Dropout masks are held fixed across evaluations.
pub fn check_network(
    net: &Network<f64>,
    x: &Tensor<f64>,
    labels: &[f64],
    eps: f64,
    per_group: usize,
    seed: u64,
) -> Result<Vec<GroupCheck>> {
    let dropout_seed = seed ^ 0xd0d0;
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (pred, cache) = net.forward_train(x.clone(), &mut rng)?;
    let grads = net.backward(&cache, &euclidean_loss_grad(&pred, labels))?;

    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let mut work = net.clone();
    let mut out = Vec::new();
    let mut name_iter = names.into_iter();
    for li in 0..net.layers.len() {
        for (gi, g) in grads[li].iter().enumerate() {
            let n = g.len();
            let idx: Vec<usize> = if per_group == 0 || per_group >= n {
                (0..n).collect()
            } else {
                sample(&mut pick, n, per_group).into_vec()
            };
            let mut analytic = Vec::with_capacity(idx.len());
            let mut numeric = Vec::with_capacity(idx.len());
            for &j in &idx {
                let orig = work.layers[li].params_mut()[gi][j];
                work.layers[li].params_mut()[gi][j] = orig + eps;
                let lp = loss_with(&work, x, labels, dropout_seed)?;
                work.layers[li].params_mut()[gi][j] = orig - eps;
                let lm = loss_with(&work, x, labels, dropout_seed)?;
                work.layers[li].params_mut()[gi][j] = orig;
                numeric.push((lp - lm) / (2.0 * eps));
                analytic.push(g[j]);
            }
            out.push(GroupCheck {
                name: name_iter.next().unwrap_or_default(),
                checked: idx.len(),
                rel_error: relative_error(&analytic, &numeric),
                max_abs_grad: analytic.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            });
        }
    }
    Ok(out)
}
