//! The convolutional autoencoder and the vision transformer classifier.

mod ae;
mod vit;

pub use ae::{AEConfig, Autoencoder, EncodedLatent};
pub use vit::{AttentionRecord, ViTConfig, VisionTransformer};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// A latent code with its L2-normalized form, as consumed by the triplet
/// loss and the latent-space diagnostics.
#[derive(Debug, Clone)]
pub struct LatentEmbedding {
    pub z: Vec<f64>,
    pub z_norm: Vec<f64>,
    pub stage: u8,
    /// True when `z` was exactly zero and `z_norm` is just a copy of `z`.
    pub degenerate: bool,
}

impl LatentEmbedding {
    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Truncated normal draw: N(0, std), resampled outside two standard
/// deviations.
pub fn trunc_normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    (0..n)
        .map(|_| loop {
            let v: f64 = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect()
}

/// He-uniform draw: U(-limit, limit) with `limit = sqrt(6 / fan_in)`.
pub fn he_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Dense layer `x[r,in] -> x @ w + b`.
pub(crate) struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            w: Tensor::param(trunc_normal(rng, inputs * outputs, 0.02), &[inputs, outputs])
                .expect("linear weight shape"),
            b: Tensor::param(vec![0.0; outputs], &[outputs]).expect("linear bias shape"),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = tape.matmul(x, &self.w)?;
        tape.add_bias(&h, &self.b)
    }

    pub fn push_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// 3x3 convolution layer.
pub(crate) struct Conv {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Conv {
        let fan_in = in_ch * 9;
        Conv {
            w: Tensor::param(he_uniform(rng, out_ch * in_ch * 9, fan_in), &[out_ch, in_ch, 3, 3])
                .expect("conv weight shape"),
            b: Tensor::param(vec![0.0; out_ch], &[out_ch]).expect("conv bias shape"),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        tape.conv2d(x, &self.w, &self.b, stride, pad)
    }

    pub fn push_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Learnable layer-norm affine parameters.
pub(crate) struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gain: Tensor::param(vec![1.0; dim], &[dim]).expect("layer norm gain"),
            bias: Tensor::param(vec![0.0; dim], &[dim]).expect("layer norm bias"),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.layer_norm(x, &self.gain, &self.bias, self.eps)
    }

    pub fn push_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// L2-normalize a vector on the tape. A zero vector cannot be normalized;
/// it is returned as-is with the degenerate flag set.
pub fn l2_normalize(tape: &Tape, z: &Tensor) -> Result<(Tensor, bool)> {
    let sq = tape.mul(z, z)?;
    let sum = tape.sum_all(&sq)?;
    if sum.item() == 0.0 {
        return Ok((z.clone(), true));
    }
    let norm = tape.sqrt(&sum)?;
    Ok((tape.div(z, &norm)?, false))
}

pub(crate) fn check_pixel_range(image: &Tensor) -> Result<()> {
    if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Input(
            "image pixels must lie in [0,1] (intensity-normalized)".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = trunc_normal(&mut rng, 10_000, 0.02);
        assert!(values.iter().all(|v| v.abs() <= 0.04));
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn he_uniform_respects_fan_in_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let limit = (6.0f64 / 18.0).sqrt();
        let values = he_uniform(&mut rng, 10_000, 18);
        assert!(values.iter().all(|v| v.abs() < limit));
    }

    #[test]
    fn l2_normalize_unit_norm_and_degenerate_flag() {
        let tape = Tape::no_grad();
        let z = Tensor::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        let (zn, degenerate) = l2_normalize(&tape, &z).unwrap();
        assert!(!degenerate);
        let n: f64 = zn.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);

        let zero = Tensor::zeros(&[2]);
        let (zn, degenerate) = l2_normalize(&tape, &zero).unwrap();
        assert!(degenerate);
        assert_eq!(zn.to_vec(), vec![0.0, 0.0]);
    }
}
