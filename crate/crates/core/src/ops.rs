//! Dense-layer kernels with hand-derived reverse-mode gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Logistic function with slope `t`: `1 / (1 + exp(-t x))`.
#[inline]
pub fn sigmoid_scalar(x: f64, t: f64) -> f64 {
    let z = t * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of `sigmoid_scalar(x, t)` with respect to `x`.
#[inline]
pub fn sigmoid_grad_scalar(x: f64, t: f64) -> f64 {
    let s = sigmoid_scalar(x, t);
    t * s * (1.0 - s)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "sigmoid temperature must be positive and finite, got {t}"
        )))
    }
}

/// Elementwise `σ(t·x)`.
pub fn sigmoid(x: &Tensor, t: f64) -> Result<Tensor> {
    check_temperature(t)?;
    Ok(x.map(|v| sigmoid_scalar(v, t)))
}

/// Elementwise `t·σ(t·x)·(1 − σ(t·x))`, the exact derivative of [`sigmoid`].
pub fn sigmoid_grad(x: &Tensor, t: f64) -> Result<Tensor> {
    check_temperature(t)?;
    Ok(x.map(|v| sigmoid_grad_scalar(v, t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn code(self) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Relu => 1.0,
        }
    }

    pub(crate) fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            _ => Err(Error::Malformed(format!("unknown activation code {code}"))),
        }
    }
}

/// Everything [`layer_backward`] needs from a forward call.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Tensor,
    weights: Tensor,
    pre_activation: Tensor,
    activation: Activation,
}

impl LayerCache {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn pre_activation(&self) -> &Tensor {
        &self.pre_activation
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// `activation(input · weights + bias)` for `input: [n, in]`, `weights: [in, out]`, `bias: [out]`.
pub fn layer_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<(Tensor, LayerCache)> {
    let (_, out) = weights.dims2("layer_forward")?;
    if bias.len() != out {
        return Err(Error::Dimension {
            op: "layer_forward bias",
            left: weights.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut z = matmul(input, weights)?;
    for row in z.data_mut().chunks_mut(out) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    let output = z.map(|v| activation.apply(v));
    let cache = LayerCache {
        input: input.clone(),
        weights: weights.clone(),
        pre_activation: z,
        activation,
    };
    Ok((output, cache))
}

/// Reverse-mode gradients of [`layer_forward`] given `∂L/∂output`.
pub fn layer_backward(cache: &LayerCache, upstream: &Tensor) -> Result<LayerGrads> {
    if upstream.shape() != cache.pre_activation.shape() {
        return Err(Error::Usage(format!(
            "upstream gradient shape {:?} does not match cached layer output {:?}",
            upstream.shape(),
            cache.pre_activation.shape()
        )));
    }
    let act = cache.activation;
    let dz = upstream.zip_map(&cache.pre_activation, "layer_backward", |g, z| {
        g * act.derivative(z)
    })?;
    let weights = matmul_tn(&cache.input, &dz)?;
    let out = dz.cols();
    let mut bias = vec![0.0; out];
    for row in dz.data().chunks(out) {
        for (b, g) in bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let input = matmul_nt(&dz, &cache.weights)?;
    Ok(LayerGrads {
        input,
        weights,
        bias: Tensor::vector(bias),
    })
}
