//! Single-hidden-layer perceptron used for the adversary and the classifier.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::params::{fan_in_uniform, ParamSet};
use super::{ModelError, Result};
use crate::diffcore::activation::relu_inplace;
use crate::diffcore::{dense, dense_backward, relu_backward, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<F> {
    pub hidden_weight: Array2<F>,
    pub hidden_bias: Array1<F>,
    pub out_weight: Array2<F>,
    pub out_bias: Array1<F>,
}

impl<F: Scalar> ParamSet<F> for MlpParams<F> {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)> {
        vec![
            ("hidden_weight", self.hidden_weight.view().into_dyn()),
            ("hidden_bias", self.hidden_bias.view().into_dyn()),
            ("out_weight", self.out_weight.view().into_dyn()),
            ("out_bias", self.out_bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)> {
        vec![
            ("hidden_weight", self.hidden_weight.view_mut().into_dyn()),
            ("hidden_bias", self.hidden_bias.view_mut().into_dyn()),
            ("out_weight", self.out_weight.view_mut().into_dyn()),
            ("out_bias", self.out_bias.view_mut().into_dyn()),
        ]
    }
}

#[derive(Debug)]
pub struct MlpCache<F> {
    input: Array2<F>,
    hidden: Array2<F>,
}

/// `logits = W₂ · relu(W₁ z + b₁) + b₂`.
#[derive(Clone, Debug)]
pub struct Mlp<F> {
    pub params: MlpParams<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            params: MlpParams {
                hidden_weight: fan_in_uniform(rng, (hidden, input), input),
                hidden_bias: Array1::zeros(hidden),
                out_weight: fan_in_uniform(rng, (output, hidden), hidden),
                out_bias: Array1::zeros(output),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.hidden_weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.params.out_weight.nrows()
    }

    pub fn forward(&self, z: ArrayView2<F>) -> Result<(Array2<F>, MlpCache<F>)> {
        if z.ncols() != self.input_dim() {
            return Err(ModelError::Shape(format!("MLP expects width {}, got {}", self.input_dim(), z.ncols())));
        }
        let p = &self.params;
        let mut hidden = dense(z, p.hidden_weight.view(), p.hidden_bias.view())?;
        relu_inplace(&mut hidden);
        let logits = dense(hidden.view(), p.out_weight.view(), p.out_bias.view())?;
        Ok((logits, MlpCache { input: z.to_owned(), hidden }))
    }

    pub fn logits(&self, z: ArrayView2<F>) -> Result<Array2<F>> {
        Ok(self.forward(z)?.0)
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache<F>, d_logits: ArrayView2<F>) -> Result<(MlpParams<F>, Array2<F>)> {
        let p = &self.params;
        let go = dense_backward(cache.hidden.view(), p.out_weight.view(), d_logits)?;
        let d_pre = relu_backward(go.input.view(), cache.hidden.view());
        let gh = dense_backward(cache.input.view(), p.hidden_weight.view(), d_pre.view())?;
        let grads = MlpParams { hidden_weight: gh.weight, hidden_bias: gh.bias, out_weight: go.weight, out_bias: go.bias };
        Ok((grads, gh.input))
    }
}
