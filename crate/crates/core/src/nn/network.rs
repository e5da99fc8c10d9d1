use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{backward_stack, forward_stack, stack_out_dims, Layer, LayerSpec, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A validated sequential stack of layers with a declared per-sample input shape.
#[derive(Clone, Debug)]
pub struct Network<T> {
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes a network; weights are drawn from `seed`.
    pub fn new(input_dims: Vec<usize>, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let output_dims = validate(&input_dims, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.iter().map(|s| Layer::from_spec(s, &mut rng)).collect();
        Ok(Self { input_dims, output_dims, layers })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// Re-declares the per-sample input shape (fully convolutional stacks
    /// accept any spatial size their pooling factors divide).
    pub fn set_input_dims(&mut self, input_dims: Vec<usize>) -> Result<()> {
        self.output_dims = validate(&input_dims, &self.specs())?;
        self.input_dims = input_dims;
        Ok(())
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let sample = &x.dims()[1.min(x.dims().len())..];
        if sample != self.input_dims.as_slice() {
            // Name the first layer that rejects the offered shape.
            let specs = self.specs();
            return Err(match stack_out_dims(&specs, sample) {
                Err((index, reason)) => Error::LayerShape { index, layer: specs[index].name().into(), reason },
                Ok(_) => Error::LayerShape {
                    index: 0,
                    layer: specs.first().map_or("input", |s| s.name()).into(),
                    reason: format!("network declared input {:?}, got {sample:?}", self.input_dims),
                },
            });
        }
        Ok(forward_stack(&mut self.layers, x, mode))
    }

    /// See [`Layer::kink_margin`]; infinite for smooth networks.
    pub fn kink_margin(&self) -> f64 {
        self.layers.iter().map(Layer::kink_margin).fold(f64::INFINITY, f64::min)
    }

    /// Backpropagates `grad` (d loss / d output) into parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) {
        backward_stack(&mut self.layers, grad, false);
    }

    /// Like [`backward`](Self::backward) but also returns d loss / d input.
    pub fn backward_with_input_grad(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        backward_stack(&mut self.layers, grad, true).expect("input gradient requested")
    }

    pub fn named_params(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_params(&format!("{i}."), &mut out);
        }
        out
    }

    pub fn params(&mut self) -> Vec<&mut Tensor<T>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub(crate) fn buffers(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            l.collect_buffers(&mut out);
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    /// Per-tensor L2 norms, used for non-finite-loss diagnostics.
    pub fn param_norms(&mut self) -> Vec<(String, f64)> {
        self.named_params().into_iter().map(|(n, p)| (n, p.l2_norm())).collect()
    }

    /// Flat copy of all parameters followed by all buffers.
    pub fn state_vector(&mut self) -> Vec<T> {
        let mut v: Vec<T> = self.params().iter().flat_map(|p| p.data().to_vec()).collect();
        for b in self.buffers() {
            v.extend_from_slice(b);
        }
        v
    }

    pub fn state_len(&mut self) -> usize {
        self.param_count() + self.buffers().iter().map(|b| b.len()).sum::<usize>()
    }

    /// Inverse of [`state_vector`](Self::state_vector).
    pub fn load_state_vector(&mut self, v: &[T]) -> Result<()> {
        let need = self.state_len();
        if v.len() != need {
            return Err(Error::Checkpoint(format!("parameter blob has {} values, network needs {need}", v.len())));
        }
        let mut off = 0;
        for p in self.params() {
            let n = p.len();
            p.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        for b in self.buffers() {
            let n = b.len();
            b.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Same architecture and state in another scalar type.
    pub fn cast<U: Scalar>(&mut self) -> Network<U> {
        let mut out = Network::<U>::new(self.input_dims.clone(), &self.specs(), 0).expect("validated specs");
        let state: Vec<U> = self.state_vector().iter().map(|v| U::of(v.as_f64())).collect();
        out.load_state_vector(&state).expect("same architecture");
        out
    }
}

fn validate(input_dims: &[usize], specs: &[LayerSpec]) -> Result<Vec<usize>> {
    if input_dims.is_empty() || input_dims.contains(&0) {
        return Err(Error::Dimension(format!("invalid network input dims {input_dims:?}")));
    }
    stack_out_dims(specs, input_dims).map_err(|(index, reason)| Error::LayerShape {
        index,
        layer: specs[index].name().into(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_network_is_identity() {
        let mut net = Network::<f64>::new(vec![3], &[], 0).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(net.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn dense_identity_weights_pass_input_through() {
        let mut net = Network::<f64>::new(vec![3], &[LayerSpec::Dense { inputs: 3, units: 3 }], 0).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let mut state = eye;
        state.extend([0.0; 3]);
        net.load_state_vector(&state).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.25, -4.0, 7.5]).unwrap();
        assert_eq!(net.forward(&x, Mode::Eval).unwrap().data(), x.data());
    }

    #[test]
    fn two_layer_dense_matches_hand_matmul() {
        let specs = [LayerSpec::Dense { inputs: 2, units: 2 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 2, units: 1 }];
        let mut net = Network::<f64>::new(vec![2], &specs, 0).unwrap();
        // W1 = [[1, 2], [-3, 1]], b1 = [0.5, 0], W2 = [[2, -1]], b2 = [0.25]
        net.load_state_vector(&[1.0, 2.0, -3.0, 1.0, 0.5, 0.0, 2.0, -1.0, 0.25]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        // h = relu([1+2+0.5, -3+1]) = [3.5, 0]; y = 2*3.5 - 0 + 0.25 = 7.25
        assert_eq!(net.forward(&x, Mode::Eval).unwrap().data(), &[7.25]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let specs = [LayerSpec::conv3x3(1, 4, 1), LayerSpec::Relu];
        assert!(Network::<f32>::new(vec![1, 8, 8], &specs, 0).is_ok());
        let bad = [LayerSpec::conv3x3(1, 4, 1), LayerSpec::Dense { inputs: 10, units: 2 }];
        match Network::<f32>::new(vec![1, 8, 8], &bad, 0) {
            Err(Error::LayerShape { index, layer, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(layer, "dense");
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut net = Network::<f32>::new(vec![1, 8, 8], &specs, 0).unwrap();
        let x = Tensor::zeros(vec![1, 2, 8, 8]);
        match net.forward(&x, Mode::Eval) {
            Err(Error::LayerShape { index, layer, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(layer, "conv2d");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
