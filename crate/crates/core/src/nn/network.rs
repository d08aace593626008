use super::layers::{Layer, LayerSpec};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Sequential chain of layers with a declared per-sample input shape.
///
/// An empty chain is the identity map.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    mode: Mode,
    batch_in: Option<Vec<usize>>,
}

/// Shape of every layer boundary, input first.
pub fn infer_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for (i, spec) in specs.iter().enumerate() {
        let next = spec
            .output_shape(shapes.last().expect("nonempty"))
            .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", spec.name())))?;
        shapes.push(next);
    }
    Ok(shapes)
}

impl<T: Scalar> Network<T> {
    pub fn new(specs: Vec<LayerSpec>, input_shape: &[usize], rng: &mut Rng) -> Result<Self> {
        let shapes = infer_shapes(&specs, input_shape)?;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::build(s, &shapes[i], &shapes[i + 1], rng))
            .collect();
        Ok(Self {
            specs,
            layers,
            input_shape: input_shape.to_vec(),
            output_shape: shapes.last().cloned().expect("nonempty"),
            mode: Mode::Train,
            batch_in: None,
        })
    }

    pub fn identity(input_shape: &[usize]) -> Self {
        Self {
            specs: Vec::new(),
            layers: Vec::new(),
            input_shape: input_shape.to_vec(),
            output_shape: input_shape.to_vec(),
            mode: Mode::Train,
            batch_in: None,
        }
    }

    /// Concatenate networks end to end, copying current parameters and buffers.
    pub fn chain(parts: &[&Network<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("network chain"))?;
        let mut out = Self::identity(&first.input_shape);
        for p in parts {
            if p.input_shape != out.output_shape {
                return Err(Error::Shape(format!(
                    "cannot chain output {:?} into input {:?}",
                    out.output_shape, p.input_shape
                )));
            }
            out.specs.extend(p.specs.iter().cloned());
            out.layers.extend(p.layers.iter().cloned());
            out.output_shape = p.output_shape.clone();
        }
        Ok(out)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval(&mut self) {
        self.mode = Mode::Eval;
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "network expects [N, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let train = self.mode == Mode::Train;
        let mut h = x.detach();
        for layer in &mut self.layers {
            h = layer.forward(&h, train)?;
        }
        h.ensure_finite("activation")?;
        self.batch_in = Some(x.shape().to_vec());
        Ok(h)
    }

    /// Backpropagate `upstream` (gradient w.r.t. the last output), adding
    /// parameter gradients into each parameter's grad buffer. Returns the
    /// gradient w.r.t. the input.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let batch_in = self.batch_in.as_ref().ok_or(Error::NoForwardCache)?;
        let mut expect = vec![batch_in[0]];
        expect.extend_from_slice(&self.output_shape);
        if upstream.shape() != expect.as_slice() {
            return Err(Error::Shape(format!("upstream {:?}, output {:?}", upstream.shape(), expect)));
        }
        let mut g = upstream.detach();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        g.reshape(batch_in)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_grads(&self) -> Vec<Vec<T>> {
        self.params()
            .iter()
            .map(|p| p.grad().map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); p.numel()]))
            .collect()
    }

    pub fn buffers(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    /// Flat copy of every parameter value, in parameter order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn max_param_diff(&self, other: &Network<T>) -> f64 {
        self.flat_params()
            .iter()
            .zip(other.flat_params())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Overwrite parameters from `values` (parameter order).
    pub fn load_params(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::Shape(format!("{} parameters, {} values", params.len(), values.len())));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::Shape(format!("param {:?} vs value {:?}", p.shape(), v.shape())));
            }
            p.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec as L;

    fn rng() -> Rng {
        Rng::new(0, 0)
    }

    #[test]
    fn linear_identity_forward() {
        let mut net = Network::<f64>::new(vec![L::Linear { in_features: 3, out_features: 3 }], &[3], &mut rng()).unwrap();
        let eye = Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        net.load_params(&[eye, Tensor::zeros(&[3])]).unwrap();
        let y = net.forward(&Tensor::from_f64(&[1, 3], &[1., 2., 3.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1., 2., 3.]);
    }

    #[test]
    fn relu_forward() {
        let mut net = Network::<f64>::new(vec![L::Relu], &[3], &mut rng()).unwrap();
        let y = net.forward(&Tensor::from_f64(&[1, 3], &[-1., 0., 2.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0., 0., 2.]);
    }

    #[test]
    fn one_by_one_conv_scales() {
        let mut net = Network::<f64>::new(vec![L::conv(1, 1, 1, 1, 0)], &[1, 2, 2], &mut rng()).unwrap();
        net.load_params(&[Tensor::full(&[1, 1, 1, 1], 2.0), Tensor::zeros(&[1])]).unwrap();
        let y = net.forward(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(y.data(), &[2., 2., 2., 2.]);
    }

    #[test]
    fn tanh_backward_at_zero() {
        let mut net = Network::<f64>::new(vec![L::Tanh], &[1], &mut rng()).unwrap();
        net.forward(&Tensor::from_f64(&[1, 1], &[0.0]).unwrap()).unwrap();
        let g = net.backward(&Tensor::from_f64(&[1, 1], &[1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0]);
    }

    #[test]
    fn linear_backward_is_w_transpose_g() {
        let mut net = Network::<f64>::new(vec![L::Linear { in_features: 2, out_features: 3 }], &[2], &mut rng()).unwrap();
        let w = [1., 2., 3., 4., 5., 6.];
        net.load_params(&[Tensor::from_f64(&[3, 2], &w).unwrap(), Tensor::zeros(&[3])]).unwrap();
        net.forward(&Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap()).unwrap();
        let g = [1.0, -1.0, 0.5];
        let dx = net.backward(&Tensor::from_f64(&[1, 3], &g).unwrap()).unwrap();
        let expect = [w[0] * g[0] + w[2] * g[1] + w[4] * g[2], w[1] * g[0] + w[3] * g[1] + w[5] * g[2]];
        assert_eq!(dx.data(), &expect);
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut net = Network::<f64>::new(vec![L::Tanh], &[2], &mut rng()).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(&[1, 2])), Err(Error::NoForwardCache)));
    }

    #[test]
    fn input_shape_checked() {
        let mut net = Network::<f64>::new(vec![L::Relu], &[2], &mut rng()).unwrap();
        assert!(net.forward(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(Network::<f64>::new(vec![L::conv(3, 4, 5, 1, 0)], &[3, 2, 2], &mut rng()).is_err());
        assert!(Network::<f64>::new(vec![L::conv(3, 4, 3, 0, 0)], &[3, 8, 8], &mut rng()).is_err());
        assert!(Network::<f64>::new(vec![L::conv(2, 4, 3, 1, 1)], &[3, 8, 8], &mut rng()).is_err());
    }

    #[test]
    fn param_count_is_pure_function_of_specs() {
        let specs = vec![L::conv(3, 4, 3, 1, 1), L::BatchNorm2d { channels: 4 }, L::ResBlock { channels: 4 }];
        let a = Network::<f32>::new(specs.clone(), &[3, 8, 8], &mut Rng::new(1, 0)).unwrap();
        let b = Network::<f32>::new(specs, &[3, 8, 8], &mut Rng::new(2, 0)).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert_eq!(a.param_count(), (4 * 27 + 4) + 8 + 2 * (4 * 36 + 8));
    }

    #[test]
    fn forward_backward_leave_params_unchanged() {
        let specs = vec![L::conv(2, 3, 3, 1, 1), L::BatchNorm2d { channels: 3 }, L::Relu, L::MaxPool2d { window: 2, stride: 2 }];
        let mut net = Network::<f64>::new(specs, &[2, 4, 4], &mut rng()).unwrap();
        let before = net.flat_params();
        let x = Tensor::full(&[2, 2, 4, 4], 0.5);
        let y = net.forward(&x).unwrap();
        net.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        assert_eq!(before, net.flat_params());
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let net = Network::<f32>::new(vec![L::conv_t(16, 8, 2, 2, 0)], &[16, 8, 8], &mut rng()).unwrap();
        assert_eq!(net.output_shape(), &[8, 16, 16]);
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let mut net = Network::<f64>::new(vec![L::MaxPool2d { window: 2, stride: 2 }], &[1, 2, 2], &mut rng()).unwrap();
        net.forward(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        let g = net.backward(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn batchnorm_eval_is_pure_function_of_input() {
        let specs = vec![L::BatchNorm2d { channels: 2 }];
        let mut net = Network::<f64>::new(specs, &[2, 2, 2], &mut rng()).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let x = Tensor::from_f64(&[2, 2, 2, 2], &x).unwrap();
        net.forward(&x).unwrap();
        net.eval();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        let single = net.forward(&x.select_rows(&[0]).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(single.data(), a.row(0));
    }

    #[test]
    fn chain_matches_sequential_application() {
        let mut r = rng();
        let mut a = Network::<f64>::new(vec![L::Linear { in_features: 4, out_features: 3 }, L::Tanh], &[4], &mut r).unwrap();
        let mut b = Network::<f64>::new(vec![L::Linear { in_features: 3, out_features: 2 }], &[3], &mut r).unwrap();
        let mut ab = Network::chain(&[&a, &b]).unwrap();
        let x = Tensor::from_f64(&[2, 4], &[0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0]).unwrap();
        let y1 = b.forward(&a.forward(&x).unwrap()).unwrap();
        let y2 = ab.forward(&x).unwrap();
        assert_eq!(y1, y2);
    }
}
