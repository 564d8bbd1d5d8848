//! Layer building blocks: named parameters, convolutions, PReLU.

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::conv::conv2d;
use crate::tensor::ops::prelu;
use crate::tensor::{Shape, Tensor};

/// A named trainable tensor. Names are dotted paths from the model root and
/// must be unique within a model; checkpoints key tensors by them.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            tensor,
        }
    }
}

/// He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.count())
        .map(|_| T::sample_uniform(rng, -bound, bound))
        .collect();
    Tensor::from_vec(shape, data)
        .expect("sampled init data is finite")
        .with_grad()
}

/// 3x3-style convolution layer with learnable weight and bias.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights, zero bias, stride 1, same-size padding.
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, k: usize, rng: &mut R) -> Self {
        let weight = he_uniform(Shape::new(out_ch, in_ch, k, k), in_ch * k * k, rng);
        let bias = Tensor::zeros(Shape::new(1, out_ch, 1, 1)).with_grad();
        Conv2d {
            weight,
            bias,
            stride: 1,
            padding: k / 2,
        }
    }

    /// All-zero weights and bias; the residual-terminal initialization.
    pub fn zeroed(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(Shape::new(out_ch, in_ch, k, k)).with_grad(),
            bias: Tensor::zeros(Shape::new(1, out_ch, 1, 1)).with_grad(),
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        out.push(Parameter::new(format!("{prefix}.weight"), self.weight.clone()));
        out.push(Parameter::new(format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// PReLU with a learnable per-channel negative slope, initialized to 0.25.
pub struct PRelu<T: Scalar> {
    pub slope: Tensor<T>,
}

impl<T: Scalar> PRelu<T> {
    pub fn new(channels: usize) -> Self {
        PRelu {
            slope: Tensor::full(Shape::new(1, channels, 1, 1), T::from_f64_lossy(0.25)).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        prelu(x, &self.slope)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        out.push(Parameter::new(format!("{prefix}.slope"), self.slope.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_uniform_respects_the_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = he_uniform::<f32, _>(Shape::new(8, 4, 3, 3), 4 * 9, &mut rng);
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(t.requires_grad());
        assert!(t.to_vec().iter().all(|&v| v.abs() <= bound));
        // Not degenerate: values actually vary.
        let d = t.to_vec();
        assert!(d.iter().any(|&v| v != d[0]));
    }

    #[test]
    fn conv_layer_preserves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f32>::new(3, 8, 3, &mut rng);
        let x = Tensor::zeros(Shape::new(2, 3, 16, 16));
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 8, 16, 16));
    }

    #[test]
    fn zeroed_conv_outputs_zero() {
        let conv = Conv2d::<f32>::zeroed(4, 4, 3);
        let x = Tensor::full(Shape::new(1, 4, 8, 8), 0.7);
        let y = conv.forward(&x).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prelu_layer_initializes_at_a_quarter() {
        let act = PRelu::<f32>::new(4);
        assert_eq!(act.slope.to_vec(), vec![0.25; 4]);
        let x = Tensor::full(Shape::new(1, 4, 2, 2), -1.0);
        let y = act.forward(&x).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == -0.25));
    }

    #[test]
    fn collect_names_parameters_with_the_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::<f32>::new(2, 2, 3, &mut rng);
        let mut params = Vec::new();
        conv.collect("msrb0.cwa0.fuse", &mut params);
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["msrb0.cwa0.fuse.weight", "msrb0.cwa0.fuse.bias"]);
    }
}
