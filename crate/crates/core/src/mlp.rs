//! Small multilayer perceptrons: stacked affine maps with LeakyReLU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// One affine map `x·W + b` with `W` shaped `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Where the activation goes after the last affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Output {
    Linear,
    Activated,
}

/// Named MLP parameters. LeakyReLU sits between consecutive affine maps and,
/// for [`Output::Activated`], after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub layers: Vec<Affine<T>>,
    pub output: Output,
}

impl<T: Real> LayerParams<T> {
    /// Uniform weights with zero biases: `U(−√(6/in), √(6/in))` ahead of an
    /// activation, `U(−√(3/in), √(3/in))` for a linear output layer. Both keep
    /// the activation scale roughly constant through deep stacks.
    pub fn init(name: impl Into<String>, widths: &[usize], output: Output, rng: &mut impl Rng) -> Self {
        let last = widths.len().saturating_sub(2);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = if i == last && output == Output::Linear { 3.0 } else { 6.0 };
                let bound = (gain / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
                Affine {
                    weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self { name: name.into(), layers, output }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.shape()[1])
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Registers every weight and bias as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| (g.leaf(l.weight.clone(), trainable), g.leaf(l.bias.clone(), trainable)))
            .collect();
        BoundMlp { layers, output: self.output }
    }

    /// Wraps leaves already on a graph, two per layer in binding order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundMlp> {
        if vars.len() != 2 * self.layers.len() {
            return Err(Error::dim("bind_vars", format!("{} leaves for {} layers", vars.len(), self.layers.len())));
        }
        Ok(BoundMlp { layers: vars.chunks_exact(2).map(|c| (c[0], c[1])).collect(), output: self.output })
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            name: self.name.clone(),
            layers: self.layers.iter().map(|l| Affine { weight: l.weight.cast(), bias: l.bias.cast() }).collect(),
            output: self.output,
        }
    }

    /// Weight and bias tensors in binding order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// An MLP whose parameters live on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    output: Output,
}

impl BoundMlp {
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, x: Var, slope: T) -> Result<Var> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("empty MLP".into()));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            if i < last || self.output == Output::Activated {
                h = g.leaky_relu(h, slope)?;
            }
        }
        Ok(h)
    }

    /// Parameter leaves in binding order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = LayerParams::<f32>::init("h", &[6, 8, 8], Output::Activated, &mut ChaCha8Rng::seed_from_u64(3));
        let b = LayerParams::<f32>::init("h", &[6, 8, 8], Output::Activated, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.data().iter().all(|&v| v == 0.0)));
        assert_eq!(a.parameter_count(), 6 * 8 + 8 + 8 * 8 + 8);
        let bound = (6.0f32 / 6.0).sqrt();
        assert!(a.layers[0].weight.data().iter().all(|v| v.abs() <= bound));
        assert!(a.layers[0].weight.data().iter().any(|v| v.abs() > 0.5 * bound));
        let lin = LayerParams::<f32>::init("o", &[6, 8, 8], Output::Linear, &mut ChaCha8Rng::seed_from_u64(3));
        let last = (3.0f32 / 8.0).sqrt();
        assert!(lin.layers[1].weight.data().iter().all(|v| v.abs() <= last));
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let p = LayerParams::<f64>::init("g", &[4, 3, 2], Output::Linear, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = Graph::new();
        let m = p.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[5, 3]));
        assert!(matches!(m.apply(&mut g, x, 0.01), Err(Error::Dimension { .. })));
    }
}
