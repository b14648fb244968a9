use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NnError;

/// One affine layer; `weight` is out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let (rows, cols) = (outputs.max(inputs), outputs.min(inputs));
        let a = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let weight = if outputs >= inputs { q } else { q.transpose() };
        Self {
            weight: weight * gain,
            bias: DVector::zeros(outputs),
        }
    }
}

/// Dense network with tanh hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations saved by a batched forward pass (one column per sample).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k]` feeds layer k.
    activations: Vec<DMatrix<f64>>,
}

/// Gradients shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Dense>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub sizes: Vec<usize>,
}

impl Mlp {
    /// Orthogonal init: hidden layers with gain √2, output layer with `out_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::Shape(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let gain = if k + 1 == n { out_gain } else { 2f64.sqrt() };
                Dense::orthogonal(sizes[k], sizes[k + 1], gain, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(|l| l.outputs()));
        s
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { sizes: self.sizes() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs()).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<DVector<f64>, NnError> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let (y, _) = self.forward_batch(&x)?;
        Ok(y.column(0).into_owned())
    }

    /// Forward a batch stored column-wise.
    pub fn forward_batch(&self, input: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache), NnError> {
        if input.nrows() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "input has {} rows, network expects {}",
                input.nrows(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if k < last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(std::mem::replace(&mut h, z));
        }
        Ok((h, ForwardCache { activations }))
    }

    /// Reverse pass. Layers with `frozen[k]` get zero gradients; the input
    /// gradient is always propagated.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &DMatrix<f64>,
        frozen: &[bool],
    ) -> Result<(MlpGrad, DMatrix<f64>), NnError> {
        if cache.activations.len() != self.layers.len() {
            return Err(NnError::ContractViolation("forward cache does not match network".into()));
        }
        let batch = cache.activations[0].ncols();
        if upstream.nrows() != self.output_dim() || upstream.ncols() != batch {
            return Err(NnError::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{batch}",
                upstream.nrows(),
                upstream.ncols(),
                self.output_dim()
            )));
        }
        let mut grads = MlpGrad::zeros_like(self);
        let mut dz = upstream.clone();
        for k in (0..self.layers.len()).rev() {
            let x = &cache.activations[k];
            if !frozen.get(k).copied().unwrap_or(false) {
                grads.layers[k].weight = &dz * x.transpose();
                grads.layers[k].bias = dz.column_sum();
            }
            let mut dx = self.layers[k].weight.transpose() * &dz;
            if k > 0 {
                // x = tanh(.) for every layer but the first.
                dx.zip_apply(x, |g, h| *g *= 1.0 - h * h);
            }
            dz = dx;
        }
        Ok((grads, dz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (k, l) in net.layers.iter().enumerate() {
            let mut out = vec![0.0; l.outputs()];
            for (i, o) in out.iter_mut().enumerate() {
                let mut s = l.bias[i];
                for (j, hj) in h.iter().enumerate() {
                    s += l.weight[(i, j)] * hj;
                }
                *o = if k + 1 < net.layers.len() { s.tanh() } else { s };
            }
            h = out;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[18, 256, 256, 18]);
        assert!(net.forward(&[0.3; 18]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(&[5, 5]);
        net.layers[0].weight = DMatrix::identity(5, 5);
        let x = [1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(net.forward(&x).unwrap().as_slice(), &x);
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut net = Mlp::new(&[18, 32, 24, 7], 1.0, &mut rng).unwrap();
            for l in &mut net.layers {
                l.bias.apply(|b| *b = rng.random_range(-0.5..0.5));
            }
            let x: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = net.forward(&x).unwrap();
            for (a, b) in y.iter().zip(reference_forward(&net, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_init_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tall = Dense::orthogonal(18, 64, 1.0, &mut rng);
        let g = tall.weight.transpose() * &tall.weight;
        assert!((g - DMatrix::identity(18, 18)).amax() < 1e-12);
        let wide = Dense::orthogonal(64, 18, 2.0, &mut rng);
        let g = &wide.weight * wide.weight.transpose();
        assert!((g - DMatrix::identity(18, 18) * 4.0).amax() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[3, 4, 2]);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(NnError::Shape(_))));
        let (_, cache) = net.forward_batch(&DMatrix::zeros(3, 2)).unwrap();
        assert!(net.backward(&cache, &DMatrix::zeros(2, 3), &[]).is_err());
        let other = Mlp::zeros(&[3, 2]);
        assert!(matches!(
            other.backward(&cache, &DMatrix::zeros(2, 2), &[]),
            Err(NnError::ContractViolation(_))
        ));
    }

    #[test]
    fn linear_scalar_gradient_is_input() {
        let mut net = Mlp::zeros(&[4, 1]);
        net.layers[0].weight = DMatrix::from_row_slice(1, 4, &[0.5, -1.0, 2.0, 0.1]);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let (_, cache) = net.forward_batch(&x).unwrap();
        let (g, _) = net.backward(&cache, &DMatrix::from_element(1, 1, 1.0), &[]).unwrap();
        assert_eq!(g.layers[0].weight.as_slice(), x.as_slice());
        assert_eq!(g.layers[0].bias[0], 1.0);
    }

    #[test]
    fn frozen_layers_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[6, 8, 3], 1.0, &mut rng).unwrap();
        let x = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward_batch(&x).unwrap();
        let up = DMatrix::from_element(3, 4, 1.0);
        let (g, dx) = net.backward(&cache, &up, &[true, true]).unwrap();
        assert!(g.layers.iter().all(|l| l.weight.iter().all(|v| *v == 0.0) && l.bias.iter().all(|v| *v == 0.0)));
        assert!(dx.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for case in 0..100 {
            let mut net = Mlp::new(&[5, 7, 6, 3], 1.0, &mut rng).unwrap();
            for l in &mut net.layers {
                l.bias.apply(|b| *b = rng.random_range(-0.3..0.3));
            }
            let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            // L = Σ c ⊙ y
            let loss = |n: &Mlp| n.forward_batch(&x).unwrap().0.component_mul(&c).sum();
            let (_, cache) = net.forward_batch(&x).unwrap();
            let (g, dx) = net.backward(&cache, &c, &[]).unwrap();
            let k = case % net.layers.len();
            let (rows, cols) = net.layers[k].weight.shape();
            let (i, j) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let mut plus = net.clone();
            plus.layers[k].weight[(i, j)] += h;
            let mut minus = net.clone();
            minus.layers[k].weight[(i, j)] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = g.layers[k].weight[(i, j)];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "case {case}: {fd} vs {an}");

            let mut plus = net.clone();
            plus.layers[k].bias[i] += h;
            let mut minus = net.clone();
            minus.layers[k].bias[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = g.layers[k].bias[i];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3));

            let (r, s) = (rng.random_range(0..5), rng.random_range(0..2));
            let mut xp = x.clone();
            xp[(r, s)] += h;
            let mut xm = x.clone();
            xm[(r, s)] -= h;
            let lp = net.forward_batch(&xp).unwrap().0.component_mul(&c).sum();
            let lm = net.forward_batch(&xm).unwrap().0.component_mul(&c).sum();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - dx[(r, s)]).abs() <= 1e-4 * dx[(r, s)].abs().max(1e-3));
        }
    }
}
