//! Dense autoencoder with hand-written forward and reverse passes.
//!
//! The encoder maps a text embedding to the latent material vector
//! (sigmoid-bounded), the decoder maps the latent back to an embedding.
//! Weights are stored row-major (`out x in`) per layer, followed by the bias.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    /// Stable numeric id used by the checkpoint header.
    pub fn id(self) -> u8 {
        match self {
            Activation::LeakyRelu => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Activation::LeakyRelu),
            2 => Some(Activation::Sigmoid),
            3 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Layer widths and activations of an autoencoder.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelShape {
    /// Widths from input to latent, e.g. `[512, 256, 64, 8]`.
    pub encoder: Vec<usize>,
    /// Widths from latent to output, e.g. `[8, 64, 256, 512]`.
    pub decoder: Vec<usize>,
    pub hidden: Activation,
    pub latent: Activation,
    pub output: Activation,
    pub leaky_slope: f32,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape::symmetric(&[512, 256, 64, 8])
    }
}

impl ModelShape {
    /// Mirror-image decoder, leaky hidden units, sigmoid latent, linear output.
    pub fn symmetric(encoder: &[usize]) -> Self {
        let mut decoder = encoder.to_vec();
        decoder.reverse();
        ModelShape {
            encoder: encoder.to_vec(),
            decoder,
            hidden: Activation::LeakyRelu,
            latent: Activation::Sigmoid,
            output: Activation::Identity,
            leaky_slope: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.encoder.len() < 2 || self.decoder.len() < 2 {
            return bad("encoder and decoder need at least one layer each");
        }
        if self.encoder.iter().chain(&self.decoder).any(|&d| d == 0) {
            return bad("layer widths must be positive");
        }
        if self.encoder.last() != self.decoder.first() {
            return bad("decoder must start at the latent width");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder.last().expect("validated shape")
    }

    pub fn output_dim(&self) -> usize {
        *self.decoder.last().expect("validated shape")
    }

    /// `(in, out)` of every layer, encoder first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.encoder
            .windows(2)
            .chain(self.decoder.windows(2))
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        let n_enc = self.encoder_layers();
        let n_total = n_enc + self.decoder.len() - 1;
        if layer + 1 == n_enc {
            self.latent
        } else if layer + 1 == n_total {
            self.output
        } else {
            self.hidden
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub input: usize,
    pub output: usize,
    /// Row-major `output x input`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Dense<T> {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            input,
            output,
            weights: vec![T::zero(); input * output],
            bias: vec![T::zero(); output],
        }
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.output {
            let row = &self.weights[o * self.input..(o + 1) * self.input];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc = acc + *w * *v;
            }
            out.push(acc);
        }
    }
}

fn activate<T: Float>(act: Activation, slope: T, z: T) -> T {
    match act {
        Activation::Identity => z,
        Activation::LeakyRelu => {
            if z > T::zero() {
                z
            } else {
                z * slope
            }
        }
        Activation::Sigmoid => {
            // kept strictly inside (0, 1)
            let s = T::one() / (T::one() + (-z).exp());
            s.max(T::epsilon()).min(T::one() - T::epsilon())
        }
    }
}

fn derivative<T: Float>(act: Activation, slope: T, z: T, y: T) -> T {
    match act {
        Activation::Identity => T::one(),
        Activation::LeakyRelu => {
            if z > T::zero() {
                T::one()
            } else {
                slope
            }
        }
        Activation::Sigmoid => y * (T::one() - y),
    }
}

/// Pre- and post-activation values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    version: u64,
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    encoder_layers: usize,
}

impl<T: Float> ForwardCache<T> {
    pub fn latent(&self) -> &[T] {
        &self.post[self.encoder_layers - 1]
    }

    pub fn output(&self) -> &[T] {
        self.post.last().expect("at least one layer")
    }
}

/// Per-layer weight and bias gradients, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn zeros_like(model: &Autoencoder<T>) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input, l.output))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x = *x + *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = *v * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Flattened in checkpoint order.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder<T> {
    shape: ModelShape,
    layers: Vec<Dense<T>>,
    version: u64,
}

/// Equal shapes and bitwise-equal parameters; the cache version is ignored.
impl<T: PartialEq> PartialEq for Autoencoder<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.layers == other.layers
    }
}

impl<T: Float> Autoencoder<T> {
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let layers = shape
            .layer_dims()
            .iter()
            .map(|&(i, o)| Dense::zeros(i, o))
            .collect();
        Ok(Autoencoder {
            shape,
            layers,
            version: 0,
        })
    }

    /// He-normal weights (`sqrt(2 / fan_in)`), zero biases.
    pub fn seeded(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut model.layers {
            let std = libm::sqrt(2.0 / l.input as f64);
            for w in &mut l.weights {
                let n: f64 = StandardNormal.sample(&mut rng);
                *w = T::from(n * std).expect("finite");
            }
        }
        Ok(model)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.shape.param_count()
    }

    /// Incremented on every weight update; used to detect stale caches.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// All parameters in checkpoint order.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn load_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: self.param_count(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = it.next().expect("length checked"));
        }
        self.version += 1;
        Ok(())
    }

    /// Mutable access to one parameter by flat index (checkpoint order).
    pub fn param_mut(&mut self, mut index: usize) -> &mut T {
        self.version += 1;
        for l in &mut self.layers {
            let n = l.weights.len();
            if index < n {
                return &mut l.weights[index];
            }
            index -= n;
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn slope(&self) -> T {
        T::from(self.shape.leaky_slope).expect("finite slope")
    }

    fn run(&self, range: core::ops::Range<usize>, x: &[T]) -> Vec<T> {
        let slope = self.slope();
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for i in range {
            self.layers[i].affine(&cur, &mut next);
            let act = self.shape.activation(i);
            for v in &mut next {
                *v = activate(act, slope, *v);
            }
            core::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.shape.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Encoder pass: embedding to latent.
    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run(0..self.shape.encoder_layers(), x))
    }

    /// Decoder pass: latent to embedding.
    pub fn decode(&self, latent: &[T]) -> Result<Vec<T>> {
        if latent.len() != self.shape.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.latent_dim(),
                found: latent.len(),
            });
        }
        Ok(self.run(self.shape.encoder_layers()..self.layers.len(), latent))
    }

    /// Full pass keeping everything the reverse pass needs.
    pub fn forward(&self, x: &[T]) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let slope = self.slope();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &post[i - 1] };
            let mut z = Vec::new();
            layer.affine(input, &mut z);
            let act = self.shape.activation(i);
            let y: Vec<T> = z.iter().map(|&v| activate(act, slope, v)).collect();
            pre.push(z);
            post.push(y);
        }
        Ok(ForwardCache {
            version: self.version,
            input: x.to_vec(),
            pre,
            post,
            encoder_layers: self.shape.encoder_layers(),
        })
    }

    /// Reverse pass with upstream gradients at the latent and at the output.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_latent: &[T],
        grad_output: &[T],
    ) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if grad_latent.len() != self.shape.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.latent_dim(),
                found: grad_latent.len(),
            });
        }
        if grad_output.len() != self.shape.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.output_dim(),
                found: grad_output.len(),
            });
        }
        let slope = self.slope();
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = grad_output.to_vec();
        let latent_layer = self.shape.encoder_layers() - 1;
        for i in (0..self.layers.len()).rev() {
            if i == latent_layer {
                for (u, g) in upstream.iter_mut().zip(grad_latent) {
                    *u = *u + *g;
                }
            }
            let layer = &self.layers[i];
            let act = self.shape.activation(i);
            let dz: Vec<T> = upstream
                .iter()
                .zip(&cache.pre[i])
                .zip(&cache.post[i])
                .map(|((&u, &z), &y)| u * derivative(act, slope, z, y))
                .collect();
            let input = if i == 0 {
                &cache.input
            } else {
                &cache.post[i - 1]
            };
            let g = &mut grads.layers[i];
            let mut down = vec![T::zero(); layer.input];
            for (o, &d) in dz.iter().enumerate() {
                g.bias[o] = d;
                if d == T::zero() {
                    continue;
                }
                let row = o * layer.input;
                for (k, &x) in input.iter().enumerate() {
                    g.weights[row + k] = d * x;
                    down[k] = down[k] + layer.weights[row + k] * d;
                }
            }
            upstream = down;
        }
        Ok(grads)
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<T>,
}

impl<T: Float> Sgd<T> {
    pub fn new(model: &Autoencoder<T>, learning_rate: T, momentum: T) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: vec![T::zero(); model.param_count()],
        }
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, v: Vec<T>) -> Result<()> {
        if v.len() != self.velocity.len() {
            return Err(Error::LengthMismatch {
                left: v.len(),
                right: self.velocity.len(),
            });
        }
        self.velocity = v;
        Ok(())
    }

    /// `v = momentum v - lr g; w += v`.
    pub fn step(&mut self, model: &mut Autoencoder<T>, grads: &Gradients<T>) {
        let mut idx = 0;
        for (l, g) in model.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in l
                .weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .zip(g.weights.iter().chain(&g.bias))
            {
                let v = self.momentum * self.velocity[idx] - self.learning_rate * *gw;
                self.velocity[idx] = v;
                *w = *w + v;
                idx += 1;
            }
        }
        model.version += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_budget() {
        assert_eq!(
            ModelShape::default().param_count(),
            (512 * 256 + 256)
                + (256 * 64 + 64)
                + (64 * 8 + 8)
                + (8 * 64 + 64)
                + (64 * 256 + 256)
                + (256 * 512 + 512)
        );
        assert_eq!(ModelShape::default().param_count(), 297_096);
    }

    #[test]
    fn zero_weights() {
        let m = Autoencoder::<f32>::zeros(ModelShape::default()).unwrap();
        let latent = m.encode(&[0.7; 512]).unwrap();
        assert_eq!(latent, vec![0.5; 8]);
        assert_eq!(m.decode(&[0.3; 8]).unwrap(), vec![0.0; 512]);
    }

    #[test]
    fn dimension_errors() {
        let m = Autoencoder::<f32>::zeros(ModelShape::default()).unwrap();
        assert!(matches!(
            m.encode(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.decode(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut bad = ModelShape::default();
        bad.decoder[0] = 7;
        assert!(Autoencoder::<f32>::zeros(bad).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Autoencoder::<f64>::seeded(ModelShape::symmetric(&[8, 4, 2]), 1).unwrap();
        let cache = m.forward(&[0.1; 8]).unwrap();
        let g = m.backward(&cache, &[0.0; 2], &[1.0; 8]).unwrap();
        let mut opt = Sgd::new(&m, 0.1, 0.9);
        opt.step(&mut m, &g);
        assert_eq!(
            m.backward(&cache, &[0.0; 2], &[1.0; 8]).unwrap_err(),
            Error::StaleCache
        );
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Autoencoder::<f64>::seeded(ModelShape::symmetric(&[8, 4, 2]), 2).unwrap();
        let cache = m.forward(&[0.3; 8]).unwrap();
        let g = m.backward(&cache, &[0.0; 2], &[0.0; 8]).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_decoder_is_affine() {
        let mut shape = ModelShape::symmetric(&[8, 4, 2]);
        shape.hidden = Activation::Identity;
        let m = Autoencoder::<f64>::seeded(shape, 5).unwrap();
        let (a, b) = ([0.2, 0.9], [0.6, 0.1]);
        let da = m.decode(&a).unwrap();
        let db = m.decode(&b).unwrap();
        let diff = m.decode(&[0.0, 0.0]).unwrap();
        let lin = m.decode(&[a[0] - b[0], a[1] - b[1]]).unwrap();
        for i in 0..8 {
            // affine map: D(a) - D(b) = D(a - b) - D(0)
            assert!(((da[i] - db[i]) - (lin[i] - diff[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_never_saturates() {
        let mut m = Autoencoder::<f32>::zeros(ModelShape::symmetric(&[4, 2])).unwrap();
        for i in 0..m.param_count() {
            *m.param_mut(i) = 1e4;
        }
        let hi = m.encode(&[1.0; 4]).unwrap();
        let lo = m.encode(&[-1.0; 4]).unwrap();
        assert!(hi.iter().chain(&lo).all(|v| *v > 0.0 && *v < 1.0));
    }
}
