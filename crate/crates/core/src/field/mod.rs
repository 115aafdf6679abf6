//! Differentiable radiance field: positional encoding feeding a ReLU MLP with
//! a softplus density head and a view-dependent sigmoid color head.
//!
//! Density reads only the trunk features, which see only the encoded
//! position; the encoded viewing direction joins in the color head. All
//! evaluation is batched, one GEMM per layer, and the forward pass records a
//! tape that [`RadianceField::backward`] consumes.

mod encoding;
mod scalar;

pub use encoding::EncodingConfig;
pub use scalar::Real;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Hidden layers in the position trunk.
    pub depth: usize,
    pub width: usize,
    /// Hidden width of the color head.
    pub color_width: usize,
    pub position_encoding: EncodingConfig,
    pub direction_encoding: EncodingConfig,
    /// Positions are multiplied by this before encoding, mapping the scene
    /// into roughly `[-1, 1]^3`.
    pub position_scale: f64,
    /// `sigma = density_scale * softplus(z)`.
    pub density_scale: f64,
    /// Start the density head at zero weights and bias.
    pub zero_density_head: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 64,
            color_width: 32,
            position_encoding: EncodingConfig::new(6, true),
            direction_encoding: EncodingConfig::new(2, true),
            position_scale: 1.0,
            density_scale: 1.0,
            zero_density_head: false,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.color_width == 0 {
            return Err(Error::Config("field depth and widths must be >= 1".into()));
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(Error::Config("position_scale must be positive".into()));
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite()) {
            return Err(Error::Config("density_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn position_features(&self) -> usize {
        self.position_encoding.output_dim(3)
    }

    pub fn direction_features(&self) -> usize {
        self.direction_encoding.output_dim(3)
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.position_features(), self.width)];
        shapes.extend((1..self.depth).map(|_| (self.width, self.width)));
        shapes.push((self.width, 1));
        shapes.push((self.width + self.direction_features(), self.color_width));
        shapes.push((self.color_width, 3));
        shapes
    }
}

/// Offsets of one dense layer inside the flat parameter vector. Weights are
/// `fan_in x fan_out` row-major, followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let b = self.offset + self.fan_in * self.fan_out;
        b..b + self.fan_out
    }

    fn len(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField<T: Real> {
    config: FieldConfig,
    layers: Vec<Dense>,
    params: Vec<T>,
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T: Real> {
    batch: usize,
    pos_features: Vec<T>,
    dir_features: Vec<T>,
    /// Post-ReLU output of every trunk layer.
    hidden: Vec<Vec<T>>,
    density_pre: Vec<T>,
    color_hidden: Vec<T>,
    sigma: Vec<T>,
    rgb: Vec<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    /// `batch x 3`, row-major.
    pub fn rgb(&self) -> &[T] {
        &self.rgb
    }
}

fn build_layers(config: &FieldConfig) -> Vec<Dense> {
    let mut offset = 0;
    config
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let d = Dense {
                offset,
                fan_in,
                fan_out,
            };
            offset += d.len();
            d
        })
        .collect()
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl<T: Real> RadianceField<T> {
    /// He-uniform weights from `seed`, zero biases.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = build_layers(&config);
        let total = layers.iter().map(Dense::len).sum();
        let mut params = vec![T::zero(); total];
        let mut rng = seeded(seed);
        let density_idx = config.depth;
        for (i, layer) in layers.iter().enumerate() {
            if i == density_idx && config.zero_density_head {
                continue;
            }
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for w in &mut params[layer.weights()] {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn from_params(config: FieldConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layers = build_layers(&config);
        let total: usize = layers.iter().map(Dense::len).sum();
        if params.len() != total {
            return Err(Error::domain(format!(
                "parameter vector has {} entries, architecture needs {total}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Converts to another element type.
    pub fn cast<U: Real>(&self) -> RadianceField<U> {
        RadianceField {
            config: self.config,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }

    fn trunk_count(&self) -> usize {
        self.config.depth
    }

    /// Evaluates `(sigma, rgb)` at every `(position, direction)` pair and
    /// keeps the activations for [`backward`](Self::backward).
    pub fn forward(&self, positions: &[Vec3], directions: &[Vec3]) -> Result<ForwardPass<T>> {
        if positions.len() != directions.len() {
            return Err(Error::domain("positions and directions differ in length"));
        }
        let n = positions.len();
        let cfg = &self.config;
        let pf = cfg.position_features();
        let df = cfg.direction_features();

        let mut pos_features = vec![T::zero(); n * pf];
        let mut dir_features = vec![T::zero(); n * df];
        let mut scratch = vec![0.0; pf.max(df)];
        for (i, (p, d)) in positions.iter().zip(directions).enumerate() {
            if p.iter().chain(d.iter()).any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("non-finite field input at sample {i}")));
            }
            let scaled = p.map(|v| v * cfg.position_scale);
            cfg.position_encoding.encode_into(&scaled, &mut scratch[..pf]);
            for (dst, src) in pos_features[i * pf..(i + 1) * pf].iter_mut().zip(&scratch[..pf]) {
                *dst = T::of(*src);
            }
            cfg.direction_encoding.encode_into(d, &mut scratch[..df]);
            for (dst, src) in dir_features[i * df..(i + 1) * df].iter_mut().zip(&scratch[..df]) {
                *dst = T::of(*src);
            }
        }

        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(self.trunk_count());
        for l in 0..self.trunk_count() {
            let input = if l == 0 { &pos_features } else { &hidden[l - 1] };
            let out = self.dense_forward(self.layers[l], input, n, true);
            hidden.push(out);
        }
        let trunk = &hidden[self.trunk_count() - 1];

        let density_layer = self.layers[self.trunk_count()];
        let density_pre = self.dense_forward(density_layer, trunk, n, false);
        let sigma = density_pre
            .iter()
            .map(|z| T::of(cfg.density_scale * softplus(z.f64())))
            .collect();

        // Color hidden layer over [trunk, dir_features] without materializing the concat.
        let ch = self.layers[self.trunk_count() + 1];
        let w = &self.params[ch.weights()];
        let mut color_hidden = self.bias_rows(ch, n);
        let width = cfg.width;
        T::gemm(n, width, ch.fan_out, trunk, (width as isize, 1), &w[..width * ch.fan_out], (ch.fan_out as isize, 1), T::one(), &mut color_hidden, (ch.fan_out as isize, 1));
        T::gemm(n, df, ch.fan_out, &dir_features, (df as isize, 1), &w[width * ch.fan_out..], (ch.fan_out as isize, 1), T::one(), &mut color_hidden, (ch.fan_out as isize, 1));
        relu_in_place(&mut color_hidden);

        let co = self.layers[self.trunk_count() + 2];
        let mut rgb = self.dense_forward(co, &color_hidden, n, false);
        for v in &mut rgb {
            *v = T::of(sigmoid(v.f64()));
        }

        Ok(ForwardPass {
            batch: n,
            pos_features,
            dir_features,
            hidden,
            density_pre,
            color_hidden,
            sigma,
            rgb,
        })
    }

    fn bias_rows(&self, layer: Dense, n: usize) -> Vec<T> {
        let b = &self.params[layer.bias()];
        let mut out = Vec::with_capacity(n * layer.fan_out);
        for _ in 0..n {
            out.extend_from_slice(b);
        }
        out
    }

    fn dense_forward(&self, layer: Dense, input: &[T], n: usize, relu: bool) -> Vec<T> {
        let mut out = self.bias_rows(layer, n);
        T::gemm(
            n,
            layer.fan_in,
            layer.fan_out,
            input,
            (layer.fan_in as isize, 1),
            &self.params[layer.weights()],
            (layer.fan_out as isize, 1),
            T::one(),
            &mut out,
            (layer.fan_out as isize, 1),
        );
        if relu {
            relu_in_place(&mut out);
        }
        out
    }

    /// Accumulates `d loss / d params` into `grads` given upstream gradients
    /// with respect to `sigma` (`batch`) and `rgb` (`batch x 3`).
    pub fn backward(
        &self,
        pass: &ForwardPass<T>,
        d_sigma: &[T],
        d_rgb: &[T],
        grads: &mut [T],
    ) -> Result<()> {
        let n = pass.batch;
        if d_sigma.len() != n || d_rgb.len() != 3 * n {
            return Err(Error::domain(format!(
                "upstream gradients ({}, {}) do not match batch of {n}",
                d_sigma.len(),
                d_rgb.len()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::domain("gradient buffer does not match parameter count"));
        }
        if n == 0 {
            return Ok(());
        }
        let cfg = &self.config;
        let width = cfg.width;
        let df = cfg.direction_features();
        let depth = self.trunk_count();
        let trunk = &pass.hidden[depth - 1];

        // Color output: sigmoid'.
        let co = self.layers[depth + 2];
        let d_color_pre: Vec<T> = d_rgb
            .iter()
            .zip(&pass.rgb)
            .map(|(&g, &c)| g * c * (T::one() - c))
            .collect();
        let mut d_color_hidden = self.dense_backward(co, &pass.color_hidden, &d_color_pre, n, grads, true);
        mask_relu(&mut d_color_hidden, &pass.color_hidden);

        // Color hidden: split weight rows between trunk and direction features.
        let ch = self.layers[depth + 1];
        {
            let (gw, gb) = split_grads(grads, ch);
            T::gemm(width, n, ch.fan_out, trunk, (1, width as isize), &d_color_hidden, (ch.fan_out as isize, 1), T::one(), &mut gw[..width * ch.fan_out], (ch.fan_out as isize, 1));
            T::gemm(df, n, ch.fan_out, &pass.dir_features, (1, df as isize), &d_color_hidden, (ch.fan_out as isize, 1), T::one(), &mut gw[width * ch.fan_out..], (ch.fan_out as isize, 1));
            add_column_sums(gb, &d_color_hidden, ch.fan_out);
        }
        let w = &self.params[ch.weights()];
        let mut d_trunk = vec![T::zero(); n * width];
        T::gemm(n, ch.fan_out, width, &d_color_hidden, (ch.fan_out as isize, 1), &w[..width * ch.fan_out], (1, ch.fan_out as isize), T::zero(), &mut d_trunk, (width as isize, 1));

        // Density head: sigma = s * softplus(z), d sigma / dz = s * sigmoid(z).
        let dl = self.layers[depth];
        let d_density_pre: Vec<T> = d_sigma
            .iter()
            .zip(&pass.density_pre)
            .map(|(&g, &z)| g * T::of(cfg.density_scale * sigmoid(z.f64())))
            .collect();
        {
            let (gw, gb) = split_grads(grads, dl);
            T::gemm(width, n, 1, trunk, (1, width as isize), &d_density_pre, (1, 1), T::one(), gw, (1, 1));
            gb[0] += d_density_pre.iter().copied().sum::<T>();
        }
        let wd = &self.params[dl.weights()];
        for (row, &g) in d_trunk.chunks_exact_mut(width).zip(&d_density_pre) {
            for (d, &w) in row.iter_mut().zip(wd) {
                *d += g * w;
            }
        }

        // Trunk, last layer first.
        let mut d_out = d_trunk;
        for l in (0..depth).rev() {
            mask_relu(&mut d_out, &pass.hidden[l]);
            let input = if l == 0 { &pass.pos_features } else { &pass.hidden[l - 1] };
            d_out = self.dense_backward(self.layers[l], input, &d_out, n, grads, l > 0);
        }
        Ok(())
    }

    /// Adds weight/bias gradients of one layer and returns `d input` when asked.
    fn dense_backward(
        &self,
        layer: Dense,
        input: &[T],
        d_out: &[T],
        n: usize,
        grads: &mut [T],
        want_input_grad: bool,
    ) -> Vec<T> {
        let (fi, fo) = (layer.fan_in, layer.fan_out);
        {
            let (gw, gb) = split_grads(grads, layer);
            T::gemm(fi, n, fo, input, (1, fi as isize), d_out, (fo as isize, 1), T::one(), gw, (fo as isize, 1));
            add_column_sums(gb, d_out, fo);
        }
        if !want_input_grad {
            return Vec::new();
        }
        let mut d_in = vec![T::zero(); n * fi];
        T::gemm(n, fo, fi, d_out, (fo as isize, 1), &self.params[layer.weights()], (1, fo as isize), T::zero(), &mut d_in, (fi as isize, 1));
        d_in
    }
}

fn split_grads<T>(grads: &mut [T], layer: Dense) -> (&mut [T], &mut [T]) {
    let (w, rest) = grads[layer.offset..layer.offset + layer.len()].split_at_mut(layer.fan_in * layer.fan_out);
    (w, rest)
}

fn add_column_sums<T: Real>(acc: &mut [T], m: &[T], cols: usize) {
    for row in m.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        *x = if *x > T::zero() { *x } else { T::zero() };
    }
}

fn mask_relu<T: Real>(grad: &mut [T], activated: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        *g = if a > T::zero() { *g } else { T::zero() };
    }
}

/// Forward-only evaluation shared by trained fields and analytic scenes.
pub trait RadianceQuery {
    /// Fills `sigma` and `rgb` with one entry per sample.
    fn query(
        &self,
        positions: &[Vec3],
        directions: &[Vec3],
        sigma: &mut Vec<f64>,
        rgb: &mut Vec<[f64; 3]>,
    ) -> Result<()>;
}

impl<T: Real> RadianceQuery for RadianceField<T> {
    fn query(
        &self,
        positions: &[Vec3],
        directions: &[Vec3],
        sigma: &mut Vec<f64>,
        rgb: &mut Vec<[f64; 3]>,
    ) -> Result<()> {
        let pass = self.forward(positions, directions)?;
        sigma.clear();
        sigma.extend(pass.sigma.iter().map(|s| s.f64()));
        rgb.clear();
        rgb.extend(
            pass.rgb
                .chunks_exact(3)
                .map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]),
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::UniformSource;

    fn toy_config() -> FieldConfig {
        FieldConfig {
            depth: 2,
            width: 16,
            color_width: 8,
            position_encoding: EncodingConfig::new(2, true),
            direction_encoding: EncodingConfig::new(1, true),
            position_scale: 0.5,
            density_scale: 1.0,
            zero_density_head: false,
        }
    }

    fn random_inputs(n: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>) {
        let mut rng = seeded(seed);
        let mut pos = Vec::new();
        let mut dir = Vec::new();
        for _ in 0..n {
            pos.push([0.0; 3].map(|_: f64| 4.0 * rng.uniform() - 2.0));
            let d = [0.0; 3].map(|_: f64| rng.uniform() - 0.5);
            let norm = crate::geometry::norm(d);
            dir.push(d.map(|c| c / norm));
        }
        (pos, dir)
    }

    /// Scalar objective `sum(a . sigma + b . rgb)` for fixed random `a`, `b`.
    fn objective(field: &RadianceField<f64>, pos: &[Vec3], dir: &[Vec3], a: &[f64], b: &[f64]) -> f64 {
        let pass = field.forward(pos, dir).unwrap();
        let s: f64 = pass.sigma().iter().zip(a).map(|(x, y)| x * y).sum();
        let c: f64 = pass.rgb().iter().zip(b).map(|(x, y)| x * y).sum();
        s + c
    }

    #[test]
    fn outputs_respect_activation_ranges() {
        let field = RadianceField::<f64>::new(FieldConfig::default(), 3).unwrap();
        let (pos, dir) = random_inputs(10_000, 9);
        let pass = field.forward(&pos, &dir).unwrap();
        assert!(pass.sigma().iter().all(|s| s.is_finite() && *s >= 0.0));
        assert!(pass.rgb().iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)));
    }

    #[test]
    fn zero_density_head_gives_softplus_zero() {
        let cfg = FieldConfig {
            zero_density_head: true,
            density_scale: 2.0,
            ..toy_config()
        };
        let field = RadianceField::<f64>::new(cfg, 1).unwrap();
        let (pos, dir) = random_inputs(20, 2);
        let pass = field.forward(&pos, &dir).unwrap();
        for s in pass.sigma() {
            assert!((s - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn density_ignores_view_direction() {
        let field = RadianceField::<f64>::new(FieldConfig::default(), 5).unwrap();
        let p = [[0.3, -0.2, 0.9]; 2];
        let d = [[1.0, 0.0, 0.0], [0.0, -0.6, 0.8]];
        let pass = field.forward(&p, &d).unwrap();
        assert_eq!(pass.sigma()[0], pass.sigma()[1]);
        assert_ne!(pass.rgb()[..3], pass.rgb()[3..]);
    }

    #[test]
    fn forward_is_deterministic_and_rejects_nan() {
        let field = RadianceField::<f32>::new(FieldConfig::default(), 5).unwrap();
        let (pos, dir) = random_inputs(50, 4);
        let a = field.forward(&pos, &dir).unwrap();
        let b = field.forward(&pos, &dir).unwrap();
        assert_eq!(a.sigma(), b.sigma());
        assert_eq!(a.rgb(), b.rgb());
        let mut bad = pos.clone();
        bad[7][1] = f64::NAN;
        assert!(field.forward(&bad, &dir).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let field = RadianceField::<f64>::new(toy_config(), 5).unwrap();
        let (pos, dir) = random_inputs(8, 4);
        let pass = field.forward(&pos, &dir).unwrap();
        let mut g = vec![0.0; field.num_params()];
        field.backward(&pass, &[0.0; 8], &[0.0; 24], &mut g).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(field.backward(&pass, &[0.0; 7], &[0.0; 24], &mut g).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut field = RadianceField::<f64>::new(toy_config(), 21).unwrap();
        // Nonzero biases so every parameter is exercised away from ReLU kinks.
        let mut rng = seeded(99);
        for p in field.params_mut() {
            *p += 0.05 * (rng.uniform() - 0.5);
        }
        let (pos, dir) = random_inputs(6, 8);
        let a: Vec<f64> = (0..6).map(|_| rng.uniform() - 0.5).collect();
        let b: Vec<f64> = (0..18).map(|_| rng.uniform() - 0.5).collect();
        let pass = field.forward(&pos, &dir).unwrap();
        let mut grads = vec![0.0; field.num_params()];
        field.backward(&pass, &a, &b, &mut grads).unwrap();

        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..field.num_params() {
            let orig = field.params()[i];
            field.params_mut()[i] = orig + h;
            let fp = objective(&field, &pos, &dir, &a, &b);
            field.params_mut()[i] = orig - h;
            let fm = objective(&field, &pos, &dir, &a, &b);
            field.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample_gradients() {
        let field = RadianceField::<f64>::new(toy_config(), 2).unwrap();
        let (pos, dir) = random_inputs(5, 3);
        let ds: Vec<f64> = (0..5).map(|i| 0.1 * i as f64 - 0.2).collect();
        let dc: Vec<f64> = (0..15).map(|i| 0.05 * i as f64 - 0.3).collect();
        let pass = field.forward(&pos, &dir).unwrap();
        let mut batch = vec![0.0; field.num_params()];
        field.backward(&pass, &ds, &dc, &mut batch).unwrap();
        let mut summed = vec![0.0; field.num_params()];
        for i in 0..5 {
            let p = field.forward(&pos[i..i + 1], &dir[i..i + 1]).unwrap();
            field.backward(&p, &ds[i..i + 1], &dc[3 * i..3 * i + 3], &mut summed).unwrap();
        }
        for (x, y) in batch.iter().zip(&summed) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
