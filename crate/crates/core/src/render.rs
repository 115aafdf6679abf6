//! Volume rendering: stratified depth samples, alpha compositing along the
//! ray, and hierarchical resampling from the coarse compositing weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RadianceQuery;
use crate::geometry::{Ray, Vec3};
use crate::rng::UniformSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Added to every coarse weight before building the fine-sampling PDF.
    pub pdf_padding: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 64,
            pdf_padding: 1e-5,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse == 0 {
            return Err(Error::Config("n_coarse must be >= 1".into()));
        }
        if !(self.pdf_padding >= 0.0 && self.pdf_padding.is_finite()) {
            return Err(Error::Config("pdf_padding must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// How depth samples are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// One uniform draw per bin (training).
    Stratified,
    /// Bin midpoints and evenly spaced CDF quantiles (evaluation).
    Midpoint,
}

/// Ascending depths along a ray with their segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    t: Vec<f64>,
    deltas: Vec<f64>,
}

impl RaySamples {
    /// `delta_i = t_{i+1} - t_i`; the last segment runs to `t_far` but is never
    /// shorter than the mean spacing `(t_far - t_near) / N`.
    pub fn new(t: Vec<f64>, t_near: f64, t_far: f64) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::domain("a ray needs at least one sample"));
        }
        if t.windows(2).any(|w| !(w[1] >= w[0])) || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("sample depths must be finite and ascending"));
        }
        let n = t.len();
        let mean = (t_far - t_near) / n as f64;
        let mut deltas: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        deltas.push((t_far - t[n - 1]).max(mean));
        Ok(Self { t, deltas })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t_values(&self) -> &[f64] {
        &self.t
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn points(&self, ray: &Ray) -> impl Iterator<Item = Vec3> + '_ {
        let ray = *ray;
        self.t.iter().map(move |&t| ray.at(t))
    }
}

fn check_interval(t_near: f64, t_far: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("sample count must be >= 1"));
    }
    if !(t_near.is_finite() && t_far.is_finite() && t_near < t_far) {
        return Err(Error::domain(format!(
            "invalid sampling interval [{t_near}, {t_far}]"
        )));
    }
    Ok(())
}

/// One uniform depth inside each of `n` equal bins of `[t_near, t_far]`.
pub fn stratified_samples(
    t_near: f64,
    t_far: f64,
    n: usize,
    rng: &mut impl UniformSource,
) -> Result<RaySamples> {
    check_interval(t_near, t_far, n)?;
    let width = (t_far - t_near) / n as f64;
    let t = (0..n)
        .map(|i| t_near + (i as f64 + rng.uniform()) * width)
        .collect();
    RaySamples::new(t, t_near, t_far)
}

/// Bin midpoints of `n` equal bins.
pub fn midpoint_samples(t_near: f64, t_far: f64, n: usize) -> Result<RaySamples> {
    check_interval(t_near, t_far, n)?;
    let width = (t_far - t_near) / n as f64;
    let t = (0..n).map(|i| t_near + (i as f64 + 0.5) * width).collect();
    RaySamples::new(t, t_near, t_far)
}

fn place_samples(
    t_near: f64,
    t_far: f64,
    n: usize,
    mode: SampleMode,
    rng: &mut impl UniformSource,
) -> Result<RaySamples> {
    match mode {
        SampleMode::Stratified => stratified_samples(t_near, t_far, n, rng),
        SampleMode::Midpoint => midpoint_samples(t_near, t_far, n),
    }
}

/// Result of compositing one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    /// Per-sample contribution `T_i * alpha_i`.
    pub weights: Vec<f64>,
    /// Transmittance past the last sample.
    pub transmittance_end: f64,
}

/// Alpha-composites shaded samples front to back.
///
/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`, `w_i = T_i (1 - exp(-sigma_i delta_i))`,
/// `color = sum w_i c_i`.
pub fn composite(samples: &RaySamples, sigmas: &[f64], colors: &[[f64; 3]]) -> Result<Composite> {
    let n = samples.len();
    if sigmas.len() != n || colors.len() != n {
        return Err(Error::domain(format!(
            "{} samples but {} densities and {} colors",
            n,
            sigmas.len(),
            colors.len()
        )));
    }
    let mut weights = Vec::with_capacity(n);
    let mut color = [0.0; 3];
    let mut optical_depth: f64 = 0.0;
    for ((&sigma, c), &delta) in sigmas.iter().zip(colors).zip(samples.deltas()) {
        if sigma.is_nan() || c.iter().any(|v| v.is_nan()) {
            return Err(Error::numeric("NaN density or color in compositing"));
        }
        let t = (-optical_depth).exp();
        let tau = sigma * delta;
        let w = t * -(-tau).exp_m1();
        optical_depth += tau;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        weights.push(w);
    }
    Ok(Composite {
        color,
        weights,
        transmittance_end: (-optical_depth).exp(),
    })
}

/// Gradients of `loss` with respect to densities and colors, given
/// `d loss / d color`.
pub fn composite_backward(
    samples: &RaySamples,
    sigmas: &[f64],
    colors: &[[f64; 3]],
    weights: &[f64],
    d_color: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = samples.len();
    let mut d_sigma = vec![0.0; n];
    let d_rgb: Vec<[f64; 3]> = weights.iter().map(|&w| d_color.map(|g| g * w)).collect();
    let proj: Vec<f64> = colors
        .iter()
        .map(|c| c[0] * d_color[0] + c[1] * d_color[1] + c[2] * d_color[2])
        .collect();
    // d w_k / d sigma_i = -delta_i w_k for k > i, and delta_i T_{i+1} for k = i.
    let mut later = 0.0;
    let mut optical_depth: f64 = sigmas.iter().zip(samples.deltas()).map(|(s, d)| s * d).sum();
    for i in (0..n).rev() {
        let delta = samples.deltas()[i];
        let t_next = (-optical_depth).exp();
        d_sigma[i] = delta * (t_next * proj[i] - later);
        later += weights[i] * proj[i];
        optical_depth -= sigmas[i] * delta;
    }
    (d_sigma, d_rgb)
}

/// Draws `n_fine` depths from the piecewise-constant PDF that spreads each
/// coarse weight over its bin, and merges them with the coarse depths.
///
/// The coarse samples are assumed to come from `n` equal bins of
/// `[t_near, t_far]`, one per bin. All-zero weights fall back to uniform.
pub fn hierarchical_resample(
    coarse: &RaySamples,
    weights: &[f64],
    t_near: f64,
    t_far: f64,
    n_fine: usize,
    padding: f64,
    mode: SampleMode,
    rng: &mut impl UniformSource,
) -> Result<RaySamples> {
    let n = coarse.len();
    if weights.len() != n {
        return Err(Error::domain("weights do not match coarse samples"));
    }
    check_interval(t_near, t_far, n)?;
    if n_fine == 0 {
        return Ok(coarse.clone());
    }
    let mut pdf: Vec<f64> = weights.iter().map(|w| w.max(0.0) + padding).collect();
    let mut total: f64 = pdf.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        pdf.iter_mut().for_each(|p| *p = 1.0);
        total = n as f64;
    }
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for p in &pdf {
        acc += p / total;
        cdf.push(acc);
    }
    let width = (t_far - t_near) / n as f64;

    let mut fine = Vec::with_capacity(n_fine);
    let mut bin = 0;
    for j in 0..n_fine {
        let jitter = match mode {
            SampleMode::Stratified => rng.uniform(),
            SampleMode::Midpoint => 0.5,
        };
        // Quantiles ascend, so the bin cursor only moves forward.
        let u = (j as f64 + jitter) / n_fine as f64 * acc;
        while bin + 1 < n && cdf[bin + 1] <= u {
            bin += 1;
        }
        let mass = cdf[bin + 1] - cdf[bin];
        let frac = if mass > 0.0 {
            ((u - cdf[bin]) / mass).clamp(0.0, 1.0)
        } else {
            0.5
        };
        fine.push(t_near + (bin as f64 + frac) * width);
    }

    let mut merged = Vec::with_capacity(n + n_fine);
    let (a, b) = (coarse.t_values(), &fine);
    let (mut i, mut k) = (0, 0);
    while i < a.len() || k < b.len() {
        if k == b.len() || (i < a.len() && a[i] <= b[k]) {
            merged.push(a[i]);
            i += 1;
        } else {
            merged.push(b[k]);
            k += 1;
        }
    }
    RaySamples::new(merged, t_near, t_far)
}

/// Densities and colors at every sample of one pass over a batch of rays.
#[derive(Debug, Clone, Default)]
pub struct PassRecord {
    pub samples: Vec<RaySamples>,
    /// Flat over all rays, ray-major.
    pub sigmas: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub composites: Vec<Composite>,
    offsets: Vec<usize>,
}

impl PassRecord {
    /// Range of flat sample indices belonging to ray `r`.
    pub fn ray_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    pub fn num_samples(&self) -> usize {
        self.sigmas.len()
    }
}

/// Coarse and fine passes for a batch of rays.
#[derive(Debug, Clone, Default)]
pub struct BatchRender {
    pub coarse: PassRecord,
    pub fine: PassRecord,
}

impl BatchRender {
    pub fn coarse_color(&self, r: usize) -> [f64; 3] {
        self.coarse.composites[r].color
    }

    pub fn fine_color(&self, r: usize) -> [f64; 3] {
        self.fine.composites[r].color
    }
}

fn run_pass<F>(rays: &[Ray], samples: Vec<RaySamples>, eval: &mut F) -> Result<PassRecord>
where
    F: FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>,
{
    let total: usize = samples.iter().map(RaySamples::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut directions = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    offsets.push(0);
    for (ray, s) in rays.iter().zip(&samples) {
        positions.extend(s.points(ray));
        directions.extend(std::iter::repeat(ray.direction).take(s.len()));
        offsets.push(positions.len());
    }
    let (sigmas, colors) = eval(&positions, &directions)?;
    if sigmas.len() != total || colors.len() != total {
        return Err(Error::domain("field returned the wrong number of samples"));
    }
    let composites = samples
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let range = offsets[r]..offsets[r + 1];
            composite(s, &sigmas[range.clone()], &colors[range])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PassRecord {
        samples,
        sigmas,
        colors,
        composites,
        offsets,
    })
}

/// Renders a batch of rays through a coarse and a fine evaluator.
///
/// Random numbers are consumed in a fixed order: every ray's coarse depths,
/// then every ray's fine depths.
pub fn render_batch<C, F>(
    rays: &[Ray],
    cfg: &RenderConfig,
    mode: SampleMode,
    rng: &mut impl UniformSource,
    mut eval_coarse: C,
    mut eval_fine: F,
) -> Result<BatchRender>
where
    C: FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>,
    F: FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>,
{
    cfg.validate()?;
    let coarse_samples = rays
        .iter()
        .map(|r| place_samples(r.t_near, r.t_far, cfg.n_coarse, mode, rng))
        .collect::<Result<Vec<_>>>()?;
    let coarse = run_pass(rays, coarse_samples, &mut eval_coarse)?;
    let fine_samples = rays
        .iter()
        .enumerate()
        .map(|(r, ray)| {
            hierarchical_resample(
                &coarse.samples[r],
                &coarse.composites[r].weights,
                ray.t_near,
                ray.t_far,
                cfg.n_fine,
                cfg.pdf_padding,
                mode,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let fine = run_pass(rays, fine_samples, &mut eval_fine)?;
    Ok(BatchRender { coarse, fine })
}

/// Renders a batch at given coarse and fine depths, one sample set per ray.
pub fn render_fixed<C, F>(
    rays: &[Ray],
    coarse_samples: Vec<RaySamples>,
    fine_samples: Vec<RaySamples>,
    mut eval_coarse: C,
    mut eval_fine: F,
) -> Result<BatchRender>
where
    C: FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>,
    F: FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)>,
{
    if coarse_samples.len() != rays.len() || fine_samples.len() != rays.len() {
        return Err(Error::domain("need one sample set per ray"));
    }
    let coarse = run_pass(rays, coarse_samples, &mut eval_coarse)?;
    let fine = run_pass(rays, fine_samples, &mut eval_fine)?;
    Ok(BatchRender { coarse, fine })
}

fn query_fn<Q: RadianceQuery + ?Sized>(
    field: &Q,
) -> impl FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> + '_ {
    move |p, d| {
        let mut s = Vec::new();
        let mut c = Vec::new();
        field.query(p, d, &mut s, &mut c)?;
        Ok((s, c))
    }
}

/// Forward-only rendering of many rays with two fields.
pub fn render_rays<A, B>(
    coarse_field: &A,
    fine_field: &B,
    rays: &[Ray],
    cfg: &RenderConfig,
    mode: SampleMode,
    rng: &mut impl UniformSource,
) -> Result<BatchRender>
where
    A: RadianceQuery + ?Sized,
    B: RadianceQuery + ?Sized,
{
    render_batch(rays, cfg, mode, rng, query_fn(coarse_field), query_fn(fine_field))
}

/// Coarse and fine colors of a single ray, with the per-pass records kept for
/// gradient computation.
pub fn render_ray<A, B>(
    coarse_field: &A,
    fine_field: &B,
    ray: &Ray,
    cfg: &RenderConfig,
    mode: SampleMode,
    rng: &mut impl UniformSource,
) -> Result<([f64; 3], [f64; 3], BatchRender)>
where
    A: RadianceQuery + ?Sized,
    B: RadianceQuery + ?Sized,
{
    let out = render_rays(coarse_field, fine_field, std::slice::from_ref(ray), cfg, mode, rng)?;
    Ok((out.coarse_color(0), out.fine_color(0), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    struct Constant(f64);

    impl UniformSource for Constant {
        fn uniform(&mut self) -> f64 {
            self.0
        }
    }

    /// Homogeneous medium with a fixed density and color.
    struct Fog {
        sigma: f64,
        rgb: [f64; 3],
    }

    impl RadianceQuery for Fog {
        fn query(&self, p: &[Vec3], _: &[Vec3], s: &mut Vec<f64>, c: &mut Vec<[f64; 3]>) -> Result<()> {
            s.clear();
            c.clear();
            s.resize(p.len(), self.sigma);
            c.resize(p.len(), self.rgb);
            Ok(())
        }
    }

    fn ray(t_far: f64) -> Ray {
        Ray {
            origin: [0.0; 3],
            direction: [1.0, 0.0, 0.0],
            t_near: 0.0,
            t_far,
        }
    }

    #[test]
    fn single_bin_draw_lies_in_interval() {
        let mut rng = seeded(1);
        for _ in 0..100 {
            let s = stratified_samples(1.0, 3.0, 1, &mut rng).unwrap();
            assert!((1.0..3.0).contains(&s.t_values()[0]));
        }
    }

    #[test]
    fn half_jitter_gives_bin_midpoints() {
        let s = stratified_samples(0.0, 4.0, 4, &mut Constant(0.5)).unwrap();
        assert_eq!(s.t_values(), &[0.5, 1.5, 2.5, 3.5]);
        assert_eq!(s, midpoint_samples(0.0, 4.0, 4).unwrap());
    }

    #[test]
    fn invalid_interval_is_rejected() {
        assert!(stratified_samples(2.0, 1.0, 4, &mut Constant(0.5)).is_err());
        assert!(stratified_samples(0.0, 1.0, 0, &mut Constant(0.5)).is_err());
    }

    #[test]
    fn stratified_bin_means_converge_to_midpoints() {
        let (n, reps) = (8, 100_000);
        let mut rng = seeded(4);
        let mut sums = vec![0.0; n];
        for _ in 0..reps {
            let s = stratified_samples(0.0, 8.0, n, &mut rng).unwrap();
            for (acc, t) in sums.iter_mut().zip(s.t_values()) {
                *acc += t;
            }
        }
        // Uniform on a unit bin: std 1/sqrt(12); standard error of the mean over reps.
        let se = (1.0 / 12.0f64).sqrt() / (reps as f64).sqrt();
        for (i, s) in sums.iter().enumerate() {
            let mean = s / reps as f64;
            assert!((mean - (i as f64 + 0.5)).abs() < 3.0 * se, "bin {i}: {mean}");
        }
    }

    #[test]
    fn vacuum_renders_black() {
        let s = midpoint_samples(0.0, 1.0, 16).unwrap();
        let c = composite(&s, &[0.0; 16], &[[1.0; 3]; 16]).unwrap();
        assert_eq!(c.color, [0.0; 3]);
        assert_eq!(c.weights.iter().sum::<f64>(), 0.0);
        assert_eq!(c.transmittance_end, 1.0);
    }

    #[test]
    fn half_absorbed_then_opaque() {
        let s = RaySamples::new(vec![0.0, 1.0], 0.0, 2.0).unwrap();
        let sig = [std::f64::consts::LN_2, 1e6];
        let c = composite(&s, &sig, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        for (got, want) in c.color.iter().zip([0.5, 0.5, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_medium_matches_beer_lambert() {
        let sigma = 0.7;
        let s = midpoint_samples(0.0, 3.0, 1024).unwrap();
        let c = composite(&s, &vec![sigma; 1024], &vec![[0.2; 3]; 1024]).unwrap();
        assert!((c.transmittance_end - (-sigma * 3.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn weights_partition_the_ray() {
        let mut rng = seeded(8);
        let s = stratified_samples(0.0, 5.0, 40, &mut rng).unwrap();
        let sig: Vec<f64> = (0..40).map(|_| 3.0 * rng.uniform()).collect();
        let c = composite(&s, &sig, &vec![[0.5; 3]; 40]).unwrap();
        assert!(c.weights.iter().all(|w| *w >= 0.0));
        assert!((c.weights.iter().sum::<f64>() + c.transmittance_end - 1.0).abs() < 1e-9);
    }

    #[test]
    fn splitting_a_homogeneous_segment_preserves_color() {
        let a = RaySamples::new(vec![0.0, 1.0, 2.0], 0.0, 3.0).unwrap();
        let b = RaySamples::new(vec![0.0, 0.25, 1.0, 1.5, 2.0], 0.0, 3.0).unwrap();
        let red = [1.0, 0.2, 0.1];
        let ca = composite(&a, &[0.8, 0.8, 0.3], &[red, red, [0.0, 1.0, 0.0]]).unwrap();
        let cb = composite(&b, &[0.8, 0.8, 0.8, 0.8, 0.3], &[red, red, red, red, [0.0, 1.0, 0.0]]).unwrap();
        for k in 0..3 {
            assert!((ca.color[k] - cb.color[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn nan_density_is_an_error() {
        let s = midpoint_samples(0.0, 1.0, 2).unwrap();
        assert!(composite(&s, &[0.1, f64::NAN], &[[0.0; 3]; 2]).is_err());
        assert!(composite(&s, &[0.1], &[[0.0; 3]; 2]).is_err());
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = seeded(12);
        let s = stratified_samples(0.0, 2.0, 12, &mut rng).unwrap();
        let sig: Vec<f64> = (0..12).map(|_| 4.0 * rng.uniform()).collect();
        let col: Vec<[f64; 3]> = (0..12).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
        let g = [0.3, -1.1, 0.7];
        let loss = |sig: &[f64], col: &[[f64; 3]]| {
            let c = composite(&s, sig, col).unwrap().color;
            c[0] * g[0] + c[1] * g[1] + c[2] * g[2]
        };
        let c = composite(&s, &sig, &col).unwrap();
        let (ds, dc) = composite_backward(&s, &sig, &col, &c.weights, g);
        let h = 1e-6;
        for i in 0..12 {
            let (mut p, mut m) = (sig.clone(), sig.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (loss(&p, &col) - loss(&m, &col)) / (2.0 * h);
            assert!((fd - ds[i]).abs() < 1e-7, "sigma {i}: {fd} vs {}", ds[i]);
            for k in 0..3 {
                let (mut p, mut m) = (col.clone(), col.clone());
                p[i][k] += h;
                m[i][k] -= h;
                let fd = (loss(&sig, &p) - loss(&sig, &m)) / (2.0 * h);
                assert!((fd - dc[i][k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn one_hot_weights_concentrate_fine_samples() {
        let coarse = midpoint_samples(0.0, 8.0, 8).unwrap();
        let mut w = vec![0.0; 8];
        w[5] = 1.0;
        let mut rng = seeded(2);
        let out = hierarchical_resample(&coarse, &w, 0.0, 8.0, 64, 0.0, SampleMode::Stratified, &mut rng).unwrap();
        assert_eq!(out.len(), 72);
        let inside = out.t_values().iter().filter(|t| (5.0..=6.0).contains(*t)).count();
        assert_eq!(inside, 64 + 1);
    }

    #[test]
    fn padded_one_hot_weights_stay_mostly_in_bin() {
        let coarse = midpoint_samples(0.0, 64.0, 64).unwrap();
        let mut w = vec![0.0; 64];
        w[20] = 1.0;
        let mut rng = seeded(3);
        let mut inside = 0;
        let mut total = 0;
        for _ in 0..100 {
            let out = hierarchical_resample(&coarse, &w, 0.0, 64.0, 64, 1e-5, SampleMode::Stratified, &mut rng).unwrap();
            inside += out.t_values().iter().filter(|t| (20.0..=21.0).contains(*t)).count() - 1;
            total += 64;
        }
        assert!(inside as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn all_zero_weights_fall_back_to_uniform() {
        let coarse = midpoint_samples(0.0, 1.0, 4).unwrap();
        let out = hierarchical_resample(&coarse, &[0.0; 4], 0.0, 1.0, 4, 0.0, SampleMode::Midpoint, &mut Constant(0.5)).unwrap();
        assert_eq!(out.t_values(), &[0.125, 0.125, 0.375, 0.375, 0.625, 0.625, 0.875, 0.875]);
    }

    #[test]
    fn uniform_weights_give_uniform_fine_samples() {
        // Kolmogorov-Smirnov against U(0, 1) at significance 0.001.
        let coarse = midpoint_samples(0.0, 1.0, 16).unwrap();
        let w = vec![1.0 / 16.0; 16];
        let mut rng = seeded(6);
        let mut fine = Vec::new();
        while fine.len() < 100_000 {
            let out = hierarchical_resample(&coarse, &w, 0.0, 1.0, 50, 1e-5, SampleMode::Stratified, &mut rng).unwrap();
            let mut t = out.t_values().to_vec();
            for c in coarse.t_values() {
                let i = t.iter().position(|x| x == c).unwrap();
                t.remove(i);
            }
            fine.extend(t);
        }
        fine.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = fine.len() as f64;
        let d = fine
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        let critical = (-(0.001f64 / 2.0).ln() / 2.0).sqrt() / n.sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn resampled_depths_are_sorted_with_expected_length() {
        let mut rng = seeded(9);
        let coarse = stratified_samples(0.0, 6.0, 32, &mut rng).unwrap();
        let w: Vec<f64> = (0..32).map(|_| rng.uniform()).collect();
        let out = hierarchical_resample(&coarse, &w, 0.0, 6.0, 48, 1e-5, SampleMode::Stratified, &mut rng).unwrap();
        assert_eq!(out.len(), 80);
        assert!(out.t_values().windows(2).all(|p| p[1] - p[0] >= -1e-12));
        assert!(out.deltas().iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn empty_fields_render_black() {
        let vac = Fog { sigma: 0.0, rgb: [0.4; 3] };
        let (c, f, _) = render_ray(&vac, &vac, &ray(4.0), &RenderConfig::default(), SampleMode::Stratified, &mut seeded(1)).unwrap();
        assert_eq!(c, [0.0; 3]);
        assert_eq!(f, [0.0; 3]);
    }

    #[test]
    fn dense_fog_converges_to_its_color() {
        let cfg = RenderConfig { n_coarse: 32, n_fine: 32, ..Default::default() };
        let mut prev = f64::INFINITY;
        for sigma in [0.1, 1.0, 10.0] {
            let fog = Fog { sigma, rgb: [0.2, 0.6, 0.9] };
            let (_, f, _) = render_ray(&fog, &fog, &ray(4.0), &cfg, SampleMode::Stratified, &mut seeded(5)).unwrap();
            let err = (f[0] - 0.2).abs() + (f[1] - 0.6).abs() + (f[2] - 0.9).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn render_is_reproducible_per_seed() {
        let fog = Fog { sigma: 0.5, rgb: [0.3; 3] };
        let cfg = RenderConfig::default();
        let a = render_ray(&fog, &fog, &ray(4.0), &cfg, SampleMode::Stratified, &mut seeded(3)).unwrap();
        let b = render_ray(&fog, &fog, &ray(4.0), &cfg, SampleMode::Stratified, &mut seeded(3)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.fine.samples, b.2.fine.samples);
    }
}
