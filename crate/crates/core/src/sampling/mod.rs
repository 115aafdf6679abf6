//! Global per-pixel ray sampling over every training image.
//!
//! Two factors shape the draw distribution:
//!
//! * [`DistortionTable`] holds each pixel's solid angle on the unit sphere,
//!   normalized over all training pixels, so that polar rows of an ERP image
//!   (which cover little of the sphere) are drawn less often.
//! * [`ContentState`] holds each pixel's most recent reconstruction loss,
//!   initialized to one, so that pixels which are already well reconstructed
//!   are drawn less often.
//!
//! [`SamplingTable`] stores the product of the two in a Fenwick tree. Draws
//! are inverse-CDF lookups over its prefix sums, one uniform variate each;
//! normalization happens implicitly through the tree's total.

mod fenwick;

pub use fenwick::FenwickTree;

use crate::error::{Error, Result};
use crate::geometry::SolidAngles;
use crate::image::ErpImage;
use crate::rng::UniformSource;

pub const DEFAULT_FLOOR_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelId {
    pub image_index: usize,
    pub row: usize,
    pub col: usize,
}

/// Flat indexing of all pixels of all training images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelLayout {
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
}

impl PixelLayout {
    /// `dims` lists `(width, height)` per image.
    pub fn new(dims: &[(usize, usize)]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::domain("sampling needs at least one image"));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &(w, h) in dims {
            if w == 0 || h == 0 {
                return Err(Error::domain(format!("image dims {w}x{h} must be >= 1")));
            }
            offsets.push(total);
            total += w * h;
        }
        Ok(Self {
            dims: dims.to_vec(),
            offsets,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn num_images(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[(usize, usize)] {
        &self.dims
    }

    pub fn image_range(&self, image_index: usize) -> std::ops::Range<usize> {
        let (w, h) = self.dims[image_index];
        self.offsets[image_index]..self.offsets[image_index] + w * h
    }

    pub fn flat(&self, id: PixelId) -> usize {
        let (w, _) = self.dims[id.image_index];
        self.offsets[id.image_index] + id.row * w + id.col
    }

    pub fn checked_flat(&self, id: PixelId) -> Result<usize> {
        match self.dims.get(id.image_index) {
            Some(&(w, h)) if id.row < h && id.col < w => Ok(self.flat(id)),
            _ => Err(Error::domain(format!("pixel {id:?} outside the layout"))),
        }
    }

    pub fn pixel(&self, flat: usize) -> PixelId {
        let image_index = self.offsets.partition_point(|&o| o <= flat) - 1;
        let (w, _) = self.dims[image_index];
        let local = flat - self.offsets[image_index];
        PixelId {
            image_index,
            row: local / w,
            col: local % w,
        }
    }
}

/// Per-pixel distortion-aware probabilities `P_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTable {
    p_d: Vec<f64>,
}

impl DistortionTable {
    /// Solid-angle-proportional probabilities over every pixel of every image.
    pub fn build(layout: &PixelLayout) -> Result<Self> {
        let mut raw = Vec::with_capacity(layout.len());
        for &(w, h) in layout.dims() {
            let sa = SolidAngles::new(w, h)?;
            for row in 0..h {
                raw.extend(std::iter::repeat(sa.row(row)).take(w));
            }
        }
        let sum: f64 = raw.iter().sum();
        Ok(Self {
            p_d: raw.into_iter().map(|s| s / sum).collect(),
        })
    }

    /// Equal probability for every pixel, used when distortion-aware sampling is off.
    pub fn uniform(layout: &PixelLayout) -> Self {
        let n = layout.len();
        Self {
            p_d: vec![1.0 / n as f64; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.p_d
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.p_d[flat]
    }
}

/// Per-pixel content state `S_c`: the latest reconstruction loss seen at each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentState {
    s_c: Vec<f64>,
    floor_eps: f64,
}

impl ContentState {
    pub fn new(len: usize, floor_eps: f64) -> Result<Self> {
        if !(floor_eps > 0.0 && floor_eps.is_finite()) {
            return Err(Error::domain(format!("floor_eps {floor_eps} must be positive")));
        }
        Ok(Self {
            s_c: vec![1.0; len],
            floor_eps,
        })
    }

    /// Restores a persisted state; entries below the floor are raised to it.
    pub fn from_values(values: Vec<f64>, floor_eps: f64) -> Result<Self> {
        let mut state = Self::new(0, floor_eps)?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("content state values must be finite and >= 0"));
        }
        state.s_c = values.into_iter().map(|v| v.max(floor_eps)).collect();
        Ok(state)
    }

    pub fn values(&self) -> &[f64] {
        &self.s_c
    }

    pub fn floor_eps(&self) -> f64 {
        self.floor_eps
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.s_c[flat]
    }

    /// Sets `s_c <- max(loss, floor_eps)` for each `(flat index, loss)` entry.
    ///
    /// Entries are applied in order, so a pixel that repeats keeps its last
    /// loss. The whole batch is validated first; on error nothing changes.
    pub fn update(&mut self, batch: &[(usize, f64)]) -> Result<()> {
        for &(flat, loss) in batch {
            if !(loss.is_finite() && loss >= 0.0) {
                return Err(Error::domain(format!(
                    "reconstruction loss {loss} at pixel {flat} must be finite and >= 0"
                )));
            }
            if flat >= self.s_c.len() {
                return Err(Error::domain(format!("pixel {flat} outside content state")));
            }
        }
        for &(flat, loss) in batch {
            self.s_c[flat] = loss.max(self.floor_eps);
        }
        Ok(())
    }
}

/// Combined weights `w = p_d * s_c` with O(log n) update and draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingTable {
    weights: Vec<f64>,
    tree: FenwickTree,
    updates_since_refresh: usize,
}

impl SamplingTable {
    pub fn build(p_d: &DistortionTable, s_c: &ContentState) -> Result<Self> {
        if p_d.values().len() != s_c.values().len() {
            return Err(Error::domain("distortion and content tables differ in length"));
        }
        let weights: Vec<f64> = p_d
            .values()
            .iter()
            .zip(s_c.values())
            .map(|(a, b)| a * b)
            .collect();
        Self::from_weights(weights)
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("sampling table is empty"));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::domain(format!(
                "weight {} at pixel {i} must be positive and finite",
                weights[i]
            )));
        }
        let tree = FenwickTree::new(&weights);
        Ok(Self {
            weights,
            tree,
            updates_since_refresh: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.tree.total()
    }

    pub fn prefix_sum(&self, flat: usize) -> f64 {
        self.tree.prefix_sum(flat)
    }

    pub fn probability(&self, flat: usize) -> f64 {
        self.weights[flat] / self.total_weight()
    }

    /// Recomputes `w = p_d * s_c` at the touched pixels only.
    pub fn rebuild_combined(&mut self, p_d: &DistortionTable, s_c: &ContentState, touched: &[usize]) {
        for &flat in touched {
            let w = p_d.get(flat) * s_c.get(flat);
            let delta = w - self.weights[flat];
            if delta != 0.0 {
                self.weights[flat] = w;
                self.tree.add(flat, delta);
                self.updates_since_refresh += 1;
            }
        }
        // Amortized O(1): rebuilding once per n deltas bounds rounding drift.
        if self.updates_since_refresh >= self.weights.len().max(4096) {
            self.refresh();
        }
    }

    /// Rebuilds the prefix sums from the stored weights.
    pub fn refresh(&mut self) {
        self.tree = FenwickTree::new(&self.weights);
        self.updates_since_refresh = 0;
    }

    /// Relative gap between the tree total and a fresh sum of the weights.
    pub fn total_drift(&self) -> f64 {
        let fresh: f64 = self.weights.iter().sum();
        (self.total_weight() - fresh).abs() / fresh
    }

    /// One inverse-CDF draw.
    pub fn draw(&self, rng: &mut impl UniformSource) -> Result<usize> {
        let total = self.total_weight();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::numeric(format!("degenerate total weight {total}")));
        }
        Ok(self.tree.search(rng.uniform() * total))
    }

    /// `m` draws with replacement, returned as flat pixel indices.
    pub fn draw_batch(&self, m: usize, rng: &mut impl UniformSource) -> Result<Vec<usize>> {
        if m == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        (0..m).map(|_| self.draw(rng)).collect()
    }

    /// Grayscale visualization of one image's draw probabilities, max-normalized.
    pub fn heatmap(&self, layout: &PixelLayout, image_index: usize) -> Result<ErpImage> {
        if image_index >= layout.num_images() || layout.len() != self.len() {
            return Err(Error::domain(format!(
                "image {image_index} is not part of this sampling table"
            )));
        }
        let (w, h) = layout.dims()[image_index];
        let slice = &self.weights[layout.image_range(image_index)];
        let max = slice.iter().cloned().fold(0.0, f64::max);
        let values: Vec<f64> = slice.iter().map(|v| v / max).collect();
        ErpImage::from_gray(w, h, &values)
    }
}

/// The trainer's view of sampling: layout, both factors and the live table.
#[derive(Debug, Clone)]
pub struct PixelSampler {
    layout: PixelLayout,
    distortion: DistortionTable,
    content: ContentState,
    table: SamplingTable,
    content_aware: bool,
}

impl PixelSampler {
    pub fn new(
        layout: PixelLayout,
        distortion_aware: bool,
        content_aware: bool,
        floor_eps: f64,
    ) -> Result<Self> {
        let distortion = if distortion_aware {
            DistortionTable::build(&layout)?
        } else {
            DistortionTable::uniform(&layout)
        };
        let content = ContentState::new(layout.len(), floor_eps)?;
        let table = SamplingTable::build(&distortion, &content)?;
        Ok(Self {
            layout,
            distortion,
            content,
            table,
            content_aware,
        })
    }

    /// Restores a sampler whose content state was persisted.
    pub fn with_content(
        layout: PixelLayout,
        distortion_aware: bool,
        content_aware: bool,
        content: ContentState,
    ) -> Result<Self> {
        let mut sampler = Self::new(layout, distortion_aware, content_aware, content.floor_eps())?;
        if content.values().len() != sampler.layout.len() {
            return Err(Error::domain("content state does not match the pixel layout"));
        }
        sampler.table = SamplingTable::build(&sampler.distortion, &content)?;
        sampler.content = content;
        Ok(sampler)
    }

    pub fn layout(&self) -> &PixelLayout {
        &self.layout
    }

    pub fn distortion(&self) -> &DistortionTable {
        &self.distortion
    }

    pub fn content(&self) -> &ContentState {
        &self.content
    }

    pub fn table(&self) -> &SamplingTable {
        &self.table
    }

    pub fn content_aware(&self) -> bool {
        self.content_aware
    }

    pub fn draw_batch(&self, m: usize, rng: &mut impl UniformSource) -> Result<Vec<usize>> {
        self.table.draw_batch(m, rng)
    }

    /// Records per-pixel losses and refreshes the touched weights. A no-op
    /// when content-aware sampling is off.
    pub fn record_losses(&mut self, batch: &[(usize, f64)]) -> Result<()> {
        if !self.content_aware {
            return Ok(());
        }
        self.content.update(batch)?;
        let touched: Vec<usize> = batch.iter().map(|(i, _)| *i).collect();
        self.table
            .rebuild_combined(&self.distortion, &self.content, &touched);
        Ok(())
    }

    pub fn heatmap(&self, image_index: usize) -> Result<ErpImage> {
        self.table.heatmap(&self.layout, image_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn layout(dims: &[(usize, usize)]) -> PixelLayout {
        PixelLayout::new(dims).unwrap()
    }

    #[test]
    fn layout_flat_index_is_bijective() {
        let l = layout(&[(4, 2), (3, 5)]);
        assert_eq!(l.len(), 8 + 15);
        for flat in 0..l.len() {
            let id = l.pixel(flat);
            assert_eq!(l.flat(id), flat);
        }
        assert_eq!(
            l.pixel(9),
            PixelId { image_index: 1, row: 0, col: 1 }
        );
        assert!(l.checked_flat(PixelId { image_index: 1, row: 5, col: 0 }).is_err());
    }

    #[test]
    fn empty_layout_is_rejected() {
        assert!(PixelLayout::new(&[]).is_err());
        assert!(PixelLayout::new(&[(0, 3)]).is_err());
    }

    #[test]
    fn two_row_image_is_uniform() {
        let t = DistortionTable::build(&layout(&[(4, 2)])).unwrap();
        for p in t.values() {
            assert!((p - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn equator_rows_outweigh_pole_rows() {
        let t = DistortionTable::build(&layout(&[(64, 32)])).unwrap();
        let sum: f64 = t.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let p = |row: usize| t.get(row * 64);
        assert!(p(15) > p(0));
        let band = |r: usize| {
            let (lo, hi) = crate::geometry::row_latitude_bounds(r, 32);
            hi.sin() - lo.sin()
        };
        assert!((p(15) / p(0) - band(15) / band(0)).abs() < 1e-12);
    }

    #[test]
    fn duplicated_images_halve_probabilities() {
        let one = DistortionTable::build(&layout(&[(16, 8)])).unwrap();
        let two = DistortionTable::build(&layout(&[(16, 8), (16, 8)])).unwrap();
        for i in 0..128 {
            assert!((two.get(i) - one.get(i) / 2.0).abs() < 1e-14 * one.get(i));
            assert_eq!(two.get(128 + i), two.get(i));
        }
    }

    #[test]
    fn content_update_rules() {
        let mut s = ContentState::new(10, DEFAULT_FLOOR_EPS).unwrap();
        s.update(&[(3, 0.5)]).unwrap();
        assert_eq!(s.get(3), 0.5);
        assert!(s.values().iter().enumerate().all(|(i, v)| i == 3 || *v == 1.0));
        s.update(&[(4, 0.0)]).unwrap();
        assert_eq!(s.get(4), DEFAULT_FLOOR_EPS);
        s.update(&[(5, 0.3), (5, 0.7)]).unwrap();
        assert_eq!(s.get(5), 0.7);
    }

    #[test]
    fn bad_losses_leave_state_untouched() {
        let mut s = ContentState::new(4, DEFAULT_FLOOR_EPS).unwrap();
        let before = s.clone();
        assert!(s.update(&[(0, 0.2), (1, f64::NAN)]).is_err());
        assert!(s.update(&[(0, -1.0)]).is_err());
        assert!(s.update(&[(9, 1.0)]).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn raising_content_scales_draw_probability() {
        let l = layout(&[(8, 4)]);
        let p_d = DistortionTable::build(&l).unwrap();
        let mut s_c = ContentState::new(l.len(), DEFAULT_FLOOR_EPS).unwrap();
        let mut t = SamplingTable::build(&p_d, &s_c).unwrap();
        let (k, other) = (9, 10); // same row
        let before = t.probability(k) / t.probability(other);
        s_c.update(&[(k, 10.0)]).unwrap();
        t.rebuild_combined(&p_d, &s_c, &[k]);
        let after = t.probability(k) / t.probability(other);
        assert!((after / before - 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_touch_list_is_identity() {
        let l = layout(&[(8, 4)]);
        let p_d = DistortionTable::build(&l).unwrap();
        let s_c = ContentState::new(l.len(), DEFAULT_FLOOR_EPS).unwrap();
        let mut t = SamplingTable::build(&p_d, &s_c).unwrap();
        let before = t.clone();
        t.rebuild_combined(&p_d, &s_c, &[]);
        assert_eq!(t, before);
    }

    #[test]
    fn batch_has_requested_size() {
        let l = layout(&[(64, 32)]);
        let s = PixelSampler::new(l, true, true, DEFAULT_FLOOR_EPS).unwrap();
        let batch = s.draw_batch(2048, &mut seeded(1)).unwrap();
        assert_eq!(batch.len(), 2048);
        assert!(s.draw_batch(0, &mut seeded(1)).is_err());
    }

    #[test]
    fn dominant_pixel_takes_almost_all_draws() {
        let eps = DEFAULT_FLOOR_EPS;
        let mut w = vec![eps; 1000];
        w[1] = 1e9 * eps;
        let t = SamplingTable::from_weights(w).unwrap();
        let mut rng = seeded(7);
        let hits = (0..100_000).filter(|_| t.draw(&mut rng).unwrap() == 1).count();
        // P(miss) = 999 / (1e9 + 999) per draw; 10 misses in 1e5 is astronomically unlikely.
        assert!(hits >= 99_990, "{hits}");
    }

    #[test]
    fn fenwick_draw_matches_linear_inverse_cdf() {
        let mut rng = seeded(3);
        let w: Vec<f64> = (0..777).map(|_| 0.01 + rng.uniform()).collect();
        let t = SamplingTable::from_weights(w.clone()).unwrap();
        let mut cdf = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        for v in &w {
            acc += v;
            cdf.push(acc);
        }
        let mut a = seeded(11);
        let mut b = seeded(11);
        for _ in 0..10_000 {
            let fast = t.draw(&mut a).unwrap();
            let target = b.uniform() * t.total_weight();
            let slow = cdf.partition_point(|&c| c <= target).min(w.len() - 1);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn fixed_seed_gives_identical_batches() {
        let l = layout(&[(32, 16), (32, 16)]);
        let s = PixelSampler::new(l, true, false, DEFAULT_FLOOR_EPS).unwrap();
        let a = s.draw_batch(500, &mut seeded(5)).unwrap();
        let b = s.draw_batch(500, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_heatmap_rows_are_constant_and_brightest_at_equator() {
        let s = PixelSampler::new(layout(&[(16, 8)]), true, true, DEFAULT_FLOOR_EPS).unwrap();
        let hm = s.heatmap(0).unwrap();
        for row in 0..8 {
            let v = hm.get(0, row)[0];
            assert!((0..16).all(|c| hm.get(c, row)[0] == v));
        }
        assert_eq!(hm.get(0, 3)[0], 1.0);
        assert_eq!(hm.get(0, 4)[0], 1.0);
        assert!(hm.get(0, 0)[0] < hm.get(0, 1)[0]);
        assert!(s.heatmap(1).is_err());
    }

    #[test]
    fn one_hot_content_heatmap_has_single_bright_pixel() {
        let l = layout(&[(16, 8)]);
        let mut s = PixelSampler::new(l, false, true, DEFAULT_FLOOR_EPS).unwrap();
        let batch: Vec<(usize, f64)> = (0..128).map(|i| (i, if i == 37 { 1.0 } else { 0.0 })).collect();
        s.record_losses(&batch).unwrap();
        let hm = s.heatmap(0).unwrap();
        let bright: Vec<usize> = (0..128).filter(|&i| hm.pixels()[i][0] > 0.5).collect();
        assert_eq!(bright, vec![37]);
    }

    #[test]
    fn content_off_keeps_uniform_state() {
        let l = layout(&[(8, 4)]);
        let mut s = PixelSampler::new(l, false, false, DEFAULT_FLOOR_EPS).unwrap();
        s.record_losses(&[(3, 0.01)]).unwrap();
        assert!(s.content().values().iter().all(|v| *v == 1.0));
        let p0 = s.table().probability(0);
        assert!((0..32).all(|i| s.table().probability(i) == p0));
    }

    proptest! {
        #[test]
        fn incremental_updates_match_fresh_build(
            updates in proptest::collection::vec((0usize..512, 0.0f64..5.0), 1..400)
        ) {
            let l = layout(&[(32, 16)]);
            let p_d = DistortionTable::build(&l).unwrap();
            let mut s_c = ContentState::new(l.len(), DEFAULT_FLOOR_EPS).unwrap();
            let mut t = SamplingTable::build(&p_d, &s_c).unwrap();
            for chunk in updates.chunks(7) {
                s_c.update(chunk).unwrap();
                let touched: Vec<usize> = chunk.iter().map(|u| u.0).collect();
                t.rebuild_combined(&p_d, &s_c, &touched);
            }
            let fresh = SamplingTable::build(&p_d, &s_c).unwrap();
            for i in 0..l.len() {
                prop_assert!((t.prefix_sum(i) - fresh.prefix_sum(i)).abs() < 1e-12);
                prop_assert!(t.weights()[i] > 0.0);
            }
        }
    }
}
