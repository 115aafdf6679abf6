//! Little-endian binary formats.
//!
//! Checkpoint (`checkpoint.bin`):
//!
//! ```text
//! magic        8 bytes  "ERPNERFC"
//! version      u32      1
//! iteration    u64
//! 2 x field:
//!   depth, width, color_width             u32 each
//!   position octaves u32, identity u8
//!   direction octaves u32, identity u8
//!   position_scale, density_scale         f64 each
//!   zero_density_head                     u8
//!   n_params u64, then n_params f64
//! has_adam     u8
//!   step u64, len u64, len f64 first moments, len f64 second moments
//! ```
//!
//! The fields are the coarse one followed by the fine one.
//!
//! Sampler snapshot (`sampler/iter_<I>.bin`):
//!
//! ```text
//! magic        8 bytes  "ERPSAMPL"
//! version      u32      1
//! iteration    u64
//! distortion_aware u8, content_aware u8
//! floor_eps    f64
//! n_images u32, then (width u32, height u32) per image
//! content state: one f64 per pixel, images in order, rows top to bottom
//! ```

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::field::{EncodingConfig, FieldConfig, RadianceField};
use crate::optim::AdamState;
use crate::sampling::{ContentState, PixelLayout, PixelSampler};

const CHECKPOINT_MAGIC: &[u8; 8] = b"ERPNERFC";
const SNAPSHOT_MAGIC: &[u8; 8] = b"ERPSAMPL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub coarse: RadianceField<f64>,
    pub fine: RadianceField<f64>,
    /// Moments over the coarse parameters followed by the fine ones.
    pub adam: Option<AdamState<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSnapshot {
    pub iteration: u64,
    pub distortion_aware: bool,
    pub content_aware: bool,
    pub floor_eps: f64,
    pub dims: Vec<(usize, usize)>,
    pub content: Vec<f64>,
}

impl SamplerSnapshot {
    /// Rebuilds the sampler the snapshot was taken from.
    pub fn sampler(&self) -> Result<PixelSampler> {
        let layout = PixelLayout::new(&self.dims)?;
        let content = ContentState::from_values(self.content.clone(), self.floor_eps)?;
        PixelSampler::with_content(layout, self.distortion_aware, self.content_aware, content)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::data(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::data(self.path, format!("bad flag byte {b} at {}", self.pos - 1))),
        }
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::data(self.path, format!("truncated: array of {n} values exceeds the file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::data(self.path, "wrong magic bytes"));
        }
        let v = self.u32()?;
        if v != VERSION as usize {
            return Err(Error::data(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::data(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn write_field(w: &mut Writer, f: &RadianceField<f64>) {
    let c = f.config();
    w.u32(c.depth);
    w.u32(c.width);
    w.u32(c.color_width);
    for e in [c.position_encoding, c.direction_encoding] {
        w.u32(e.octaves);
        w.u8(e.include_identity as u8);
    }
    w.f64(c.position_scale);
    w.f64(c.density_scale);
    w.u8(c.zero_density_head as u8);
    w.f64s(f.params());
}

fn read_field(r: &mut Reader) -> Result<RadianceField<f64>> {
    let depth = r.u32()?;
    let width = r.u32()?;
    let color_width = r.u32()?;
    let mut enc = || -> Result<EncodingConfig> { Ok(EncodingConfig::new(r.u32()?, r.flag()?)) };
    let position_encoding = enc()?;
    let direction_encoding = enc()?;
    let config = FieldConfig {
        depth,
        width,
        color_width,
        position_encoding,
        direction_encoding,
        position_scale: r.f64()?,
        density_scale: r.f64()?,
        zero_density_head: r.flag()?,
    };
    let params = r.f64s()?;
    RadianceField::from_params(config, params).map_err(|e| Error::data(r.path, e.to_string()))
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(VERSION as usize);
    w.u64(ck.iteration);
    write_field(&mut w, &ck.coarse);
    write_field(&mut w, &ck.fine);
    match &ck.adam {
        None => w.u8(0),
        Some(a) => {
            w.u8(1);
            w.u64(a.step);
            w.f64s(&a.m);
            w.f64s(&a.v);
        }
    }
    w.0
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint_bytes(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.header(CHECKPOINT_MAGIC)?;
    let iteration = r.u64()?;
    let coarse = read_field(&mut r)?;
    let fine = read_field(&mut r)?;
    let adam = if r.flag()? {
        let step = r.u64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        if m.len() != v.len() || m.len() != coarse.num_params() + fine.num_params() {
            return Err(Error::data(path, "optimizer state does not match the fields"));
        }
        Some(AdamState { m, v, step })
    } else {
        None
    };
    r.finish()?;
    Ok(Checkpoint {
        iteration,
        coarse,
        fine,
        adam,
    })
}

pub fn save_sampler_snapshot(path: &Path, s: &SamplerSnapshot) -> Result<()> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(SNAPSHOT_MAGIC);
    w.u32(VERSION as usize);
    w.u64(s.iteration);
    w.u8(s.distortion_aware as u8);
    w.u8(s.content_aware as u8);
    w.f64(s.floor_eps);
    w.u32(s.dims.len());
    for &(width, height) in &s.dims {
        w.u32(width);
        w.u32(height);
    }
    w.f64s(&s.content);
    write_file(path, &w.0)
}

pub fn load_sampler_snapshot(path: &Path) -> Result<SamplerSnapshot> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.header(SNAPSHOT_MAGIC)?;
    let iteration = r.u64()?;
    let distortion_aware = r.flag()?;
    let content_aware = r.flag()?;
    let floor_eps = r.f64()?;
    let n = r.u32()?;
    let dims = (0..n)
        .map(|_| Ok((r.u32()?, r.u32()?)))
        .collect::<Result<Vec<_>>>()?;
    let content = r.f64s()?;
    r.finish()?;
    let pixels: usize = dims.iter().map(|(w, h)| w * h).sum();
    if content.len() != pixels {
        return Err(Error::data(
            path,
            format!("{} content values for {pixels} pixels", content.len()),
        ));
    }
    Ok(SamplerSnapshot {
        iteration,
        distortion_aware,
        content_aware,
        floor_eps,
        dims,
        content,
    })
}
