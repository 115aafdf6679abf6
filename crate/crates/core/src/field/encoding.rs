//! Sinusoidal positional encoding.

use serde::{Deserialize, Serialize};

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Number of frequency octaves.
    pub octaves: usize,
    /// Prepend the raw input to the sinusoids.
    pub include_identity: bool,
}

impl EncodingConfig {
    pub fn new(octaves: usize, include_identity: bool) -> Self {
        Self {
            octaves,
            include_identity,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.octaves + usize::from(self.include_identity))
    }

    /// Writes `[x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`
    /// into `out`, each block componentwise over `x`.
    ///
    /// Octaves past the first come from the double-angle identities, which
    /// keeps the trig count at one `sin_cos` per component.
    pub fn encode_into(&self, x: &[f64], out: &mut [f64]) {
        let k = x.len();
        debug_assert_eq!(out.len(), self.output_dim(k));
        let mut o = 0;
        if self.include_identity {
            out[..k].copy_from_slice(x);
            o = k;
        }
        if self.octaves == 0 {
            return;
        }
        for (c, &xc) in x.iter().enumerate() {
            let (mut s, mut co) = (PI * xc).sin_cos();
            for j in 0..self.octaves {
                let base = o + j * 2 * k;
                out[base + c] = s;
                out[base + k + c] = co;
                let (s2, c2) = (2.0 * s * co, 1.0 - 2.0 * s * s);
                s = s2;
                co = c2;
            }
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim(x.len())];
        self.encode_into(x, &mut out);
        out
    }

    /// Jacobian of [`encode`](Self::encode), `output_dim x k`, row-major.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let k = x.len();
        let rows = self.output_dim(k);
        let mut jac = vec![0.0; rows * k];
        let mut o = 0;
        if self.include_identity {
            for c in 0..k {
                jac[c * k + c] = 1.0;
            }
            o = k;
        }
        for j in 0..self.octaves {
            let f = (1u64 << j) as f64 * PI;
            for (c, &xc) in x.iter().enumerate() {
                let (s, co) = (f * xc).sin_cos();
                let base = o + j * 2 * k;
                jac[(base + c) * k + c] = f * co;
                jac[(base + k + c) * k + c] = -f * s;
            }
        }
        jac
    }
}
