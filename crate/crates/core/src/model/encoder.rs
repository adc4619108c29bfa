use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const POSITIONAL_AMPLITUDE: f64 = 0.5;

/// Frozen feature extractor: a seeded random projection of non-overlapping
/// patches plus a fixed sinusoidal per-patch positional table.
///
/// It never enters a tape, so nothing can update it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder<T> {
    in_channels: usize,
    patch_size: usize,
    embed_dim: usize,
    seed: u64,
    /// `[embed_dim, in_channels * patch_size^2]`
    projection: Tensor<T>,
}

impl<T: Scalar> FrozenEncoder<T> {
    pub fn new(in_channels: usize, patch_size: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || patch_size == 0 || embed_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let fan_in = in_channels * patch_size * patch_size;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeding::derive(seed, "encoder.projection"));
        let projection =
            Tensor::from_fn(&[embed_dim, fan_in], |_| T::lit(rng.gen_range(-bound..=bound)));
        Ok(FrozenEncoder {
            in_channels,
            patch_size,
            embed_dim,
            seed,
            projection,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn projection(&self) -> &Tensor<T> {
        &self.projection
    }

    /// Fixed additive encoding of shape `[embed_dim, rows, cols]`. Even
    /// channels carry row phases and odd channels column phases.
    pub fn positional_table(&self, rows: usize, cols: usize) -> Tensor<T> {
        let e = self.embed_dim;
        let mut data = Vec::with_capacity(e * rows * cols);
        for ch in 0..e {
            let pair = (ch / 2) / 2;
            let freq = 1.0 / 100f64.powf(2.0 * pair as f64 / e as f64);
            let use_cos = (ch / 2) % 2 == 1;
            for r in 0..rows {
                for c in 0..cols {
                    let pos = if ch % 2 == 0 { r } else { c } as f64;
                    let phase = pos * freq;
                    let v = if use_cos { phase.cos() } else { phase.sin() };
                    data.push(T::lit(POSITIONAL_AMPLITUDE * v));
                }
            }
        }
        Tensor::new(vec![e, rows, cols], data).expect("positional table shape")
    }

    /// Maps a `[C, H, W]` image to a `[embed_dim, H/p, W/p]` feature map.
    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let s = image.shape();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(Error::shape("encode", s, &[self.in_channels]));
        }
        let (h, w, p) = (s[1], s[2], self.patch_size);
        if h % p != 0 || w % p != 0 {
            return Err(Error::invalid(format!(
                "encode: image {h}x{w} must be a multiple of the patch size {p}"
            )));
        }
        let (rows, cols) = (h / p, w / p);
        let n = rows * cols;
        let fan_in = self.in_channels * p * p;
        // Patch matrix [fan_in, n]: column j holds patch j in (c, dy, dx) order.
        let px = image.data();
        let mut patches = vec![T::zero(); fan_in * n];
        for c in 0..self.in_channels {
            for dy in 0..p {
                for dx in 0..p {
                    let k = (c * p + dy) * p + dx;
                    let row = &mut patches[k * n..(k + 1) * n];
                    for r in 0..rows {
                        for q in 0..cols {
                            row[r * cols + q] = px[(c * h + r * p + dy) * w + q * p + dx];
                        }
                    }
                }
            }
        }
        let mut out = self.positional_table(rows, cols).into_data();
        T::gemm(
            self.embed_dim,
            fan_in,
            n,
            T::one(),
            self.projection.data(),
            fan_in as isize,
            1,
            &patches,
            n as isize,
            1,
            T::one(),
            &mut out,
            n as isize,
            1,
        );
        Tensor::new(vec![self.embed_dim, rows, cols], out)
    }

    /// Hex SHA-256 over the encoder's configuration and projection bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.in_channels, self.patch_size, self.embed_dim] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(self.seed.to_le_bytes());
        let mut bytes = Vec::with_capacity(self.projection.len() * 8);
        for &v in self.projection.data() {
            v.write_le(&mut bytes);
        }
        h.update(&bytes);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
