//! Stochastic b-bit quantization of feature blocks and bit-packed storage.
//!
//! RFF-style features live in `[-sqrt(2/m), sqrt(2/m)]`; that interval is
//! divided into `2^b - 1` equal sub-intervals and each value is rounded to a
//! sub-interval endpoint with probabilities that make the rounding unbiased.
//! Codes are stored as genuine b-bit integers packed into 64-bit words, so the
//! memory accountant's `b*m*s` claim is physically honest.
//!
//! Randomness is counter-based: every (seed, epoch, batch, lane) tuple yields
//! an independent, reproducible noise stream, and entries consume draws in
//! row-major order. Noise is re-drawn for each mini-batch every epoch. By
//! default the same stream serves the forward and backward pass; double
//! sampling derives a second independent stream for the backward pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{DenseMatrix, Error, Result};

/// Precisions supported by the bit packer.
pub const ALLOWED_BITS: [u8; 5] = [1, 2, 4, 8, 16];

/// Quantization-variance scale `2 / (2^b - 1)^2` of the b-bit grid.
pub fn delta_b_sq(b: u8) -> Result<f64> {
    if b == 0 {
        return Err(Error::InvalidParam("precision b must be at least 1".into()));
    }
    let levels = (1u64 << b) - 1;
    Ok(2.0 / (levels as f64 * levels as f64))
}

/// Which consumer of a mini-batch the noise stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Forward = 0,
    Backward = 1,
    /// Heldout/test evaluation during training.
    Eval = 2,
}

/// Position of a mini-batch in the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub epoch: u32,
    pub batch: u32,
    pub lane: Lane,
}

impl StreamKey {
    pub fn new(epoch: u32, batch: u32) -> Self {
        StreamKey {
            epoch,
            batch,
            lane: Lane::Forward,
        }
    }

    pub fn with_lane(self, lane: Lane) -> Self {
        StreamKey { lane, ..self }
    }

    fn rng(&self, seed: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..12].copy_from_slice(&self.epoch.to_le_bytes());
        key[12..16].copy_from_slice(&self.batch.to_le_bytes());
        key[16] = self.lane as u8;
        key[24..32].copy_from_slice(&0x5153_5452_4d4e_4447u64.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Uniform grid over the RFF output range for one feature width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub b: u8,
    pub m: usize,
    /// Lower grid endpoint `-sqrt(2/m)`.
    pub lo: f64,
    /// Upper grid endpoint `+sqrt(2/m)`.
    pub hi: f64,
    /// Sub-interval width `(hi - lo) / (2^b - 1)`.
    pub step: f64,
}

impl Quantizer {
    pub fn new(b: u8, m: usize) -> Result<Self> {
        if !ALLOWED_BITS.contains(&b) {
            return Err(Error::InvalidParam(format!(
                "precision must be one of {ALLOWED_BITS:?}, got {b}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParam("m must be positive".into()));
        }
        let hi = (2.0 / m as f64).sqrt();
        let lo = -hi;
        let step = (hi - lo) / ((1u64 << b) - 1) as f64;
        Ok(Quantizer { b, m, lo, hi, step })
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.b) - 1
    }

    pub fn code_value(&self, code: u32) -> f64 {
        self.lo + code as f64 * self.step
    }
}

/// Bit-packed b-bit codes for a quantized `s x m` feature block.
///
/// Layout: row-major codes packed LSB-first into little-endian 64-bit words.
/// With b in {1, 2, 4, 8, 16} codes never straddle a word boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBlock {
    b: u8,
    m: usize,
    s: usize,
    words: Vec<u64>,
}

impl PackedBlock {
    pub fn zeros(b: u8, s: usize, m: usize) -> Result<Self> {
        if !ALLOWED_BITS.contains(&b) {
            return Err(Error::InvalidParam(format!(
                "precision must be one of {ALLOWED_BITS:?}, got {b}"
            )));
        }
        let total_bits = s * m * b as usize;
        let words = vec![0u64; total_bits.div_ceil(64)];
        Ok(PackedBlock { b, m, s, words })
    }

    pub fn b(&self) -> u8 {
        self.b
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn s(&self) -> usize {
        self.s
    }

    /// Number of payload bits the accountant charges for this block.
    pub fn logical_bits(&self) -> u64 {
        self.s as u64 * self.m as u64 * self.b as u64
    }

    /// Physical storage in bits (whole 64-bit words).
    pub fn physical_bits(&self) -> u64 {
        self.words.len() as u64 * 64
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> (usize, u32) {
        let flat = row * self.m + col;
        let bit = flat * self.b as usize;
        (bit / 64, (bit % 64) as u32)
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        debug_assert!(row < self.s && col < self.m);
        let (word, shift) = self.slot(row, col);
        let mask = ((1u64 << self.b) - 1) << shift;
        ((self.words[word] & mask) >> shift) as u32
    }

    pub fn set(&mut self, row: usize, col: usize, code: u32) {
        debug_assert!(row < self.s && col < self.m);
        debug_assert!(code <= (1u32 << self.b) - 1);
        let (word, shift) = self.slot(row, col);
        let mask = ((1u64 << self.b) - 1) << shift;
        self.words[word] = (self.words[word] & !mask) | ((code as u64) << shift);
    }

    /// Binary blob: header (b, m, s as little-endian u32) then the words as
    /// little-endian bytes. The layout is part of the public contract.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.words.len() * 8);
        out.extend_from_slice(&(self.b as u32).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.s as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 {
            return Err(Error::InvalidData("packed block blob truncated".into()));
        }
        let b = u32::from_le_bytes(buf[0..4].try_into().unwrap());
        let m = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let s = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        if b > 16 || !ALLOWED_BITS.contains(&(b as u8)) {
            return Err(Error::InvalidData(format!("invalid precision {b} in blob")));
        }
        let n_words = (s * m * b as usize).div_ceil(64);
        if buf.len() != 12 + n_words * 8 {
            return Err(Error::InvalidData(format!(
                "packed block blob has {} bytes, expected {}",
                buf.len(),
                12 + n_words * 8
            )));
        }
        let words = buf[12..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(PackedBlock {
            b: b as u8,
            m,
            s,
            words,
        })
    }
}

/// Excursions beyond the grid endpoints tolerated as cosine round-off.
const RANGE_SLACK: f64 = 1e-12;

#[inline]
fn stochastic_code(z: f64, lo: f64, step: f64, max_code: u32, u: f64) -> u32 {
    let t = (z - lo) / step;
    let mut j = t.floor();
    if j < 0.0 {
        j = 0.0;
    }
    let mut j = j as u32;
    if j >= max_code {
        // z sits exactly on (or within slack of) the top endpoint.
        return max_code;
    }
    let frac = t - j as f64;
    if u < frac {
        j += 1;
    }
    j
}

fn clamp_into(z: f64, lo: f64, hi: f64, slack: f64) -> Result<f64> {
    if z < lo - slack || z > hi + slack {
        return Err(Error::Range(format!(
            "entry {z} outside [{lo}, {hi}] by more than {slack:e} (not an RFF-scaled input)"
        )));
    }
    Ok(z.clamp(lo, hi))
}

/// Stochastically round an `s x m` feature block to b-bit codes.
///
/// Every entry lands on an endpoint of its sub-interval with probabilities
/// proportional to proximity, so the rounding is unbiased entrywise. Entries
/// outside the grid by more than 1e-12 are rejected.
pub fn quantize_stochastic(
    block: &DenseMatrix,
    b: u8,
    seed: u64,
    stream: &StreamKey,
) -> Result<PackedBlock> {
    let q = Quantizer::new(b, block.ncols())?;
    let mut rng = stream.rng(seed);
    let mut packed = PackedBlock::zeros(b, block.nrows(), block.ncols())?;
    let max_code = q.max_code();
    for row in 0..block.nrows() {
        for col in 0..block.ncols() {
            let z = clamp_into(block[(row, col)], q.lo, q.hi, RANGE_SLACK)?;
            let u: f64 = rng.random();
            packed.set(row, col, stochastic_code(z, q.lo, q.step, max_code, u));
        }
    }
    Ok(packed)
}

/// Reconstruct the real-valued block `lo + code * step` from packed codes.
pub fn dequantize(packed: &PackedBlock) -> DenseMatrix {
    let q = Quantizer::new(packed.b, packed.m).expect("packed blocks carry valid parameters");
    DenseMatrix::from_fn(packed.s, packed.m, |i, j| q.code_value(packed.get(i, j)))
}

/// Two independent quantizations of the same block, for decoupling the
/// forward pass from the gradient computation.
pub fn double_sample(
    block: &DenseMatrix,
    b: u8,
    seed: u64,
    stream: &StreamKey,
) -> Result<(PackedBlock, PackedBlock)> {
    let fwd = quantize_stochastic(block, b, seed, &stream.with_lane(Lane::Forward))?;
    let bwd = quantize_stochastic(block, b, seed, &stream.with_lane(Lane::Backward))?;
    Ok((fwd, bwd))
}

/// Per-feature uniform quantizer for Nystrom features, whose dynamic range
/// varies by coordinate. Ranges come from the training set; test-time values
/// are clamped into the recorded interval.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromQuantizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub b: u8,
}

impl NystromQuantizer {
    /// Record per-feature min/max over a training feature block.
    pub fn fit(train_features: &DenseMatrix, b: u8) -> Result<Self> {
        if !ALLOWED_BITS.contains(&b) {
            return Err(Error::InvalidParam(format!(
                "precision must be one of {ALLOWED_BITS:?}, got {b}"
            )));
        }
        if train_features.nrows() == 0 {
            return Err(Error::InvalidData("cannot fit quantizer on empty block".into()));
        }
        let m = train_features.ncols();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for i in 0..train_features.nrows() {
            for j in 0..m {
                let v = train_features[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidData("non-finite feature value".into()));
                }
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(NystromQuantizer { lo, hi, b })
    }

    fn step(&self, j: usize) -> f64 {
        (self.hi[j] - self.lo[j]) / ((1u64 << self.b) - 1) as f64
    }

    /// Quantize a block with per-feature grids; out-of-range entries are
    /// clamped first, constant features always store code 0.
    pub fn quantize(
        &self,
        block: &DenseMatrix,
        seed: u64,
        stream: &StreamKey,
    ) -> Result<PackedBlock> {
        if block.ncols() != self.lo.len() {
            return Err(Error::DimensionMismatch(format!(
                "quantizer covers {} features, block has {}",
                self.lo.len(),
                block.ncols()
            )));
        }
        let mut rng = stream.rng(seed);
        let mut packed = PackedBlock::zeros(self.b, block.nrows(), block.ncols())?;
        let max_code = (1u32 << self.b) - 1;
        for row in 0..block.nrows() {
            for col in 0..block.ncols() {
                let u: f64 = rng.random();
                let (lo, hi) = (self.lo[col], self.hi[col]);
                if hi <= lo {
                    continue; // constant feature, code 0
                }
                let z = block[(row, col)].clamp(lo, hi);
                packed.set(row, col, stochastic_code(z, lo, self.step(col), max_code, u));
            }
        }
        Ok(packed)
    }

    /// Reconstruct real values using the per-feature grids.
    pub fn dequantize(&self, packed: &PackedBlock) -> Result<DenseMatrix> {
        if packed.m() != self.lo.len() {
            return Err(Error::DimensionMismatch(format!(
                "quantizer covers {} features, block has {}",
                self.lo.len(),
                packed.m()
            )));
        }
        Ok(DenseMatrix::from_fn(packed.s(), packed.m(), |i, j| {
            if self.hi[j] <= self.lo[j] {
                self.lo[j]
            } else {
                self.lo[j] + packed.get(i, j) as f64 * self.step(j)
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn variance_scale_values() {
        assert_eq!(delta_b_sq(1).unwrap(), 2.0);
        assert_relative_eq!(delta_b_sq(4).unwrap(), 2.0 / 225.0, max_relative = 1e-15);
        assert_relative_eq!(delta_b_sq(8).unwrap(), 2.0 / 65025.0, max_relative = 1e-15);
        assert!(delta_b_sq(0).is_err());
    }

    #[test]
    fn quantizer_grid_is_exact() {
        for b in ALLOWED_BITS {
            let q = Quantizer::new(b, 8).unwrap();
            let reconstructed = q.lo + ((1u64 << b) - 1) as f64 * q.step;
            assert!((reconstructed - q.hi).abs() <= 1e-15);
        }
        assert!(Quantizer::new(3, 8).is_err());
        assert!(Quantizer::new(32, 8).is_err());
    }

    #[test]
    fn midpoint_rounds_half_half_for_one_bit() {
        // m = 2 gives lo = -1, hi = 1; z = 0 must round to each endpoint
        // with probability one half.
        let block = DenseMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let mut ups = 0usize;
        let n = 20_000;
        for t in 0..n {
            let packed = quantize_stochastic(&block, 1, 7, &StreamKey::new(0, t as u32)).unwrap();
            ups += packed.get(0, 0) as usize;
        }
        let frac = ups as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "up fraction {frac}");
    }

    #[test]
    fn two_bit_interior_point_unbiased() {
        // m = 2, b = 2: grid -1, -1/3, 1/3, 1. z = 0.5 lies in [1/3, 1] and
        // must dequantize to 1/3 w.p. 0.75 and 1 w.p. 0.25.
        let block = DenseMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let mut hits_top = 0usize;
        let mut sum = 0.0;
        let n = 40_000;
        for t in 0..n {
            let packed = quantize_stochastic(&block, 2, 11, &StreamKey::new(1, t as u32)).unwrap();
            let deq = dequantize(&packed);
            if packed.get(0, 0) == 3 {
                hits_top += 1;
            }
            sum += deq[(0, 0)];
        }
        let frac = hits_top as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.02, "top fraction {frac}");
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn grid_points_are_deterministic() {
        let q = Quantizer::new(2, 2).unwrap();
        let values = [q.code_value(0), q.code_value(1), q.code_value(2), q.code_value(3)];
        let block = DenseMatrix::from_row_slice(2, 2, &[values[0], values[1], values[2], values[3]]);
        for t in 0..50 {
            let packed = quantize_stochastic(&block, 2, 3, &StreamKey::new(2, t)).unwrap();
            assert_eq!(packed.get(0, 0), 0);
            assert_eq!(packed.get(0, 1), 1);
            assert_eq!(packed.get(1, 0), 2);
            assert_eq!(packed.get(1, 1), 3);
        }
    }

    #[test]
    fn dequantize_endpoints() {
        let mut packed = PackedBlock::zeros(2, 1, 2).unwrap();
        packed.set(0, 0, 0);
        packed.set(0, 1, 3);
        let deq = dequantize(&packed);
        let q = Quantizer::new(2, 2).unwrap();
        assert_eq!(deq[(0, 0)], q.lo);
        assert!((deq[(0, 1)] - q.hi).abs() <= 1e-15);
        // code 2 on the b=2, m=2 grid sits at 1/3.
        packed.set(0, 0, 2);
        let deq = dequantize(&packed);
        assert_relative_eq!(deq[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn same_stream_reproduces_codes() {
        let block = DenseMatrix::from_fn(4, 8, |i, j| {
            ((i * 8 + j) as f64 / 31.0 - 0.5) * 0.9
        });
        let a = quantize_stochastic(&block, 4, 42, &StreamKey::new(3, 7)).unwrap();
        let b = quantize_stochastic(&block, 4, 42, &StreamKey::new(3, 7)).unwrap();
        assert_eq!(a, b);
        let c = quantize_stochastic(&block, 4, 42, &StreamKey::new(3, 8)).unwrap();
        assert_ne!(a, c, "different batches must see different noise");
    }

    #[test]
    fn out_of_range_entry_is_an_error() {
        let q = Quantizer::new(2, 2).unwrap();
        let block = DenseMatrix::from_row_slice(1, 2, &[q.hi + 1e-6, 0.0]);
        assert!(quantize_stochastic(&block, 2, 0, &StreamKey::new(0, 0)).is_err());
        // ... but round-off-sized excursions are clamped.
        let block = DenseMatrix::from_row_slice(1, 2, &[q.hi + 5e-13, q.lo - 5e-13]);
        let packed = quantize_stochastic(&block, 2, 0, &StreamKey::new(0, 0)).unwrap();
        assert_eq!(packed.get(0, 0), 3);
        assert_eq!(packed.get(0, 1), 0);
    }

    #[test]
    fn double_sample_lanes_unbiased_and_independent() {
        // Residual fraction p: lanes disagree with probability 2 p (1 - p).
        let q = Quantizer::new(1, 2).unwrap();
        let p = 0.3;
        let z = q.lo + p * q.step;
        let block = DenseMatrix::from_row_slice(1, 2, &[z, z]);
        let n = 100_000;
        let mut disagree = 0usize;
        let mut sums = [0.0f64; 2];
        for t in 0..n {
            let (fwd, bwd) = double_sample(&block, 1, 5, &StreamKey::new(0, t as u32)).unwrap();
            if fwd.get(0, 0) != bwd.get(0, 0) {
                disagree += 1;
            }
            sums[0] += dequantize(&fwd)[(0, 0)];
            sums[1] += dequantize(&bwd)[(0, 0)];
        }
        let expect = 2.0 * p * (1.0 - p);
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        let got = disagree as f64 / n as f64;
        assert!(
            (got - expect).abs() <= 4.0 * se,
            "disagreement {got} vs {expect} (se {se})"
        );
        for s in sums {
            let mean = s / n as f64;
            // SE of the mean of +/-1-step Bernoulli values.
            let sd = q.step * (p * (1.0 - p)).sqrt();
            assert!((mean - z).abs() <= 4.0 * sd / (n as f64).sqrt());
        }
    }

    #[test]
    fn double_sample_identical_on_grid_points() {
        let q = Quantizer::new(16, 4).unwrap();
        let block = DenseMatrix::from_fn(2, 4, |i, j| q.code_value((i * 4 + j) as u32 * 1000));
        let (fwd, bwd) = double_sample(&block, 16, 9, &StreamKey::new(1, 1)).unwrap();
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn packed_block_layout_is_bit_exact() {
        // b = 2, m = 2, s = 1, codes [1, 3]: word 0 = 0b1101 = 13.
        let mut packed = PackedBlock::zeros(2, 1, 2).unwrap();
        packed.set(0, 0, 1);
        packed.set(0, 1, 3);
        let bytes = packed.to_bytes();
        let expect: Vec<u8> = vec![
            2, 0, 0, 0, // b
            2, 0, 0, 0, // m
            1, 0, 0, 0, // s
            13, 0, 0, 0, 0, 0, 0, 0, // one little-endian word
        ];
        assert_eq!(bytes, expect);
        let restored = PackedBlock::from_bytes(&bytes).unwrap();
        assert_eq!(restored, packed);
    }

    #[test]
    fn physical_size_matches_word_count() {
        for (b, s, m) in [(1u8, 3usize, 100usize), (2, 5, 33), (4, 7, 17), (8, 2, 9), (16, 3, 5)] {
            let packed = PackedBlock::zeros(b, s, m).unwrap();
            let logical = (s * m * b as usize) as u64;
            assert_eq!(packed.logical_bits(), logical);
            assert_eq!(packed.physical_bits(), 64 * logical.div_ceil(64));
            assert!(packed.physical_bits() - logical <= 63);
        }
    }

    #[test]
    fn nystrom_quantizer_unbiased_in_range() {
        // Feature with train range [0, 1], b = 1: z = 0.25 rounds down w.p.
        // 0.75 and up w.p. 0.25.
        let train = DenseMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = NystromQuantizer::fit(&train, 1).unwrap();
        let block = DenseMatrix::from_row_slice(1, 1, &[0.25]);
        let n = 40_000;
        let mut ups = 0;
        for t in 0..n {
            let packed = q.quantize(&block, 3, &StreamKey::new(0, t)).unwrap();
            ups += packed.get(0, 0);
        }
        let frac = ups as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.02, "up fraction {frac}");
    }

    #[test]
    fn nystrom_quantizer_clamps_below_range() {
        let train = DenseMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = NystromQuantizer::fit(&train, 2).unwrap();
        let block = DenseMatrix::from_row_slice(1, 1, &[-0.5]);
        for t in 0..20 {
            let packed = q.quantize(&block, 1, &StreamKey::new(0, t)).unwrap();
            assert_eq!(packed.get(0, 0), 0);
        }
    }

    #[test]
    fn nystrom_quantizer_constant_feature() {
        let train = DenseMatrix::from_row_slice(3, 2, &[0.7, 0.1, 0.7, 0.5, 0.7, 0.9]);
        let q = NystromQuantizer::fit(&train, 4).unwrap();
        let block = DenseMatrix::from_row_slice(1, 2, &[0.7, 0.5]);
        let packed = q.quantize(&block, 2, &StreamKey::new(0, 0)).unwrap();
        assert_eq!(packed.get(0, 0), 0);
        let deq = q.dequantize(&packed).unwrap();
        assert_eq!(deq[(0, 0)], 0.7);
    }

    #[test]
    fn quantized_product_variance_bounded() {
        // Single-coordinate scale (m = 1, range +/- sqrt(2)): the variance of
        // the product of two independently quantized features is at most
        // 2 v + v^2 + var(product) for v = delta_b^2, checked against a
        // Monte Carlo band from the draws' fourth moment.
        use rand_distr::StandardNormal;
        let x = [0.3, -0.8, 0.5];
        let y = [-0.1, 0.4, 1.2];
        let n: usize = 100_000;
        for b in [1u8, 4] {
            let v = delta_b_sq(b).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1234 + b as u64);
            let mut raw = Vec::with_capacity(n);
            let mut quantized = Vec::with_capacity(n);
            for t in 0..n {
                // Fresh one-feature map: w ~ N(0, 2 gamma I) with gamma = 0.5.
                let w: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let a: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                let zx = 2.0f64.sqrt() * (w.iter().zip(&x).map(|(wi, xi)| wi * xi).sum::<f64>() + a).cos();
                let zy = 2.0f64.sqrt() * (w.iter().zip(&y).map(|(wi, yi)| wi * yi).sum::<f64>() + a).cos();
                raw.push(zx * zy);
                let block = DenseMatrix::from_row_slice(1, 1, &[zx]);
                let block2 = DenseMatrix::from_row_slice(1, 1, &[zy]);
                let qx = dequantize(
                    &quantize_stochastic(&block, b, 42, &StreamKey::new(0, t as u32)).unwrap(),
                )[(0, 0)];
                let qy = dequantize(
                    &quantize_stochastic(&block2, b, 43, &StreamKey::new(0, t as u32)).unwrap(),
                )[(0, 0)];
                quantized.push(qx * qy);
            }
            let var = |s: &[f64]| {
                let mean = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (s.len() - 1) as f64
            };
            let raw_var = var(&raw);
            let q_var = var(&quantized);
            // Standard error of the variance estimate from the fourth moment.
            let mean_q = quantized.iter().sum::<f64>() / n as f64;
            let m4 = quantized
                .iter()
                .map(|t| (t - mean_q).powi(4))
                .sum::<f64>()
                / n as f64;
            let se = ((m4 - q_var * q_var).max(0.0) / n as f64).sqrt();
            let cap = 2.0 * v + v * v + raw_var;
            assert!(
                q_var <= cap + 4.0 * se,
                "b = {b}: product variance {q_var} exceeds {cap} + 4 x {se}"
            );
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trips(
            b_idx in 0usize..5,
            s in 1usize..6,
            m in 1usize..40,
            seed in 0u64..1000,
        ) {
            let b = ALLOWED_BITS[b_idx];
            let max_code = (1u32 << b) - 1;
            let mut packed = PackedBlock::zeros(b, s, m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut expect = vec![0u32; s * m];
            for i in 0..s {
                for j in 0..m {
                    let code = rng.random_range(0..=max_code);
                    packed.set(i, j, code);
                    expect[i * m + j] = code;
                }
            }
            for i in 0..s {
                for j in 0..m {
                    prop_assert_eq!(packed.get(i, j), expect[i * m + j]);
                }
            }
            let restored = PackedBlock::from_bytes(&packed.to_bytes()).unwrap();
            prop_assert_eq!(restored, packed);
        }

        #[test]
        fn quantize_dequantize_stays_on_grid(
            b_idx in 0usize..5,
            seed in 0u64..200,
        ) {
            let b = ALLOWED_BITS[b_idx];
            let m = 6;
            let q = Quantizer::new(b, m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block = DenseMatrix::from_fn(3, m, |_, _| {
                q.lo + rng.random::<f64>() * (q.hi - q.lo)
            });
            let packed = quantize_stochastic(&block, b, seed, &StreamKey::new(0, 0)).unwrap();
            let deq = dequantize(&packed);
            for i in 0..3 {
                for j in 0..m {
                    let code = packed.get(i, j);
                    prop_assert!(code <= q.max_code());
                    prop_assert!((deq[(i, j)] - q.code_value(code)).abs() < 1e-15);
                    // Rounds to an endpoint of the containing sub-interval.
                    prop_assert!((deq[(i, j)] - block[(i, j)]).abs() <= q.step + 1e-12);
                }
            }
        }
    }
}
