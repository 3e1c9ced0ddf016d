//! Feature maps whose inner products approximate the Gaussian kernel.
//!
//! Three constructions are provided: plain random Fourier features (cosine or
//! paired sin/cos parametrization), circulant random Fourier features whose
//! projection is a stack of square circulant blocks stored as one base vector
//! each, and Nystrom features built from the eigendecomposition of a landmark
//! Gram matrix. Maps are immutable after sampling and `apply` is pure, so
//! disjoint batches can be processed independently.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::kernel::{self, GaussianKernel, SymEig};
use crate::{DenseMatrix, Error, Result};

/// How RFF projections are turned into bounded features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    /// `z_i(x) = sqrt(2/m) cos(w_i.x + a_i)`.
    Cos,
    /// Paired `sqrt(2/m) (sin(w.x), cos(w.x))`; requires even `m`.
    SinCos,
}

/// Random Fourier feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    /// Projection matrix, `m x d`. For `SinCos` rows come in equal pairs.
    pub w: DenseMatrix,
    /// Phases in `[0, 2pi)`; all zero for `SinCos`.
    pub phases: Vec<f64>,
    pub m: usize,
    pub parametrization: Parametrization,
}

/// Circulant random Fourier feature map.
///
/// The effective projection is `ceil(m/d)` square circulant blocks stacked
/// vertically and truncated to `m` rows, with one shared sign flip per row.
/// Only the base vector of each block is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantRffMap {
    /// One base vector of length `d` per circulant block.
    pub base_vectors: Vec<Vec<f64>>,
    /// Rademacher signs in {-1, +1}, one per output row.
    pub signs: Vec<f64>,
    /// Phases in `[0, 2pi)`, one per output row.
    pub phases: Vec<f64>,
    pub m: usize,
    pub d: usize,
}

/// Nystrom feature map `z(x) = Lambda^{-1/2} U^T k_x` over landmark points.
#[derive(Debug, Clone)]
pub struct NystromMap {
    pub kernel: GaussianKernel,
    /// Landmark rows, `m x d`.
    pub landmarks: DenseMatrix,
    /// Retained eigenvectors of the landmark Gram matrix, `m x r`.
    pub u: DenseMatrix,
    /// Retained eigenvalues, descending, all above the threshold.
    pub lambda: Vec<f64>,
    /// Eigenvalue threshold that was applied.
    pub eig_threshold: f64,
}

/// Any of the supported feature maps.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    Rff(RffMap),
    CirculantRff(CirculantRffMap),
    Nystrom(NystromMap),
}

fn gaussian_row(rng: &mut ChaCha8Rng, d: usize, sd: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            g * sd
        })
        .collect()
}

/// Sample an RFF map for the Gaussian kernel.
///
/// Projection rows are i.i.d. zero-mean Gaussian with covariance
/// `2 gamma I_d`, phases i.i.d. uniform on `[0, 2pi)`.
pub fn sample_rff(
    kernel: &GaussianKernel,
    m: usize,
    d: usize,
    seed: u64,
    parametrization: Parametrization,
) -> Result<RffMap> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidParam("m and d must be positive".into()));
    }
    if parametrization == Parametrization::SinCos && m % 2 != 0 {
        return Err(Error::InvalidParam(format!(
            "sin/cos parametrization requires even m, got {m}"
        )));
    }
    let sd = (2.0 * kernel.gamma()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DenseMatrix::zeros(m, d);
    match parametrization {
        Parametrization::Cos => {
            for i in 0..m {
                let row = gaussian_row(&mut rng, d, sd);
                for (j, v) in row.iter().enumerate() {
                    w[(i, j)] = *v;
                }
            }
        }
        Parametrization::SinCos => {
            for pair in 0..m / 2 {
                let row = gaussian_row(&mut rng, d, sd);
                for (j, v) in row.iter().enumerate() {
                    w[(2 * pair, j)] = *v;
                    w[(2 * pair + 1, j)] = *v;
                }
            }
        }
    }
    let phases = match parametrization {
        Parametrization::Cos => (0..m)
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect(),
        Parametrization::SinCos => vec![0.0; m],
    };
    Ok(RffMap {
        w,
        phases,
        m,
        parametrization,
    })
}

/// Sample a circulant RFF map: per-block Gaussian base vectors with the same
/// marginal as `sample_rff` rows, Rademacher signs, uniform phases.
pub fn sample_circulant_rff(
    kernel: &GaussianKernel,
    m: usize,
    d: usize,
    seed: u64,
) -> Result<CirculantRffMap> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidParam("m and d must be positive".into()));
    }
    let sd = (2.0 * kernel.gamma()).sqrt();
    let blocks = m.div_ceil(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_vectors: Vec<Vec<f64>> = (0..blocks).map(|_| gaussian_row(&mut rng, d, sd)).collect();
    let signs: Vec<f64> = (0..m)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let phases: Vec<f64> = (0..m)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    Ok(CirculantRffMap {
        base_vectors,
        signs,
        phases,
        m,
        d,
    })
}

/// Sample a Nystrom map from uniformly-chosen landmark rows of `train_x`.
///
/// Eigenpairs of the landmark Gram matrix at or below `eig_threshold` are
/// dropped; `None` uses `1e-12 * lambda_max` for pseudo-inverse stability.
pub fn sample_nystrom(
    train_x: &DenseMatrix,
    kernel: &GaussianKernel,
    m: usize,
    seed: u64,
    eig_threshold: Option<f64>,
) -> Result<NystromMap> {
    let n = train_x.nrows();
    if m == 0 {
        return Err(Error::InvalidParam("m must be positive".into()));
    }
    if m > n {
        return Err(Error::InvalidParam(format!(
            "cannot draw {m} landmarks from {n} training rows"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(m);
    indices.sort_unstable();
    let mut landmarks = DenseMatrix::zeros(m, train_x.ncols());
    for (r, &i) in indices.iter().enumerate() {
        landmarks.row_mut(r).copy_from(&train_x.row(i));
    }
    let gram = kernel::gram_self(kernel, &landmarks)?;
    let eig = kernel::sym_eig(&gram)?;
    let threshold = eig_threshold.unwrap_or_else(|| 1e-12 * eig.values[0].max(0.0));
    let r = eig.values.iter().take_while(|&&v| v > threshold).count();
    if r == 0 {
        return Err(Error::Numerical(
            "landmark Gram matrix has no eigenvalue above the threshold".into(),
        ));
    }
    let u = eig.vectors.columns(0, r).into_owned();
    let lambda = eig.values[..r].to_vec();
    Ok(NystromMap {
        kernel: *kernel,
        landmarks,
        u,
        lambda,
        eig_threshold: threshold,
    })
}

impl RffMap {
    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.ncols() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "map expects {} input columns, got {}",
                self.d(),
                x.ncols()
            )));
        }
        let mut p = x * self.w.transpose();
        let scale = (2.0 / self.m as f64).sqrt();
        match self.parametrization {
            Parametrization::Cos => {
                for j in 0..self.m {
                    let a = self.phases[j];
                    for i in 0..p.nrows() {
                        p[(i, j)] = scale * (p[(i, j)] + a).cos();
                    }
                }
            }
            Parametrization::SinCos => {
                for j in 0..self.m {
                    let is_sin = j % 2 == 0;
                    for i in 0..p.nrows() {
                        let t = p[(i, j)];
                        p[(i, j)] = scale * if is_sin { t.sin() } else { t.cos() };
                    }
                }
            }
        }
        Ok(p)
    }
}

impl CirculantRffMap {
    /// Row `row` of circulant block `block`, sign-flipped: the base vector
    /// cyclically shifted right by `row`.
    fn effective_row(&self, global_row: usize) -> Vec<f64> {
        let block = global_row / self.d;
        let shift = global_row % self.d;
        let base = &self.base_vectors[block];
        let sign = self.signs[global_row];
        (0..self.d)
            .map(|k| sign * base[(k + self.d - shift) % self.d])
            .collect()
    }

    /// Materialize the effective `m x d` projection (tests, serialization).
    pub fn effective_projection(&self) -> DenseMatrix {
        let mut w = DenseMatrix::zeros(self.m, self.d);
        for i in 0..self.m {
            let row = self.effective_row(i);
            for (j, v) in row.iter().enumerate() {
                w[(i, j)] = *v;
            }
        }
        w
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.ncols() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "map expects {} input columns, got {}",
                self.d,
                x.ncols()
            )));
        }
        // Direct multiplication against the materialized block rows; the
        // scratch projection is transient, only the base vectors persist.
        let w = self.effective_projection();
        let mut z = x * w.transpose();
        let scale = (2.0 / self.m as f64).sqrt();
        for j in 0..self.m {
            let a = self.phases[j];
            for i in 0..z.nrows() {
                z[(i, j)] = scale * (z[(i, j)] + a).cos();
            }
        }
        Ok(z)
    }
}

impl NystromMap {
    /// Number of landmarks.
    pub fn landmarks_len(&self) -> usize {
        self.landmarks.nrows()
    }

    /// Retained rank (output dimension).
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.ncols() != self.landmarks.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "map expects {} input columns, got {}",
                self.landmarks.ncols(),
                x.ncols()
            )));
        }
        let kx = kernel::gram(&self.kernel, x, &self.landmarks)?;
        let mut z = kx * &self.u;
        for (j, lam) in self.lambda.iter().enumerate() {
            let inv_sqrt = 1.0 / lam.sqrt();
            z.column_mut(j).scale_mut(inv_sqrt);
        }
        Ok(z)
    }

    /// Eigendecomposition of the landmark Gram matrix restricted to the
    /// retained eigenspace.
    pub fn retained_eig(&self) -> SymEig {
        SymEig {
            values: self.lambda.clone(),
            vectors: self.u.clone(),
        }
    }
}

impl FeatureMap {
    /// Output dimension of the map.
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Rff(m) => m.m,
            FeatureMap::CirculantRff(m) => m.m,
            FeatureMap::Nystrom(m) => m.rank(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Rff(m) => m.d(),
            FeatureMap::CirculantRff(m) => m.d,
            FeatureMap::Nystrom(m) => m.landmarks.ncols(),
        }
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            FeatureMap::Rff(m) => m.apply(x),
            FeatureMap::CirculantRff(m) => m.apply(x),
            FeatureMap::Nystrom(m) => m.apply(x),
        }
    }

    /// True when outputs are RFF-style, bounded by `sqrt(2/m)` in magnitude.
    pub fn is_rff_type(&self) -> bool {
        !matches!(self, FeatureMap::Nystrom(_))
    }
}

/// Approximate kernel matrix `Z Z^T` from a feature block (rows = examples).
///
/// Works on the transposed layout so each example's features are contiguous;
/// only the upper triangle is computed and then mirrored.
pub fn feature_gram(z: &DenseMatrix) -> DenseMatrix {
    let n = z.nrows();
    let zt = z.transpose();
    let cols = zt.as_slice();
    let m = zt.nrows();
    let mut g = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let a = &cols[i * m..(i + 1) * m];
        for j in i..n {
            let b = &cols[j * m..(j + 1) * m];
            let v = kernel::dot(a, b);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

// --- serialization -----------------------------------------------------------
//
// Versioned little-endian blob. Header: magic "LPFM", u16 version, u8 type
// tag, u8 parametrization, u32 m, u32 d, u64 seed; then the sampled state so
// maps restore without re-deriving anything.

const MAP_MAGIC: &[u8; 4] = b"LPFM";
const MAP_VERSION: u16 = 1;

const TAG_RFF: u8 = 0;
const TAG_CIRCULANT: u8 = 1;
const TAG_NYSTROM: u8 = 2;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }
    /// Matrix payload in row-major order.
    fn matrix(&mut self, m: &DenseMatrix) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::InvalidData("feature map blob truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let flat = self.f64s(rows * cols)?;
        Ok(DenseMatrix::from_row_slice(rows, cols, &flat))
    }
}

impl FeatureMap {
    /// Serialize to the versioned binary blob. `seed` is recorded in the
    /// header for provenance; the sampled state itself is stored in full.
    pub fn to_bytes(&self, seed: u64) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAP_MAGIC);
        w.u16(MAP_VERSION);
        match self {
            FeatureMap::Rff(m) => {
                w.u8(TAG_RFF);
                w.u8(match m.parametrization {
                    Parametrization::Cos => 0,
                    Parametrization::SinCos => 1,
                });
                w.u32(m.m as u32);
                w.u32(m.d() as u32);
                w.u64(seed);
                w.matrix(&m.w);
                w.f64s(m.phases.iter().copied());
            }
            FeatureMap::CirculantRff(m) => {
                w.u8(TAG_CIRCULANT);
                w.u8(0);
                w.u32(m.m as u32);
                w.u32(m.d as u32);
                w.u64(seed);
                for base in &m.base_vectors {
                    w.f64s(base.iter().copied());
                }
                w.f64s(m.signs.iter().copied());
                w.f64s(m.phases.iter().copied());
            }
            FeatureMap::Nystrom(m) => {
                w.u8(TAG_NYSTROM);
                w.u8(0);
                w.u32(m.landmarks_len() as u32);
                w.u32(m.landmarks.ncols() as u32);
                w.u64(seed);
                w.f64(m.kernel.gamma());
                w.f64(m.eig_threshold);
                w.u32(m.rank() as u32);
                w.matrix(&m.landmarks);
                w.matrix(&m.u);
                w.f64s(m.lambda.iter().copied());
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<(FeatureMap, u64)> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAP_MAGIC {
            return Err(Error::InvalidData("not a feature map blob".into()));
        }
        let version = r.u16()?;
        if version != MAP_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported feature map blob version {version}"
            )));
        }
        let tag = r.u8()?;
        let param = r.u8()?;
        let m = r.u32()? as usize;
        let d = r.u32()? as usize;
        let seed = r.u64()?;
        let map = match tag {
            TAG_RFF => {
                let parametrization = match param {
                    0 => Parametrization::Cos,
                    1 => Parametrization::SinCos,
                    other => {
                        return Err(Error::InvalidData(format!(
                            "unknown parametrization tag {other}"
                        )))
                    }
                };
                let w = r.matrix(m, d)?;
                let phases = r.f64s(m)?;
                FeatureMap::Rff(RffMap {
                    w,
                    phases,
                    m,
                    parametrization,
                })
            }
            TAG_CIRCULANT => {
                let blocks = m.div_ceil(d);
                let mut base_vectors = Vec::with_capacity(blocks);
                for _ in 0..blocks {
                    base_vectors.push(r.f64s(d)?);
                }
                let signs = r.f64s(m)?;
                let phases = r.f64s(m)?;
                FeatureMap::CirculantRff(CirculantRffMap {
                    base_vectors,
                    signs,
                    phases,
                    m,
                    d,
                })
            }
            TAG_NYSTROM => {
                let gamma = r.f64()?;
                let eig_threshold = r.f64()?;
                let rank = r.u32()? as usize;
                let landmarks = r.matrix(m, d)?;
                let u = r.matrix(m, rank)?;
                let lambda = r.f64s(rank)?;
                FeatureMap::Nystrom(NystromMap {
                    kernel: GaussianKernel::new(gamma)?,
                    landmarks,
                    u,
                    lambda,
                    eig_threshold,
                })
            }
            other => {
                return Err(Error::InvalidData(format!(
                    "unknown feature map type tag {other}"
                )))
            }
        };
        Ok((map, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::gaussian_inputs;
    use approx::assert_relative_eq;

    fn kern() -> GaussianKernel {
        GaussianKernel::new(0.5).unwrap()
    }

    #[test]
    fn zero_projection_cos_map_gives_constant_two() {
        // With W = 0 and zero phases every coordinate is sqrt(2/m), so the
        // inner product of any two feature vectors is m * 2/m = 2.
        let m = 16;
        let map = RffMap {
            w: DenseMatrix::zeros(m, 3),
            phases: vec![0.0; m],
            m,
            parametrization: Parametrization::Cos,
        };
        let x = gaussian_inputs(4, 3, 0);
        let z = map.apply(&x).unwrap();
        let g = feature_gram(&z);
        for v in g.iter() {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cos_features_stay_in_band() {
        let map = sample_rff(&kern(), 32, 5, 7, Parametrization::Cos).unwrap();
        let x = gaussian_inputs(20, 5, 1);
        let z = map.apply(&x).unwrap();
        let bound = (2.0 / 32.0_f64).sqrt();
        for v in z.iter() {
            assert!(v.abs() <= bound + 1e-15);
        }
    }

    #[test]
    fn sincos_zero_projection_inner_product_is_one() {
        let m = 8;
        let map = RffMap {
            w: DenseMatrix::zeros(m, 2),
            phases: vec![0.0; m],
            m,
            parametrization: Parametrization::SinCos,
        };
        let x = gaussian_inputs(3, 2, 2);
        let z = map.apply(&x).unwrap();
        // Per pair (sin 0, cos 0) scaled: (0, sqrt(2/m)).
        for i in 0..3 {
            for p in 0..m / 2 {
                assert_eq!(z[(i, 2 * p)], 0.0);
                assert_relative_eq!(z[(i, 2 * p + 1)], (2.0 / m as f64).sqrt(), epsilon = 1e-15);
            }
        }
        let g = feature_gram(&z);
        for v in g.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sincos_requires_even_m() {
        assert!(sample_rff(&kern(), 9, 3, 0, Parametrization::SinCos).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_rff(&kern(), 24, 4, 99, Parametrization::Cos).unwrap();
        let b = sample_rff(&kern(), 24, 4, 99, Parametrization::Cos).unwrap();
        assert_eq!(a, b);
        let c = sample_circulant_rff(&kern(), 24, 4, 99).unwrap();
        let d = sample_circulant_rff(&kern(), 24, 4, 99).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn projection_variance_matches_kernel_bandwidth() {
        // Sample variance of W entries over 1e5 draws, d = 1, gamma = 0.5:
        // the sampling covariance is 2 gamma = 1.
        let map = sample_rff(&kern(), 100_000, 1, 5, Parametrization::Cos).unwrap();
        let n = map.w.len() as f64;
        let mean = map.w.iter().sum::<f64>() / n;
        let var = map.w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(
            (var - 1.0).abs() < 0.03,
            "sample variance {var} outside 1.0 +/- 3%"
        );
    }

    /// Monte Carlo mean of z(x).z(y) over independent maps, with its standard
    /// error, against the exact kernel value.
    fn mc_kernel_estimate(
        make: impl Fn(u64) -> FeatureMap,
        x: &DenseMatrix,
        n_maps: usize,
    ) -> (f64, f64) {
        let mut estimates = Vec::with_capacity(n_maps);
        for s in 0..n_maps {
            let map = make(s as u64);
            let z = map.apply(x).unwrap();
            estimates.push(z.row(0).dot(&z.row(1)));
        }
        let mean = estimates.iter().sum::<f64>() / n_maps as f64;
        let var = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n_maps - 1) as f64;
        (mean, (var / n_maps as f64).sqrt())
    }

    #[test]
    fn rff_kernel_estimate_unbiased() {
        let k = kern();
        let x = gaussian_inputs(2, 5, 11);
        let exact = k.eval(
            x.row(0).transpose().as_slice(),
            x.row(1).transpose().as_slice(),
        );
        for param in [Parametrization::Cos, Parametrization::SinCos] {
            let (mean, se) = mc_kernel_estimate(
                |s| FeatureMap::Rff(sample_rff(&k, 64, 5, 1000 + s, param).unwrap()),
                &x,
                500,
            );
            assert!(
                (mean - exact).abs() <= 4.0 * se,
                "{param:?}: mean {mean} vs exact {exact}, se {se}"
            );
        }
    }

    #[test]
    fn circulant_kernel_estimate_unbiased() {
        let k = kern();
        let x = gaussian_inputs(2, 8, 13);
        let exact = k.eval(
            x.row(0).transpose().as_slice(),
            x.row(1).transpose().as_slice(),
        );
        let (mean, se) = mc_kernel_estimate(
            |s| FeatureMap::CirculantRff(sample_circulant_rff(&k, 64, 8, 2000 + s).unwrap()),
            &x,
            500,
        );
        assert!(
            (mean - exact).abs() <= 4.0 * se,
            "mean {mean} vs exact {exact}, se {se}"
        );
    }

    #[test]
    fn circulant_effective_rows_are_cyclic_shifts() {
        let map = sample_circulant_rff(&kern(), 10, 4, 3).unwrap();
        let w = map.effective_projection();
        // Block 0 row 1: base vector shifted right by one, times signs[1].
        let base = &map.base_vectors[0];
        let expect = [base[3], base[0], base[1], base[2]];
        for (j, e) in expect.iter().enumerate() {
            assert_relative_eq!(w[(1, j)], map.signs[1] * e, epsilon = 1e-15);
        }
        // The last block is truncated to the leftover rows.
        assert_eq!(map.base_vectors.len(), 3);
        assert_eq!(w.nrows(), 10);

        // apply() agrees with a naive per-block, per-row dot product.
        let x = gaussian_inputs(5, 4, 4);
        let fast = map.apply(&x).unwrap();
        let scale = (2.0 / map.m as f64).sqrt();
        for i in 0..5 {
            for g in 0..map.m {
                let block = &map.base_vectors[g / 4];
                let shift = g % 4;
                let mut t = 0.0;
                for k in 0..4 {
                    t += block[(k + 4 - shift) % 4] * x[(i, k)];
                }
                let want = scale * (map.signs[g] * t + map.phases[g]).cos();
                assert_relative_eq!(fast[(i, g)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn circulant_d1_matches_plain_rff_shape() {
        // With d = 1 every block is a scalar, so the map has the same
        // structure as a plain RFF map: Gaussian row entries, uniform phases.
        let map = sample_circulant_rff(&kern(), 6, 1, 8).unwrap();
        assert_eq!(map.base_vectors.len(), 6);
        let w = map.effective_projection();
        assert_eq!(w.ncols(), 1);
        for (i, b) in map.base_vectors.iter().enumerate() {
            assert_relative_eq!(w[(i, 0)], map.signs[i] * b[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn nystrom_single_landmark_is_kernel_column() {
        let k = kern();
        let x = gaussian_inputs(6, 3, 21);
        let map = sample_nystrom(&x, &k, 1, 0, None).unwrap();
        assert_eq!(map.rank(), 1);
        let z = map.apply(&x).unwrap();
        for i in 0..6 {
            let direct = k.eval(
                x.row(i).transpose().as_slice(),
                map.landmarks.row(0).transpose().as_slice(),
            );
            assert_relative_eq!(z[(i, 0)].abs(), direct.abs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn nystrom_full_rank_reconstructs_kernel_matrix() {
        let k = kern();
        let x = gaussian_inputs(24, 4, 30);
        let map = sample_nystrom(&x, &k, 24, 0, None).unwrap();
        let z = map.apply(&x).unwrap();
        let approx = feature_gram(&z);
        let exact = kernel::gram_self(&k, &x).unwrap();
        let rel = (&approx - &exact).norm() / exact.norm();
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn nystrom_rejects_more_landmarks_than_rows() {
        let x = gaussian_inputs(4, 2, 0);
        assert!(sample_nystrom(&x, &kern(), 5, 0, None).is_err());
    }

    #[test]
    fn nystrom_landmark_features_reconstruct_retained_gram() {
        let k = kern();
        let x = gaussian_inputs(30, 3, 31);
        let map = sample_nystrom(&x, &k, 12, 1, None).unwrap();
        let z_land = map.apply(&map.landmarks).unwrap();
        let got = feature_gram(&z_land);
        let eig = map.retained_eig();
        let want = eig.reconstruct();
        assert!((got - want).norm() < 1e-8);
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let map = sample_rff(&kern(), 8, 3, 0, Parametrization::Cos).unwrap();
        let x = gaussian_inputs(2, 4, 0);
        assert!(map.apply(&x).is_err());
    }

    #[test]
    fn serialization_round_trips_every_map_type() {
        let k = kern();
        let x = gaussian_inputs(10, 3, 40);
        let maps = vec![
            FeatureMap::Rff(sample_rff(&k, 6, 3, 1, Parametrization::Cos).unwrap()),
            FeatureMap::Rff(sample_rff(&k, 6, 3, 2, Parametrization::SinCos).unwrap()),
            FeatureMap::CirculantRff(sample_circulant_rff(&k, 7, 3, 3).unwrap()),
            FeatureMap::Nystrom(sample_nystrom(&x, &k, 5, 4, None).unwrap()),
        ];
        for (i, map) in maps.iter().enumerate() {
            let blob = map.to_bytes(i as u64);
            let (restored, seed) = FeatureMap::from_bytes(&blob).unwrap();
            assert_eq!(seed, i as u64);
            let z1 = map.apply(&x).unwrap();
            let z2 = restored.apply(&x).unwrap();
            assert_eq!(z1, z2, "map {i} did not round-trip");
        }
    }

    #[test]
    fn feature_gram_matches_naive_product() {
        let z = gaussian_inputs(7, 9, 50);
        let fast = feature_gram(&z);
        let naive = &z * z.transpose();
        assert!((fast - naive).norm() < 1e-10);
    }
}
