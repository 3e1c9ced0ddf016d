//! Shared fixtures for the pipeline benchmarks.

use lprff_core::data::synthetic::gaussian_inputs;
use lprff_core::features::{sample_circulant_rff, sample_nystrom, sample_rff, Parametrization};
use lprff_core::features::FeatureMap;
use lprff_core::kernel::GaussianKernel;
use lprff_core::DenseMatrix;

pub struct Fixture {
    pub kernel: GaussianKernel,
    pub batch: DenseMatrix,
    pub eval: DenseMatrix,
    pub rff: FeatureMap,
    pub circulant: FeatureMap,
    pub nystrom: FeatureMap,
}

/// A mini-batch-sized workload: 250 points in 20 dimensions, 1000 features.
pub fn fixture() -> Fixture {
    let d = 20;
    let m = 1000;
    let kernel = GaussianKernel::new(1.0 / (2.0 * d as f64)).unwrap();
    let train = gaussian_inputs(2000, d, 1);
    Fixture {
        kernel,
        batch: gaussian_inputs(250, d, 2),
        eval: gaussian_inputs(256, d, 3),
        rff: FeatureMap::Rff(sample_rff(&kernel, m, d, 4, Parametrization::Cos).unwrap()),
        circulant: FeatureMap::CirculantRff(sample_circulant_rff(&kernel, m, d, 5).unwrap()),
        nystrom: FeatureMap::Nystrom(sample_nystrom(&train, &kernel, m, 6, None).unwrap()),
    }
}
