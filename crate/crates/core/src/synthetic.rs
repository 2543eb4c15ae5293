//! Synthetic high-dimensional binary dataset with correlated feature blocks,
//! used as a stand-in for clinical cohorts that cannot be redistributed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DataError, TabularDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDesign {
    pub n_rows: usize,
    pub block_size: usize,
    pub n_blocks: usize,
    /// Share of each feature's variance carried by its block factor.
    pub within_block_correlation: f64,
    /// `(feature index, coefficient)` pairs of the logistic signal.
    pub signal: Vec<(usize, f64)>,
    /// Coefficient of the product of the first two signal features.
    pub interaction: f64,
    pub seed: u64,
}

impl Default for BlockDesign {
    fn default() -> Self {
        Self {
            n_rows: 3873,
            block_size: 5,
            n_blocks: 8,
            within_block_correlation: 0.6,
            // V5, V36, V34 positive; V12 negative; V21 weak.
            signal: vec![(4, 1.4), (35, 1.0), (33, 0.8), (11, -0.9), (20, 0.4)],
            interaction: 0.3,
            seed: 2021,
        }
    }
}

impl BlockDesign {
    pub fn n_features(&self) -> usize {
        self.block_size * self.n_blocks
    }
}

/// Draws the dataset. Features are named `V1..Vp`; the target is 0/1.
pub fn generate(design: &BlockDesign) -> Result<TabularDataset, DataError> {
    let p = design.n_features();
    let rho = design.within_block_correlation.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let mut x = DMatrix::<f64>::zeros(design.n_rows, p);
    let mut target = Vec::with_capacity(design.n_rows);
    for i in 0..design.n_rows {
        for b in 0..design.n_blocks {
            let f: f64 = StandardNormal.sample(&mut rng);
            for k in 0..design.block_size {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[(i, b * design.block_size + k)] = rho.sqrt() * f + (1.0 - rho).sqrt() * e;
            }
        }
        let mut logit: f64 = design.signal.iter().map(|&(j, c)| c * x[(i, j)]).sum();
        if design.signal.len() >= 2 {
            logit += design.interaction * x[(i, design.signal[0].0)] * x[(i, design.signal[1].0)];
        }
        let prob = 1.0 / (1.0 + (-logit).exp());
        target.push(u8::from(rng.random::<f64>() < prob));
    }
    let names = (1..=p).map(|j| format!("V{j}")).collect();
    TabularDataset::new(names, x, Some(target))
}
