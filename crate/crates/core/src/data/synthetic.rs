//! Seeded in-memory datasets for smoke runs: each class gets a random mean
//! vector in feature space and every frame is that mean plus unit noise.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, Item, Result, Source, Split, Target, Task};
use crate::dsp::FeatureMatrix;

#[derive(Clone, Debug)]
pub struct GaussianMeans {
    pub samples: usize,
    pub classes: usize,
    pub frames: usize,
    pub dims: usize,
    /// Standard deviation of the class means; the per-frame noise is 1.
    pub separation: f64,
    pub seed: u64,
}

impl GaussianMeans {
    /// Builds the dataset with every sample in the train split. Samples are
    /// assigned to classes round-robin so the classes stay balanced.
    pub fn build(&self) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let spread = Normal::new(0.0, self.separation)
            .map_err(|e| super::DataError::Invalid(format!("separation: {e}")))?;
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| (0..self.dims).map(|_| spread.sample(&mut rng)).collect())
            .collect();
        let items = (0..self.samples)
            .map(|i| {
                let class = i % self.classes;
                let data = (0..self.frames * self.dims)
                    .map(|j| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        (means[class][j % self.dims] + noise) as f32
                    })
                    .collect();
                Ok(Item {
                    clip_id: format!("synthetic-{i:04}"),
                    split: Split::Train,
                    target: Target::Class(class),
                    source: Source::Memory(Arc::new(FeatureMatrix::new(self.frames, self.dims, data)?)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let names = (0..self.classes).map(|c| format!("class{c}")).collect();
        Dataset::new(Task::Multiclass, names, items)
    }
}
