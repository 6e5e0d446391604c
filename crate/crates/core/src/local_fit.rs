//! Nearest-neighbour selection in radiograph space and local/global fitting.

use crate::container::Container;
use crate::scatter_models::{
    fit_model, CoarseGrid, CoarsePair, FitData, FitOptions, ModelClass, NormalizationConstants, ScatterModel,
};
use crate::{Error, Radiograph, Result};

/// Immutable set of `(direct, scatter)` pairs with their normalisation
/// constants and coarse-grid representations.
#[derive(Debug)]
pub struct TrainingSet {
    pairs: Vec<(Radiograph, Radiograph)>,
    norms: NormalizationConstants,
    grid: CoarseGrid,
    coarse: Vec<CoarsePair>,
    /// `(masked, unmasked)` squared norms of each direct.
    direct_sq_norms: Vec<(f64, f64)>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<(Radiograph, Radiograph)>) -> Result<Self> {
        let norms = NormalizationConstants::from_pairs(&pairs)?;
        Self::with_norms(pairs, norms)
    }

    pub fn with_norms(pairs: Vec<(Radiograph, Radiograph)>, norms: NormalizationConstants) -> Result<Self> {
        let first = &pairs.first().ok_or(Error::EmptyTrainingSet)?.0;
        for (d, s) in &pairs {
            first.check_same_grid(d)?;
            first.check_same_grid(s)?;
        }
        let grid = CoarseGrid::new(first)?;
        let coarse = pairs.iter().map(|(d, s)| CoarsePair::new(d, s, &norms)).collect::<Result<_>>()?;
        let direct_sq_norms = pairs.iter().map(|(d, _)| (d.squared_norm(true), d.squared_norm(false))).collect();
        Ok(Self { pairs, norms, grid, coarse, direct_sq_norms })
    }

    /// New set with `extra` appended; normalisation is recomputed over all pairs.
    pub fn append(&self, extra: Vec<(Radiograph, Radiograph)>) -> Result<Self> {
        let mut pairs = self.pairs.clone();
        pairs.extend(extra);
        Self::new(pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Radiograph, Radiograph)] {
        &self.pairs
    }

    pub fn norms(&self) -> &NormalizationConstants {
        &self.norms
    }

    pub fn grid(&self) -> &CoarseGrid {
        &self.grid
    }

    pub fn coarse_pairs(&self) -> &[CoarsePair] {
        &self.coarse
    }

    /// Coarse fitting data for the pairs at `indices`, in the given order.
    pub fn fit_data(&self, indices: &[usize]) -> Result<FitData<'_>> {
        let pairs = indices
            .iter()
            .map(|&i| self.coarse.get(i).ok_or_else(|| Error::InvalidInput(format!("training index {i} out of range"))))
            .collect::<Result<_>>()?;
        FitData::new(&self.grid, pairs)
    }

    pub fn write_to(&self, container: &mut Container) -> Result<()> {
        for (i, (d, s)) in self.pairs.iter().enumerate() {
            container.put_radiograph(&direct_name(i), d)?;
            container.put_radiograph(&scatter_name(i), s)?;
        }
        Ok(())
    }

    /// Reads `direct_NNNN` / `scatter_NNNN` entries in index order.
    pub fn read_from(container: &Container) -> Result<Self> {
        let mut pairs = Vec::new();
        while container.contains(&direct_name(pairs.len())) {
            let i = pairs.len();
            pairs.push((container.radiograph(&direct_name(i))?, container.radiograph(&scatter_name(i))?));
        }
        Self::new(pairs)
    }

    /// Adds `extra` pairs to a stored training set as a new manifest version.
    pub fn append_to_container(container: &mut Container, extra: &[(Radiograph, Radiograph)]) -> Result<u64> {
        let mut next = 0;
        while container.contains(&direct_name(next)) {
            next += 1;
        }
        for (k, (d, s)) in extra.iter().enumerate() {
            d.check_same_grid(s)?;
            container.put_radiograph(&direct_name(next + k), d)?;
            container.put_radiograph(&scatter_name(next + k), s)?;
        }
        container.commit()
    }
}

pub fn direct_name(i: usize) -> String {
    format!("direct_{i:04}")
}

pub fn scatter_name(i: usize) -> String {
    format!("scatter_{i:04}")
}

/// The `g` training pairs closest to `d` in squared Frobenius distance with
/// their distances, nearest first; ties go to the lower index.
pub fn nearest_with_distances(d: &Radiograph, ts: &TrainingSet, g: usize, masked: bool) -> Result<Vec<(usize, f64)>> {
    if g == 0 {
        return Err(Error::InvalidInput("number of neighbours must be >= 1".into()));
    }
    if g > ts.len() {
        return Err(Error::TooManyNeighbors { requested: g, available: ts.len() });
    }
    ts.pairs[0].0.check_same_grid(d)?;
    let query_norm = d.squared_norm(masked).sqrt();
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(g + 1);
    for (t, ((direct, _), norms)) in ts.pairs.iter().zip(&ts.direct_sq_norms).enumerate() {
        let norm = if masked { norms.0 } else { norms.1 }.sqrt();
        if best.len() == g {
            let worst = best[g - 1].1;
            // reverse triangle inequality; a small margin absorbs rounding
            let bound = (query_norm - norm).powi(2);
            if bound > worst * (1.0 + 1e-9) + 1e-300 {
                continue;
            }
        }
        let dist = d.squared_distance(direct, masked);
        let pos = best.partition_point(|&(_, b)| b <= dist);
        if pos < g {
            best.insert(pos, (t, dist));
            best.truncate(g);
        }
    }
    Ok(best)
}

pub fn nearest_neighbors(d: &Radiograph, ts: &TrainingSet, g: usize, masked: bool) -> Result<Vec<usize>> {
    Ok(nearest_with_distances(d, ts, g, masked)?.into_iter().map(|(i, _)| i).collect())
}

/// Fits on the pairs at `indices`, taken in ascending index order so that a
/// neighbour set determines the model regardless of distance order.
pub fn fit_subset(ts: &TrainingSet, indices: &[usize], class: ModelClass, opts: &FitOptions) -> Result<ScatterModel> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    fit_model(class, &ts.fit_data(&sorted)?, opts)
}

/// Model fitted on the `g` nearest neighbours of `d`, with those neighbours.
pub fn fit_local(
    d: &Radiograph,
    ts: &TrainingSet,
    g: usize,
    class: ModelClass,
    opts: &FitOptions,
    nn_mask: bool,
) -> Result<(ScatterModel, Vec<usize>)> {
    let neighbors = nearest_neighbors(d, ts, g, nn_mask)?;
    Ok((fit_subset(ts, &neighbors, class, opts)?, neighbors))
}

pub fn fit_global(ts: &TrainingSet, class: ModelClass, opts: &FitOptions) -> Result<ScatterModel> {
    let all: Vec<usize> = (0..ts.len()).collect();
    fit_subset(ts, &all, class, opts)
}
