//! Fixed-point descattering `d ← max(t − A_d(d), 0)`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::local_fit::{fit_global, fit_subset, nearest_neighbors, TrainingSet};
use crate::scatter_models::{apply_model_on, FitOptions, ModelClass, NormalizationConstants, ScatterModel};
use crate::{Error, Radiograph, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    Local { g: usize },
    Global,
}

/// Which radiograph local neighbour search is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborQuery {
    /// The current direct estimate.
    #[default]
    Estimate,
    /// The measured total transmission, fixed for the whole run.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescatterOptions {
    pub iterations: usize,
    pub mode: Mode,
    pub query: NeighborQuery,
    pub nn_mask: bool,
    /// Stop once NMSE falls below this value.
    pub early_stop: Option<f64>,
    pub fit: FitOptions,
}

impl Default for DescatterOptions {
    fn default() -> Self {
        Self {
            iterations: 10,
            mode: Mode::Local { g: 3 },
            query: NeighborQuery::Estimate,
            nn_mask: true,
            early_stop: None,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescatterTrace {
    /// NMSE of iterate `i` against its own scatter estimate, one per iteration.
    pub iterates: Vec<f64>,
    pub final_direct: Radiograph,
    /// Scatter estimate for the final direct.
    pub final_scatter: Radiograph,
    /// Number of model fits performed (cache hits excluded).
    pub refit_count: usize,
    /// Neighbour set used at each model evaluation (empty in global mode).
    pub neighbor_sets: Vec<Vec<usize>>,
}

/// `‖d + ŝ − t‖² / ‖t‖²` over the ROI.
pub fn nmse(d: &Radiograph, s_hat: &Radiograph, t: &Radiograph) -> Result<f64> {
    d.check_same_grid(s_hat)?;
    d.check_same_grid(t)?;
    let mut num = 0.0;
    for ((a, b), (c, &inside)) in d.data().iter().zip(s_hat.data()).zip(t.data().iter().zip(t.roi_mask())) {
        if inside {
            num += (a + b - c).powi(2);
        }
    }
    let den = t.squared_norm(true);
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let v = num / den;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("descattering NMSE is {v}")));
    }
    Ok(v)
}

/// Runs the fixed-point loop, fitting models from `ts` as `opts.mode` requires.
pub fn descatter(
    t: &Radiograph,
    ts: &TrainingSet,
    class: ModelClass,
    opts: &DescatterOptions,
) -> Result<DescatterTrace> {
    match opts.mode {
        Mode::Global => {
            let model = fit_global(ts, class, &opts.fit)?;
            let mut trace = descatter_with_model(t, &model, ts, opts)?;
            trace.refit_count = 1;
            Ok(trace)
        }
        Mode::Local { g } => {
            let mut cache: HashMap<Vec<usize>, Arc<ScatterModel>> = HashMap::new();
            let mut refits = 0;
            let mut sets = Vec::new();
            let mut trace = run(t, ts, opts, |d| {
                let key_image = match opts.query {
                    NeighborQuery::Estimate => d,
                    NeighborQuery::Total => t,
                };
                let mut key = nearest_neighbors(key_image, ts, g, opts.nn_mask)?;
                key.sort_unstable();
                sets.push(key.clone());
                if let Some(m) = cache.get(&key) {
                    return Ok(Arc::clone(m));
                }
                let model = Arc::new(fit_subset(ts, &key, class, &opts.fit)?);
                refits += 1;
                cache.insert(key, Arc::clone(&model));
                Ok(model)
            })?;
            trace.refit_count = refits;
            trace.neighbor_sets = sets;
            Ok(trace)
        }
    }
}

/// Runs the loop with one fixed model (global mode, or an externally fitted model).
pub fn descatter_with_model(
    t: &Radiograph,
    model: &ScatterModel,
    ts: &TrainingSet,
    opts: &DescatterOptions,
) -> Result<DescatterTrace> {
    let model = Arc::new(model.clone());
    run(t, ts, opts, |_| Ok(Arc::clone(&model)))
}

fn run<F>(t: &Radiograph, ts: &TrainingSet, opts: &DescatterOptions, mut model_for: F) -> Result<DescatterTrace>
where
    F: FnMut(&Radiograph) -> Result<Arc<ScatterModel>>,
{
    if opts.iterations == 0 {
        return Err(Error::InvalidInput("descattering needs at least one iteration".into()));
    }
    ts.pairs()[0].0.check_same_grid(t)?;
    let norms: &NormalizationConstants = ts.norms();
    let estimate = |d: &Radiograph, model: &ScatterModel| apply_model_on(model, ts.grid(), d, norms);

    let mut d = t.clone();
    let mut s = estimate(&d, model_for(&d)?.as_ref())?;
    let mut iterates = Vec::with_capacity(opts.iterations);
    for _ in 0..opts.iterations {
        let data = ndarray::Zip::from(t.data()).and(s.data()).map_collect(|&a, &b| (a - b).max(0.0));
        d = t.with_data(data)?;
        s = estimate(&d, model_for(&d)?.as_ref())?;
        let e = nmse(&d, &s, t)?;
        iterates.push(e);
        if opts.early_stop.is_some_and(|tol| e < tol) {
            break;
        }
    }
    Ok(DescatterTrace { iterates, final_direct: d, final_scatter: s, refit_count: 0, neighbor_sets: Vec::new() })
}

/// Writes `iteration,nmse` rows, iterations numbered from 1.
pub fn write_trace_csv(trace: &DescatterTrace, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["iteration", "nmse"])?;
    for (i, e) in trace.iterates.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{e:.9e}")])?;
    }
    w.flush()?;
    Ok(())
}
