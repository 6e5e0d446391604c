//! Experiment drivers behind the command-line verbs.
//!
//! Every driver is a pure function of a [`RunConfig`] and a [`Dataset`]:
//! test images are processed in parallel and the results are collected in
//! phantom order, so CSV output does not depend on thread scheduling.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::container::Container;
use crate::descatter::{descatter, descatter_with_model, DescatterOptions, DescatterTrace, Mode};
use crate::local_fit::{fit_global, fit_local, TrainingSet};
use crate::phantom::{
    generate_dataset, phantoms_from_json, phantoms_to_json, project_phantom, rasterize_central_slice, Geometry,
    ShellPhantom,
};
use crate::physics::{
    add_awgn, direct_poly, max_scatter_to_direct, simulate_scatter, AttenuationTable, ScatterOracleParams, Spectrum,
};
use crate::recon::{build_poly_lut, default_rho_max, made, reconstruct, ReconConfig};
use crate::scatter_models::{apply_model, ModelClass};
use crate::stats::{five_number, linear_fit, LinearFit};
use crate::{Error, Radiograph, Result};

pub const WITH_SCATTER: &str = "w/ scatter";
pub const WITHOUT_SCATTER: &str = "w/out scatter";
const PHANTOMS_FILE: &str = "phantoms.json";

/// Rayon pool capped by `DESCATTER_THREADS` when it is set to a positive integer.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("DESCATTER_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("DESCATTER_THREADS='{v}' is not an integer")))?;
        if n > 0 {
            builder = builder.num_threads(n);
        }
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

pub fn direct_name(i: usize) -> String {
    format!("direct_{i:04}")
}
pub fn scatter_name(i: usize) -> String {
    format!("scatter_{i:04}")
}
pub fn total_name(i: usize) -> String {
    format!("total_{i:04}")
}
pub fn truth_name(i: usize) -> String {
    format!("truth_{i:04}")
}

/// Radiograph pipeline for one phantom. Direct and scatter are rounded to
/// `f32` and the total is their `f32` sum, so stored totals equal stored
/// direct plus scatter exactly.
#[derive(Debug, Clone)]
pub struct Sample {
    pub direct: Radiograph,
    pub scatter: Radiograph,
    pub total: Radiograph,
    pub truth: Radiograph,
    pub peak_areal: f64,
}

impl Sample {
    pub fn simulate(
        phantom: &ShellPhantom,
        geom: &Geometry,
        spectrum: &Spectrum,
        atten: &AttenuationTable,
        oracle: &ScatterOracleParams,
    ) -> Result<Self> {
        let areal = project_phantom(phantom, geom)?;
        let direct = direct_poly(&areal, spectrum, atten)?.quantized_f32();
        let scatter = simulate_scatter(&direct, &areal, oracle)?.quantized_f32();
        let sum =
            ndarray::Zip::from(direct.data()).and(scatter.data()).map_collect(|&d, &s| (d as f32 + s as f32) as f64);
        Ok(Self {
            total: direct.with_data(sum)?,
            truth: rasterize_central_slice(phantom, geom)?,
            peak_areal: areal.data().iter().cloned().fold(0.0, f64::max),
            direct,
            scatter,
        })
    }
}

/// Simulated dataset: the first `train` samples are the training set, the rest are test images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub geometry: Geometry,
    pub phantoms: Vec<ShellPhantom>,
    pub samples: Vec<Sample>,
    pub train: usize,
}

impl Dataset {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let geometry = cfg.geometry()?;
        let phantoms = generate_dataset(cfg.seeds.dataset, cfg.dataset_size(), &cfg.palette, &geometry)?;
        let (spectrum, atten) = cfg.spectrum.load()?;
        let oracle = cfg.oracle_params()?;
        let samples = phantoms
            .par_iter()
            .map(|p| Sample::simulate(p, &geometry, &spectrum, &atten, &oracle))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { geometry, phantoms, samples, train: cfg.split.train })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.train..self.samples.len()
    }

    pub fn training_set(&self) -> Result<TrainingSet> {
        TrainingSet::new(self.samples[..self.train].iter().map(|s| (s.direct.clone(), s.scatter.clone())).collect())
    }

    pub fn max_areal(&self) -> f64 {
        self.samples.iter().map(|s| s.peak_areal).fold(0.0, f64::max)
    }

    /// Writes the container and `phantoms.json` into `dir`.
    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<Container> {
        let metadata = serde_json::json!({
            "config_hash": config_hash,
            "train": self.train,
            "test": self.len() - self.train,
            "max_areal": self.max_areal(),
            "geometry": self.geometry,
        });
        let g = &self.geometry;
        let mut c = Container::create(dir, g.grid_size, g.pixel_pitch, g.roi_radius, metadata)?;
        for (i, s) in self.samples.iter().enumerate() {
            c.put_radiograph(&direct_name(i), &s.direct)?;
            c.put_radiograph(&scatter_name(i), &s.scatter)?;
            c.put_radiograph(&total_name(i), &s.total)?;
            c.put_radiograph(&truth_name(i), &s.truth)?;
        }
        c.commit()?;
        fs::write(dir.join(PHANTOMS_FILE), phantoms_to_json(&self.phantoms)?)?;
        Ok(c)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let c = Container::open(dir)?;
        let meta = &c.manifest().metadata;
        let bad = |what: &str| Error::InvalidInput(format!("{}: metadata lacks {what}", dir.display()));
        let geometry: Geometry = serde_json::from_value(meta.get("geometry").ok_or_else(|| bad("geometry"))?.clone())?;
        let train = meta.get("train").and_then(|v| v.as_u64()).ok_or_else(|| bad("train"))? as usize;
        let max_areal = meta.get("max_areal").and_then(|v| v.as_f64()).ok_or_else(|| bad("max_areal"))?;
        let phantoms = phantoms_from_json(&fs::read_to_string(dir.join(PHANTOMS_FILE))?)?;
        let samples = (0..phantoms.len())
            .map(|i| {
                Ok(Sample {
                    direct: c.radiograph(&direct_name(i))?,
                    scatter: c.radiograph(&scatter_name(i))?,
                    total: c.radiograph(&total_name(i))?,
                    truth: c.radiograph(&truth_name(i))?,
                    peak_areal: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Self { geometry, phantoms, samples, train };
        if let Some(first) = data.samples.first_mut() {
            first.peak_areal = max_areal;
        }
        Ok(data)
    }
}

/// Reconstruction settings for `cfg`, with a lookup table reaching `max_areal`.
pub fn recon_config(cfg: &RunConfig, max_areal: f64) -> Result<ReconConfig> {
    match cfg.spectrum.mono_xi() {
        Some(xi) => ReconConfig::mono(xi),
        None => {
            let (spectrum, atten) = cfg.spectrum.load()?;
            let lut = build_poly_lut(&spectrum, &atten, default_rho_max(max_areal), cfg.lut_size)?;
            Ok(ReconConfig::Poly { lut })
        }
    }
}

/// Dataset, training set and reconstruction settings shared by all drivers.
pub struct Experiment {
    pub config: RunConfig,
    pub config_hash: String,
    pub data: Dataset,
    pub training: TrainingSet,
    pub recon: ReconConfig,
}

impl Experiment {
    pub fn new(config: RunConfig, data: Dataset) -> Result<Self> {
        config.validate()?;
        if data.train != config.split.train || data.len() != config.dataset_size() {
            return Err(Error::Config("dataset split does not match the configuration".into()));
        }
        let config_hash = config.hash()?;
        let training = data.training_set()?;
        let recon = recon_config(&config, data.max_areal())?;
        Ok(Self { config, config_hash, data, training, recon })
    }

    pub fn generate(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let data = Dataset::generate(&config)?;
        Self::new(config, data)
    }

    /// MADE of the reconstruction of direct estimate `d` for sample `i`.
    pub fn made_of(&self, d: &Radiograph, i: usize) -> Result<f64> {
        made(&reconstruct(d, &self.recon)?.slice, &self.data.samples[i].truth)
    }

    fn options(&self, mode: Mode) -> DescatterOptions {
        DescatterOptions { mode, ..self.config.descatter_options() }
    }

    /// Descattering traces of every test image for one class and mode; global
    /// models are fitted once and shared.
    pub fn descatter_tests(&self, class: ModelClass, mode: Mode) -> Result<Vec<(usize, DescatterTrace)>> {
        self.descatter_totals(class, mode, |i| Ok(self.data.samples[i].total.clone()))
    }

    fn descatter_totals<F>(&self, class: ModelClass, mode: Mode, total_of: F) -> Result<Vec<(usize, DescatterTrace)>>
    where
        F: Fn(usize) -> Result<Radiograph> + Sync,
    {
        let opts = self.options(mode);
        let global = match mode {
            Mode::Global => Some(fit_global(&self.training, class, &opts.fit)?),
            Mode::Local { .. } => None,
        };
        self.data
            .test_indices()
            .into_par_iter()
            .map(|i| {
                let t = total_of(i)?;
                let trace = match &global {
                    Some(model) => descatter_with_model(&t, model, &self.training, &opts)?,
                    None => descatter(&t, &self.training, class, &opts)?,
                };
                Ok((i, trace))
            })
            .collect()
    }

    fn reference_rows(&self) -> Result<Vec<MadeRow>> {
        let mut rows = Vec::new();
        for (label, pick) in [(WITH_SCATTER, true), (WITHOUT_SCATTER, false)] {
            let values: Vec<f64> = self
                .data
                .test_indices()
                .into_par_iter()
                .map(|i| {
                    let s = &self.data.samples[i];
                    self.made_of(if pick { &s.total } else { &s.direct }, i)
                })
                .collect::<Result<_>>()?;
            rows.extend(self.data.test_indices().zip(values).map(|(i, v)| MadeRow::reference(i, label, v)));
        }
        Ok(rows)
    }

    fn descatter_rows(&self, class: ModelClass, mode: Mode) -> Result<(Vec<MadeRow>, Vec<TraceRow>)> {
        let traces = self.descatter_tests(class, mode)?;
        let made_values: Vec<f64> =
            traces.par_iter().map(|(i, t)| self.made_of(&t.final_direct, *i)).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        let mut trace_rows = Vec::new();
        for ((i, trace), value) in traces.iter().zip(made_values) {
            rows.push(MadeRow::new(*i, class.name(), mode, value));
            trace_rows.extend(trace.iterates.iter().enumerate().map(|(k, &nmse)| TraceRow {
                phantom_id: *i,
                method: class.name().to_string(),
                mode: mode_name(mode).to_string(),
                g: mode_g(mode),
                iteration: k + 1,
                nmse,
            }));
        }
        Ok((rows, trace_rows))
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Local { .. } => "local",
        Mode::Global => "global",
    }
}

fn mode_g(mode: Mode) -> Option<usize> {
    match mode {
        Mode::Local { g } => Some(g),
        Mode::Global => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MadeRow {
    pub phantom_id: usize,
    pub method: String,
    pub mode: String,
    #[serde(rename = "G")]
    pub g: Option<usize>,
    pub made: f64,
}

impl MadeRow {
    fn new(phantom_id: usize, method: &str, mode: Mode, made: f64) -> Self {
        Self { phantom_id, method: method.into(), mode: mode_name(mode).into(), g: mode_g(mode), made }
    }

    fn reference(phantom_id: usize, label: &str, made: f64) -> Self {
        Self { phantom_id, method: label.into(), mode: "reference".into(), g: None, made }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub phantom_id: usize,
    pub method: String,
    pub mode: String,
    #[serde(rename = "G")]
    pub g: Option<usize>,
    pub iteration: usize,
    pub nmse: f64,
}

/// Box-plot summary of MADE over test images for one (method, mode, G).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub mode: String,
    #[serde(rename = "G")]
    pub g: Option<usize>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Groups rows by (method, mode, G) in first-appearance order.
pub fn summarize(rows: &[MadeRow]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(String, String, Option<usize>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.mode.clone(), r.g);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, mode, g)| {
            let values: Vec<f64> =
                rows.iter().filter(|r| r.method == method && r.mode == mode && r.g == g).map(|r| r.made).collect();
            let f = five_number(&values)?;
            Ok(SummaryRow { method, mode, g, min: f.min, q1: f.q1, median: f.median, q3: f.q3, max: f.max })
        })
        .collect()
}

pub fn find_summary<'a>(rows: &'a [SummaryRow], method: &str, mode: &str, g: Option<usize>) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.method == method && r.mode == mode && r.g == g)
}

/// Writes `# config_hash=<hash>`, a header row and one row per record.
pub fn write_csv<T: Serialize>(path: &Path, config_hash: &str, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut buf = format!("# config_hash={config_hash}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<MadeRow>,
    pub summary: Vec<SummaryRow>,
    pub traces: Vec<TraceRow>,
}

/// Descatters every test image with each class in local (configured G) and
/// global mode, plus the two reference reconstructions.
pub fn run_eval(exp: &Experiment, classes: &[ModelClass]) -> Result<EvalReport> {
    let local = match exp.config.mode {
        Mode::Local { g } => Mode::Local { g },
        Mode::Global => Mode::Local { g: 3.min(exp.data.train) },
    };
    let mut rows = exp.reference_rows()?;
    let mut traces = Vec::new();
    for &class in classes {
        for mode in [local, Mode::Global] {
            let (r, t) = exp.descatter_rows(class, mode)?;
            rows.extend(r);
            traces.extend(t);
        }
    }
    let summary = summarize(&rows)?;
    Ok(EvalReport { rows, summary, traces })
}

/// Local convolutional descattering for each `G`, plus the global reference.
pub fn run_sweep_neighbors(exp: &Experiment, counts: &[usize]) -> Result<EvalReport> {
    if let Some(&g) = counts.iter().find(|&&g| g == 0 || g > exp.data.train) {
        return Err(Error::Config(format!("neighbour count {g} is outside 1..={}", exp.data.train)));
    }
    let class = ModelClass::Convolutional;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for mode in counts.iter().map(|&g| Mode::Local { g }).chain([Mode::Global]) {
        let (r, t) = exp.descatter_rows(class, mode)?;
        rows.extend(r);
        traces.extend(t);
    }
    let summary = summarize(&rows)?;
    Ok(EvalReport { rows, summary, traces })
}

/// Each class fitted to each test pair alone, then `t − ŝ(d)` reconstructed.
pub fn run_oracle_fit(exp: &Experiment, classes: &[ModelClass]) -> Result<EvalReport> {
    let mut rows = exp.reference_rows()?;
    let fit = &exp.config.fit;
    for &class in classes {
        let values: Vec<f64> = exp
            .data
            .test_indices()
            .into_par_iter()
            .map(|i| {
                let s = &exp.data.samples[i];
                let ts = TrainingSet::new(vec![(s.direct.clone(), s.scatter.clone())])?;
                let model = fit_global(&ts, class, fit)?;
                let s_hat = apply_model(&model, &s.direct, ts.norms())?;
                exp.made_of(&subtract_clamped(&s.total, &s_hat)?, i)
            })
            .collect::<Result<_>>()?;
        rows.extend(exp.data.test_indices().zip(values).map(|(i, v)| MadeRow {
            phantom_id: i,
            method: class.name().into(),
            mode: "oracle".into(),
            g: None,
            made: v,
        }));
    }
    let summary = summarize(&rows)?;
    Ok(EvalReport { rows, summary, traces: Vec::new() })
}

fn subtract_clamped(t: &Radiograph, s: &Radiograph) -> Result<Radiograph> {
    t.with_data(ndarray::Zip::from(t.data()).and(s.data()).map_collect(|&a, &b| (a - b).max(0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationRow {
    pub method: String,
    pub mode: String,
    #[serde(rename = "G")]
    pub g: Option<usize>,
    pub made_estimation: f64,
    pub made_descattering: f64,
    pub relative_difference: f64,
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub rows: Vec<EstimationRow>,
    /// Median over rows of `|estimation − descattering| / descattering`.
    pub median_relative_difference: f64,
}

/// Scatter predicted from the true direct image (`t − A(d)`) versus
/// fixed-point descattering, per class and mode.
pub fn run_scatter_estimation(exp: &Experiment, classes: &[ModelClass]) -> Result<EstimationReport> {
    let local = match exp.config.mode {
        Mode::Global => Mode::Local { g: 3.min(exp.data.train) },
        m => m,
    };
    let fit = &exp.config.fit;
    let mut rows = Vec::new();
    for &class in classes {
        for mode in [local, Mode::Global] {
            let global = match mode {
                Mode::Global => Some(fit_global(&exp.training, class, fit)?),
                Mode::Local { .. } => None,
            };
            let estimation: Vec<f64> = exp
                .data
                .test_indices()
                .into_par_iter()
                .map(|i| {
                    let s = &exp.data.samples[i];
                    let model = match (&global, mode) {
                        (Some(m), _) => m.clone(),
                        (None, Mode::Local { g }) => {
                            fit_local(&s.direct, &exp.training, g, class, fit, exp.config.nn_mask)?.0
                        }
                        (None, Mode::Global) => unreachable!("global model is fitted above"),
                    };
                    let s_hat = apply_model(&model, &s.direct, exp.training.norms())?;
                    exp.made_of(&subtract_clamped(&s.total, &s_hat)?, i)
                })
                .collect::<Result<_>>()?;
            let (descattered, _) = exp.descatter_rows(class, mode)?;
            let descattered: Vec<f64> = descattered.iter().map(|r| r.made).collect();
            let e = five_number(&estimation)?.median;
            let d = five_number(&descattered)?.median;
            rows.push(EstimationRow {
                method: class.name().into(),
                mode: mode_name(mode).into(),
                g: mode_g(mode),
                made_estimation: e,
                made_descattering: d,
                relative_difference: if d > 0.0 { (e - d).abs() / d } else { 0.0 },
            });
        }
    }
    let diffs: Vec<f64> = rows.iter().map(|r| r.relative_difference).collect();
    Ok(EstimationReport { median_relative_difference: five_number(&diffs)?.median, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub rmse: f64,
    pub neighbor_hash: String,
    pub neighbors_unchanged: bool,
}

#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
    /// RMSE against σ over the nonzero noise levels.
    pub fit: LinearFit,
}

fn neighbor_hash(traces: &[(usize, DescatterTrace)]) -> String {
    let mut h = Sha256::new();
    for (i, t) in traces {
        h.update(format!("{i}:{:?};", t.neighbor_sets).as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Adds white Gaussian noise of each σ to the test totals, descatters with the
/// configured class and mode, and reports the ROI RMSE of the descattered
/// direct images against the true ones. The noise pattern of an image is the
/// same at every σ (only its scale changes).
pub fn run_noise(exp: &Experiment, sigmas: &[f64]) -> Result<NoiseReport> {
    let class = exp.config.model_class;
    let mode = exp.config.mode;
    let run = |sigma: f64| -> Result<Vec<(usize, DescatterTrace)>> {
        exp.descatter_totals(class, mode, |i| {
            add_awgn(&exp.data.samples[i].total, sigma, exp.config.seeds.noise.wrapping_add(i as u64))
        })
    };
    let rmse_of = |traces: &[(usize, DescatterTrace)]| -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, t) in traces {
            let truth = &exp.data.samples[*i].direct;
            for ((a, b), &inside) in t.final_direct.data().iter().zip(truth.data()).zip(truth.roi_mask()) {
                if inside {
                    sum += (a - b).powi(2);
                    count += 1;
                }
            }
        }
        (sum / count as f64).sqrt()
    };
    let baseline = run(0.0)?;
    let base_hash = neighbor_hash(&baseline);
    let mut rows = vec![NoiseRow {
        sigma: 0.0,
        rmse: rmse_of(&baseline),
        neighbor_hash: base_hash.clone(),
        neighbors_unchanged: true,
    }];
    for &sigma in sigmas.iter().filter(|&&s| s > 0.0) {
        let traces = run(sigma)?;
        let hash = neighbor_hash(&traces);
        rows.push(NoiseRow {
            sigma,
            rmse: rmse_of(&traces),
            neighbors_unchanged: hash == base_hash,
            neighbor_hash: hash,
        });
    }
    let noisy: Vec<&NoiseRow> = rows.iter().filter(|r| r.sigma > 0.0).collect();
    let fit = linear_fit(
        &noisy.iter().map(|r| r.sigma).collect::<Vec<_>>(),
        &noisy.iter().map(|r| r.rmse).collect::<Vec<_>>(),
    )?;
    Ok(NoiseReport { rows, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub phantom_id: usize,
    pub scale: f64,
    pub training: String,
    pub max_scatter_to_direct: f64,
    pub made_raw: f64,
    pub made_descattered: f64,
}

/// Scales the densities of the first test phantom, regenerates its
/// radiographs, and descatters them with the dataset training set and with a
/// training set of density-offset copies of the scaled phantom.
pub fn run_scatter_scale(exp: &Experiment, scales: &[f64]) -> Result<Vec<ScaleRow>> {
    let id = exp.data.train;
    let base = &exp.data.phantoms[id];
    let cfg = &exp.config;
    let (spectrum, atten) = cfg.spectrum.load()?;
    let oracle = cfg.oracle_params()?;
    let geom = &exp.data.geometry;
    let class = cfg.model_class;
    let mut rows = Vec::new();
    for &scale in scales {
        let phantom = base.scaled(scale)?;
        let sample = Sample::simulate(&phantom, geom, &spectrum, &atten, &oracle)?;
        let recon = recon_config(cfg, exp.data.max_areal().max(sample.peak_areal))?;
        let made_of = |d: &Radiograph| made(&reconstruct(d, &recon)?.slice, &sample.truth);
        let ratio = max_scatter_to_direct(&sample.scatter, &sample.direct)?;
        let raw = made_of(&sample.total)?;

        let opts = exp.options(cfg.mode);
        let trace = match cfg.mode {
            Mode::Global => descatter_with_model(
                &sample.total,
                &fit_global(&exp.training, class, &opts.fit)?,
                &exp.training,
                &opts,
            )?,
            Mode::Local { .. } => descatter(&sample.total, &exp.training, class, &opts)?,
        };
        rows.push(ScaleRow {
            phantom_id: id,
            scale,
            training: "dataset".into(),
            max_scatter_to_direct: ratio,
            made_raw: raw,
            made_descattered: made_of(&trace.final_direct)?,
        });

        let perturbed: Vec<(Radiograph, Radiograph)> = cfg
            .density_offsets
            .par_iter()
            .map(|&delta| {
                let s = Sample::simulate(&phantom.offset(delta)?, geom, &spectrum, &atten, &oracle)?;
                Ok((s.direct, s.scatter))
            })
            .collect::<Result<_>>()?;
        let local_ts = TrainingSet::new(perturbed)?;
        let local_mode = match cfg.mode {
            Mode::Local { g } => Mode::Local { g: g.min(local_ts.len()) },
            Mode::Global => Mode::Global,
        };
        let opts = DescatterOptions { mode: local_mode, ..opts };
        let trace = descatter(&sample.total, &local_ts, class, &opts)?;
        rows.push(ScaleRow {
            phantom_id: id,
            scale,
            training: "perturbed".into(),
            max_scatter_to_direct: ratio,
            made_raw: raw,
            made_descattered: made_of(&trace.final_direct)?,
        });
    }
    Ok(rows)
}
