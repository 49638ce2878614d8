//! Experiment pipeline: reduced-scale evaluation by degrading both inputs,
//! fusing with each requested method, and scoring against the original
//! bands, with structured reports a run can be reproduced from.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fuse_glp_mtf, fuse_naive};
use crate::error::{Error, Result};
use crate::gradnet::{load_weights, predict_prior, weight_paths, NetworkWeights};
use crate::metrics::{mean_report, quality_report, QualityReport};
use crate::operators::{apply_h, upsample_interp, DegradationSpec};
use crate::raster::{read_image_stem, write_image_stem, MultiBandImage};
use crate::solver::{admm_fuse, cg_solve, FusionParams, SolveReport};

/// Degrades a panchromatic/multispectral pair with the same model, producing
/// the reduced-scale inputs; the caller keeps the original bands as the
/// scoring reference.
pub fn wald_degrade(
    pan: &MultiBandImage,
    ms: &MultiBandImage,
    spec: &DegradationSpec,
) -> Result<(MultiBandImage, MultiBandImage)> {
    if pan.bands() != 1 {
        return Err(Error::InvalidInput(format!(
            "panchromatic input must have one band, got {}",
            pan.bands()
        )));
    }
    let r = spec.ratio;
    if r == 0 || pan.width() != r * ms.width() || pan.height() != r * ms.height() {
        return Err(Error::ShapeMismatch(format!(
            "panchromatic {}x{} does not cover {}x{} bands at ratio {r}",
            pan.width(),
            pan.height(),
            ms.width(),
            ms.height()
        )));
    }
    Ok((apply_h(pan, spec)?, apply_h(ms, spec)?))
}

/// Largest centered crop whose width and height are multiples of `ratio`.
/// Images already aligned come back unchanged.
pub fn center_crop_to_multiple(image: &MultiBandImage, ratio: usize) -> Result<MultiBandImage> {
    if ratio == 0 {
        return Err(Error::InvalidInput("ratio must be >= 1".into()));
    }
    let w = image.width() / ratio * ratio;
    let h = image.height() / ratio * ratio;
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput(format!(
            "{}x{} image cannot be cropped to a multiple of {ratio}",
            image.width(),
            image.height()
        )));
    }
    if w == image.width() && h == image.height() {
        return Ok(image.clone());
    }
    let c0 = (image.width() - w) / 2;
    let r0 = (image.height() - h) / 2;
    Ok(MultiBandImage::from_fn(w, h, image.bands(), |b, r, c| {
        image.get(b, r0 + r, c0 + c)
    }))
}

/// Which minimizer runs the fusion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Admm,
    Cg,
}

impl FromStr for SolverChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admm" => Ok(Self::Admm),
            "cg" => Ok(Self::Cg),
            other => Err(Error::InvalidInput(format!(
                "unknown solver {other:?}, expected admm or cg"
            ))),
        }
    }
}

/// Full proposed pipeline with an explicit solver: interpolate the observed
/// bands, predict the gradient prior with the network, minimize the fusion
/// energy, and clamp the result to [0, 1].
pub fn fuse_proposed_with(
    pan: &MultiBandImage,
    ms: &MultiBandImage,
    weights: &NetworkWeights,
    params: &FusionParams,
    solver: SolverChoice,
) -> Result<(MultiBandImage, SolveReport)> {
    let ms_up = upsample_interp(ms, params.spec.ratio);
    let (g1, g2) = predict_prior(pan, &ms_up, weights)?;
    let (fused, report) = match solver {
        SolverChoice::Admm => admm_fuse(ms, &g1, &g2, params, pan.width(), pan.height())?,
        SolverChoice::Cg => cg_solve(ms, &g1, &g2, params, pan.width(), pan.height())?,
    };
    Ok((fused.clamped(0.0, 1.0), report))
}

/// [`fuse_proposed_with`] using the ADMM solver, keeping only the image.
pub fn fuse_proposed(
    pan: &MultiBandImage,
    ms: &MultiBandImage,
    weights: &NetworkWeights,
    params: &FusionParams,
) -> Result<MultiBandImage> {
    Ok(fuse_proposed_with(pan, ms, weights, params, SolverChoice::Admm)?.0)
}

/// Fusion methods an experiment can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Glp,
    Proposed,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Naive => "naive",
            Method::Glp => "glp",
            Method::Proposed => "proposed",
        };
        f.write_str(name)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "glp" => Ok(Method::Glp),
            "proposed" => Ok(Method::Proposed),
            other => Err(Error::InvalidInput(format!(
                "unknown method {other:?}, expected naive, glp, or proposed"
            ))),
        }
    }
}

/// One scene of an experiment, named by raster stems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub pan: PathBuf,
    pub ms: PathBuf,
    #[serde(default)]
    pub name: Option<String>,
}

fn default_ratio() -> usize {
    4
}
fn default_gnyq() -> f64 {
    0.3
}
fn default_lambda1() -> f64 {
    0.5
}
fn default_lambda2() -> f64 {
    0.01
}
fn default_methods() -> Vec<Method> {
    vec![Method::Naive, Method::Glp, Method::Proposed]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("experiment_out")
}

/// Declarative experiment description, loadable from JSON. Defaults are
/// echoed into the report so a run is reproducible from the report alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenes: Vec<SceneConfig>,
    #[serde(default = "default_ratio")]
    pub ratio: usize,
    #[serde(default = "default_gnyq")]
    pub gnyq: f64,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("methods list is empty".into()));
        }
        if self.scenes.is_empty() {
            return Err(Error::InvalidInput("scene list is empty".into()));
        }
        if self.methods.contains(&Method::Proposed) && self.weights.is_none() {
            return Err(Error::InvalidInput(
                "the proposed method needs a weights path".into(),
            ));
        }
        Ok(())
    }

    fn fusion_params(&self) -> Result<FusionParams> {
        let mut params = FusionParams::new(DegradationSpec::mtf(self.ratio, self.gnyq)?);
        params.lambda1 = self.lambda1;
        params.lambda2 = self.lambda2;
        params.rho = if self.lambda1 > 0.0 { 2.0 * self.lambda1 } else { 1.0 };
        Ok(params)
    }
}

/// Scores for one scene: a quality report per method that succeeded and an
/// error message per method that failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneResult {
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_note: Option<String>,
    pub results: BTreeMap<Method, QualityReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<Method, String>,
}

/// Full experiment output. Everything serialized is deterministic for a
/// fixed config; wall-clock runtimes live in the `runtime_seconds` field,
/// which is excluded from serialization and written to a separate timing
/// file so repeated runs produce byte-identical reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
    pub scenes: Vec<SceneResult>,
    /// Per-method arithmetic means over the scenes the method fused.
    pub mean: BTreeMap<Method, QualityReport>,
    #[serde(skip, default)]
    pub runtime_seconds: BTreeMap<Method, f64>,
}

fn weights_checksum(stem: &std::path::Path) -> Result<String> {
    let (manifest, blob) = weight_paths(stem);
    let mut hasher = Sha256::new();
    hasher.update(fs::read(&manifest)?);
    hasher.update(fs::read(&blob)?);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Runs every configured method over every configured scene at reduced
/// scale and aggregates the scores. A failing scene/method pair is recorded
/// in the report and does not abort the rest of the run. Writes the fused
/// rasters, `report.json`, and `timing.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let params = config.fusion_params()?;
    let spec = params.spec.clone();

    let mut methods: Vec<Method> = Vec::new();
    for m in &config.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }

    let (weights, weights_sha256) = match (&config.weights, methods.contains(&Method::Proposed)) {
        (Some(path), true) => (
            Some(load_weights(path)?),
            Some(weights_checksum(path)?),
        ),
        _ => (None, None),
    };

    fs::create_dir_all(&config.out_dir)?;
    let mut scenes = Vec::with_capacity(config.scenes.len());
    let mut runtime_seconds: BTreeMap<Method, f64> = BTreeMap::new();

    for (index, scene_cfg) in config.scenes.iter().enumerate() {
        let name = scene_cfg
            .name
            .clone()
            .unwrap_or_else(|| format!("scene_{index}"));
        let mut result = SceneResult {
            scene: name.clone(),
            crop_note: None,
            results: BTreeMap::new(),
            failures: BTreeMap::new(),
        };

        match prepare_scene(scene_cfg, config.ratio, &mut result) {
            Ok((pan, ms)) => {
                let degraded = wald_degrade(&pan, &ms, &spec);
                match degraded {
                    Ok((pan_low, ms_low)) => {
                        for &method in &methods {
                            let started = Instant::now();
                            let fused = match method {
                                Method::Naive => Ok(fuse_naive(&ms_low, config.ratio)),
                                Method::Glp => fuse_glp_mtf(&ms_low, &pan_low, &spec),
                                Method::Proposed => fuse_proposed(
                                    &pan_low,
                                    &ms_low,
                                    weights.as_ref().expect("validated above"),
                                    &params,
                                ),
                            };
                            *runtime_seconds.entry(method).or_insert(0.0) +=
                                started.elapsed().as_secs_f64();
                            match fused.and_then(|fused| {
                                let stem = config.out_dir.join(format!("{name}_{method}"));
                                write_image_stem(&fused, &stem)?;
                                quality_report(&fused, &ms, config.ratio)
                            }) {
                                Ok(report) => {
                                    result.results.insert(method, report);
                                }
                                Err(err) => {
                                    result.failures.insert(method, err.to_string());
                                }
                            }
                        }
                    }
                    Err(err) => {
                        for &method in &methods {
                            result.failures.insert(method, err.to_string());
                        }
                    }
                }
            }
            Err(err) => {
                for &method in &methods {
                    result.failures.insert(method, err.to_string());
                }
            }
        }
        scenes.push(result);
    }

    let mut mean = BTreeMap::new();
    for &method in &methods {
        let rows: Vec<QualityReport> = scenes
            .iter()
            .filter_map(|s| s.results.get(&method).cloned())
            .collect();
        if !rows.is_empty() {
            mean.insert(method, mean_report(&rows)?);
        }
    }

    let report = ExperimentReport {
        config: config.clone(),
        weights_sha256,
        scenes,
        mean,
        runtime_seconds,
    };
    fs::write(
        config.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    fs::write(
        config.out_dir.join("timing.json"),
        serde_json::to_string_pretty(&report.runtime_seconds)?,
    )?;
    Ok(report)
}

/// Loads one scene pair and center-crops both images to a consistent
/// ratio-aligned size, recording the crop in the result.
fn prepare_scene(
    scene: &SceneConfig,
    ratio: usize,
    result: &mut SceneResult,
) -> Result<(MultiBandImage, MultiBandImage)> {
    let pan = read_image_stem(&scene.pan)?;
    let ms = read_image_stem(&scene.ms)?;
    if pan.bands() != 1 {
        return Err(Error::InvalidInput(format!(
            "panchromatic input must have one band, got {}",
            pan.bands()
        )));
    }
    if pan.width() != ratio * ms.width() || pan.height() != ratio * ms.height() {
        return Err(Error::ShapeMismatch(format!(
            "panchromatic {}x{} does not cover {}x{} bands at ratio {ratio}",
            pan.width(),
            pan.height(),
            ms.width(),
            ms.height()
        )));
    }
    let ms_cropped = center_crop_to_multiple(&ms, ratio)?;
    if !ms_cropped.same_shape(&ms) {
        let note = format!(
            "center-cropped bands from {}x{} to {}x{}",
            ms.width(),
            ms.height(),
            ms_cropped.width(),
            ms_cropped.height()
        );
        info!("{}: {note}", result.scene);
        result.crop_note = Some(note);
        let pan_cropped = MultiBandImage::from_fn(
            ratio * ms_cropped.width(),
            ratio * ms_cropped.height(),
            1,
            |_, r, c| {
                let r0 = (ms.height() - ms_cropped.height()) / 2 * ratio;
                let c0 = (ms.width() - ms_cropped.width()) / 2 * ratio;
                pan.get(0, r0 + r, c0 + c)
            },
        );
        return Ok((pan_cropped, ms_cropped));
    }
    Ok((pan, ms))
}
