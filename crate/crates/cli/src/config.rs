//! The single pipeline configuration file: JSON with strict keys, full
//! defaults, and flag overrides applied on top. The resolved config is
//! echoed into every report so a run can be reproduced from its output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scribal::aggregate_eval::{DistanceMetric, PostprocConfig};
use scribal::binarize::BinarizerSpec;
use scribal::imaging::ResizeFactor;
use scribal::losses::{ArcFaceParams, TripletLossSpec};
use scribal::sampling::{AnchorKind, DocumentPatcher};
use scribal::sift::ScaleSpaceParams;
use scribal::text_aoi::AoiParams;
use scribal::train::{OptimizerParams, TrainConfig, TrainStage};
use scribal::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSection {
    /// Patch side length in pixels; the extractor input is side^2.
    pub side: usize,
    pub per_doc: usize,
    pub anchor: AnchorKind,
}

impl Default for PatchSection {
    fn default() -> Self {
        PatchSection {
            side: 64,
            per_doc: 64,
            anchor: AnchorKind::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessingSection {
    /// Uniform downscale factor in (0, 1]; null keeps full resolution.
    pub resize: Option<f64>,
    pub binarizer: BinarizerSpec,
    /// Text-AOI crop before patching; null keeps the whole page.
    pub aoi: Option<AoiParams>,
    pub patch: PatchSection,
    /// Keypoint detector settings (keypoint-anchored patches and the
    /// `sift` subcommand).
    pub sift: ScaleSpaceParams,
}

impl Default for PreprocessingSection {
    fn default() -> Self {
        PreprocessingSection {
            resize: None,
            binarizer: BinarizerSpec::Otsu,
            aoi: Some(AoiParams::default()),
            patch: PatchSection::default(),
            sift: ScaleSpaceParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSection {
    /// Hidden layer widths; the full network is
    /// [side^2, hidden..., embedding_dim].
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Checkpoint supplying trained weights (embed/eval, and the starting
    /// extractor for arcface fine-tuning).
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        ExtractorSection {
            hidden: vec![256, 256],
            embedding_dim: 128,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub stage: TrainStage,
    pub triplet: TripletLossSpec,
    pub arcface: ArcFaceParams,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            stage: TrainStage::Triplet,
            triplet: TripletLossSpec::default(),
            arcface: ArcFaceParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub convergence_window: usize,
    pub convergence_delta: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            steps: t.steps,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            convergence_window: t.convergence_window,
            convergence_delta: t.convergence_delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocSection {
    pub pooling: Pooling,
    /// Per-patch PCA target dimensionality; null disables PCA.
    pub pca_dims: Option<usize>,
    pub metric: DistanceMetric,
}

impl Default for PostprocSection {
    fn default() -> Self {
        PostprocSection {
            pooling: Pooling::Mean,
            pca_dims: None,
            metric: DistanceMetric::Euclidean,
        }
    }
}

/// File inputs; flags override these, and commands that need one report
/// the missing key by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct InputsSection {
    /// Dataset directory (containing manifest.csv) or a manifest path.
    pub data: Option<PathBuf>,
    /// Directory of exported feature files, as an alternative to
    /// embedding from a checkpoint.
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocessing: PreprocessingSection,
    pub extractor: ExtractorSection,
    pub loss: LossSection,
    pub training: TrainingSection,
    pub optimizer: OptimizerParams,
    pub postproc: PostprocSection,
    pub inputs: InputsSection,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preprocessing: PreprocessingSection::default(),
            extractor: ExtractorSection::default(),
            loss: LossSection::default(),
            training: TrainingSection::default(),
            optimizer: OptimizerParams::default(),
            postproc: PostprocSection::default(),
            inputs: InputsSection::default(),
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.preprocessing.patch.side < 8 {
            return Err(Error::InvalidParam(format!(
                "preprocessing.patch.side must be >= 8, got {}",
                self.preprocessing.patch.side
            )));
        }
        if self.preprocessing.patch.per_doc == 0 {
            return Err(Error::InvalidParam(
                "preprocessing.patch.per_doc must be >= 1".into(),
            ));
        }
        if let Some(r) = self.preprocessing.resize {
            ResizeFactor::new(r)?;
        }
        self.preprocessing.binarizer.validate()?;
        if let Some(aoi) = &self.preprocessing.aoi {
            aoi.validate()?;
        }
        self.preprocessing.sift.validate()?;
        if self.extractor.embedding_dim == 0 {
            return Err(Error::InvalidParam(
                "extractor.embedding_dim must be >= 1".into(),
            ));
        }
        if self.extractor.hidden.contains(&0) {
            return Err(Error::InvalidParam(
                "extractor.hidden widths must be >= 1".into(),
            ));
        }
        if self.postproc.pca_dims == Some(0) {
            return Err(Error::InvalidParam(
                "postproc.pca_dims must be >= 1 (or null to disable)".into(),
            ));
        }
        self.to_train_config().validate()
    }

    /// Full network shape: input layer from the patch side, then hidden
    /// widths, then the embedding dimension.
    pub fn layer_dims(&self) -> Vec<usize> {
        let side = self.preprocessing.patch.side;
        let mut dims = vec![side * side];
        dims.extend_from_slice(&self.extractor.hidden);
        dims.push(self.extractor.embedding_dim);
        dims
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            stage: self.loss.stage,
            steps: self.training.steps,
            batch_size: self.training.batch_size,
            seed: self.seed,
            eval_every: self.training.eval_every,
            convergence_window: self.training.convergence_window,
            convergence_delta: self.training.convergence_delta,
            triplet: self.loss.triplet.clone(),
            arcface: self.loss.arcface,
            optimizer: self.optimizer,
        }
    }

    pub fn to_patcher(&self) -> Result<DocumentPatcher> {
        let pre = &self.preprocessing;
        Ok(DocumentPatcher {
            side: pre.patch.side,
            per_doc: pre.patch.per_doc,
            anchor: pre.patch.anchor,
            resize: pre.resize.map(ResizeFactor::new).transpose()?,
            aoi: pre.aoi.clone().map(|a| (pre.binarizer.clone(), a)),
            sift_params: pre.sift.clone(),
            fallback_to_random: true,
        })
    }

    pub fn postproc_config(&self) -> PostprocConfig {
        PostprocConfig {
            metric: self.postproc.metric,
            pca_dims: self.postproc.pca_dims,
        }
    }
}

/// Load a config file, or the built-in defaults when `path` is None. A
/// report JSON with an embedded `config` object is accepted too, so a
/// finished run's report reproduces itself.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    match serde_json::from_str::<PipelineConfig>(&text) {
        Ok(cfg) => Ok(cfg),
        Err(direct_err) => {
            // A report embeds the config under the `config` key.
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) {
                if let Some(embedded) = value.get("config") {
                    return serde_json::from_value::<PipelineConfig>(embedded.clone()).map_err(
                        |e| {
                            Error::InvalidParam(format!(
                                "{}: embedded config: {e}",
                                path.display()
                            ))
                        },
                    );
                }
            }
            Err(Error::InvalidParam(format!(
                "{}: {direct_err}",
                path.display()
            )))
        }
    }
}
