//! Optimization loop: AdamW (decoupled weight decay; Loshchilov &
//! Hutter), a triplet training stage, an ArcFace fine-tuning stage,
//! checkpointing, and loss-trace logging.
//!
//! Determinism contract: (manifest, config, seed) fully determine every
//! checkpoint byte. Batch sampling is reseeded per step from the master
//! seed, so resuming from a checkpoint replays the exact run.

use std::io::Read as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{Gradients, MlpExtractor};
use crate::losses::{arcface, ArcFaceHead, ArcFaceParams, TripletLossParams, TripletLossSpec};
use crate::sampling::{sample_triplets_in, standardize, Manifest, Patch, PatchSource, Split};
use crate::synth::derive_seed;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8] = b"WICKPT1\n";
const CHECKPOINT_VERSION: u32 = 1;

// Seed-derivation tags for the independent RNG streams of one run.
const TAG_STEP: u64 = 0x5354_4550; // batch sampling, indexed by step
const TAG_VAL: u64 = 0x56414c; // fixed validation batch
const TAG_HEAD: u64 = 0x48454144; // ArcFace head init

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParam(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        for (v, name) in [(self.beta1, "beta1"), (self.beta2, "beta2")] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be in (0,1), got {v}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// AdamW state: first/second moment per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    hyper: OptimizerParams,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(hyper: OptimizerParams, param_count: usize) -> Result<Self> {
        hyper.validate()?;
        Ok(AdamW {
            hyper,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        })
    }

    pub fn from_state(hyper: OptimizerParams, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self> {
        hyper.validate()?;
        if m.len() != v.len() {
            return Err(Error::InvalidParam(format!(
                "moment lengths differ: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(AdamW { hyper, m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected adaptive-moment update with decoupled weight
    /// decay (parameters shrink by lr*wd independently of the moments).
    pub fn optimizer_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidParam(format!(
                "optimizer expects {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient at optimizer step {}",
                self.step
            )));
        }
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            params[i] *= 1.0 - h.learning_rate * h.weight_decay;
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * grads[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    Triplet,
    Arcface,
}

/// One training stage's configuration. `steps` is the hard budget; the
/// run also stops early once the `convergence_window`-step moving
/// average of the training loss improves by less than
/// `convergence_delta` over the preceding window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: TrainStage,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub convergence_window: usize,
    pub convergence_delta: f64,
    pub triplet: TripletLossSpec,
    pub arcface: ArcFaceParams,
    pub optimizer: OptimizerParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: TrainStage::Triplet,
            steps: 2000,
            batch_size: 32,
            seed: 7,
            eval_every: 25,
            convergence_window: 100,
            convergence_delta: 1e-4,
            triplet: TripletLossSpec::default(),
            arcface: ArcFaceParams::default(),
            optimizer: OptimizerParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParam("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidParam("eval_every must be at least 1".into()));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidParam(
                "convergence window must be at least 1".into(),
            ));
        }
        if !(self.convergence_delta >= 0.0) || !self.convergence_delta.is_finite() {
            return Err(Error::InvalidParam(format!(
                "convergence delta must be non-negative, got {}",
                self.convergence_delta
            )));
        }
        self.triplet.resolve()?;
        self.arcface.validate()?;
        self.optimizer.validate()
    }
}

/// One loss-trace row; `val_loss` is filled every `eval_every` steps when
/// a validation split is available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Write the trace as CSV `step,train_loss,val_loss` (empty cell when no
/// validation loss was computed).
pub fn write_loss_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,train_loss,val_loss\n");
    for r in rows {
        match r.val_loss {
            Some(v) => out.push_str(&format!("{},{},{}\n", r.step, r.train_loss, v)),
            None => out.push_str(&format!("{},{},\n", r.step, r.train_loss)),
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Result of a completed training call.
#[derive(Debug)]
pub struct TrainRun {
    pub extractor: MlpExtractor,
    pub head: Option<ArcFaceHead>,
    /// Writer id per head class index (sorted train writers).
    pub head_writers: Vec<String>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub steps_done: usize,
}

/// Incremental trainer; drives either stage and can round-trip through a
/// checkpoint file at any step boundary.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    triplet_params: TripletLossParams,
    extractor: MlpExtractor,
    head: Option<ArcFaceHead>,
    head_writers: Vec<String>,
    opt: AdamW,
    next_step: usize,
    /// Last <= 2*window training losses, for the convergence test.
    recent: Vec<f64>,
    converged: bool,
}

impl Trainer {
    pub fn new_triplet(extractor: MlpExtractor, cfg: &TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let triplet_params = cfg.triplet.resolve()?;
        let opt = AdamW::new(cfg.optimizer, extractor.param_count())?;
        Ok(Trainer {
            cfg: TrainConfig {
                stage: TrainStage::Triplet,
                ..cfg.clone()
            },
            triplet_params,
            extractor,
            head: None,
            head_writers: Vec::new(),
            opt,
            next_step: 0,
            recent: Vec::new(),
            converged: false,
        })
    }

    /// Adds an ArcFace head with one class per train writer; the head and
    /// extractor train jointly and the head is discarded at inference.
    pub fn new_arcface(
        extractor: MlpExtractor,
        manifest: &Manifest,
        cfg: &TrainConfig,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let triplet_params = cfg.triplet.resolve()?;
        let writers: Vec<String> = manifest
            .writers_in(Split::Train)
            .into_iter()
            .map(str::to_string)
            .collect();
        if writers.len() < 2 {
            return Err(Error::Manifest(format!(
                "arcface fine-tuning needs at least 2 train writers, found {}",
                writers.len()
            )));
        }
        let head = ArcFaceHead::init(
            writers.len(),
            extractor.output_dim(),
            cfg.arcface,
            derive_seed(cfg.seed, TAG_HEAD, 0),
        )?;
        let opt = AdamW::new(
            cfg.optimizer,
            extractor.param_count() + head.weights().len(),
        )?;
        Ok(Trainer {
            cfg: TrainConfig {
                stage: TrainStage::Arcface,
                ..cfg.clone()
            },
            triplet_params,
            extractor,
            head: Some(head),
            head_writers: writers,
            opt,
            next_step: 0,
            recent: Vec::new(),
            converged: false,
        })
    }

    pub fn extractor(&self) -> &MlpExtractor {
        &self.extractor
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Raise or lower the hard step budget. Everything else about a
    /// loaded checkpoint stays authoritative; extending the budget and
    /// continuing reproduces an uninterrupted run with the same total,
    /// because per-step sampling is derived from (seed, step) alone.
    pub fn set_steps(&mut self, steps: usize) -> Result<()> {
        if steps == 0 {
            return Err(Error::InvalidParam("steps must be at least 1".into()));
        }
        self.cfg.steps = steps;
        Ok(())
    }

    pub fn head(&self) -> Option<&ArcFaceHead> {
        self.head.as_ref()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn steps_done(&self) -> usize {
        self.next_step
    }

    pub fn finished(&self) -> bool {
        self.converged || self.next_step >= self.cfg.steps
    }

    pub fn into_run(self, trace: Vec<TraceRow>) -> TrainRun {
        TrainRun {
            extractor: self.extractor,
            head: self.head,
            head_writers: self.head_writers,
            converged: self.converged,
            steps_done: self.next_step,
            trace,
        }
    }

    /// All trainable parameters, extractor first, then head weights.
    fn params_flat(&self) -> Vec<f64> {
        let mut p = self.extractor.params_flat();
        if let Some(head) = &self.head {
            p.extend_from_slice(head.weights());
        }
        p
    }

    fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        let n_ext = self.extractor.param_count();
        self.extractor.set_params_flat(&p[..n_ext])?;
        if let Some(head) = &mut self.head {
            head.weights_mut().copy_from_slice(&p[n_ext..]);
        }
        Ok(())
    }

    /// Run up to `budget` further steps (bounded by the config budget and
    /// the convergence stop), returning the rows produced by this call.
    pub fn run(
        &mut self,
        manifest: &Manifest,
        source: &mut dyn PatchSource,
        budget: usize,
    ) -> Result<Vec<TraceRow>> {
        let mut rows = Vec::new();
        let until = self.cfg.steps.min(self.next_step.saturating_add(budget));
        while self.next_step < until && !self.converged {
            let step = self.next_step;
            let step_seed = derive_seed(self.cfg.seed, TAG_STEP, step as u64);
            let (train_loss, grads) = match self.cfg.stage {
                TrainStage::Triplet => self.triplet_step(manifest, source, step_seed),
                TrainStage::Arcface => self.arcface_step(manifest, source, step_seed),
            }
            .map_err(|e| match e {
                // Numeric failures carry the step they happened at.
                Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at step {step}")),
                other => other,
            })?;
            if !train_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            let mut params = self.params_flat();
            self.opt.optimizer_step(&mut params, &grads)?;
            self.set_params_flat(&params)?;

            let val_loss = if (step + 1) % self.cfg.eval_every == 0 {
                self.val_loss(manifest, source)?
            } else {
                None
            };
            rows.push(TraceRow {
                step,
                train_loss,
                val_loss,
            });

            self.recent.push(train_loss);
            let w = self.cfg.convergence_window;
            if self.recent.len() > 2 * w {
                self.recent.remove(0);
            }
            if self.recent.len() == 2 * w {
                let prev: f64 = self.recent[..w].iter().sum::<f64>() / w as f64;
                let cur: f64 = self.recent[w..].iter().sum::<f64>() / w as f64;
                if prev - cur < self.cfg.convergence_delta {
                    self.converged = true;
                }
            }
            self.next_step += 1;
        }
        Ok(rows)
    }

    /// Mean triplet loss over one sampled batch plus parameter gradients.
    fn triplet_step(
        &mut self,
        manifest: &Manifest,
        source: &mut dyn PatchSource,
        seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        let batch = sample_triplets_in(
            manifest,
            source,
            Split::Train,
            self.cfg.batch_size,
            seed,
        )?;
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut acc = Gradients::zeros_like(&self.extractor);
        for i in 0..batch.len() {
            let (fa, ca) = self.extractor.forward(&standardize(&batch.anchors[i].pixels))?;
            let (fp, cp) = self.extractor.forward(&standardize(&batch.positives[i].pixels))?;
            let (fneg, cn) = self.extractor.forward(&standardize(&batch.negatives[i].pixels))?;
            let (l, g) = self.triplet_params.evaluate(&fa, &fp, &fneg)?;
            loss += l * inv_b;
            for (cache, out_grad) in [(&ca, &g.anchor), (&cp, &g.positive), (&cn, &g.negative)] {
                let gr = self.extractor.backward(cache, out_grad)?;
                acc.add_scaled(&gr, inv_b);
            }
        }
        Ok((loss, acc.flat()))
    }

    /// Mean ArcFace loss over one labeled batch plus joint gradients
    /// (extractor first, then head weights).
    fn arcface_step(
        &mut self,
        manifest: &Manifest,
        source: &mut dyn PatchSource,
        seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        let head = self.head.as_ref().expect("arcface stage has a head");
        let (patches, labels) = sample_labeled(
            manifest,
            source,
            &self.head_writers,
            Split::Train,
            self.cfg.batch_size,
            seed,
        )?
        .ok_or_else(|| Error::Manifest("no train entries for arcface head writers".into()))?;

        let mut feats = Vec::with_capacity(patches.len());
        let mut caches = Vec::with_capacity(patches.len());
        for p in &patches {
            let (f, c) = self.extractor.forward(&standardize(&p.pixels))?;
            feats.push(f);
            caches.push(c);
        }
        let out = arcface(&feats, &labels, head)?;
        let mut acc = Gradients::zeros_like(&self.extractor);
        for (cache, fg) in caches.iter().zip(&out.feature_grads) {
            let gr = self.extractor.backward(cache, fg)?;
            acc.add_scaled(&gr, 1.0);
        }
        let mut flat = acc.flat();
        flat.extend_from_slice(&out.weight_grads);
        Ok((out.loss, flat))
    }

    /// Loss on the validation split under the current parameters, with a
    /// fixed batch seed so the series is comparable across steps. None
    /// when the manifest has no usable validation data for this stage.
    fn val_loss(
        &mut self,
        manifest: &Manifest,
        source: &mut dyn PatchSource,
    ) -> Result<Option<f64>> {
        let seed = derive_seed(self.cfg.seed, TAG_VAL, 0);
        match self.cfg.stage {
            TrainStage::Triplet => {
                match sample_triplets_in(manifest, source, Split::Val, self.cfg.batch_size, seed) {
                    Ok(batch) => {
                        let inv_b = 1.0 / batch.len() as f64;
                        let mut loss = 0.0;
                        for i in 0..batch.len() {
                            let (fa, _) =
                                self.extractor.forward(&standardize(&batch.anchors[i].pixels))?;
                            let (fp, _) =
                                self.extractor.forward(&standardize(&batch.positives[i].pixels))?;
                            let (fneg, _) =
                                self.extractor.forward(&standardize(&batch.negatives[i].pixels))?;
                            loss += self.triplet_params.evaluate(&fa, &fp, &fneg)?.0 * inv_b;
                        }
                        Ok(Some(loss))
                    }
                    // Fewer than two val writers: no validation series.
                    Err(Error::Manifest(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            }
            TrainStage::Arcface => {
                // Validation needs labeled data, so it only exists when
                // val entries belong to head (train) writers.
                let head = self.head.as_ref().expect("arcface stage has a head");
                match sample_labeled(
                    manifest,
                    source,
                    &self.head_writers,
                    Split::Val,
                    self.cfg.batch_size,
                    seed,
                )? {
                    Some((patches, labels)) => {
                        let mut feats = Vec::with_capacity(patches.len());
                        for p in &patches {
                            feats.push(self.extractor.forward(&standardize(&p.pixels))?.0);
                        }
                        Ok(Some(arcface(&feats, &labels, head)?.loss))
                    }
                    None => Ok(None),
                }
            }
        }
    }

    /// Serialize the full training state: magic, length-prefixed JSON
    /// metadata, then raw little-endian f64 payload (parameters, then
    /// first and second moments).
    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.params_flat();
        let (m, v) = self.opt.moments();
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            layer_dims: self.extractor.layer_dims().to_vec(),
            init_seed: self.extractor.init_seed(),
            head: self.head.as_ref().map(|h| HeadMeta {
                classes: h.classes(),
                dim: h.dim(),
                params: h.params,
                writers: self.head_writers.clone(),
            }),
            optimizer_step: self.opt.step_count(),
            next_step: self.next_step,
            recent_losses: self.recent.clone(),
            converged: self.converged,
            param_count: params.len(),
        };
        let json = serde_json::to_vec(&meta)
            .map_err(|e| Error::format(path, format!("checkpoint metadata: {e}")))?;
        let mut bytes =
            Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + json.len() + params.len() * 24);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for series in [&params[..], m, v] {
            for x in series {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Trainer> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "file too short for magic"))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint file (bad magic)"));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::format(path, "truncated metadata length"))?;
        let json_len = u64::from_le_bytes(len_bytes) as usize;
        let mut json = vec![0u8; json_len];
        file.read_exact(&mut json)
            .map_err(|_| Error::format(path, "truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&json)
            .map_err(|e| Error::format(path, format!("checkpoint metadata: {e}")))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {}", meta.version),
            ));
        }
        let mut payload = Vec::new();
        file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if payload.len() != meta.param_count * 3 * 8 {
            return Err(Error::format(
                path,
                format!(
                    "payload holds {} values but expected 3x{}",
                    payload.len() / 8,
                    meta.param_count
                ),
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let params: Vec<f64> = values.by_ref().take(meta.param_count).collect();
        let m: Vec<f64> = values.by_ref().take(meta.param_count).collect();
        let v: Vec<f64> = values.collect();

        let n_ext: usize = meta
            .layer_dims
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum();
        let extractor = MlpExtractor::from_parts(&meta.layer_dims, &params[..n_ext], meta.init_seed)?;
        let (head, head_writers) = match meta.head {
            Some(hm) => {
                let head = ArcFaceHead::from_parts(
                    hm.classes,
                    hm.dim,
                    hm.params,
                    params[n_ext..].to_vec(),
                )?;
                (Some(head), hm.writers)
            }
            None => (None, Vec::new()),
        };
        let triplet_params = meta.config.triplet.resolve()?;
        let opt = AdamW::from_state(meta.config.optimizer, m, v, meta.optimizer_step)?;
        Ok(Trainer {
            cfg: meta.config,
            triplet_params,
            extractor,
            head,
            head_writers,
            opt,
            next_step: meta.next_step,
            recent: meta.recent_losses,
            converged: meta.converged,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    config: TrainConfig,
    layer_dims: Vec<usize>,
    init_seed: u64,
    head: Option<HeadMeta>,
    optimizer_step: u64,
    next_step: usize,
    recent_losses: Vec<f64>,
    converged: bool,
    param_count: usize,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    classes: usize,
    dim: usize,
    params: ArcFaceParams,
    writers: Vec<String>,
}

/// Patches with class labels for the ArcFace stage: writer uniform over
/// `writers` with entries in `split`, then a uniform entry of that
/// writer. None when no listed writer has entries in the split.
fn sample_labeled(
    manifest: &Manifest,
    source: &mut dyn PatchSource,
    writers: &[String],
    split: Split,
    batch: usize,
    seed: u64,
) -> Result<Option<(Vec<Patch>, Vec<usize>)>> {
    use rand::{Rng, SeedableRng};
    let available: Vec<usize> = (0..writers.len())
        .filter(|&c| !manifest.entries_for(&writers[c], split).is_empty())
        .collect();
    if available.is_empty() {
        return Ok(None);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(batch);
    let mut labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let class = available[rng.gen_range(0..available.len())];
        let entries = manifest.entries_for(&writers[class], split);
        let entry = entries[rng.gen_range(0..entries.len())];
        patches.push(source.patch(entry, &mut rng)?);
        labels.push(class);
    }
    Ok(Some((patches, labels)))
}

/// Triplet-stage training to convergence or the step budget.
pub fn train_triplet(
    extractor: MlpExtractor,
    manifest: &Manifest,
    source: &mut dyn PatchSource,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    let mut trainer = Trainer::new_triplet(extractor, cfg)?;
    let trace = trainer.run(manifest, source, cfg.steps)?;
    Ok(trainer.into_run(trace))
}

/// ArcFace fine-tuning stage; the returned head maps sorted train
/// writers to classes and is not used at inference.
pub fn finetune_arcface(
    extractor: MlpExtractor,
    manifest: &Manifest,
    source: &mut dyn PatchSource,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    let mut trainer = Trainer::new_arcface(extractor, manifest, cfg)?;
    let trace = trainer.run(manifest, source, cfg.steps)?;
    Ok(trainer.into_run(trace))
}
