//! Training loop, optimizer, loss logging, and checkpoints.
//!
//! Training is fully deterministic: (seed, config, data) fixes the model
//! init, the batch order of every epoch, every gradient reduction order,
//! and therefore the checkpoint bytes and the loss log.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{PairSet, TrainPositives};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::losses::{graph, FusionMode, LossConfig, MetricSite, MetricVariant, PolarityLabel};
use crate::model::{init_model, ModelDims, ModelParams};
use crate::numgrad::{NodeId, ParamStore, Real, Tape, Tensor2};

/// The four training configurations of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Content path only (reconstruction + metric losses).
    ContentOnly,
    /// Emotion path only (discrimination + inter-modal losses).
    EmotionOnly,
    /// Both paths plus the fusion loss on spliced codes.
    Splicing,
    /// Both paths plus the fusion loss on FC-fused codes.
    Interactive,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(Ablation::ContentOnly),
            "emotion" => Ok(Ablation::EmotionOnly),
            "splicing" => Ok(Ablation::Splicing),
            "interactive" => Ok(Ablation::Interactive),
            other => Err(Error::Config(format!(
                "unknown ablation '{other}' (expected content|emotion|splicing|interactive)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::ContentOnly => "content",
            Ablation::EmotionOnly => "emotion",
            Ablation::Splicing => "splicing",
            Ablation::Interactive => "interactive",
        }
    }

    /// Fusion mode implied by the ablation (unused by the single paths).
    pub fn fusion_mode(&self) -> FusionMode {
        match self {
            Ablation::Splicing => FusionMode::Splicing,
            _ => FusionMode::Interactive,
        }
    }

    pub fn uses_content(&self) -> bool {
        !matches!(self, Ablation::EmotionOnly)
    }

    pub fn uses_emotion(&self) -> bool {
        !matches!(self, Ablation::ContentOnly)
    }

    pub fn uses_fusion(&self) -> bool {
        matches!(self, Ablation::Splicing | Ablation::Interactive)
    }
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub dims: ModelDims,
    pub ablation: Ablation,
    pub positives: TrainPositives,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config(format!(
                "epochs must be >= 1, got {}",
                self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be >= 2 so every batch carries in-batch \
                 negatives for the metric losses, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "adam_epsilon must be finite and > 0, got {}",
                self.adam_epsilon
            )));
        }
        self.loss.validate()?;
        self.dims.validate()?;
        if self.loss.metric_site == MetricSite::Fused && !self.ablation.uses_fusion() {
            return Err(Error::Config(
                "metric_site=fused requires a fusion ablation (splicing or interactive)"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// Canonical flat `key=value` rendering, sorted by key. This exact text
    /// is echoed into checkpoints and digested into reports, so a run is
    /// reproducible from its artifacts.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("ablation", self.ablation.as_str().to_string());
        kv("adam_epsilon", self.adam_epsilon.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("content_code_dim", self.dims.content_code_dim.to_string());
        kv(
            "content_hidden_dim",
            self.dims.content_hidden_dim.to_string(),
        );
        kv("emotion_code_dim", self.dims.emotion_code_dim.to_string());
        kv(
            "emotion_hidden_dim",
            self.dims.emotion_hidden_dim.to_string(),
        );
        kv("epochs", self.epochs.to_string());
        kv("fused_dim", self.dims.fused_dim.to_string());
        kv("k1", self.loss.k1.to_string());
        kv("k2", self.loss.k2.to_string());
        kv("k3", self.loss.k3.to_string());
        kv("lambda1", self.loss.lambda1.to_string());
        kv("lambda2", self.loss.lambda2.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("margin", self.loss.margin.to_string());
        kv("metric", self.loss.metric_variant.as_str().to_string());
        kv("metric_site", self.loss.metric_site.as_str().to_string());
        kv("mu1", self.loss.mu1.to_string());
        kv("mu2", self.loss.mu2.to_string());
        kv("music_content_dim", self.dims.music_content_dim.to_string());
        kv("music_emotion_dim", self.dims.music_emotion_dim.to_string());
        kv(
            "num_emotion_classes",
            self.dims.num_emotion_classes.to_string(),
        );
        kv("positives", self.positives.as_str().to_string());
        kv("seed", self.seed.to_string());
        kv("video_content_dim", self.dims.video_content_dim.to_string());
        kv("video_emotion_dim", self.dims.video_emotion_dim.to_string());
        out
    }

    /// Parses the canonical rendering back. Every key must be present.
    pub fn from_kv_string(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value", idx + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| Error::Config(format!("config missing key {k}")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("config key {k} is not a count: '{}'", map[k])))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("config key {k} is not a number: '{}'", map[k])))
        };
        let cfg = TrainConfig {
            epochs: count("epochs")?,
            batch_size: count("batch_size")?,
            learning_rate: real("learning_rate")?,
            beta1: real("beta1")?,
            beta2: real("beta2")?,
            adam_epsilon: real("adam_epsilon")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Config("config key seed is not an integer".to_string()))?,
            loss: LossConfig {
                margin: real("margin")?,
                lambda1: real("lambda1")?,
                lambda2: real("lambda2")?,
                mu1: real("mu1")?,
                mu2: real("mu2")?,
                k1: real("k1")?,
                k2: real("k2")?,
                k3: real("k3")?,
                metric_variant: MetricVariant::parse(get("metric")?)?,
                fusion_mode: Ablation::parse(get("ablation")?)?.fusion_mode(),
                metric_site: MetricSite::parse(get("metric_site")?)?,
            },
            dims: ModelDims {
                video_content_dim: count("video_content_dim")?,
                music_content_dim: count("music_content_dim")?,
                video_emotion_dim: count("video_emotion_dim")?,
                music_emotion_dim: count("music_emotion_dim")?,
                content_code_dim: count("content_code_dim")?,
                emotion_code_dim: count("emotion_code_dim")?,
                content_hidden_dim: count("content_hidden_dim")?,
                emotion_hidden_dim: count("emotion_hidden_dim")?,
                fused_dim: count("fused_dim")?,
                num_emotion_classes: count("num_emotion_classes")?,
            },
            ablation: Ablation::parse(get("ablation")?)?,
            positives: TrainPositives::parse(get("positives")?)?,
        };
        Ok(cfg)
    }
}

/// FNV-1a digest of a config text, rendered as fixed-width hex.
pub fn config_digest(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One matched pair's features and labels, ready for the objective graph.
#[derive(Debug, Clone)]
pub struct PairExample<T> {
    pub v_content: Vec<T>,
    pub v_emotion: Vec<T>,
    pub m_content: Vec<T>,
    pub m_emotion: Vec<T>,
    pub class_v: usize,
    pub class_m: usize,
    pub polarity: PolarityLabel,
}

/// Component and composite loss nodes of one batch objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes<T> {
    pub reconstruction: NodeId,
    pub content_metric: NodeId,
    pub discrimination: NodeId,
    pub intermodal: NodeId,
    pub fusion: NodeId,
    pub content: NodeId,
    pub emotion: NodeId,
    pub total: NodeId,
    /// Smallest |phi_ki - phi_kk| over the polarity-penalty gate, when that
    /// variant ran. Gradient checks resample inputs sitting on the boundary.
    pub min_gate_gap: Option<T>,
}

/// Records the full batch objective on the tape.
///
/// Per-pair losses enter as batch means; the batch metric variants divide
/// the printed sums by the `n(n-1)` combination count so the composite
/// weights keep their meaning at any batch size. Single paths optimize only
/// their own composite; the fusion ablations optimize the weighted total.
pub fn batch_objective<T: Real>(
    model: &ModelParams<T>,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    items: &[PairExample<T>],
    cfg: &LossConfig,
    ablation: Ablation,
) -> Result<ObjectiveNodes<T>> {
    if items.is_empty() {
        return Err(Error::Config(
            "batch objective needs at least one pair".to_string(),
        ));
    }
    let n = items.len();
    let mode = ablation.fusion_mode();

    let mut rec_terms = Vec::new();
    let mut disc_terms = Vec::new();
    let mut inter_terms = Vec::new();
    let mut fusion_terms = Vec::new();
    let mut content_v = Vec::new();
    let mut content_m = Vec::new();
    let mut fused_v = Vec::new();
    let mut fused_m = Vec::new();

    for item in items {
        let mut emotion_codes = None;
        if ablation.uses_content() {
            let (code_v, code_m, recon_v, recon_m) =
                model.content_forward(store, tape, &item.v_content, &item.m_content)?;
            let v_leaf = tape.input_row(&item.v_content)?;
            let m_leaf = tape.input_row(&item.m_content)?;
            rec_terms.push(graph::reconstruction_pair(
                tape, v_leaf, recon_v, m_leaf, recon_m,
            )?);
            content_v.push(code_v);
            content_m.push(code_m);
        }
        if ablation.uses_emotion() {
            let (ev, logits_v) = model.emotion_forward(
                store,
                tape,
                &item.v_emotion,
                crate::model::Modality::Video,
            )?;
            let (em, logits_m) = model.emotion_forward(
                store,
                tape,
                &item.m_emotion,
                crate::model::Modality::Music,
            )?;
            disc_terms.push(graph::discrimination_pair(
                tape,
                logits_v,
                item.class_v,
                logits_m,
                item.class_m,
            )?);
            inter_terms.push(graph::intermodal_pair(tape, ev, em)?);
            emotion_codes = Some((ev, em));
        }
        if ablation.uses_fusion() {
            let (ev, em) = emotion_codes.expect("fusion ablations build the emotion path");
            let fv = model.fuse(store, tape, *content_v.last().unwrap(), ev, mode)?;
            let fm = model.fuse(store, tape, *content_m.last().unwrap(), em, mode)?;
            fusion_terms.push(graph::fusion_pair(tape, fv, fm)?);
            fused_v.push(fv);
            fused_m.push(fm);
        }
    }

    let reconstruction = tape.mean(&rec_terms)?;
    let discrimination = tape.mean(&disc_terms)?;
    let intermodal = tape.mean(&inter_terms)?;
    let fusion = tape.mean(&fusion_terms)?;

    let mut min_gate_gap = None;
    let content_metric = if ablation.uses_content() {
        let (site_v, site_m) = match cfg.metric_site {
            MetricSite::Content => (&content_v, &content_m),
            MetricSite::Fused => (&fused_v, &fused_m),
        };
        match cfg.metric_variant {
            MetricVariant::Contrastive => {
                // Matched and mismatched combinations get equal total mass:
                // the n matched terms average to half the loss, the n(n-1)
                // in-batch negatives to the other half. A flat mean over
                // all n^2 combinations would let the negatives outweigh the
                // matched pull by a factor of n-1.
                let margin = T::from_f64_lossy(cfg.margin);
                let mut matched = Vec::with_capacity(n);
                let mut mismatched = Vec::with_capacity(n * (n - 1).max(1));
                for (k, &vk) in site_v.iter().enumerate() {
                    for (i, &mi) in site_m.iter().enumerate() {
                        let label = if k == i {
                            crate::losses::PairLabel::Matched
                        } else {
                            crate::losses::PairLabel::Mismatched
                        };
                        let term = graph::contrastive_pair(tape, vk, mi, label, margin)?;
                        if k == i {
                            matched.push(term);
                        } else {
                            mismatched.push(term);
                        }
                    }
                }
                let pos = tape.mean(&matched)?;
                let neg = tape.mean(&mismatched)?;
                let half = T::from_f64_lossy(0.5);
                tape.affine(&[(half, pos), (half, neg)], T::zero())?
            }
            MetricVariant::BatchMetric => {
                if n < 2 {
                    tape.constant(T::zero())?
                } else {
                    let sims = graph::pairwise_similarities(tape, site_v, site_m)?;
                    let sum = graph::batch_metric(tape, &sims, n)?;
                    let scale = T::one() / T::from_f64_lossy(n as f64);
                    tape.affine(&[(scale, sum)], T::zero())?
                }
            }
            MetricVariant::Ppml => {
                if n < 2 {
                    tape.constant(T::zero())?
                } else {
                    let polarity: Vec<PolarityLabel> = items.iter().map(|it| it.polarity).collect();
                    let sims = graph::pairwise_similarities(tape, site_v, site_m)?;
                    let (sum, gap) = graph::ppml(tape, &sims, n, &polarity)?;
                    min_gate_gap = Some(gap);
                    let scale = T::one() / T::from_f64_lossy(n as f64);
                    tape.affine(&[(scale, sum)], T::zero())?
                }
            }
        }
    } else {
        tape.constant(T::zero())?
    };

    let c = |x: f64| T::from_f64_lossy(x);
    let content = tape.affine(
        &[
            (c(cfg.lambda1), reconstruction),
            (c(cfg.lambda2), content_metric),
        ],
        T::zero(),
    )?;
    let emotion = tape.affine(
        &[(c(cfg.mu1), discrimination), (c(cfg.mu2), intermodal)],
        T::zero(),
    )?;
    let total = match ablation {
        Ablation::ContentOnly => content,
        Ablation::EmotionOnly => emotion,
        Ablation::Splicing | Ablation::Interactive => tape.affine(
            &[
                (c(cfg.k1), content),
                (c(cfg.k2), emotion),
                (c(cfg.k3), fusion),
            ],
            T::zero(),
        )?,
    };

    Ok(ObjectiveNodes {
        reconstruction,
        content_metric,
        discrimination,
        intermodal,
        fusion,
        content,
        emotion,
        total,
        min_gate_gap,
    })
}

/// Adam moment accumulators, mirroring the parameter store layout.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Tensor2<T>>,
    v: Vec<Tensor2<T>>,
    step: usize,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let shapes: Vec<_> = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                Tensor2::zeros(r, c)
            })
            .collect();
        AdamState {
            m: shapes.clone(),
            v: shapes,
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter, consuming the
/// gradients accumulated in the store.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let eps = T::from_f64_lossy(cfg.adam_epsilon);
    let inv_corr1 = T::from_f64_lossy(1.0 / (1.0 - cfg.beta1.powi(t as i32)));
    let inv_corr2 = T::from_f64_lossy(1.0 / (1.0 - cfg.beta2.powi(t as i32)));
    let one = T::one();

    let ids: Vec<_> = store.ids().collect();
    for (pi, &id) in ids.iter().enumerate() {
        let name = store.name(id).to_string();
        let param = store.get_mut(id);
        for (ci, g) in param.grad.values().to_vec().into_iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {g} in parameter {name} at optimizer step {t}"
                )));
            }
            let m = b1 * state.m[pi].values()[ci] + (one - b1) * g;
            let v = b2 * state.v[pi].values()[ci] + (one - b2) * g * g;
            state.m[pi].values_mut()[ci] = m;
            state.v[pi].values_mut()[ci] = v;
            let m_hat = m * inv_corr1;
            let v_hat = v * inv_corr2;
            let theta = &mut param.value.values_mut()[ci];
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            if !theta.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameter {name} diverged to {} at optimizer step {t}",
                    *theta
                )));
            }
        }
    }
    Ok(())
}

/// Per-step loss components, logged and stored in the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLogRecord {
    pub epoch: usize,
    pub step: usize,
    pub reconstruction: f64,
    pub content_metric: f64,
    pub discrimination: f64,
    pub intermodal: f64,
    pub fusion: f64,
    pub total: f64,
}

/// Renders the loss log: header plus one line per optimizer step.
pub fn render_loss_log(records: &[LossLogRecord]) -> String {
    let mut out = String::from("epoch,step,L_R,L_Mcontent,L_D,L_Minter,L_Fusion,L_total\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch,
            r.step,
            r.reconstruction,
            r.content_metric,
            r.discrimination,
            r.intermodal,
            r.fusion,
            r.total
        );
    }
    out
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Result of a training run.
pub struct TrainOutcome {
    pub model: ModelParams<f32>,
    pub checkpoint: Checkpoint,
    pub log: Vec<LossLogRecord>,
}

/// Runs the full training loop over the given pair set.
pub fn train(cfg: &TrainConfig, data: &PairSet) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = data.dims();
    let want = [
        (
            "video_content_dim",
            cfg.dims.video_content_dim,
            d.video_content,
        ),
        (
            "music_content_dim",
            cfg.dims.music_content_dim,
            d.music_content,
        ),
        (
            "video_emotion_dim",
            cfg.dims.video_emotion_dim,
            d.video_emotion,
        ),
        (
            "music_emotion_dim",
            cfg.dims.music_emotion_dim,
            d.music_emotion,
        ),
        (
            "num_emotion_classes",
            cfg.dims.num_emotion_classes,
            d.classes,
        ),
    ];
    for (name, got, data_dim) in want {
        if got != data_dim {
            return Err(Error::Config(format!(
                "config {name}={got} does not match the dataset header value {data_dim}"
            )));
        }
    }
    if data.pairs().is_empty() {
        return Err(Error::Config("training data has no pairs".to_string()));
    }

    let mut model = init_model::<f32>(cfg.dims, cfg.seed)?;
    let mut state = AdamState::new(model.store());
    let mut log = Vec::new();

    for epoch in 1..=cfg.epochs {
        let batches =
            data.make_batches(cfg.batch_size, epoch_seed(cfg.seed, epoch), cfg.positives)?;
        for (bi, batch) in batches.iter().enumerate() {
            let step = bi + 1;
            let items: Vec<PairExample<f32>> = batch
                .video_indices
                .iter()
                .zip(batch.music_indices.iter())
                .map(|(&vi, &mi)| {
                    let v = &data.videos()[vi];
                    let m = &data.musics()[mi];
                    PairExample {
                        v_content: v.content_feature.clone(),
                        v_emotion: v.emotion_feature.clone(),
                        m_content: m.content_feature.clone(),
                        m_emotion: m.emotion_feature.clone(),
                        class_v: v.emotion_class,
                        class_m: m.emotion_class,
                        polarity: v.polarity,
                    }
                })
                .collect();

            let batch_ids: Vec<&str> = batch
                .video_indices
                .iter()
                .map(|&vi| data.videos()[vi].item_id.as_str())
                .collect();
            let diag = |e: Error| {
                Error::Numeric(format!(
                    "training aborted at epoch {epoch} step {step} \
                     (batch videos: {batch_ids:?}): {e}"
                ))
            };

            let mut tape = Tape::new();
            let obj = batch_objective(
                &model,
                model.store(),
                &mut tape,
                &items,
                &cfg.loss,
                cfg.ablation,
            )
            .map_err(diag)?;
            let record = LossLogRecord {
                epoch,
                step,
                reconstruction: tape.scalar(obj.reconstruction).to_f64_lossy(),
                content_metric: tape.scalar(obj.content_metric).to_f64_lossy(),
                discrimination: tape.scalar(obj.discrimination).to_f64_lossy(),
                intermodal: tape.scalar(obj.intermodal).to_f64_lossy(),
                fusion: tape.scalar(obj.fusion).to_f64_lossy(),
                total: tape.scalar(obj.total).to_f64_lossy(),
            };
            if !record.total.is_finite() {
                return Err(diag(Error::Numeric(format!(
                    "objective is {}",
                    record.total
                ))));
            }

            model.store_mut().zero_grads();
            let grads = tape.backward(obj.total).map_err(diag)?;
            tape.accumulate_param_grads(&grads, model.store_mut())
                .map_err(diag)?;
            adam_step(model.store_mut(), &mut state, cfg)?;
            log.push(record);
        }
    }

    let checkpoint = Checkpoint::from_model(cfg, &model, cfg.epochs, log.clone());
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"VMRCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

/// A self-describing training artifact: dims, the echoed effective config,
/// the loss history, and every parameter tensor bit-exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub config_text: String,
    pub final_epoch: usize,
    pub loss_history: Vec<LossLogRecord>,
    pub param_names: Vec<String>,
    pub param_values: Vec<Tensor2<f32>>,
}

impl Checkpoint {
    pub fn from_model(
        cfg: &TrainConfig,
        model: &ModelParams<f32>,
        final_epoch: usize,
        loss_history: Vec<LossLogRecord>,
    ) -> Self {
        let store = model.store();
        Checkpoint {
            dims: *model.dims(),
            config_text: cfg.to_kv_string(),
            final_epoch,
            loss_history,
            param_names: store.ids().map(|id| store.name(id).to_string()).collect(),
            param_values: store.ids().map(|id| store.value(id).clone()).collect(),
        }
    }

    pub fn config_digest(&self) -> String {
        config_digest(&self.config_text)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_kv_string(&self.config_text)
    }

    /// Rebuilds the model: wiring from dims, values from the stored tensors.
    pub fn build_model(&self) -> Result<ModelParams<f32>> {
        let mut model = init_model::<f32>(self.dims, 0)?;
        if self.param_names.len() != model.store().len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters but the architecture for its \
                 dims has {}",
                self.param_names.len(),
                model.store().len()
            )));
        }
        for (name, values) in self.param_names.iter().zip(self.param_values.iter()) {
            model.set_param_values(name, values.clone()).map_err(|e| {
                Error::Data(format!("checkpoint parameter {name} does not fit: {e}"))
            })?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in [
            self.dims.video_content_dim,
            self.dims.music_content_dim,
            self.dims.video_emotion_dim,
            self.dims.music_emotion_dim,
            self.dims.content_code_dim,
            self.dims.emotion_code_dim,
            self.dims.content_hidden_dim,
            self.dims.emotion_hidden_dim,
            self.dims.fused_dim,
            self.dims.num_emotion_classes,
        ] {
            out.extend_from_slice(&as_u32(d)?.to_le_bytes());
        }
        let cfg = self.config_text.as_bytes();
        out.extend_from_slice(&as_u32(cfg.len())?.to_le_bytes());
        out.extend_from_slice(cfg);
        out.extend_from_slice(&as_u32(self.final_epoch)?.to_le_bytes());
        out.extend_from_slice(&as_u32(self.loss_history.len())?.to_le_bytes());
        for r in &self.loss_history {
            out.extend_from_slice(&as_u32(r.epoch)?.to_le_bytes());
            out.extend_from_slice(&as_u32(r.step)?.to_le_bytes());
            for v in [
                r.reconstruction,
                r.content_metric,
                r.discrimination,
                r.intermodal,
                r.fusion,
                r.total,
            ] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&as_u32(self.param_names.len())?.to_le_bytes());
        for (name, values) in self.param_names.iter().zip(self.param_values.iter()) {
            let nb = name.as_bytes();
            out.extend_from_slice(&as_u32(nb.len())?.to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&as_u32(values.rows())?.to_le_bytes());
            out.extend_from_slice(&as_u32(values.cols())?.to_le_bytes());
            for v in values.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Data(
                "not a checkpoint file (bad magic bytes)".to_string(),
            ));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut dims = [0usize; 10];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let dims = ModelDims {
            video_content_dim: dims[0],
            music_content_dim: dims[1],
            video_emotion_dim: dims[2],
            music_emotion_dim: dims[3],
            content_code_dim: dims[4],
            emotion_code_dim: dims[5],
            content_hidden_dim: dims[6],
            emotion_hidden_dim: dims[7],
            fused_dim: dims[8],
            num_emotion_classes: dims[9],
        };
        let cfg_len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| Error::Data("corrupt checkpoint: config text is not UTF-8".to_string()))?;
        let final_epoch = r.u32()? as usize;
        let n_log = r.u32()? as usize;
        let mut loss_history = Vec::new();
        for _ in 0..n_log {
            let epoch = r.u32()? as usize;
            let step = r.u32()? as usize;
            let mut vals = [0.0f64; 6];
            for v in vals.iter_mut() {
                *v = r.f64()?;
            }
            loss_history.push(LossLogRecord {
                epoch,
                step,
                reconstruction: vals[0],
                content_metric: vals[1],
                discrimination: vals[2],
                intermodal: vals[3],
                fusion: vals[4],
                total: vals[5],
            });
        }
        let n_params = r.u32()? as usize;
        let mut param_names = Vec::new();
        let mut param_values = Vec::new();
        for _ in 0..n_params {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
                Error::Data("corrupt checkpoint: parameter name is not UTF-8".to_string())
            })?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| {
                Error::Data("corrupt checkpoint: parameter shape overflow".to_string())
            })?;
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(r.f32()?);
            }
            param_names.push(name);
            param_values.push(Tensor2::from_vec(rows, cols, values)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Data(format!(
                "corrupt checkpoint: {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            dims,
            config_text,
            final_epoch,
            loss_history,
            param_names,
            param_values,
        })
    }

    /// Saves atomically; a failed write never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn as_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Numeric(format!("value {v} exceeds the u32 format field")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(
                "corrupt checkpoint: truncated before expected field".to_string(),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn square_dims() -> ModelDims {
        ModelDims {
            video_content_dim: 4,
            music_content_dim: 4,
            video_emotion_dim: 4,
            music_emotion_dim: 4,
            content_code_dim: 4,
            emotion_code_dim: 4,
            content_hidden_dim: 4,
            emotion_hidden_dim: 4,
            fused_dim: 4,
            num_emotion_classes: 2,
        }
    }

    fn desk_config(dims: ModelDims, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 16,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed,
            loss: LossConfig::default(),
            dims,
            ablation: Ablation::Interactive,
            positives: TrainPositives::First,
        }
    }

    fn synth_dims(spec: &SyntheticSpec) -> ModelDims {
        ModelDims {
            video_content_dim: spec.video_content_dim,
            music_content_dim: spec.music_content_dim,
            video_emotion_dim: spec.video_emotion_dim,
            music_emotion_dim: spec.music_emotion_dim,
            content_code_dim: 16,
            emotion_code_dim: 8,
            content_hidden_dim: 32,
            emotion_hidden_dim: 16,
            fused_dim: 16,
            num_emotion_classes: spec.num_classes,
        }
    }

    #[test]
    fn adam_unit_gradient_update() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .insert("w", Tensor2::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        store.get_mut(id).grad.fill(1.0);
        let mut state = AdamState::new(&store);
        let cfg = desk_config(square_dims(), 0);
        adam_step(&mut store, &mut state, &cfg).unwrap();
        // Bias-corrected m_hat = v_hat = 1, so the update is -lr/(1 + eps).
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((store.value(id).values()[0] - expected).abs() < 1e-12);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .insert("w", Tensor2::from_vec(1, 2, vec![1.5, -2.5]).unwrap())
            .unwrap();
        let before = store.value(id).clone();
        let mut state = AdamState::new(&store);
        let cfg = desk_config(square_dims(), 0);
        adam_step(&mut store, &mut state, &cfg).unwrap();
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn adam_is_deterministic() {
        let build = || {
            let mut store = ParamStore::<f64>::new();
            let id = store
                .insert("w", Tensor2::from_vec(1, 2, vec![0.3, -0.8]).unwrap())
                .unwrap();
            store.get_mut(id).grad.values_mut()[0] = 0.25;
            store.get_mut(id).grad.values_mut()[1] = -1.5;
            (store, id)
        };
        let cfg = desk_config(square_dims(), 0);
        let (mut s1, id1) = build();
        let mut st1 = AdamState::new(&s1);
        adam_step(&mut s1, &mut st1, &cfg).unwrap();
        let (mut s2, id2) = build();
        let mut st2 = AdamState::new(&s2);
        adam_step(&mut s2, &mut st2, &cfg).unwrap();
        assert_eq!(s1.value(id1), s2.value(id2));
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor2::zeros(1, 1)).unwrap();
        store.get_mut(id).grad.values_mut()[0] = f64::NAN;
        let mut state = AdamState::new(&store);
        let cfg = desk_config(square_dims(), 0);
        let err = adam_step(&mut store, &mut state, &cfg).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
        assert!(err.to_string().contains("step 1"), "{err}");
    }

    #[test]
    fn two_steps_for_32_pairs_at_batch_16() {
        let spec = SyntheticSpec {
            num_pairs: 32,
            seed: 4,
            ..SyntheticSpec::default()
        };
        let (data, _) = crate::data::generate_pairset(&spec).unwrap();
        let cfg = desk_config(synth_dims(&spec), 4);
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.log[0].epoch, 1);
        assert_eq!(out.log[1].step, 2);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let spec = SyntheticSpec {
            num_pairs: 20,
            seed: 9,
            ..SyntheticSpec::default()
        };
        let (data, _) = crate::data::generate_pairset(&spec).unwrap();
        let mut cfg = desk_config(synth_dims(&spec), 9);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(
            a.checkpoint.to_bytes().unwrap(),
            b.checkpoint.to_bytes().unwrap()
        );
        assert_eq!(render_loss_log(&a.log), render_loss_log(&b.log));
    }

    #[test]
    fn zero_loss_weights_freeze_parameters() {
        let spec = SyntheticSpec {
            num_pairs: 12,
            seed: 3,
            ..SyntheticSpec::default()
        };
        let (data, _) = crate::data::generate_pairset(&spec).unwrap();
        let mut cfg = desk_config(synth_dims(&spec), 3);
        cfg.batch_size = 4;
        cfg.loss.lambda1 = 0.0;
        cfg.loss.lambda2 = 0.0;
        cfg.loss.mu1 = 0.0;
        cfg.loss.mu2 = 0.0;
        cfg.loss.k1 = 0.0;
        cfg.loss.k2 = 0.0;
        cfg.loss.k3 = 0.0;
        let out = train(&cfg, &data).unwrap();
        let init = init_model::<f32>(cfg.dims, cfg.seed).unwrap();
        for id in init.store().ids() {
            assert_eq!(init.store().value(id), out.model.store().value(id));
        }
    }

    #[test]
    fn ablation_isolation_via_nan_features() {
        let spec = SyntheticSpec {
            num_pairs: 8,
            seed: 6,
            ..SyntheticSpec::default()
        };
        let (data, _) = crate::data::generate_pairset(&spec).unwrap();
        // Poison the emotion features; content-only training must never
        // read them, fusion training must fail on them.
        let dims = *data.dims();
        let poison = |records: &[crate::data::ItemRecord]| -> Vec<crate::data::ItemRecord> {
            records
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.emotion_feature = vec![f32::NAN; r.emotion_feature.len()];
                    r
                })
                .collect()
        };
        let mut records = poison(data.videos());
        records.extend(poison(data.musics()));
        let poisoned =
            crate::data::PairSet::from_parts(dims, records, data.pairs().to_vec()).unwrap();

        let mut cfg = desk_config(synth_dims(&spec), 6);
        cfg.batch_size = 4;
        cfg.ablation = Ablation::ContentOnly;
        train(&cfg, &poisoned).expect("content-only training must not read emotion features");

        cfg.ablation = Ablation::Interactive;
        let err = match train(&cfg, &poisoned) {
            Err(e) => e,
            Ok(_) => panic!("fusion training must fail on poisoned emotion features"),
        };
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = SyntheticSpec {
            num_pairs: 12,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let (data, _) = crate::data::generate_pairset(&spec).unwrap();
        let mut cfg = desk_config(synth_dims(&spec), 5);
        cfg.batch_size = 4;
        let out = train(&cfg, &data).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        out.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.config_text, out.checkpoint.config_text);
        assert_eq!(loaded.param_names, out.checkpoint.param_names);
        for (a, b) in loaded
            .param_values
            .iter()
            .zip(out.checkpoint.param_values.iter())
        {
            assert_eq!(a, b);
        }
        let rebuilt = loaded.build_model().unwrap();
        for id in rebuilt.store().ids() {
            assert_eq!(rebuilt.store().value(id), out.model.store().value(id));
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let spec = SyntheticSpec {
            num_pairs: 12,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let (data, _) = crate::data::generate_pairset(&spec).unwrap();
        let mut cfg = desk_config(synth_dims(&spec), 5);
        cfg.batch_size = 4;
        let out = train(&cfg, &data).unwrap();
        let bytes = out.checkpoint.to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");
        let err = Checkpoint::from_bytes(b"NOTACKPT").unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn train_config_kv_round_trip() {
        let spec = SyntheticSpec::default();
        let mut cfg = desk_config(synth_dims(&spec), 77);
        cfg.loss.metric_variant = MetricVariant::Ppml;
        cfg.learning_rate = 3.5e-4;
        let text = cfg.to_kv_string();
        let parsed = TrainConfig::from_kv_string(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(config_digest(&text), config_digest(&parsed.to_kv_string()));
    }
}
