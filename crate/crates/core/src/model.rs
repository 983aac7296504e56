//! The dual-path model: a content common network (per-modality input
//! projections around a weight-shared encoder-decoder), an emotion common
//! network (per-modality projections into a shared MLP plus a classifier
//! head), and a fusion head (splicing, optionally through a learned FC).
//!
//! Both modalities run through literally the same encoder/decoder/MLP
//! parameters; only the input/output projections are per-modality, which is
//! what lets differing native feature widths share one trunk.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::losses::FusionMode;
use crate::numgrad::{Activation, NodeId, ParamId, ParamStore, Real, Tape, Tensor2};

/// Which side of a pair an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Modality {
    Video,
    Music,
}

impl Modality {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "video" => Ok(Modality::Video),
            "music" => Ok(Modality::Music),
            other => Err(Error::Data(format!(
                "unknown modality '{other}' (expected video|music)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Music => "music",
        }
    }
}

/// All widths of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub video_content_dim: usize,
    pub music_content_dim: usize,
    pub video_emotion_dim: usize,
    pub music_emotion_dim: usize,
    pub content_code_dim: usize,
    pub emotion_code_dim: usize,
    /// Hidden width of the shared encoder/decoder trunks.
    pub content_hidden_dim: usize,
    /// Hidden width of the shared emotion MLP.
    pub emotion_hidden_dim: usize,
    pub fused_dim: usize,
    pub num_emotion_classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("video_content_dim", self.video_content_dim),
            ("music_content_dim", self.music_content_dim),
            ("video_emotion_dim", self.video_emotion_dim),
            ("music_emotion_dim", self.music_emotion_dim),
            ("content_code_dim", self.content_code_dim),
            ("emotion_code_dim", self.emotion_code_dim),
            ("content_hidden_dim", self.content_hidden_dim),
            ("emotion_hidden_dim", self.emotion_hidden_dim),
            ("fused_dim", self.fused_dim),
            ("num_emotion_classes", self.num_emotion_classes),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        let min_content = self.video_content_dim.min(self.music_content_dim);
        if self.content_code_dim > min_content {
            return Err(Error::Config(format!(
                "content_code_dim {} must not exceed the smaller native content \
                 dim {min_content} (the encoder reduces the dimension)",
                self.content_code_dim
            )));
        }
        Ok(())
    }

    pub fn content_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Video => self.video_content_dim,
            Modality::Music => self.music_content_dim,
        }
    }

    pub fn emotion_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Video => self.video_emotion_dim,
            Modality::Music => self.music_emotion_dim,
        }
    }

    /// Width of the spliced (concatenated) code vector.
    pub fn splice_dim(&self) -> usize {
        self.content_code_dim + self.emotion_code_dim
    }
}

/// One affine layer: handles into the parameter store plus its activation.
#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
    activation: Activation,
}

impl Dense {
    fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.dense(x, w, b, self.activation)
    }
}

/// The embedding space a retrieval run ranks in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Content,
    Emotion,
    Splicing,
    Interactive,
}

impl EmbeddingKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(EmbeddingKind::Content),
            "emotion" => Ok(EmbeddingKind::Emotion),
            "splicing" => Ok(EmbeddingKind::Splicing),
            "interactive" => Ok(EmbeddingKind::Interactive),
            other => Err(Error::Config(format!(
                "unknown embedding kind '{other}' (expected content|emotion|splicing|interactive)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EmbeddingKind::Content => "content",
            EmbeddingKind::Emotion => "emotion",
            EmbeddingKind::Splicing => "splicing",
            EmbeddingKind::Interactive => "interactive",
        }
    }
}

/// All learnable weights plus the layer wiring.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    dims: ModelDims,
    store: ParamStore<T>,
    video_content_proj: Dense,
    music_content_proj: Dense,
    shared_encoder: Vec<Dense>,
    shared_decoder: Vec<Dense>,
    video_decoder_out: Dense,
    music_decoder_out: Dense,
    emotion_proj_v: Dense,
    emotion_proj_m: Dense,
    shared_emotion_mlp: Vec<Dense>,
    emotion_classifier: Dense,
    fusion_fc: Dense,
}

/// Hidden depth of the encoder, decoder, and emotion MLP trunks.
const TRUNK_HIDDEN_LAYERS: usize = 2;

/// Initializes a model: weights from a symmetric fan-in-scaled uniform
/// distribution `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero,
/// deterministic under `seed`. The bound keeps activation magnitudes
/// roughly constant through the relu trunks instead of decaying with
/// depth.
pub fn init_model<T: Real>(dims: ModelDims, seed: u64) -> Result<ModelParams<T>> {
    dims.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut store = ParamStore::new();

    let layer = |store: &mut ParamStore<T>,
                 name: &str,
                 fan_in: usize,
                 fan_out: usize,
                 activation: Activation,
                 rng: &mut StdRng|
     -> Result<Dense> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut values = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            values.push(T::from_f64_lossy(rng.random_range(-bound..=bound)));
        }
        let w = store.insert(
            &format!("{name}.w"),
            Tensor2::from_vec(fan_in, fan_out, values)?,
        )?;
        let b = store.insert(&format!("{name}.b"), Tensor2::zeros(1, fan_out))?;
        Ok(Dense { w, b, activation })
    };

    let c = dims.content_code_dim;
    let ch = dims.content_hidden_dim;
    let e = dims.emotion_code_dim;
    let eh = dims.emotion_hidden_dim;

    let video_content_proj = layer(
        &mut store,
        "video_content_proj",
        dims.video_content_dim,
        ch,
        Activation::Identity,
        &mut rng,
    )?;
    let music_content_proj = layer(
        &mut store,
        "music_content_proj",
        dims.music_content_dim,
        ch,
        Activation::Identity,
        &mut rng,
    )?;

    let mut shared_encoder = Vec::new();
    for i in 0..TRUNK_HIDDEN_LAYERS {
        shared_encoder.push(layer(
            &mut store,
            &format!("encoder.{i}"),
            ch,
            ch,
            Activation::Relu,
            &mut rng,
        )?);
    }
    shared_encoder.push(layer(
        &mut store,
        &format!("encoder.{TRUNK_HIDDEN_LAYERS}"),
        ch,
        c,
        Activation::Identity,
        &mut rng,
    )?);

    let mut shared_decoder = Vec::new();
    for i in 0..TRUNK_HIDDEN_LAYERS {
        shared_decoder.push(layer(
            &mut store,
            &format!("decoder.{i}"),
            if i == 0 { c } else { ch },
            ch,
            Activation::Relu,
            &mut rng,
        )?);
    }
    shared_decoder.push(layer(
        &mut store,
        &format!("decoder.{TRUNK_HIDDEN_LAYERS}"),
        ch,
        ch,
        Activation::Identity,
        &mut rng,
    )?);

    let video_decoder_out = layer(
        &mut store,
        "video_decoder_out",
        ch,
        dims.video_content_dim,
        Activation::Identity,
        &mut rng,
    )?;
    let music_decoder_out = layer(
        &mut store,
        "music_decoder_out",
        ch,
        dims.music_content_dim,
        Activation::Identity,
        &mut rng,
    )?;

    let emotion_proj_v = layer(
        &mut store,
        "emotion_proj_v",
        dims.video_emotion_dim,
        eh,
        Activation::Identity,
        &mut rng,
    )?;
    let emotion_proj_m = layer(
        &mut store,
        "emotion_proj_m",
        dims.music_emotion_dim,
        eh,
        Activation::Identity,
        &mut rng,
    )?;

    let mut shared_emotion_mlp = Vec::new();
    for i in 0..TRUNK_HIDDEN_LAYERS {
        shared_emotion_mlp.push(layer(
            &mut store,
            &format!("emotion_mlp.{i}"),
            eh,
            eh,
            Activation::Relu,
            &mut rng,
        )?);
    }
    shared_emotion_mlp.push(layer(
        &mut store,
        &format!("emotion_mlp.{TRUNK_HIDDEN_LAYERS}"),
        eh,
        e,
        Activation::Identity,
        &mut rng,
    )?);

    let emotion_classifier = layer(
        &mut store,
        "emotion_classifier",
        e,
        dims.num_emotion_classes,
        Activation::Identity,
        &mut rng,
    )?;

    let fusion_fc = layer(
        &mut store,
        "fusion_fc",
        dims.splice_dim(),
        dims.fused_dim,
        Activation::Identity,
        &mut rng,
    )?;

    Ok(ModelParams {
        dims,
        store,
        video_content_proj,
        music_content_proj,
        shared_encoder,
        shared_decoder,
        video_decoder_out,
        music_decoder_out,
        emotion_proj_v,
        emotion_proj_m,
        shared_emotion_mlp,
        emotion_classifier,
        fusion_fc,
    })
}

/// Node ids of a full forward pass for one matched pair.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub content_code_v: NodeId,
    pub content_code_m: NodeId,
    pub recon_v: NodeId,
    pub recon_m: NodeId,
    pub emotion_code_v: NodeId,
    pub emotion_code_m: NodeId,
    pub logits_v: NodeId,
    pub logits_m: NodeId,
    pub fused_v: NodeId,
    pub fused_m: NodeId,
}

/// Values of a full forward pass for one matched pair.
#[derive(Debug, Clone)]
pub struct ForwardOutputs<T> {
    pub content_code_v: Vec<T>,
    pub content_code_m: Vec<T>,
    pub recon_v: Vec<T>,
    pub recon_m: Vec<T>,
    pub emotion_code_v: Vec<T>,
    pub emotion_code_m: Vec<T>,
    pub logits_v: Vec<T>,
    pub logits_m: Vec<T>,
    pub fused_v: Vec<T>,
    pub fused_m: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Config(format!(
                "{what} length {got} does not match configured dim {want}"
            )));
        }
        Ok(())
    }

    /// Content code `E(proj(feat))` for one item, recorded on the tape.
    ///
    /// `store` supplies the parameter values; it is normally
    /// [`ModelParams::store`], but gradient checks pass a perturbed copy
    /// with the same layout.
    pub fn content_code(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        feat: &[T],
        modality: Modality,
    ) -> Result<NodeId> {
        self.check_len(
            &format!("{} content feature", modality.as_str()),
            feat.len(),
            self.dims.content_dim(modality),
        )?;
        let x = tape.input_row(feat)?;
        let proj = match modality {
            Modality::Video => &self.video_content_proj,
            Modality::Music => &self.music_content_proj,
        };
        let mut h = proj.forward(tape, store, x)?;
        for l in &self.shared_encoder {
            h = l.forward(tape, store, h)?;
        }
        Ok(h)
    }

    /// Reconstruction `out(D(code))` back to the modality's native width.
    pub fn content_recon(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        code: NodeId,
        modality: Modality,
    ) -> Result<NodeId> {
        let mut h = code;
        for l in &self.shared_decoder {
            h = l.forward(tape, store, h)?;
        }
        let out = match modality {
            Modality::Video => &self.video_decoder_out,
            Modality::Music => &self.music_decoder_out,
        };
        out.forward(tape, store, h)
    }

    /// Content path for a matched pair: codes and reconstructions.
    pub fn content_forward(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        v_feat: &[T],
        m_feat: &[T],
    ) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let code_v = self.content_code(store, tape, v_feat, Modality::Video)?;
        let code_m = self.content_code(store, tape, m_feat, Modality::Music)?;
        let recon_v = self.content_recon(store, tape, code_v, Modality::Video)?;
        let recon_m = self.content_recon(store, tape, code_m, Modality::Music)?;
        Ok((code_v, code_m, recon_v, recon_m))
    }

    /// Emotion code `MLP(proj(feat))` for one item.
    pub fn emotion_code(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        feat: &[T],
        modality: Modality,
    ) -> Result<NodeId> {
        self.check_len(
            &format!("{} emotion feature", modality.as_str()),
            feat.len(),
            self.dims.emotion_dim(modality),
        )?;
        let x = tape.input_row(feat)?;
        let proj = match modality {
            Modality::Video => &self.emotion_proj_v,
            Modality::Music => &self.emotion_proj_m,
        };
        let mut h = proj.forward(tape, store, x)?;
        for l in &self.shared_emotion_mlp {
            h = l.forward(tape, store, h)?;
        }
        Ok(h)
    }

    /// Emotion path for one item: code plus class logits.
    pub fn emotion_forward(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        feat: &[T],
        modality: Modality,
    ) -> Result<(NodeId, NodeId)> {
        let code = self.emotion_code(store, tape, feat, modality)?;
        let logits = self.emotion_classifier.forward(tape, store, code)?;
        Ok((code, logits))
    }

    /// Fuses a content code with an emotion code. Splicing concatenates;
    /// interactive additionally runs the learned FC so the two kinds of
    /// information interact.
    pub fn fuse(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        content_code: NodeId,
        emotion_code: NodeId,
        mode: FusionMode,
    ) -> Result<NodeId> {
        let spliced = tape.concat_cols(content_code, emotion_code)?;
        match mode {
            FusionMode::Splicing => Ok(spliced),
            FusionMode::Interactive => self.fusion_fc.forward(tape, store, spliced),
        }
    }

    /// Full forward for one matched pair, recording every branch.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_pair(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        v_content: &[T],
        v_emotion: &[T],
        m_content: &[T],
        m_emotion: &[T],
        mode: FusionMode,
    ) -> Result<ForwardNodes> {
        let (content_code_v, content_code_m, recon_v, recon_m) =
            self.content_forward(store, tape, v_content, m_content)?;
        let (emotion_code_v, logits_v) =
            self.emotion_forward(store, tape, v_emotion, Modality::Video)?;
        let (emotion_code_m, logits_m) =
            self.emotion_forward(store, tape, m_emotion, Modality::Music)?;
        let fused_v = self.fuse(store, tape, content_code_v, emotion_code_v, mode)?;
        let fused_m = self.fuse(store, tape, content_code_m, emotion_code_m, mode)?;
        Ok(ForwardNodes {
            content_code_v,
            content_code_m,
            recon_v,
            recon_m,
            emotion_code_v,
            emotion_code_m,
            logits_v,
            logits_m,
            fused_v,
            fused_m,
        })
    }

    /// Full forward for one pair with values extracted from the tape.
    pub fn forward_outputs(
        &self,
        v_content: &[T],
        v_emotion: &[T],
        m_content: &[T],
        m_emotion: &[T],
        mode: FusionMode,
    ) -> Result<ForwardOutputs<T>> {
        let mut tape = Tape::new();
        let nodes = self.forward_pair(
            &self.store,
            &mut tape,
            v_content,
            v_emotion,
            m_content,
            m_emotion,
            mode,
        )?;
        let grab = |id: NodeId| tape.value(id).values().to_vec();
        Ok(ForwardOutputs {
            content_code_v: grab(nodes.content_code_v),
            content_code_m: grab(nodes.content_code_m),
            recon_v: grab(nodes.recon_v),
            recon_m: grab(nodes.recon_m),
            emotion_code_v: grab(nodes.emotion_code_v),
            emotion_code_m: grab(nodes.emotion_code_m),
            logits_v: grab(nodes.logits_v),
            logits_m: grab(nodes.logits_m),
            fused_v: grab(nodes.fused_v),
            fused_m: grab(nodes.fused_m),
        })
    }

    /// The retrieval embedding of one item under the given kind. Runs only
    /// the branches the kind needs.
    pub fn embedding(
        &self,
        kind: EmbeddingKind,
        content_feat: &[T],
        emotion_feat: &[T],
        modality: Modality,
    ) -> Result<Vec<T>> {
        let store = &self.store;
        let mut tape = Tape::new();
        let node = match kind {
            EmbeddingKind::Content => {
                self.content_code(store, &mut tape, content_feat, modality)?
            }
            EmbeddingKind::Emotion => {
                self.emotion_code(store, &mut tape, emotion_feat, modality)?
            }
            EmbeddingKind::Splicing | EmbeddingKind::Interactive => {
                let c = self.content_code(store, &mut tape, content_feat, modality)?;
                let e = self.emotion_code(store, &mut tape, emotion_feat, modality)?;
                let mode = if kind == EmbeddingKind::Splicing {
                    FusionMode::Splicing
                } else {
                    FusionMode::Interactive
                };
                self.fuse(store, &mut tape, c, e, mode)?
            }
        };
        Ok(tape.value(node).values().to_vec())
    }

    /// Test/diagnostic hook: overwrite one named parameter's values.
    pub fn set_param_values(&mut self, name: &str, values: Tensor2<T>) -> Result<()> {
        let id = self
            .store
            .ids()
            .find(|&id| self.store.name(id) == name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        let current = self.store.value(id).shape();
        if values.shape() != current {
            return Err(Error::Config(format!(
                "parameter {name} has shape {}x{}, got {}x{}",
                current.0,
                current.1,
                values.rows(),
                values.cols()
            )));
        }
        self.store.get_mut(id).value = values;
        Ok(())
    }
}
