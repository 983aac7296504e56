//! Loss components for the dual-path retrieval objective.
//!
//! Every norm-like quantity here is the cosine distance `1 - cos`, so all
//! losses are invariant to positive rescaling of their input embeddings.
//!
//! Each loss exists in two forms that are tested against each other:
//! value-level functions operating on plain slices (the hand-checkable
//! semantics), and graph builders in [`graph`] that record the same
//! computation on a gradient tape for training.

use crate::error::{Error, Result};
use crate::numgrad::{cosine_distance, Real};

/// Weights and switches for composing the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Distance threshold of the contrastive hinge, in cosine-distance
    /// space `[0, 2]`.
    pub margin: f64,
    /// Content-loss weights: `lambda1 * reconstruction + lambda2 * metric`.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Emotion-loss weights: `mu1 * discrimination + mu2 * intermodal`.
    pub mu1: f64,
    pub mu2: f64,
    /// Total-objective weights over content, emotion, and fusion losses.
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub metric_variant: MetricVariant,
    pub fusion_mode: FusionMode,
    /// Where the batch metric term is computed when using the batch or
    /// polarity-penalty variants. Content codes are the default; fused
    /// embeddings are available for experimentation.
    pub metric_site: MetricSite,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            // Push mismatched pairs at least to orthogonality. Smaller
            // margins leave in-batch negatives under-separated and measurably
            // degrade top-1 retrieval.
            margin: 1.0,
            lambda1: 0.8,
            lambda2: 1.0,
            mu1: 0.8,
            mu2: 1.0,
            k1: 0.5,
            k2: 0.5,
            k3: 1.0,
            metric_variant: MetricVariant::Contrastive,
            fusion_mode: FusionMode::Interactive,
            metric_site: MetricSite::Content,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return Err(Error::Config(format!(
                "margin must lie in (0, 2], got {}",
                self.margin
            )));
        }
        for (name, w) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Which metric loss the content path trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricVariant {
    /// Per-combination contrastive hinge loss.
    Contrastive,
    /// Batch similarity-difference sum.
    BatchMetric,
    /// Polarity penalty metric loss: batch form with a gate on
    /// already-separated negatives and a polarity-difference weight.
    Ppml,
}

impl MetricVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(MetricVariant::Contrastive),
            "batch" => Ok(MetricVariant::BatchMetric),
            "ppml" => Ok(MetricVariant::Ppml),
            other => Err(Error::Config(format!(
                "unknown metric variant '{other}' (expected contrastive|batch|ppml)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricVariant::Contrastive => "contrastive",
            MetricVariant::BatchMetric => "batch",
            MetricVariant::Ppml => "ppml",
        }
    }
}

/// How content and emotion codes are combined into one embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Plain concatenation of the two codes.
    Splicing,
    /// A learned fully-connected transform of the spliced vector.
    Interactive,
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "splicing" => Ok(FusionMode::Splicing),
            "interactive" => Ok(FusionMode::Interactive),
            other => Err(Error::Config(format!(
                "unknown fusion mode '{other}' (expected splicing|interactive)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::Splicing => "splicing",
            FusionMode::Interactive => "interactive",
        }
    }
}

/// Embeddings the batch metric term is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSite {
    Content,
    Fused,
}

impl MetricSite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(MetricSite::Content),
            "fused" => Ok(MetricSite::Fused),
            other => Err(Error::Config(format!(
                "unknown metric site '{other}' (expected content|fused)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricSite::Content => "content",
            MetricSite::Fused => "fused",
        }
    }
}

/// Pair label: 0 for a matched video-music pair, 1 for a mismatched one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Matched,
    Mismatched,
}

impl PairLabel {
    pub fn y(&self) -> u8 {
        match self {
            PairLabel::Matched => 0,
            PairLabel::Mismatched => 1,
        }
    }
}

/// Coarse sentiment polarity of a pair: negative(0), neutral(1), positive(2).
///
/// The encoding makes `|a - b|` penalize opposite polarities twice as hard
/// as neutral-adjacent ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolarityLabel {
    Negative,
    Neutral,
    Positive,
}

impl PolarityLabel {
    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            0 => Ok(PolarityLabel::Negative),
            1 => Ok(PolarityLabel::Neutral),
            2 => Ok(PolarityLabel::Positive),
            other => Err(Error::Data(format!(
                "polarity label must be 0, 1, or 2, got {other}"
            ))),
        }
    }

    pub fn index(&self) -> u8 {
        match self {
            PolarityLabel::Negative => 0,
            PolarityLabel::Neutral => 1,
            PolarityLabel::Positive => 2,
        }
    }

    /// Polarity penalty coefficient `|label_k - label_i|`, in {0, 1, 2}.
    pub fn penalty(&self, other: &PolarityLabel) -> u8 {
        self.index().abs_diff(other.index())
    }
}

/// N x N cosine similarities `phi[k][i]` between video k's embedding and
/// music i's embedding. The diagonal holds matched-pair similarities.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix<T> {
    n: usize,
    phi: Vec<T>,
}

impl<T: Real> SimilarityMatrix<T> {
    /// Builds from row-major values, validating the cosine range. Values a
    /// hair outside `[-1, 1]` from float rounding are clamped.
    pub fn from_values(n: usize, phi: Vec<T>) -> Result<Self> {
        if phi.len() != n * n {
            return Err(Error::Config(format!(
                "similarity matrix needs {} values for n={n}, got {}",
                n * n,
                phi.len()
            )));
        }
        let tol = T::from_f64_lossy(1e-6);
        let one = T::one();
        let mut clamped = phi;
        for v in &mut clamped {
            if !v.is_finite() || v.abs() > one + tol {
                return Err(Error::Data(format!(
                    "similarity {v} outside the cosine range [-1, 1]"
                )));
            }
            *v = v.min(one).max(-one);
        }
        Ok(SimilarityMatrix { n, phi: clamped })
    }

    /// Pairwise cosine similarities of two equally sized embedding lists.
    pub fn from_embeddings(videos: &[Vec<T>], musics: &[Vec<T>]) -> Result<Self> {
        if videos.len() != musics.len() {
            return Err(Error::Config(format!(
                "similarity matrix needs equal counts, got {} videos and {} musics",
                videos.len(),
                musics.len()
            )));
        }
        let n = videos.len();
        let mut phi = Vec::with_capacity(n * n);
        for v in videos {
            for m in musics {
                phi.push(crate::numgrad::cosine_similarity(v, m)?);
            }
        }
        Self::from_values(n, phi)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize) -> T {
        self.phi[k * self.n + i]
    }
}

/// Reconstruction loss: `cos_dist(v, recon_v) + cos_dist(m, recon_m)`,
/// in `[0, 4]`.
pub fn reconstruction_loss<T: Real>(v: &[T], recon_v: &[T], m: &[T], recon_m: &[T]) -> Result<T> {
    Ok(cosine_distance(v, recon_v)? + cosine_distance(m, recon_m)?)
}

/// Contrastive metric loss over one pair of codes:
/// `1/2 (1-y) d^2 + 1/2 y max(0, margin - d)^2` with d the cosine distance.
pub fn contrastive_metric_loss<T: Real>(
    code_v: &[T],
    code_m: &[T],
    y: PairLabel,
    margin: T,
) -> Result<T> {
    if margin <= T::zero() {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }
    let d = cosine_distance(code_v, code_m)?;
    let half = T::from_f64_lossy(0.5);
    Ok(match y {
        PairLabel::Matched => half * d * d,
        PairLabel::Mismatched => {
            let hinge = (margin - d).max(T::zero());
            half * hinge * hinge
        }
    })
}

fn cross_entropy<T: Real>(logits: &[T], class: usize) -> Result<T> {
    if class >= logits.len() {
        return Err(Error::Data(format!(
            "class index {class} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for &v in logits {
        sum = sum + (v - max).exp();
    }
    Ok(max + sum.ln() - logits[class])
}

/// Discrimination loss: cross-entropy of both modalities' emotion logits
/// against their class labels, natural log.
pub fn discrimination_loss<T: Real>(
    logits_v: &[T],
    logits_m: &[T],
    class_v: usize,
    class_m: usize,
) -> Result<T> {
    Ok(cross_entropy(logits_v, class_v)? + cross_entropy(logits_m, class_m)?)
}

/// Inter-modal loss: `-cos_dist(emotion_code_v, emotion_code_m)`, in
/// `[-2, 0]`. Minimizing it pushes the modalities' emotion codes apart.
pub fn intermodal_loss<T: Real>(emotion_code_v: &[T], emotion_code_m: &[T]) -> Result<T> {
    Ok(-cosine_distance(emotion_code_v, emotion_code_m)?)
}

/// Fusion loss: cosine distance between the fused embeddings of a matched
/// pair.
pub fn fusion_loss<T: Real>(fused_v: &[T], fused_m: &[T]) -> Result<T> {
    cosine_distance(fused_v, fused_m)
}

/// The raw loss components entering the composite objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub reconstruction: f64,
    pub content_metric: f64,
    pub discrimination: f64,
    pub intermodal: f64,
    pub fusion: f64,
}

/// Composite losses per the weighted objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLosses {
    pub content: f64,
    pub emotion: f64,
    pub total: f64,
}

/// Combines components into content, emotion, and total losses:
/// `content = lambda1 * L_R + lambda2 * L_M`,
/// `emotion = mu1 * L_D + mu2 * L_inter`,
/// `total = k1 * content + k2 * emotion + k3 * L_fusion`.
pub fn composite_losses(components: &LossComponents, cfg: &LossConfig) -> Result<CompositeLosses> {
    for (name, v) in [
        ("reconstruction", components.reconstruction),
        ("content_metric", components.content_metric),
        ("discrimination", components.discrimination),
        ("intermodal", components.intermodal),
        ("fusion", components.fusion),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss component {name} is {v}")));
        }
    }
    let content = cfg.lambda1 * components.reconstruction + cfg.lambda2 * components.content_metric;
    let emotion = cfg.mu1 * components.discrimination + cfg.mu2 * components.intermodal;
    let total = cfg.k1 * content + cfg.k2 * emotion + cfg.k3 * components.fusion;
    Ok(CompositeLosses {
        content,
        emotion,
        total,
    })
}

/// Batch metric loss: `sum_k sum_{i != k} (phi(v_k, m_i) - phi(v_k, m_k))`.
pub fn batch_metric_loss<T: Real>(sim: &SimilarityMatrix<T>) -> Result<T> {
    if sim.n() < 2 {
        return Err(Error::Config(format!(
            "batch metric loss needs n >= 2 pairs, got {}",
            sim.n()
        )));
    }
    let mut acc = T::zero();
    for k in 0..sim.n() {
        for i in 0..sim.n() {
            if i != k {
                acc = acc + (sim.get(k, i) - sim.get(k, k));
            }
        }
    }
    Ok(acc)
}

/// Polarity penalty metric loss:
/// `sum_k sum_{i != k} (P_ki * rho_ki * phi(v_k, m_i) - phi(v_k, m_k))`
/// where `rho_ki` gates out negatives already ranked below the matched pair
/// and `P_ki = |polarity_k - polarity_i|`.
pub fn ppml<T: Real>(sim: &SimilarityMatrix<T>, polarity: &[PolarityLabel]) -> Result<T> {
    if sim.n() < 2 {
        return Err(Error::Config(format!(
            "polarity penalty metric loss needs n >= 2 pairs, got {}",
            sim.n()
        )));
    }
    if polarity.len() != sim.n() {
        return Err(Error::Data(format!(
            "polarity label count {} does not match batch size {}",
            polarity.len(),
            sim.n()
        )));
    }
    let mut acc = T::zero();
    for k in 0..sim.n() {
        let diag = sim.get(k, k);
        for i in 0..sim.n() {
            if i == k {
                continue;
            }
            let phi = sim.get(k, i);
            let rho = if phi < diag { T::zero() } else { T::one() };
            let p = T::from_f64_lossy(f64::from(polarity[k].penalty(&polarity[i])));
            acc = acc + (p * rho * phi - diag);
        }
    }
    Ok(acc)
}

/// Tape-recorded builders for the same losses, used by training and the
/// gradient oracle. Each builder's forward value equals the corresponding
/// value-level function on the same inputs.
pub mod graph {
    use super::{LossConfig, PairLabel, PolarityLabel};
    use crate::error::{Error, Result};
    use crate::numgrad::{NodeId, Real, Tape};

    /// `cos_dist(v, recon_v) + cos_dist(m, recon_m)` for one pair.
    pub fn reconstruction_pair<T: Real>(
        tape: &mut Tape<T>,
        v: NodeId,
        recon_v: NodeId,
        m: NodeId,
        recon_m: NodeId,
    ) -> Result<NodeId> {
        let sv = tape.cosine_sim(v, recon_v)?;
        let sm = tape.cosine_sim(m, recon_m)?;
        let two = T::from_f64_lossy(2.0);
        tape.affine(&[(-T::one(), sv), (-T::one(), sm)], two)
    }

    /// Contrastive hinge for one (video, music) combination.
    pub fn contrastive_pair<T: Real>(
        tape: &mut Tape<T>,
        code_v: NodeId,
        code_m: NodeId,
        y: PairLabel,
        margin: T,
    ) -> Result<NodeId> {
        let d = tape.cosine_dist(code_v, code_m)?;
        let half = T::from_f64_lossy(0.5);
        match y {
            PairLabel::Matched => {
                let sq = tape.square(d)?;
                tape.affine(&[(half, sq)], T::zero())
            }
            PairLabel::Mismatched => {
                let gap = tape.affine(&[(-T::one(), d)], margin)?;
                let hinge = tape.relu(gap)?;
                let sq = tape.square(hinge)?;
                tape.affine(&[(half, sq)], T::zero())
            }
        }
    }

    /// Cross-entropy of both modality logits for one pair.
    pub fn discrimination_pair<T: Real>(
        tape: &mut Tape<T>,
        logits_v: NodeId,
        class_v: usize,
        logits_m: NodeId,
        class_m: usize,
    ) -> Result<NodeId> {
        let cv = tape.softmax_cross_entropy(logits_v, class_v)?;
        let cm = tape.softmax_cross_entropy(logits_m, class_m)?;
        tape.affine(&[(T::one(), cv), (T::one(), cm)], T::zero())
    }

    /// `-cos_dist(ev, em) = sim - 1` for one pair.
    pub fn intermodal_pair<T: Real>(tape: &mut Tape<T>, ev: NodeId, em: NodeId) -> Result<NodeId> {
        let sim = tape.cosine_sim(ev, em)?;
        tape.affine(&[(T::one(), sim)], -T::one())
    }

    /// `cos_dist(fv, fm)` for one pair.
    pub fn fusion_pair<T: Real>(tape: &mut Tape<T>, fv: NodeId, fm: NodeId) -> Result<NodeId> {
        tape.cosine_dist(fv, fm)
    }

    /// The n x n matrix of cosine-similarity nodes between video and music
    /// embeddings, row-major in k then i.
    pub fn pairwise_similarities<T: Real>(
        tape: &mut Tape<T>,
        video_codes: &[NodeId],
        music_codes: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        if video_codes.len() != music_codes.len() {
            return Err(Error::Config(format!(
                "pairwise similarities need equal counts, got {} and {}",
                video_codes.len(),
                music_codes.len()
            )));
        }
        let n = video_codes.len();
        let mut sims = Vec::with_capacity(n * n);
        for &v in video_codes {
            for &m in music_codes {
                sims.push(tape.cosine_sim(v, m)?);
            }
        }
        Ok(sims)
    }

    /// Batch metric loss over an n x n grid of similarity nodes, exactly as
    /// the printed sum (no normalization).
    pub fn batch_metric<T: Real>(tape: &mut Tape<T>, sims: &[NodeId], n: usize) -> Result<NodeId> {
        if sims.len() != n * n {
            return Err(Error::Config(format!(
                "batch metric needs {} similarity nodes for n={n}, got {}",
                n * n,
                sims.len()
            )));
        }
        let mut terms = Vec::with_capacity(2 * n * (n.saturating_sub(1)));
        for k in 0..n {
            for i in 0..n {
                if i != k {
                    terms.push((T::one(), sims[k * n + i]));
                    terms.push((-T::one(), sims[k * n + k]));
                }
            }
        }
        tape.affine(&terms, T::zero())
    }

    /// Polarity penalty metric loss over an n x n grid of similarity nodes.
    ///
    /// The gate `rho` and the penalty `P` enter as constant coefficients, so
    /// no gradient flows through them. Returns the loss node together with
    /// the smallest |phi_ki - phi_kk| gap, which gradient checks use to
    /// resample inputs sitting on the gate boundary.
    pub fn ppml<T: Real>(
        tape: &mut Tape<T>,
        sims: &[NodeId],
        n: usize,
        polarity: &[PolarityLabel],
    ) -> Result<(NodeId, T)> {
        if sims.len() != n * n {
            return Err(Error::Config(format!(
                "polarity penalty metric loss needs {} similarity nodes for n={n}, got {}",
                n * n,
                sims.len()
            )));
        }
        if polarity.len() != n {
            return Err(Error::Data(format!(
                "polarity label count {} does not match batch size {n}",
                polarity.len()
            )));
        }
        let mut terms = Vec::new();
        let mut min_gap = T::infinity();
        for k in 0..n {
            let diag = tape.scalar(sims[k * n + k]);
            for i in 0..n {
                if i == k {
                    continue;
                }
                let phi = tape.scalar(sims[k * n + i]);
                let gap = (phi - diag).abs();
                if gap < min_gap {
                    min_gap = gap;
                }
                let rho = if phi < diag { T::zero() } else { T::one() };
                let p = T::from_f64_lossy(f64::from(polarity[k].penalty(&polarity[i])));
                let coeff = p * rho;
                if coeff != T::zero() {
                    terms.push((coeff, sims[k * n + i]));
                }
                terms.push((-T::one(), sims[k * n + k]));
            }
        }
        let node = tape.affine(&terms, T::zero())?;
        Ok((node, min_gap))
    }

    /// Weighted composite `k1*(l1*R + l2*M) + k2*(m1*D + m2*I) + k3*F` as a
    /// single affine node over the component nodes.
    pub fn composite<T: Real>(
        tape: &mut Tape<T>,
        reconstruction: NodeId,
        content_metric: NodeId,
        discrimination: NodeId,
        intermodal: NodeId,
        fusion: NodeId,
        cfg: &LossConfig,
    ) -> Result<NodeId> {
        let c = |x: f64| T::from_f64_lossy(x);
        tape.affine(
            &[
                (c(cfg.k1 * cfg.lambda1), reconstruction),
                (c(cfg.k1 * cfg.lambda2), content_metric),
                (c(cfg.k2 * cfg.mu1), discrimination),
                (c(cfg.k2 * cfg.mu2), intermodal),
                (c(cfg.k3), fusion),
            ],
            T::zero(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim2(values: [f64; 4]) -> SimilarityMatrix<f64> {
        SimilarityMatrix::from_values(2, values.to_vec()).unwrap()
    }

    #[test]
    fn reconstruction_perfect_and_orthogonal() {
        let v = [1.0_f64, 0.0];
        let m = [0.0, 1.0];
        assert!(reconstruction_loss(&v, &v, &m, &m).unwrap().abs() < 1e-12);
        // recon_v orthogonal to v, recon_m = m
        let rv = [0.0, 1.0];
        let l = reconstruction_loss(&v, &rv, &m, &m).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        // both orthogonal
        let rm = [1.0, 0.0];
        let l = reconstruction_loss(&v, &rv, &m, &rm).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn contrastive_matched_identical_is_zero() {
        let c = [0.3_f64, 0.4];
        let l = contrastive_metric_loss(&c, &c, PairLabel::Matched, 0.5).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn contrastive_mismatched_identical_hits_full_hinge() {
        let c = [0.3_f64, 0.4];
        let l = contrastive_metric_loss(&c, &c, PairLabel::Mismatched, 0.5).unwrap();
        assert!((l - 0.125).abs() < 1e-12);
    }

    #[test]
    fn contrastive_mismatched_orthogonal_hinge_inactive() {
        let a = [1.0_f64, 0.0];
        let b = [0.0, 1.0];
        let l = contrastive_metric_loss(&a, &b, PairLabel::Mismatched, 0.5).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn discrimination_uniform_logits() {
        let l = discrimination_loss(&[0.0_f64, 0.0], &[0.0, 0.0], 0, 1).unwrap();
        assert!((l - 2.0 * (2.0_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn discrimination_confident_correct_tends_to_zero() {
        let l = discrimination_loss(&[40.0_f64, 0.0], &[0.0, 40.0], 0, 1).unwrap();
        assert!(l < 1e-12, "loss {l}");
    }

    #[test]
    fn discrimination_rejects_bad_class() {
        let err = discrimination_loss(&[0.0_f64, 0.0], &[0.0, 0.0], 2, 0).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn intermodal_identical_orthogonal_antipodal() {
        let a = [1.0_f64, 0.0];
        assert!(intermodal_loss(&a, &a).unwrap().abs() < 1e-12);
        assert!((intermodal_loss(&a, &[0.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((intermodal_loss(&a, &[-1.0, 0.0]).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_identical_orthogonal_antipodal() {
        let a = [1.0_f64, 0.0];
        assert!(fusion_loss(&a, &a).unwrap().abs() < 1e-12);
        assert!((fusion_loss(&a, &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((fusion_loss(&a, &[-1.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn composite_values() {
        let cfg = LossConfig::default();
        let composed = composite_losses(
            &LossComponents {
                reconstruction: 1.0,
                content_metric: 0.5,
                discrimination: 0.0,
                intermodal: 0.0,
                fusion: 0.0,
            },
            &cfg,
        )
        .unwrap();
        assert!((composed.content - 1.3).abs() < 1e-12);

        let composed = composite_losses(&LossComponents::default(), &cfg).unwrap();
        assert_eq!(composed.total, 0.0);
    }

    #[test]
    fn composite_total_from_given_composites() {
        // content = 1.3, emotion = 1.0, fusion = 0.4 with k = (0.5, 0.5, 1.0)
        // gives total 1.55. Reconstructed from raw components.
        let cfg = LossConfig::default();
        let composed = composite_losses(
            &LossComponents {
                reconstruction: 1.0,
                content_metric: 0.5,
                discrimination: 0.0,
                intermodal: 1.0,
                fusion: 0.4,
            },
            &cfg,
        )
        .unwrap();
        assert!((composed.content - 1.3).abs() < 1e-12);
        assert!((composed.emotion - 1.0).abs() < 1e-12);
        assert!((composed.total - 1.55).abs() < 1e-12);
    }

    #[test]
    fn batch_metric_printed_examples() {
        let l = batch_metric_loss(&sim2([0.9, 0.2, 0.1, 0.8])).unwrap();
        assert!((l + 1.4).abs() < 1e-12);

        let l = batch_metric_loss(&sim2([0.3, 0.3, 0.3, 0.3])).unwrap();
        assert!(l.abs() < 1e-12);

        let eye =
            SimilarityMatrix::from_values(3, vec![1.0_f64, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                .unwrap();
        let l = batch_metric_loss(&eye).unwrap();
        assert!((l + 6.0).abs() < 1e-12);
    }

    #[test]
    fn batch_metric_rejects_single_pair() {
        let s = SimilarityMatrix::from_values(1, vec![1.0]).unwrap();
        assert!(matches!(
            batch_metric_loss(&s).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn ppml_gates_low_similarity_negatives() {
        use PolarityLabel::{Negative, Positive};
        let l = ppml(&sim2([0.9, 0.2, 0.1, 0.8]), &[Positive, Negative]).unwrap();
        assert!((l + 1.7).abs() < 1e-12, "got {l}");
    }

    #[test]
    fn ppml_keeps_hard_negatives_with_polarity_weight() {
        use PolarityLabel::{Negative, Positive};
        let l = ppml(&sim2([0.2, 0.9, 0.8, 0.1]), &[Positive, Negative]).unwrap();
        assert!((l - 3.1).abs() < 1e-12, "got {l}");
    }

    #[test]
    fn ppml_same_polarity_annihilates_negative_terms() {
        use PolarityLabel::Neutral;
        let sim = sim2([0.2, 0.9, 0.8, 0.1]);
        let l = ppml(&sim, &[Neutral, Neutral]).unwrap();
        // Every P_ki = 0, so only the -phi(v_k, m_k) terms remain.
        let expected = -(sim.get(0, 0) + sim.get(1, 1));
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn ppml_equals_batch_metric_when_ungated_and_unit_penalty() {
        use PolarityLabel::{Negative, Neutral};
        // Off-diagonal similarities above the diagonal keep rho = 1, and
        // polarities differing by exactly one make every P_ki = 1.
        let sim = sim2([0.1, 0.7, 0.6, 0.05]);
        let p = ppml(&sim, &[Negative, Neutral]).unwrap();
        let b = batch_metric_loss(&sim).unwrap();
        assert!((p - b).abs() < 1e-12);
    }

    #[test]
    fn ppml_rejects_mismatched_polarity_length() {
        let err = ppml(&sim2([0.9, 0.2, 0.1, 0.8]), &[PolarityLabel::Neutral]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn polarity_penalty_encoding() {
        use PolarityLabel::*;
        assert_eq!(Negative.penalty(&Positive), 2);
        assert_eq!(Negative.penalty(&Neutral), 1);
        assert_eq!(Positive.penalty(&Positive), 0);
        assert!(PolarityLabel::from_index(3).is_err());
    }

    #[test]
    fn similarity_matrix_rejects_out_of_range() {
        let err = SimilarityMatrix::from_values(1, vec![1.5_f64]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn loss_config_validation() {
        let mut cfg = LossConfig::default();
        cfg.validate().unwrap();
        cfg.margin = 0.0;
        assert!(cfg.validate().is_err());
        cfg.margin = 2.5;
        assert!(cfg.validate().is_err());
        cfg.margin = 0.5;
        cfg.k3 = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn graph_losses_match_value_losses() {
        use crate::numgrad::Tape;
        let v = [0.3, -0.7, 0.2];
        let rv = [0.1, 0.4, -0.2];
        let m = [0.9, 0.1, 0.3];
        let rm = [0.2, 0.2, 0.6];

        let mut tape = Tape::<f64>::new();
        let vn = tape.input_row(&v).unwrap();
        let rvn = tape.input_row(&rv).unwrap();
        let mn = tape.input_row(&m).unwrap();
        let rmn = tape.input_row(&rm).unwrap();

        let rec = graph::reconstruction_pair(&mut tape, vn, rvn, mn, rmn).unwrap();
        let expected = reconstruction_loss(&v, &rv, &m, &rm).unwrap();
        assert!((tape.scalar(rec) - expected).abs() < 1e-12);

        let con = graph::contrastive_pair(&mut tape, vn, mn, PairLabel::Mismatched, 0.5).unwrap();
        let expected = contrastive_metric_loss(&v, &m, PairLabel::Mismatched, 0.5).unwrap();
        assert!((tape.scalar(con) - expected).abs() < 1e-12);

        let inter = graph::intermodal_pair(&mut tape, vn, mn).unwrap();
        let expected = intermodal_loss(&v, &m).unwrap();
        assert!((tape.scalar(inter) - expected).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        use crate::numgrad::{check_gradients, ParamStore, Tape, Tensor2};
        use rand::{Rng, SeedableRng};
        // Random 8-dim embeddings as trainable parameters; the loss is the
        // contrastive hinge between them.
        for seed in 0..5u64 {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            let draw = |rng: &mut rand::rngs::StdRng| -> Vec<f64> {
                (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let a = store
                .insert("a", Tensor2::from_vec(1, 8, draw(&mut rng)).unwrap())
                .unwrap();
            let b = store
                .insert("b", Tensor2::from_vec(1, 8, draw(&mut rng)).unwrap())
                .unwrap();
            for y in [PairLabel::Matched, PairLabel::Mismatched] {
                let result = check_gradients(&mut store, 1e-5, |store| {
                    let mut tape = Tape::new();
                    let an = tape.param(store, a)?;
                    let bn = tape.param(store, b)?;
                    let loss = graph::contrastive_pair(&mut tape, an, bn, y, 0.5)?;
                    Ok((tape, loss))
                })
                .unwrap();
                assert!(
                    result.max_relative_error <= 1e-4,
                    "seed {seed} label {y:?}: {}",
                    result.max_relative_error
                );
            }
        }
    }

    #[test]
    fn ppml_gradient_matches_finite_differences() {
        use crate::numgrad::{check_gradients, ParamStore, Tape, Tensor2};
        use rand::{Rng, SeedableRng};
        // Random 4-pair batch of 6-dim embeddings; the polarity gate is a
        // constant coefficient, so gradients flow only through surviving
        // negative terms and the matched similarities.
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let mut ids = Vec::new();
        for i in 0..4 {
            for side in ["v", "m"] {
                let values: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                ids.push(
                    store
                        .insert(
                            &format!("{side}{i}"),
                            Tensor2::from_vec(1, 6, values).unwrap(),
                        )
                        .unwrap(),
                );
            }
        }
        let polarity = [
            PolarityLabel::Negative,
            PolarityLabel::Positive,
            PolarityLabel::Neutral,
            PolarityLabel::Positive,
        ];
        let result = check_gradients(&mut store, 1e-5, |store| {
            let mut tape = Tape::new();
            let mut videos = Vec::new();
            let mut musics = Vec::new();
            for (i, &id) in ids.iter().enumerate() {
                let node = tape.param(store, id)?;
                if i % 2 == 0 {
                    videos.push(node);
                } else {
                    musics.push(node);
                }
            }
            let sims = graph::pairwise_similarities(&mut tape, &videos, &musics)?;
            let (loss, _gap) = graph::ppml(&mut tape, &sims, 4, &polarity)?;
            Ok((tape, loss))
        })
        .unwrap();
        assert!(
            result.max_relative_error <= 1e-4,
            "ppml gradient mismatch: {}",
            result.max_relative_error
        );
    }

    #[test]
    fn graph_batch_losses_match_value_losses() {
        use crate::numgrad::Tape;
        let videos = vec![vec![0.4, -0.3], vec![0.1, 0.9], vec![-0.5, 0.2]];
        let musics = vec![vec![0.2, 0.8], vec![-0.4, 0.1], vec![0.6, 0.6]];
        let sim = SimilarityMatrix::from_embeddings(&videos, &musics).unwrap();
        let pol = [
            PolarityLabel::Positive,
            PolarityLabel::Negative,
            PolarityLabel::Neutral,
        ];

        let mut tape = Tape::<f64>::new();
        let vn: Vec<_> = videos.iter().map(|v| tape.input_row(v).unwrap()).collect();
        let mn: Vec<_> = musics.iter().map(|m| tape.input_row(m).unwrap()).collect();
        let sims = graph::pairwise_similarities(&mut tape, &vn, &mn).unwrap();

        let bm = graph::batch_metric(&mut tape, &sims, 3).unwrap();
        let expected = batch_metric_loss(&sim).unwrap();
        assert!((tape.scalar(bm) - expected).abs() < 1e-12);

        let (pp, _gap) = graph::ppml(&mut tape, &sims, 3, &pol).unwrap();
        let expected = ppml(&sim, &pol).unwrap();
        assert!((tape.scalar(pp) - expected).abs() < 1e-12);
    }
}
