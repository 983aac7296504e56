//! Synthetic paired-feature generator.
//!
//! Each pair group draws one shared latent: a content part and an emotion
//! part conditioned on a sampled emotion class. Video and music features are
//! fixed random linear images of that latent plus per-item noise, so matched
//! pairs share structure that an oracle can verify independently of any
//! trained model. Polarity labels are a fixed function of the emotion class,
//! which makes them correlated with the emotion latent.

use std::f64::consts::TAU;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::losses::PolarityLabel;
use crate::model::Modality;
use crate::numgrad::Tensor2;

use super::{ItemRecord, PairSet, TableDims, TRUTH_FILE};

/// Spread of the emotion latent around its class center.
const WITHIN_CLASS_SPREAD: f64 = 0.35;

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of pair groups.
    pub num_pairs: usize,
    pub latent_content_dim: usize,
    pub latent_emotion_dim: usize,
    pub video_content_dim: usize,
    pub music_content_dim: usize,
    pub video_emotion_dim: usize,
    pub music_emotion_dim: usize,
    /// Standard deviation of per-item feature noise.
    pub noise_sigma: f64,
    pub num_classes: usize,
    /// Relative sampling weight per emotion class.
    pub class_weights: Vec<f64>,
    /// Polarity label assigned to each emotion class.
    pub polarity_of_class: Vec<u8>,
    /// Matched musics generated per video.
    pub musics_per_group: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let num_classes = 4;
        SyntheticSpec {
            num_pairs: 100,
            latent_content_dim: 16,
            latent_emotion_dim: 8,
            video_content_dim: 64,
            music_content_dim: 56,
            video_emotion_dim: 32,
            music_emotion_dim: 24,
            noise_sigma: 0.1,
            num_classes,
            class_weights: vec![1.0; num_classes],
            polarity_of_class: (0..num_classes).map(|c| (c % 3) as u8).collect(),
            musics_per_group: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_pairs", self.num_pairs),
            ("latent_content_dim", self.latent_content_dim),
            ("latent_emotion_dim", self.latent_emotion_dim),
            ("video_content_dim", self.video_content_dim),
            ("music_content_dim", self.music_content_dim),
            ("video_emotion_dim", self.video_emotion_dim),
            ("music_emotion_dim", self.music_emotion_dim),
            ("num_classes", self.num_classes),
            ("musics_per_group", self.musics_per_group),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.class_weights.len() != self.num_classes {
            return Err(Error::Config(format!(
                "class_weights has {} entries for {} classes",
                self.class_weights.len(),
                self.num_classes
            )));
        }
        if self
            .class_weights
            .iter()
            .any(|&w| !w.is_finite() || w < 0.0)
        {
            return Err(Error::Config("class weights must be >= 0".to_string()));
        }
        if self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "class weights must not all be zero".to_string(),
            ));
        }
        if self.polarity_of_class.len() != self.num_classes {
            return Err(Error::Config(format!(
                "polarity_of_class has {} entries for {} classes",
                self.polarity_of_class.len(),
                self.num_classes
            )));
        }
        for &p in &self.polarity_of_class {
            PolarityLabel::from_index(p)?;
        }
        Ok(())
    }

    pub fn table_dims(&self) -> TableDims {
        TableDims {
            video_content: self.video_content_dim,
            music_content: self.music_content_dim,
            video_emotion: self.video_emotion_dim,
            music_emotion: self.music_emotion_dim,
            classes: self.num_classes,
        }
    }

    fn latent_dim(&self) -> usize {
        self.latent_content_dim + self.latent_emotion_dim
    }

    /// The fixed random linear maps carrying the shared latent into video
    /// and music feature space. Part of the ground-truth key: verification
    /// tooling can invert them to check retrievability without any trained
    /// model.
    pub fn modal_maps(&self) -> Result<(Tensor2<f64>, Tensor2<f64>)> {
        self.validate()?;
        let mut rng = StdRng::seed_from_u64(self.seed);
        let video = self.draw_map(&mut rng, self.video_content_dim + self.video_emotion_dim)?;
        let music = self.draw_map(&mut rng, self.music_content_dim + self.music_emotion_dim)?;
        Ok((video, music))
    }

    fn draw_map(&self, rng: &mut StdRng, out_dim: usize) -> Result<Tensor2<f64>> {
        let l = self.latent_dim();
        let scale = 1.0 / (l as f64).sqrt();
        let mut values = Vec::with_capacity(l * out_dim);
        for _ in 0..l * out_dim {
            values.push(gauss(rng) * scale);
        }
        Tensor2::from_vec(l, out_dim, values)
    }

    fn class_centers(&self, rng: &mut StdRng) -> Vec<Vec<f64>> {
        (0..self.num_classes)
            .map(|_| (0..self.latent_emotion_dim).map(|_| gauss(rng)).collect())
            .collect()
    }

    /// Per-group derived seed, recorded in the ground-truth key file.
    pub fn group_latent_seed(&self, group_index: usize) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(group_index as u64 + 1)
    }
}

/// Box-Muller standard normal draw.
fn gauss(rng: &mut StdRng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn sample_class(rng: &mut StdRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if draw < w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

/// Ground-truth key entries: (video_id, music_id, latent_seed) per pair.
pub type TruthKey = Vec<(String, String, u64)>;

/// Generates the corpus in memory: pair set plus the ground-truth key.
pub fn generate_pairset(spec: &SyntheticSpec) -> Result<(PairSet, TruthKey)> {
    spec.validate()?;
    // Same master stream order as modal_maps: video map, music map, centers.
    let mut master = StdRng::seed_from_u64(spec.seed);
    let map_v = spec.draw_map(&mut master, spec.video_content_dim + spec.video_emotion_dim)?;
    let map_m = spec.draw_map(&mut master, spec.music_content_dim + spec.music_emotion_dim)?;
    let centers = spec.class_centers(&mut master);

    let project = |z: &[f64], map: &Tensor2<f64>, sigma: f64, rng: &mut StdRng| -> Vec<f32> {
        let mut out = vec![0.0f64; map.cols()];
        for (i, &zi) in z.iter().enumerate() {
            for (o, out_v) in out.iter_mut().enumerate() {
                *out_v += zi * map.get(i, o);
            }
        }
        out.into_iter()
            .map(|v| (v + sigma * gauss(rng)) as f32)
            .collect()
    };

    let mut records = Vec::new();
    let mut pairs = Vec::new();
    let mut truth = Vec::new();
    for g in 0..spec.num_pairs {
        let latent_seed = spec.group_latent_seed(g);
        let mut rng = StdRng::seed_from_u64(latent_seed);
        let class = sample_class(&mut rng, &spec.class_weights);
        let polarity = PolarityLabel::from_index(spec.polarity_of_class[class])?;
        let mut z: Vec<f64> = (0..spec.latent_content_dim)
            .map(|_| gauss(&mut rng))
            .collect();
        for center in centers[class].iter().take(spec.latent_emotion_dim) {
            z.push(center + WITHIN_CLASS_SPREAD * gauss(&mut rng));
        }

        let video_id = format!("v{g:05}");
        let full = project(&z, &map_v, spec.noise_sigma, &mut rng);
        let (content, emotion) = full.split_at(spec.video_content_dim);
        records.push(ItemRecord {
            item_id: video_id.clone(),
            modality: Modality::Video,
            pair_group: format!("g{g:05}"),
            content_feature: content.to_vec(),
            emotion_feature: emotion.to_vec(),
            emotion_class: class,
            polarity,
        });

        for j in 0..spec.musics_per_group {
            let music_id = format!("m{g:05}_{j}");
            let full = project(&z, &map_m, spec.noise_sigma, &mut rng);
            let (content, emotion) = full.split_at(spec.music_content_dim);
            records.push(ItemRecord {
                item_id: music_id.clone(),
                modality: Modality::Music,
                pair_group: format!("g{g:05}"),
                content_feature: content.to_vec(),
                emotion_feature: emotion.to_vec(),
                emotion_class: class,
                polarity,
            });
            pairs.push((video_id.clone(), music_id.clone()));
            truth.push((video_id.clone(), music_id, latent_seed));
        }
    }

    let set = PairSet::from_parts(spec.table_dims(), records, pairs)?;
    Ok((set, truth))
}

/// Generates a synthetic corpus and writes it (manifest, feature files,
/// pairs file, ground-truth key) into `out_dir`. Byte-identical output for
/// identical specs.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<PairSet> {
    let (set, truth) = generate_pairset(spec)?;
    set.write_to_dir(out_dir)?;
    let mut text = String::new();
    for (vid, mid, seed) in &truth {
        text.push_str(&format!("{vid},{mid},{seed}\n"));
    }
    write_atomic(&out_dir.join(TRUTH_FILE), text.as_bytes())?;
    Ok(set)
}
