//! Python bindings for the video-to-music retrieval toolkit.
//!
//! Exposes the synthetic generator, trainer, evaluator, single-query
//! ranking, and the gradient-check suite. All functions mirror the `vmr`
//! CLI subcommands; randomness is keyed by explicit seeds, so results are
//! reproducible from Python exactly as from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vmr_core::cli::parse_config;
use vmr_core::data::{self, PairSet};
use vmr_core::error::Error;
use vmr_core::model::{EmbeddingKind, Modality};
use vmr_core::retrieval::{self, DEFAULT_KS};
use vmr_core::training::{self, Ablation, Checkpoint};
use vmr_core::verify::{gradcheck_losses, GRADCHECK_TOLERANCE};

fn to_py_err(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Builds a RunConfig from keyword-style overrides.
fn run_config(overrides: Vec<(String, String)>) -> PyResult<vmr_core::cli::RunConfig> {
    parse_config(None, &overrides).map_err(to_py_err)
}

fn load_and_split(data_dir: &str, seed: u64) -> PyResult<(PairSet, PairSet)> {
    let all = data::load_dir(Path::new(data_dir)).map_err(to_py_err)?;
    let (train, test) = all.split_dataset(seed).map_err(to_py_err)?;
    retrieval::assert_disjoint_groups(&train, &test).map_err(to_py_err)?;
    Ok((train, test))
}

fn kind_for(ablation: Ablation) -> EmbeddingKind {
    match ablation {
        Ablation::ContentOnly => EmbeddingKind::Content,
        Ablation::EmotionOnly => EmbeddingKind::Emotion,
        Ablation::Splicing => EmbeddingKind::Splicing,
        Ablation::Interactive => EmbeddingKind::Interactive,
    }
}

/// Generate a synthetic paired-feature corpus with a ground-truth key.
#[pyfunction]
#[pyo3(signature = (out_dir, pairs=100, seed=0, noise_sigma=0.1, musics_per_group=1))]
fn synth(
    out_dir: &str,
    pairs: usize,
    seed: u64,
    noise_sigma: f64,
    musics_per_group: usize,
) -> PyResult<usize> {
    let rc = run_config(vec![
        ("pairs".to_string(), pairs.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("noise_sigma".to_string(), noise_sigma.to_string()),
        ("musics_per_group".to_string(), musics_per_group.to_string()),
    ])?;
    let spec = rc.synthetic_spec().map_err(to_py_err)?;
    let set = data::generate_synthetic(&spec, Path::new(out_dir)).map_err(to_py_err)?;
    Ok(set.pairs().len())
}

/// Train a model on the 70% pair-group split of a dataset directory.
/// Returns a summary dict with the final losses and artifact paths.
#[pyfunction]
#[pyo3(signature = (data_dir, checkpoint_out, seed=0, ablation="interactive",
                    metric="contrastive", epochs=100, batch_size=16,
                    learning_rate=1e-4, margin=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data_dir: &str,
    checkpoint_out: &str,
    seed: u64,
    ablation: &str,
    metric: &str,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    margin: Option<f64>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let mut overrides = vec![
        ("seed".to_string(), seed.to_string()),
        ("ablation".to_string(), ablation.to_string()),
        ("metric".to_string(), metric.to_string()),
        ("epochs".to_string(), epochs.to_string()),
        ("batch_size".to_string(), batch_size.to_string()),
        ("learning_rate".to_string(), learning_rate.to_string()),
    ];
    if let Some(m) = margin {
        overrides.push(("margin".to_string(), m.to_string()));
    }
    let rc = run_config(overrides)?;

    let all = data::load_dir(Path::new(data_dir)).map_err(to_py_err)?;
    let cfg = rc.train_config(all.dims()).map_err(to_py_err)?;
    let (train_split, test_split) = all.split_dataset(cfg.seed).map_err(to_py_err)?;
    retrieval::assert_disjoint_groups(&train_split, &test_split).map_err(to_py_err)?;

    let outcome = training::train(&cfg, &train_split).map_err(to_py_err)?;
    let ckpt_path = PathBuf::from(checkpoint_out);
    outcome.checkpoint.save(&ckpt_path).map_err(to_py_err)?;
    let log_path = ckpt_path.with_extension("losslog");
    let log_text = format!(
        "# config={} seed={}\n{}",
        outcome.checkpoint.config_digest(),
        cfg.seed,
        training::render_loss_log(&outcome.log)
    );
    vmr_core::fsutil::write_atomic(&log_path, log_text.as_bytes()).map_err(to_py_err)?;

    let last = outcome.log.last().expect("at least one step");
    let out = pyo3::types::PyDict::new(py);
    out.set_item("steps", outcome.log.len())?;
    out.set_item("final_total", last.total)?;
    out.set_item("train_pairs", train_split.pairs().len())?;
    out.set_item("checkpoint", ckpt_path.display().to_string())?;
    out.set_item("loss_log", log_path.display().to_string())?;
    Ok(out.into())
}

/// Evaluate a checkpoint: Recall@{1,5,10,15,20,25} over the test split.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, kind=None, threads=1))]
fn evaluate(
    py: Python<'_>,
    checkpoint: &str,
    data_dir: &str,
    kind: Option<&str>,
    threads: usize,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let ckpt = Checkpoint::load(Path::new(checkpoint)).map_err(to_py_err)?;
    let cfg = ckpt.train_config().map_err(to_py_err)?;
    let model = ckpt.build_model().map_err(to_py_err)?;
    let (_, test_split) = load_and_split(data_dir, cfg.seed)?;
    let kind = match kind {
        Some(s) => EmbeddingKind::parse(s).map_err(to_py_err)?,
        None => kind_for(cfg.ablation),
    };
    let report = retrieval::evaluate(
        &model,
        &test_split,
        kind,
        &DEFAULT_KS,
        threads,
        ckpt.config_digest(),
        cfg.seed,
    )
    .map_err(to_py_err)?;

    let recall: BTreeMap<usize, f64> = report.recall_at.clone();
    let out = pyo3::types::PyDict::new(py);
    out.set_item("recall", recall)?;
    out.set_item("num_queries", report.num_queries)?;
    out.set_item("corpus_size", report.corpus_size)?;
    out.set_item("kind", report.kind.as_str())?;
    out.set_item("config_digest", report.config_digest.clone())?;
    out.set_item("seed", report.seed)?;
    Ok(out.into())
}

/// Rank music for one video query. Returns [(music_id, similarity), ...].
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, video_id, k=5, kind=None))]
fn query(
    checkpoint: &str,
    data_dir: &str,
    video_id: &str,
    k: usize,
    kind: Option<&str>,
) -> PyResult<Vec<(String, f32)>> {
    let ckpt = Checkpoint::load(Path::new(checkpoint)).map_err(to_py_err)?;
    let cfg = ckpt.train_config().map_err(to_py_err)?;
    let model = ckpt.build_model().map_err(to_py_err)?;
    let all = data::load_dir(Path::new(data_dir)).map_err(to_py_err)?;
    let kind = match kind {
        Some(s) => EmbeddingKind::parse(s).map_err(to_py_err)?,
        None => kind_for(cfg.ablation),
    };
    let video = all
        .video(video_id)
        .ok_or_else(|| PyValueError::new_err(format!("no video with id {video_id}")))?;
    let index = retrieval::embed_corpus(&model, all.musics(), kind).map_err(to_py_err)?;
    let emb = model
        .embedding(
            kind,
            &video.content_feature,
            &video.emotion_feature,
            Modality::Video,
        )
        .map_err(to_py_err)?;
    retrieval::rank_for_query(&index, &emb, k).map_err(to_py_err)
}

/// Check every loss's analytic gradients against central finite
/// differences. Returns {loss_name: max_relative_error}; raises if any
/// exceeds the tolerance.
#[pyfunction]
#[pyo3(signature = (seed=0, seeds=20, eps=1e-5))]
fn gradcheck(seed: u64, seeds: usize, eps: f64) -> PyResult<BTreeMap<String, f64>> {
    let results = gradcheck_losses(seed, seeds, eps).map_err(to_py_err)?;
    let mut worst = 0.0f64;
    let mut out = BTreeMap::new();
    for r in &results {
        worst = worst.max(r.max_relative_error);
        out.insert(r.loss.to_string(), r.max_relative_error);
    }
    if worst > GRADCHECK_TOLERANCE {
        return Err(PyRuntimeError::new_err(format!(
            "gradient check failed: max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:.1e}"
        )));
    }
    Ok(out)
}

/// Cosine similarity of two vectors, in [-1, 1].
#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    vmr_core::numgrad::cosine_similarity(&a, &b).map_err(to_py_err)
}

#[pymodule]
fn vmr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(query, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    Ok(())
}
