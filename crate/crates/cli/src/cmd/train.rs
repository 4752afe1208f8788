use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use trapnode_core::cascade::save_cascade;
use trapnode_core::imaging::GrayImage;
use trapnode_core::synth::{corpus, CorpusSpec};
use trapnode_core::trainer::{train_cascade, StopReason, TrainConfig, TrainError};

use super::{load_image, pgm_files};
use crate::error::{CliError, CliResult};
use crate::manifest::{emit, emit_summary, num, write_file, RunManifest, Table};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of positive window PGMs.
    #[arg(
        long,
        required_unless_present = "synthetic",
        conflicts_with = "synthetic"
    )]
    pub pos: Option<PathBuf>,
    /// Directory of moth-free PGM images for hard-negative mining.
    #[arg(
        long,
        required_unless_present = "synthetic",
        conflicts_with = "synthetic"
    )]
    pub neg: Option<PathBuf>,
    /// Train on the generated synthetic corpus instead of directories.
    #[arg(long)]
    pub synthetic: bool,
    /// Positive windows in the synthetic corpus.
    #[arg(long, default_value_t = 2000)]
    pub synthetic_pos: usize,
    #[arg(long, default_value_t = 2024)]
    pub corpus_seed: u64,
    /// Negative boards in the synthetic corpus.
    #[arg(long, default_value_t = 100)]
    pub neg_boards: usize,
    #[arg(long, default_value_t = 15)]
    pub stages: usize,
    #[arg(long, default_value_t = 0.995)]
    pub min_detection: f64,
    #[arg(long, default_value_t = 0.5)]
    pub max_fp: f64,
    #[arg(long, default_value_t = 100)]
    pub max_weak: usize,
    #[arg(long, default_value_t = 0.05)]
    pub feature_fraction: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_negatives: usize,
    #[arg(long, default_value_t = 1)]
    pub pool_stride: u32,
    #[arg(long)]
    pub no_variance_normalization: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Cascade file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-stage log CSV; stdout when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    stages: usize,
    weak_classifiers: usize,
    size_bytes: usize,
    stop: StopReason,
    cascade_sha256: String,
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let mut m = RunManifest::new("train");
    m.seed = Some(a.seed);
    let cfg = TrainConfig {
        num_stages: a.stages,
        min_detection: a.min_detection,
        max_false_positive: a.max_fp,
        max_weak_per_stage: a.max_weak,
        feature_fraction: a.feature_fraction,
        max_negatives_per_stage: a.max_negatives,
        pool_stride: a.pool_stride,
        variance_normalization: !a.no_variance_normalization,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(CliError::input)?;
    m.param("stages", cfg.num_stages)
        .param("min_detection", cfg.min_detection)
        .param("max_fp", cfg.max_false_positive)
        .param("max_weak", cfg.max_weak_per_stage)
        .param("feature_fraction", cfg.feature_fraction)
        .param("min_feature_size", cfg.min_feature_size)
        .param("feature_stride", cfg.feature_stride)
        .param("max_negatives", cfg.max_negatives_per_stage)
        .param("retrain_attempts", cfg.retrain_attempts)
        .param("pool_stride", cfg.pool_stride)
        .param("variance_normalization", cfg.variance_normalization)
        .param("window", cfg.window);

    let outcome = if a.synthetic {
        let spec = CorpusSpec {
            train_pos: a.synthetic_pos,
            train_neg: a.neg_boards,
            seed: a.corpus_seed,
            ..CorpusSpec::default()
        };
        m.param("corpus", "synthetic")
            .param("corpus_seed", spec.seed)
            .param("synthetic_pos", spec.train_pos)
            .param("neg_boards", spec.train_neg);
        let c = corpus(&spec);
        train_cascade(&c.train_pos, &c.train_neg, &cfg)
    } else {
        let load_dir = |dir: &PathBuf, m: &mut RunManifest| -> CliResult<Vec<GrayImage>> {
            let mut out = Vec::new();
            for p in pgm_files(dir)? {
                let (img, bytes) = load_image(&p)?;
                m.input(p.display().to_string(), &bytes);
                out.push(img);
            }
            Ok(out)
        };
        let pos = load_dir(a.pos.as_ref().expect("clap requires --pos"), &mut m)?;
        let neg = load_dir(a.neg.as_ref().expect("clap requires --neg"), &mut m)?;
        train_cascade(&pos, neg.as_slice(), &cfg)
    }
    .map_err(|e| match e {
        TrainError::WindowSize { .. } | TrainError::MissingClass | TrainError::Config(_) => {
            CliError::input(e)
        }
        other => CliError::constraint(other),
    })?;

    let text = save_cascade(&outcome.cascade);
    write_file(&a.out, text.as_bytes())?;

    let mut table = Table::new(&[
        "stage",
        "weak_count",
        "positives",
        "negatives",
        "detection_rate",
        "false_positive_rate",
        "pool_false_positive_rate",
        "attempts",
        "target_met",
    ]);
    for l in &outcome.log {
        table.row(vec![
            l.stage.to_string(),
            l.weak_count.to_string(),
            l.positives.to_string(),
            l.negatives.to_string(),
            num(l.detection_rate, 6),
            num(l.false_positive_rate, 6),
            format!("{:.6e}", l.pool_false_positive_rate),
            l.attempts.to_string(),
            l.target_met.to_string(),
        ]);
    }
    emit(a.log.as_deref(), &table.render(&m))?;
    emit_summary(
        a.summary.as_ref(),
        &m,
        &Summary {
            stages: outcome.cascade.stages.len(),
            weak_classifiers: outcome.cascade.num_weak(),
            size_bytes: outcome.cascade.size(),
            stop: outcome.stop,
            cascade_sha256: crate::manifest::sha256_hex(text.as_bytes()),
        },
    )
}
