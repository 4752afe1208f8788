use std::path::PathBuf;

use clap::{Args, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trapnode_core::imaging::save_pgm;
use trapnode_core::synth::{corpus, trap_scene, CorpusSpec};

use crate::error::{CliError, CliResult};
use crate::manifest::{emit, emit_summary, write_file, RunManifest, Table};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub what: SynthCmd,
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// One trap image with moths and its ground-truth CSV.
    Scene {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 5)]
        moths: usize,
        /// Image id written to the ground-truth rows.
        #[arg(long, default_value = "scene")]
        id: String,
        /// PGM file to write.
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth CSV; stdout when omitted.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Training corpus: `pos/` windows, `neg/` boards, `heldout/` windows.
    Corpus {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        pos: usize,
        #[arg(long, default_value_t = 500)]
        heldout: usize,
        #[arg(long, default_value_t = 100)]
        neg_boards: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct CorpusSummary {
    positives: usize,
    heldout: usize,
    negative_boards: usize,
}

fn mkdir(p: &PathBuf) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
}

pub fn run(a: &SynthArgs) -> CliResult<()> {
    match &a.what {
        SynthCmd::Scene {
            seed,
            width,
            height,
            moths,
            id,
            image,
            gt,
        } => {
            if *width < 24 || *height < 24 {
                return Err(CliError::input("scene must be at least 24x24"));
            }
            let mut m = RunManifest::new("synth scene");
            m.seed = Some(*seed);
            m.param("width", width)
                .param("height", height)
                .param("moths", moths);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let (img, boxes) = trap_scene(&mut rng, *width, *height, *moths);
            write_file(image, &save_pgm(&img))?;
            let mut table = Table::new(&["image_id", "x", "y", "w", "h"]);
            for b in boxes {
                table.row(vec![
                    id.clone(),
                    b.x.to_string(),
                    b.y.to_string(),
                    b.w.to_string(),
                    b.h.to_string(),
                ]);
            }
            emit(gt.as_deref(), &table.render(&m))
        }
        SynthCmd::Corpus {
            seed,
            pos,
            heldout,
            neg_boards,
            out,
            summary,
        } => {
            let mut m = RunManifest::new("synth corpus");
            m.seed = Some(*seed);
            m.param("pos", pos)
                .param("heldout", heldout)
                .param("neg_boards", neg_boards);
            let c = corpus(&CorpusSpec {
                train_pos: *pos,
                heldout_pos: *heldout,
                train_neg: *neg_boards,
                seed: *seed,
                ..CorpusSpec::default()
            });
            let dirs = [out.join("pos"), out.join("heldout"), out.join("neg")];
            for d in &dirs {
                mkdir(d)?;
            }
            for (i, w) in c.train_pos.iter().enumerate() {
                write_file(&dirs[0].join(format!("pos_{i:05}.pgm")), &save_pgm(w))?;
            }
            for (i, w) in c.heldout_pos.iter().enumerate() {
                write_file(&dirs[1].join(format!("heldout_{i:05}.pgm")), &save_pgm(w))?;
            }
            for i in 0..c.train_neg.count {
                write_file(
                    &dirs[2].join(format!("neg_{i:05}.pgm")),
                    &save_pgm(&c.train_neg.board(i)),
                )?;
            }
            emit_summary(
                summary.as_ref(),
                &m,
                &CorpusSummary {
                    positives: c.train_pos.len(),
                    heldout: c.heldout_pos.len(),
                    negative_boards: c.train_neg.count,
                },
            )
        }
    }
}
