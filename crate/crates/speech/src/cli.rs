//! Command-line interface of the `comedic` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use comedic_core::stats::{FrameSelection, StatsConfig};
use comedic_core::trace::compare_durations;
use serde_json::json;

use crate::checkpoint::{Checkpoint, Phase};
use crate::config::RunConfig;
use crate::dataset::Corpus;
use crate::error::{Result, SpeechError};
use crate::fixture::{write_fixture, FixtureSpec};
use crate::plot::plot_durations;
use crate::report::{corpus_report, format_table};
use crate::synthesis::{parse_phonemes, read_trace, synthesize, write_outputs, OutputOptions, ReferenceChoice, SynthesisRequest};
use crate::training::{self, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "comedic", version, about = "Multi-speaker stand-up comedy TTS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Utterance manifest (TSV).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Alignment directory [default: alignments/ next to the manifest].
    #[arg(long)]
    pub alignments: Option<PathBuf>,
    /// Filler registry [default: fillers.tsv next to the manifest].
    #[arg(long)]
    pub fillers: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        Corpus::load(&self.manifest, self.alignments.as_deref(), self.fillers.as_deref())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain a model, or resume a saved run.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint (its own configuration is used).
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Continue training a checkpoint on a new corpus.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Synthesize a mel spectrogram and duration trace.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        speaker: String,
        /// A file of labels or the labels themselves, space-separated.
        #[arg(long)]
        phonemes: String,
        /// Reference clip id from the checkpoint's pool.
        #[arg(long, conflicts_with = "seed")]
        reference: Option<String>,
        /// Seed for the reference choice and waveform phases.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Output file stem.
        #[arg(long, default_value = "synth")]
        name: String,
        /// Also write the mel as text.
        #[arg(long)]
        text: bool,
        /// Also write a Griffin-Lim waveform.
        #[arg(long)]
        wav: bool,
        #[arg(long, default_value_t = 32)]
        gl_iterations: usize,
    },
    /// Draw duration traces as stacked segment bars.
    PlotDurations {
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-phoneme duration deltas and rank correlation of two traces.
    CompareDurations {
        a: PathBuf,
        b: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-speaker corpus statistics.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pauses shorter than this are ignored.
        #[arg(long, default_value_t = 50.0)]
        pause_floor_ms: f64,
        #[arg(long, value_enum, default_value_t = Frames::Voiced)]
        pitch_frames: Frames,
        #[arg(long, value_enum, default_value_t = Frames::Speech)]
        energy_frames: Frames,
        /// JSON report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        clips: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Two short utterances of one speaker instead of four speakers.
        #[arg(long)]
        overfit: bool,
        /// Include the filler case sentence for speaker B.
        #[arg(long)]
        case_sentence: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Frames {
    All,
    Voiced,
    Speech,
}

impl From<Frames> for FrameSelection {
    fn from(f: Frames) -> Self {
        match f {
            Frames::All => FrameSelection::All,
            Frames::Voiced => FrameSelection::Voiced,
            Frames::Speech => FrameSelection::Speech,
        }
    }
}

fn load_config(path: Option<&Path>, steps: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if steps.is_some() {
        cfg.steps = steps;
    }
    Ok(cfg)
}

fn summary(outcome: &TrainOutcome, out: &Path) -> serde_json::Value {
    let last = outcome.log.iter().rev().find(|r| matches!(r, training::LogRecord::Train { .. }));
    json!({
        "step": outcome.checkpoint.step,
        "phase": outcome.checkpoint.phase,
        "checkpoint": training::final_checkpoint_path(out),
        "log": out.join(training::LOG_FILE),
        "final_loss": last.map(|r| r.loss()),
        "symbols": outcome.checkpoint.symbols.len(),
        "speakers": outcome.checkpoint.speakers,
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

/// Executes one command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            corpus,
            out,
            steps,
            resume,
        } => {
            let corpus = corpus.load()?;
            let outcome = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(&path)?;
                    let target = match ckpt.phase {
                        Phase::Pretrain => steps.unwrap_or(ckpt.run.pretrain_steps()),
                        Phase::Finetune => steps.unwrap_or(ckpt.run.finetune_steps()),
                    };
                    training::resume(&ckpt, &corpus, target, Some(&out))?
                }
                None => training::train(&corpus, &load_config(config.as_deref(), steps)?, Some(&out))?,
            };
            print_json(&summary(&outcome, &out));
        }
        Command::Finetune {
            base,
            config,
            corpus,
            out,
            steps,
        } => {
            let base = Checkpoint::load(&base)?;
            let corpus = corpus.load()?;
            let cfg = load_config(config.as_deref(), steps)?;
            let outcome = training::finetune(&base, &corpus, &cfg, Some(&out))?;
            print_json(&summary(&outcome, &out));
        }
        Command::Synthesize {
            checkpoint,
            speaker,
            phonemes,
            reference,
            seed,
            out,
            name,
            text,
            wav,
            gl_iterations,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = ckpt.model()?;
            let request = SynthesisRequest {
                phonemes: parse_phonemes(&phonemes)?,
                speaker,
                reference: match reference {
                    Some(id) => ReferenceChoice::Clip(id),
                    None => ReferenceChoice::Seeded(seed),
                },
                name: None,
            };
            let syn = synthesize(&ckpt, &model, &request)?;
            let opts = OutputOptions {
                text_export: text,
                griffin_lim: wav.then_some(gl_iterations),
                seed,
            };
            let files = write_outputs(&ckpt, &syn, &out, &name, &opts)?;
            print_json(&json!({
                "frames": syn.mel.rows(),
                "labels": syn.labels,
                "durations": syn.trace.durations(),
                "reference": syn.reference,
                "mel": files.mel,
                "mel_text": files.mel_text,
                "trace": files.trace,
                "wav": files.wav,
            }));
        }
        Command::PlotDurations { traces, out } => {
            let traces = traces.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>>>()?;
            let layout = plot_durations(&traces, &out)?;
            print_json(&json!({ "image": out, "rows": layout.rows.len(), "frame_width": layout.frame_width }));
        }
        Command::CompareDurations { a, b, out } => {
            let report = compare_durations(&read_trace(&a)?, &read_trace(&b)?)?;
            let text = serde_json::to_string_pretty(&report).expect("reports serialize");
            match out {
                Some(p) => fs::write(&p, text + "\n").map_err(|e| SpeechError::io(&p, e))?,
                None => println!("{text}"),
            }
        }
        Command::Stats {
            corpus,
            config,
            pause_floor_ms,
            pitch_frames,
            energy_frames,
            report,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let corpus = corpus.load()?;
            let stats_cfg = StatsConfig {
                frame_ms: cfg.audio.frame_ms(),
                pause_floor_ms,
                pitch_frames: pitch_frames.into(),
                energy_frames: energy_frames.into(),
            };
            let rep = corpus_report(&corpus, &cfg.audio, &stats_cfg)?;
            print!("{}", format_table(&rep));
            for w in &rep.warnings {
                eprintln!("warning: clip length outside 3-8 s: {w}");
            }
            if let Some(p) = report {
                let text = serde_json::to_string_pretty(&rep).expect("reports serialize");
                fs::write(&p, text + "\n").map_err(|e| SpeechError::io(&p, e))?;
            }
        }
        Command::MakeFixture {
            out,
            clips,
            seed,
            overfit,
            case_sentence,
        } => {
            let spec = if overfit {
                FixtureSpec {
                    seed,
                    ..FixtureSpec::overfit()
                }
            } else {
                FixtureSpec {
                    include_case_sentence: case_sentence,
                    ..FixtureSpec::comedians(clips, seed)
                }
            };
            let files = write_fixture(&spec, &out)?;
            print_json(&json!({
                "manifest": files.manifest,
                "alignments": files.alignments,
                "fillers": files.registry,
            }));
        }
    }
    Ok(())
}

/// The machine-readable record printed for a failed command.
pub fn error_record(err: &SpeechError) -> serde_json::Value {
    json!({ "error": { "kind": err.kind(), "message": err.to_string() } })
}
