//! Pretraining, finetuning and resuming, with a line-delimited loss log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use comedic_core::frontend::{FillerEntry, FillerRegistry, SymbolTable};
use comedic_core::losses::LossBreakdown;
use comedic_core::model::{AcousticModel, ModelConfig};
use comedic_core::optim::{Adam, OptimizerConfig};
use comedic_core::train::{evaluate, train_step, TrainExample};
use comedic_core::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Features;
use crate::checkpoint::{Checkpoint, Phase, ReferenceClip};
use crate::config::RunConfig;
use crate::dataset::{build_example, extract_all, Corpus, NormStats, Splits};
use crate::error::{Result, SpeechError};

pub const LOG_FILE: &str = "loss_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "split", rename_all = "snake_case")]
pub enum LogRecord {
    Train {
        phase: Phase,
        step: u64,
        lr: f64,
        grad_norm: f64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Val {
        phase: Phase,
        step: u64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
}

impl LogRecord {
    pub fn step(&self) -> u64 {
        match self {
            LogRecord::Train { step, .. } | LogRecord::Val { step, .. } => *step,
        }
    }

    pub fn loss(&self) -> &LossBreakdown {
        match self {
            LogRecord::Train { loss, .. } | LogRecord::Val { loss, .. } => loss,
        }
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| SpeechError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SpeechError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

/// Everything derived from a corpus before the first step.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub symbols: SymbolTable,
    pub registry: FillerRegistry,
    pub speakers: Vec<String>,
    pub norm: NormStats,
    pub splits: Splits,
    pub train: Vec<TrainExample>,
    pub val: Vec<TrainExample>,
    pub references: Vec<ReferenceClip>,
}

/// The corpus registry limited to the corpus speakers, or nothing when
/// fillers stay plain phonemes.
fn corpus_registry(corpus: &Corpus, cfg: &RunConfig) -> FillerRegistry {
    if !cfg.uses_special_tokens() {
        return FillerRegistry::empty();
    }
    let speakers = corpus.speakers();
    let names: Vec<&str> = speakers.iter().map(String::as_str).collect();
    corpus.registry.restricted_to(&names)
}

/// Base entries followed by corpus entries whose token is new; a token
/// used by both with different meanings is an error.
fn merge_registries(base: &FillerRegistry, extra: &FillerRegistry) -> Result<FillerRegistry> {
    let mut entries: Vec<FillerEntry> = base.entries().to_vec();
    for e in extra.entries() {
        match base.by_token(&e.token) {
            Some(old) if old == e => {}
            Some(_) => {
                return Err(comedic_core::Error::IncompatibleSymbols(format!(
                    "token `{}` has a different filler in the base checkpoint",
                    e.token
                ))
                .into())
            }
            None => entries.push(e.clone()),
        }
    }
    Ok(FillerRegistry::new(entries)?)
}

impl Prepared {
    /// Fresh symbol table, speakers and statistics for pretraining.
    pub fn pretrain(corpus: &Corpus, cfg: &RunConfig) -> Result<Self> {
        let registry = corpus_registry(corpus, cfg);
        let symbols = SymbolTable::build(&corpus.base_inventory(), &registry)?;
        let speakers = corpus.speakers();
        let model = cfg.model_config(symbols.len(), speakers.len());
        Self::assemble(corpus, cfg, &model, symbols, registry, speakers, None)
    }

    /// Extends the tables of `base` for a new corpus. Base phonemes must
    /// all be known already; only special tokens may be added.
    pub fn finetune(base: &Checkpoint, corpus: &Corpus, cfg: &RunConfig) -> Result<Self> {
        let missing: Vec<String> = corpus
            .base_inventory()
            .into_iter()
            .filter(|l| !base.symbols.contains(l))
            .collect();
        if !missing.is_empty() {
            return Err(comedic_core::Error::IncompatibleSymbols(format!(
                "phonemes missing from the base checkpoint: {}",
                missing.join(" ")
            ))
            .into());
        }
        let registry = merge_registries(&base.registry, &corpus_registry(corpus, cfg))?;
        let symbols = base.symbols.extended_with(&registry)?;
        let mut speakers = base.speakers.clone();
        for s in corpus.speakers() {
            if !speakers.contains(&s) {
                if base.model_config.speaker_embedding {
                    return Err(SpeechError::Invalid(format!(
                        "speaker `{s}` has no embedding in the base checkpoint"
                    )));
                }
                speakers.push(s);
            }
        }
        Self::assemble(corpus, cfg, &base.model_config, symbols, registry, speakers, None)
    }

    /// The exact tables and statistics of `ckpt`, for resuming or
    /// evaluating it on `corpus`.
    pub fn for_checkpoint(ckpt: &Checkpoint, corpus: &Corpus) -> Result<Self> {
        Self::assemble(
            corpus,
            &ckpt.run,
            &ckpt.model_config,
            ckpt.symbols.clone(),
            ckpt.registry.clone(),
            ckpt.speakers.clone(),
            Some(ckpt.norm),
        )
    }

    fn assemble(
        corpus: &Corpus,
        cfg: &RunConfig,
        model: &ModelConfig,
        symbols: SymbolTable,
        registry: FillerRegistry,
        speakers: Vec<String>,
        norm: Option<NormStats>,
    ) -> Result<Self> {
        let splits = Splits::new(&corpus.records, cfg.val_fraction, cfg.test_fraction, cfg.seed)?;
        let features = extract_all(corpus, &cfg.audio)?;
        let norm = norm.unwrap_or_else(|| NormStats::fit(splits.train.iter().map(|id| &features[id])));
        let examples = |ids: &[String]| -> Result<Vec<TrainExample>> {
            ids.iter()
                .map(|id| {
                    let record = corpus.record(id).expect("split ids come from the corpus");
                    let speaker = speakers
                        .iter()
                        .position(|s| *s == record.speaker_id)
                        .ok_or_else(|| SpeechError::Invalid(format!("unknown speaker `{}`", record.speaker_id)))?;
                    build_example(
                        record,
                        &corpus.alignments[id],
                        &features[id],
                        &norm,
                        &symbols,
                        &registry,
                        speaker,
                    )
                })
                .collect()
        };
        let min_frames = if model.use_prosody_encoder {
            model.prosody.min_reference_frames()
        } else {
            0
        };
        let silence = cfg.audio.log_floor.ln();
        let with_reference = |mut ex: TrainExample| {
            if ex.mel.rows() < min_frames {
                ex.reference = Some(pad_reference(&ex.mel, min_frames, silence));
            }
            ex
        };
        let train = examples(&splits.train)?.into_iter().map(with_reference).collect();
        let val = examples(&splits.val)?.into_iter().map(with_reference).collect();
        let mut references = reference_pool(corpus, &splits, &features, cfg);
        for r in &mut references {
            r.mel = pad_reference(&r.mel, min_frames, silence);
        }
        Ok(Self {
            symbols,
            registry,
            speakers,
            norm,
            splits,
            train,
            val,
            references,
        })
    }
}

/// Appends silent frames until `mel` has `min_frames` rows, so clips
/// shorter than the reference encoder's receptive field can still serve
/// as references.
pub fn pad_reference(mel: &Matrix, min_frames: usize, silence: f64) -> Matrix {
    if mel.rows() >= min_frames {
        return mel.clone();
    }
    let mut data = mel.as_slice().to_vec();
    data.resize(min_frames * mel.cols(), silence);
    Matrix::from_vec(min_frames, mel.cols(), data)
}

/// Up to `reference_pool_size` training clips per speaker, picked by a
/// seeded shuffle.
fn reference_pool(corpus: &Corpus, splits: &Splits, features: &BTreeMap<String, Features>, cfg: &RunConfig) -> Vec<ReferenceClip> {
    let mut by_speaker: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for id in &splits.train {
        let r = corpus.record(id).expect("split ids come from the corpus");
        by_speaker.entry(&r.speaker_id).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7265_6673);
    let mut pool = Vec::new();
    for (speaker, mut ids) in by_speaker {
        ids.shuffle(&mut rng);
        ids.truncate(cfg.reference_pool_size);
        ids.sort();
        pool.extend(ids.into_iter().map(|id| ReferenceClip::new(speaker, id, &features[id].log_mel)));
    }
    pool
}

/// Indices of the examples in the batch of `step` (0-based). Each epoch is
/// a seeded permutation, so the order depends only on the seed and the
/// step, which makes resumed runs see the same batches.
pub fn batch_indices(examples: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut cache: Option<(u64, Vec<usize>)> = None;
    (0..batch_size as u64)
        .map(|k| {
            let pos = step * batch_size as u64 + k;
            let epoch = pos / examples as u64;
            if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..examples).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch));
                perm.shuffle(&mut rng);
                cache = Some((epoch, perm));
            }
            cache.as_ref().unwrap().1[(pos % examples as u64) as usize]
        })
        .collect()
}

struct Session<'a> {
    cfg: &'a RunConfig,
    phase: Phase,
    data: &'a Prepared,
    model: AcousticModel,
    optimizer: Adam,
    out_dir: Option<&'a Path>,
    log: Vec<LogRecord>,
    writer: Option<BufWriter<File>>,
}

impl<'a> Session<'a> {
    fn new(
        cfg: &'a RunConfig,
        phase: Phase,
        data: &'a Prepared,
        model: AcousticModel,
        optimizer: Adam,
        out_dir: Option<&'a Path>,
        append: bool,
    ) -> Result<Self> {
        let writer = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| SpeechError::io(dir, e))?;
                let path = dir.join(LOG_FILE);
                let file = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(&path)
                    .map_err(|e| SpeechError::io(&path, e))?;
                Some(BufWriter::new(file))
            }
            None => None,
        };
        Ok(Self {
            cfg,
            phase,
            data,
            model,
            optimizer,
            out_dir,
            log: Vec::new(),
            writer,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            self.cfg,
            &self.model,
            &self.data.symbols,
            &self.data.registry,
            &self.data.speakers,
            self.data.norm,
            self.phase,
            self.optimizer.step_count(),
            Some(&self.optimizer),
            self.data.references.clone(),
        )
    }

    fn record(&mut self, rec: LogRecord) -> Result<()> {
        if let (Some(w), Some(dir)) = (self.writer.as_mut(), self.out_dir) {
            let line = serde_json::to_string(&rec).expect("log records serialize");
            writeln!(w, "{line}").map_err(|e| SpeechError::io(dir.join(LOG_FILE), e))?;
        }
        self.log.push(rec);
        Ok(())
    }

    fn save(&self, name: &str) -> Result<()> {
        if let Some(dir) = self.out_dir {
            self.checkpoint().save(&dir.join(name))?;
        }
        Ok(())
    }

    fn run(mut self, target: u64) -> Result<TrainOutcome> {
        if self.data.train.is_empty() && target > self.optimizer.step_count() {
            return Err(SpeechError::Invalid("no training examples".into()));
        }
        while self.optimizer.step_count() < target {
            let step = self.optimizer.step_count();
            let batch: Vec<TrainExample> =
                batch_indices(self.data.train.len(), self.cfg.batch_size, self.cfg.seed, step)
                    .into_iter()
                    .map(|i| self.data.train[i].clone())
                    .collect();
            let report = match train_step(&mut self.model, &mut self.optimizer, &batch, &self.cfg.loss) {
                Ok(r) => r,
                Err(e @ comedic_core::Error::NonFinite { .. }) => {
                    self.flush()?;
                    self.save(LAST_GOOD_CHECKPOINT)?;
                    return Err(SpeechError::Diverged { step: step + 1, source: e });
                }
                Err(e) => return Err(e.into()),
            };
            let step = report.update.step;
            self.record(LogRecord::Train {
                phase: self.phase,
                step,
                lr: report.update.lr,
                grad_norm: report.update.grad_norm,
                loss: report.loss,
            })?;
            let vi = self.cfg.validation_interval;
            if vi > 0 && step % vi == 0 && !self.data.val.is_empty() {
                let loss = evaluate(&self.model, &self.data.val, &self.cfg.loss)?;
                self.record(LogRecord::Val {
                    phase: self.phase,
                    step,
                    loss,
                })?;
            }
            let ci = self.cfg.checkpoint_interval;
            if ci > 0 && step % ci == 0 && step < target {
                self.save(&format!("step_{step:07}.ckpt"))?;
            }
        }
        self.flush()?;
        self.save(FINAL_CHECKPOINT)?;
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(),
            log: self.log,
        })
    }

    fn flush(&mut self) -> Result<()> {
        if let (Some(w), Some(dir)) = (self.writer.as_mut(), self.out_dir) {
            w.flush().map_err(|e| SpeechError::io(dir.join(LOG_FILE), e))?;
        }
        Ok(())
    }
}

/// Trains a new model on `corpus` for `cfg.pretrain_steps()` steps. With
/// `out_dir` the loss log and checkpoints are written there.
pub fn train(corpus: &Corpus, cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Prepared::pretrain(corpus, cfg)?;
    let model_config = cfg.model_config(data.symbols.len(), data.speakers.len());
    let model = AcousticModel::new(model_config, cfg.seed)?;
    let optimizer = Adam::new(cfg.optimizer, model.params())?;
    Session::new(cfg, Phase::Pretrain, &data, model, optimizer, out_dir, false)?.run(cfg.pretrain_steps())
}

/// Continues training `base` on `corpus` with a fresh optimizer at
/// `finetune_lr_scale` times the peak rate. New special tokens get fresh
/// embedding rows; every other parameter starts from `base`.
pub fn finetune(base: &Checkpoint, corpus: &Corpus, cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Prepared::finetune(base, corpus, cfg)?;
    let mut model = base.model()?;
    model.grow_symbols(data.symbols.len(), cfg.seed ^ 0x6772_6f77)?;
    let opt_cfg = OptimizerConfig {
        peak_lr: cfg.optimizer.peak_lr * cfg.finetune_lr_scale,
        ..cfg.optimizer
    };
    let optimizer = Adam::new(opt_cfg, model.params())?;
    Session::new(cfg, Phase::Finetune, &data, model, optimizer, out_dir, false)?.run(cfg.finetune_steps())
}

/// Picks up a saved run where it stopped and continues to `target` steps
/// of its phase. The loss log in `out_dir` is appended to.
pub fn resume(ckpt: &Checkpoint, corpus: &Corpus, target: u64, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let data = Prepared::for_checkpoint(ckpt, corpus)?;
    let model = ckpt.model()?;
    let optimizer = ckpt
        .optimizer(&model)?
        .ok_or_else(|| SpeechError::Invalid("checkpoint has no optimizer state".into()))?;
    Session::new(&ckpt.run, ckpt.phase, &data, model, optimizer, out_dir, true)?.run(target)
}

/// Mean teacher-forced loss of `ckpt` on the validation split of `corpus`.
pub fn validation_loss(ckpt: &Checkpoint, corpus: &Corpus) -> Result<LossBreakdown> {
    let data = Prepared::for_checkpoint(ckpt, corpus)?;
    if data.val.is_empty() {
        return Err(SpeechError::Invalid("the validation split is empty".into()));
    }
    Ok(evaluate(&ckpt.model()?, &data.val, &ckpt.run.loss)?)
}

/// Default output path of the final checkpoint in a run directory.
pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join(FINAL_CHECKPOINT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 7;
        let mut seen: Vec<usize> = (0..7).flat_map(|s| batch_indices(n, 3, 5, s)).collect();
        assert_eq!(seen.len(), 21);
        for epoch in seen.chunks_mut(n) {
            epoch.sort();
            assert_eq!(epoch, (0..n).collect::<Vec<_>>().as_slice());
        }
        assert_eq!(batch_indices(n, 3, 5, 4), batch_indices(n, 3, 5, 4));
        assert_ne!(
            (0..3).flat_map(|s| batch_indices(n, 3, 5, s)).collect::<Vec<_>>(),
            (0..3).flat_map(|s| batch_indices(n, 3, 6, s)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn registries_merge_without_conflicts() {
        let entry = |speaker: &str, filler: &[&str], token: &str| FillerEntry {
            speaker: speaker.into(),
            filler: filler.iter().map(|s| s.to_string()).collect(),
            token: token.into(),
        };
        let base = FillerRegistry::new(vec![entry("A", &["er2"], "<spc2>")]).unwrap();
        let extra = FillerRegistry::new(vec![entry("A", &["er2"], "<spc2>"), entry("B", &["n", "a4"], "<spc1>")]).unwrap();
        let merged = merge_registries(&base, &extra).unwrap();
        assert_eq!(merged.entries().len(), 2);
        let clash = FillerRegistry::new(vec![entry("B", &["a1"], "<spc2>")]).unwrap();
        assert!(merge_registries(&base, &clash).is_err());
    }
}
