use std::path::PathBuf;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{score_predictions, EvalOptions, EvalReport};
use super::optim::{clip_global_norm, Adam};
use super::{prepare_examples, PrepStats, Prepared, SampleSource};
use crate::augment::{augment_corpus, AugmentConfig, AugmentStats};
use crate::dataio::{Corpus, TableMap};
use crate::error::{Error, Result};
use crate::model::{checkpoint, decode_sketch, loss_on_tape, Grads, LossBreakdown, Model, ModelConfig, Tape, Vocab};
use crate::sampler::{SamplingSpec, Strategy, DEFAULT_BUDGET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Separate rate for embedding and encoder parameters; the heads keep
    /// `learning_rate`.
    pub encoder_learning_rate: Option<f64>,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub sampling: SamplingSpec,
    /// Augments the training corpus before preparation when set.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
    pub budget: usize,
    pub model: ModelConfig,
    pub vocab_min_count: usize,
    pub oov_buckets: usize,
    /// Evaluate training-set LF every this many epochs (0 = never).
    pub eval_train_every: usize,
    /// Stop once training-set LF reaches this value.
    pub stop_at_train_lf: Option<f64>,
    /// Save a checkpoint every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            encoder_learning_rate: None,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sampling: SamplingSpec::new(Strategy::Relevance, 3),
            augment: None,
            seed: 0,
            budget: DEFAULT_BUDGET,
            model: ModelConfig::default(),
            vocab_min_count: 1,
            oov_buckets: 64,
            eval_train_every: 0,
            stop_at_train_lf: None,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.budget == 0 {
            return Err(Error::Config("epochs, batch_size and budget must be positive".into()));
        }
        let rates = [Some(self.learning_rate), self.encoder_learning_rate];
        if rates.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("beta1, beta2 must lie in [0, 1) and eps must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_dir".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example loss over the epoch.
    pub loss: f64,
    pub breakdown: LossBreakdown,
    pub grad_norm: f64,
    pub train_lf: Option<f64>,
    pub dev: Option<DevMetrics>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DevMetrics {
    pub lf: f64,
    pub ex: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub prep: PrepStats,
    pub augment: Option<AugmentStats>,
    pub checkpoints: Vec<PathBuf>,
}

/// Decodes prepared examples with the current parameters.
fn predict_prepared(model: &Model, data: &[Prepared]) -> Result<Vec<Option<crate::sketch::SqlSketch>>> {
    data.iter()
        .map(|p| {
            let heads = model.predict_heads(&p.input)?;
            Ok(Some(decode_sketch(
                &heads,
                &p.example.question,
                &p.input.question_spans,
                model.config.max_span,
                model.config.max_conds,
            )))
        })
        .collect()
}

fn lf_on(model: &Model, data: &[Prepared]) -> Result<f64> {
    let preds = predict_prepared(model, data)?;
    let hits = preds
        .iter()
        .zip(data)
        .filter(|(p, d)| p.as_ref().is_some_and(|p| crate::sketch::lf_equal(p, &d.example.gold)))
        .count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Trains a fresh model on `corpus`. When `dev` is given, LF and EX on it
/// are logged after every epoch.
pub fn train(corpus: &Corpus, tables: &TableMap, config: &TrainConfig, dev: Option<&Corpus>) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (examples, augment_stats) = match &config.augment {
        Some(a) => {
            let aug = augment_corpus(corpus, tables, a)?;
            (aug.corpus.examples, Some(aug.stats))
        }
        None => (corpus.examples.clone(), None),
    };
    let mut source = SampleSource::new(tables, config.sampling, config.seed);
    let (data, prep) = prepare_examples(&examples, &mut source, config.budget.min(config.model.max_positions), config.model.max_conds)?;
    info!(
        "prepared {} of {} examples ({} unalignable, {} over budget)",
        prep.kept, prep.total, prep.unalignable, prep.over_budget
    );
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let vocab = Vocab::build(
        data.iter().flat_map(|p| p.input.tokens.iter().map(|t| t.text.as_str())),
        config.vocab_min_count,
        config.oov_buckets,
    );
    let mut model_config = config.model.clone();
    model_config.seed = config.model.seed ^ config.seed;
    let mut model = Model::new(model_config, vocab)?;

    let encoder_group: Vec<bool> = (0..model.params.len())
        .map(|i| {
            let n = model.params.name(i);
            n.starts_with("emb.") || n.starts_with("enc.")
        })
        .collect();
    let lr_of = |i: usize| match config.encoder_learning_rate {
        Some(r) if encoder_group[i] => r,
        _ => config.learning_rate,
    };

    let mut adam = Adam::new(&model.params, config.beta1, config.beta2, config.eps);
    let mut grads = Grads::zeros_like(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = LossBreakdown::default();
        let mut norm_sum = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let p = &data[i];
                let mut tape = Tape::new(&model.params);
                let drop = (model.config.dropout > 0.0).then_some(&mut dropout_rng);
                let g = model.forward(&mut tape, &p.input, Some(p.example.gold.select), drop)?;
                let (l, parts) = loss_on_tape(&mut tape, &g, &p.example.gold, &p.alignment);
                total.add(&parts);
                tape.backward(l, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            norm_sum += clip_global_norm(&mut grads, config.clip_norm);
            n_batches += 1;
            adam.step(&mut model.params, &grads, lr_of);
        }
        let n = data.len() as f64;
        let breakdown = LossBreakdown {
            sel: total.sel / n,
            agg: total.agg / n,
            wnum: total.wnum / n,
            wcol: total.wcol / n,
            wop: total.wop / n,
            wval: total.wval / n,
        };
        let want_train_lf = (config.eval_train_every > 0 && epoch % config.eval_train_every == 0)
            || (config.stop_at_train_lf.is_some() && config.eval_train_every == 0);
        let train_lf = if want_train_lf { Some(lf_on(&model, &data)?) } else { None };
        let dev_metrics = match dev {
            Some(d) if !d.is_empty() => {
                let r = super::eval::evaluate(&model, d, tables, config.sampling, &EvalOptions::from_train(config))?;
                Some(DevMetrics { lf: r.lf, ex: r.ex })
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            loss: breakdown.total(),
            breakdown,
            grad_norm: norm_sum / n_batches as f64,
            train_lf,
            dev: dev_metrics,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.4}{}",
            record.loss,
            record.train_lf.map(|lf| format!(", train LF {lf:.3}")).unwrap_or_default()
        );
        history.push(record);
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            let dir = config.checkpoint_dir.as_ref().expect("validated");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("epoch-{epoch:04}.ckpt"));
            checkpoint::save(&model, &path, serde_json::json!({ "epoch": epoch }))?;
            checkpoints.push(path);
        }
        if let (Some(target), Some(lf)) = (config.stop_at_train_lf, train_lf) {
            if lf >= target {
                info!("train LF {lf:.3} reached target {target} at epoch {epoch}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        prep,
        augment: augment_stats,
        checkpoints,
    })
}

/// Scores the model's predictions on prepared training data.
pub fn training_report(model: &Model, data: &[Prepared], tables: &TableMap) -> Result<EvalReport> {
    let preds = predict_prepared(model, data)?;
    let examples: Vec<_> = data.iter().map(|p| p.example.clone()).collect();
    score_predictions(&examples, tables, &preds)
}
