use colloql::dataio::{generate_synthetic_corpus, Corpus, Split, SynthConfig, SynthCorpus};
use colloql::model::{Model, ModelConfig};
use colloql::sampler::{SamplingSpec, Strategy};
use colloql::traineval::{
    compare_strategies, evaluate, read_predictions, score_predictions, train, write_predictions, EvalOptions, EvalReport,
    TrainConfig,
};
use colloql::Error;

fn synth(n_tables: usize, seed: u64) -> SynthCorpus {
    generate_synthetic_corpus(&SynthConfig {
        n_tables,
        seed,
        ..SynthConfig::default()
    })
}

fn head(corpus: &Corpus, n: usize) -> Corpus {
    Corpus::new(corpus.split, corpus.examples.iter().take(n).cloned().collect())
}

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        sampling: SamplingSpec::new(Strategy::Relevance, 2),
        model: ModelConfig {
            d_ff: 32,
            ..ModelConfig::with_width(16, 1, 2)
        },
        ..TrainConfig::default()
    }
}

#[test]
fn empty_corpus_is_rejected() {
    let s = synth(2, 1);
    let empty = Corpus::new(Split::Train, Vec::new());
    assert!(matches!(train(&empty, &s.tables, &tiny(1), None), Err(Error::EmptyCorpus)));
    let model = train(&head(&s.verbose, 8), &s.tables, &tiny(1), None).unwrap().model;
    let r = evaluate(&model, &empty, &s.tables, SamplingSpec::new(Strategy::None, 0), &EvalOptions::default());
    assert!(matches!(r, Err(Error::EmptyCorpus)));
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let s = synth(3, 2);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny(3)
    };
    let out = train(&head(&s.verbose, 16), &s.tables, &cfg, None).unwrap();
    let fresh = Model::new(out.model.config.clone(), out.model.vocab.clone()).unwrap();
    assert_eq!(out.model.params, fresh.params);
    let first = out.history[0].loss;
    for h in &out.history {
        assert!((h.loss - first).abs() <= 1e-9 * first.abs().max(1.0), "{} vs {first}", h.loss);
    }
}

#[test]
fn same_seed_same_history() {
    let s = synth(3, 3);
    let data = head(&s.verbose, 16);
    let a = train(&data, &s.tables, &tiny(2), None).unwrap();
    let b = train(&data, &s.tables, &tiny(2), None).unwrap();
    assert_eq!(a.history[0].loss.to_bits(), b.history[0].loss.to_bits());
    assert_eq!(a.model.params, b.model.params);
    let c = train(&data, &s.tables, &TrainConfig { seed: 9, ..tiny(2) }, None).unwrap();
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn gold_fed_back_scores_perfectly() {
    let s = synth(5, 4);
    let preds: Vec<_> = s.verbose.examples.iter().map(|e| Some(e.gold.clone())).collect();
    let r = score_predictions(&s.verbose.examples, &s.tables, &preds).unwrap();
    assert_eq!((r.lf, r.ex), (1.0, 1.0));
    let t = r.subtasks;
    assert_eq!([t.sel, t.agg, t.wnum, t.wcol, t.wop, t.wval], [1.0; 6]);
    assert_eq!(r.counts.lf_without_ex, 0);
}

#[test]
fn failed_predictions_count_as_wrong() {
    let s = synth(2, 5);
    let mut preds: Vec<_> = s.verbose.examples.iter().map(|e| Some(e.gold.clone())).collect();
    preds[0] = None;
    let r = score_predictions(&s.verbose.examples, &s.tables, &preds).unwrap();
    assert_eq!(r.counts.failed_predictions, 1);
    assert_eq!(r.counts.lf, preds.len() - 1);
    assert!(score_predictions(&s.verbose.examples, &s.tables, &preds[1..]).is_err());
}

#[test]
fn evaluation_is_consistent_and_pure() {
    let s = synth(4, 6);
    let out = train(&head(&s.verbose, 24), &s.tables, &tiny(3), None).unwrap();
    let spec = SamplingSpec::new(Strategy::Relevance, 2);
    let report = evaluate(&out.model, &s.keyword, &s.tables, spec, &EvalOptions::default()).unwrap();
    assert_eq!(report.counts.lf_without_ex, 0);
    for r in &report.records {
        assert!(!r.lf || r.ex, "LF without EX on {}", r.question);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    write_predictions(&path, &report.records).unwrap();
    let stored = read_predictions(&path).unwrap();
    assert_eq!(stored, report.records);
    let again = EvalReport::rescore(&stored, &s.keyword, &s.tables).unwrap();
    assert_eq!(again, report);
    assert_eq!(again.lf.to_bits(), report.lf.to_bits());
}

#[test]
fn comparison_rows() {
    let s = synth(3, 8);
    let model = train(&head(&s.verbose, 16), &s.tables, &tiny(2), None).unwrap().model;
    let spec = SamplingSpec::new(Strategy::Relevance, 2);
    let one = compare_strategies(&[(spec, &model)], &s.keyword, &s.tables, &EvalOptions::default()).unwrap();
    assert_eq!(one.rows.len(), 1);
    let text = one.render_text();
    assert_eq!(text.lines().count(), 3);
    for col in ["Strategy", "LF", "EX", "Sel", "Agg", "W-num", "W-col", "W-op", "W-val"] {
        assert!(text.lines().next().unwrap().contains(col));
    }
    let two = compare_strategies(&[(spec, &model), (spec, &model)], &s.keyword, &s.tables, &EvalOptions::default()).unwrap();
    assert_eq!(two.rows[0], two.rows[1]);
    assert_eq!(two.rows[0], one.rows[0]);
}

fn rolling_medians(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w)
        .map(|win| {
            let mut v = win.to_vec();
            v.sort_by(f64::total_cmp);
            v[w / 2]
        })
        .collect()
}

#[test]
fn overfit_loss_medians_never_rise() {
    let s = synth(8, 7);
    let data = head(&s.verbose, 64);
    let cfg = TrainConfig {
        epochs: 40,
        sampling: SamplingSpec::new(Strategy::None, 0),
        model: ModelConfig::with_width(32, 2, 2),
        ..TrainConfig::default()
    };
    let out = train(&data, &s.tables, &cfg, None).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|h| h.loss).collect();
    let med = rolling_medians(&losses, 5);
    for w in med.windows(2) {
        assert!(w[1] <= w[0], "median rose: {med:?}");
    }
    assert!(losses.last().unwrap() < &(losses[0] * 0.2));
}

#[test]
fn checkpoints_written_on_schedule() {
    let s = synth(2, 9);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..tiny(4)
    };
    let out = train(&head(&s.verbose, 8), &s.tables, &cfg, None).unwrap();
    assert_eq!(out.checkpoints.len(), 2);
    let (loaded, _) = colloql::model::checkpoint::load(&out.checkpoints[1]).unwrap();
    assert_eq!(loaded.params, out.model.params);
}
