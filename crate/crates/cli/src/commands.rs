use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::warn;
use serde::Serialize;
use serde_json::{json, Value};

use colloql::augment::{augment_corpus_with, AugmentConfig, ReplacementMap};
use colloql::dataio::{
    generate_ambiguity_probe, generate_synthetic_corpus, load_examples, load_tables, validate_corpus, write_examples,
    write_tables, Corpus, LoadMode, Split, SynthConfig, TableMap,
};
use colloql::executor::{execute, ResultValue};
use colloql::model::{checkpoint, Model};
use colloql::sampler::bench::{bench_sampling, BenchConfig};
use colloql::sampler::{serialize_input, write_sample_sets, ContentIndex, SamplingSpec, Strategy, DEFAULT_BUDGET};
use colloql::sampler::sample_random;
use colloql::sketch::{render_sql, validate_sketch, SqlSketch, TableSchema, DEFAULT_MAX_CONDS};
use colloql::traineval::{
    compare_strategies, evaluate, train, write_predictions, EvalOptions, SampleSource, TrainConfig,
};

use crate::manifest::RunManifest;
use crate::settings::ConfigFile;
use crate::{Cli, CliError, Command, Common};

type Result<T> = std::result::Result<T, CliError>;

const FLAG_KEYS: &[&str] = &["data", "tables", "strategy", "k", "seed", "budget", "out", "augment", "dev", "epochs"];
const SECTIONS: &[&str] = &["train", "model", "augment", "synth", "bench"];

struct Ctx {
    common: Common,
    file: ConfigFile,
    out: PathBuf,
    manifest: RunManifest,
}

impl Ctx {
    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| self.file.get(key).map(PathBuf::from))
            .ok_or_else(|| CliError::Usage(format!("--{key} is required")))
    }

    fn data(&self) -> Result<PathBuf> {
        self.path(&self.common.data, "data")
    }

    fn tables_path(&self) -> Result<PathBuf> {
        self.path(&self.common.tables, "tables")
    }

    fn seed(&self, default: u64) -> Result<u64> {
        self.file.resolve(self.common.seed, "seed", default)
    }

    fn budget(&self) -> Result<usize> {
        self.file.resolve(self.common.budget, "budget", DEFAULT_BUDGET)
    }

    /// Strategy from `--strategy`/`--k`, the config file, or `default`.
    fn spec(&self, default: SamplingSpec) -> Result<SamplingSpec> {
        let name = self.common.strategy.clone().or_else(|| self.file.get("strategy").map(String::from));
        let k: Option<usize> = self.file.resolve_opt(self.common.k, "k")?;
        let Some(name) = name else {
            return Ok(match k {
                Some(k) => SamplingSpec::new(default.strategy, k),
                None => default,
            });
        };
        let parsed: SamplingSpec = name.parse().map_err(|e: colloql::Error| CliError::Usage(e.to_string()))?;
        Ok(match (name.contains(':'), k) {
            (false, Some(k)) => SamplingSpec::new(parsed.strategy, k),
            (false, None) => SamplingSpec::new(parsed.strategy, default.k.max(1)),
            _ => parsed,
        })
    }

    fn load_tables(&mut self) -> Result<TableMap> {
        let path = self.tables_path()?;
        self.manifest.input(&path)?;
        let loaded = load_tables(&path)?;
        for w in &loaded.warnings {
            warn!("{w}");
        }
        Ok(loaded.value)
    }

    fn load_corpus(&mut self, path: &Path, split: Split) -> Result<Corpus> {
        self.manifest.input(path)?;
        let loaded = load_examples(path, split, LoadMode::Strict)?;
        Ok(loaded.value)
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(value).context("serializing output")?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        self.manifest.output(&path);
        Ok(path)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.output(&path);
        Ok(path)
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let file = match &cli.common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(FLAG_KEYS, SECTIONS)?;
    let out = cli
        .common
        .out
        .clone()
        .or_else(|| file.get("out").map(PathBuf::from))
        .or_else(|| std::env::var_os("COLLOQL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("colloql-out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut ctx = Ctx {
        common: cli.common.clone(),
        file,
        out,
        manifest: RunManifest::new(cli.command.name(), argv),
    };
    if let Some(p) = &cli.common.config {
        ctx.manifest.input(p)?;
    }
    let result = dispatch(&mut ctx, &cli.command);
    let status = match &result {
        Ok(()) => 0,
        Err(e) => i32::from(e.exit_code()),
    };
    if !matches!(result, Err(CliError::Usage(_))) {
        ctx.manifest.write(&ctx.out, status)?;
    }
    result
}

fn dispatch(ctx: &mut Ctx, command: &Command) -> Result<()> {
    match command {
        Command::Validate { max_conds, lenient } => validate(ctx, *max_conds, *lenient),
        Command::Synth {
            n_tables,
            rows_per_table,
            questions_per_table,
            neutral_header_rate,
            heldout,
            probe,
        } => {
            let mut cfg = synth_config(&ctx.file)?;
            cfg.n_tables = n_tables.unwrap_or(cfg.n_tables);
            cfg.rows_per_table = rows_per_table.unwrap_or(cfg.rows_per_table);
            cfg.questions_per_table = questions_per_table.unwrap_or(cfg.questions_per_table);
            cfg.neutral_header_rate = neutral_header_rate.unwrap_or(cfg.neutral_header_rate);
            cfg.seed = ctx.seed(cfg.seed)?;
            synth(ctx, cfg, *heldout, *probe)
        }
        Command::Augment { mix_ratio, replacements } => augment(ctx, *mix_ratio, replacements.as_deref()),
        Command::Index => index(ctx),
        Command::Sample { table_id, question } => sample(ctx, table_id, question),
        Command::Serialize { table_id, question } => serialize(ctx, table_id, question),
        Command::Train {
            dev,
            epochs,
            batch_size,
            lr,
            d_model,
            layers,
            heads,
            augment,
        } => {
            let mut cfg: TrainConfig = ctx.file.overlay("train", TrainConfig::default())?;
            cfg.model = ctx.file.overlay("model", cfg.model)?;
            cfg.epochs = ctx.file.resolve(*epochs, "epochs", cfg.epochs)?;
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.model.d_model = d_model.unwrap_or(cfg.model.d_model);
            cfg.model.n_layers = layers.unwrap_or(cfg.model.n_layers);
            cfg.model.n_heads = heads.unwrap_or(cfg.model.n_heads);
            if d_model.is_some() && ctx.file.get("model.d_ff").is_none() {
                cfg.model.d_ff = 4 * cfg.model.d_model;
            }
            cfg.seed = ctx.seed(cfg.seed)?;
            cfg.budget = ctx.file.resolve(ctx.common.budget, "budget", cfg.budget)?;
            cfg.sampling = ctx.spec(cfg.sampling)?;
            let use_augment = *augment || ctx.file.resolve(None, "augment", false)?;
            if use_augment {
                cfg.augment = Some(ctx.file.overlay("augment", cfg.augment.clone().unwrap_or_default())?);
            }
            let dev = dev.clone().or_else(|| ctx.file.get("dev").map(PathBuf::from));
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            train_cmd(ctx, cfg, dev)
        }
        Command::Eval { checkpoint } => eval(ctx, checkpoint),
        Command::Compare { checkpoint, strategies } => compare(ctx, checkpoint, strategies.as_deref()),
        Command::Bench { rows, queries } => bench(ctx, rows.as_deref(), *queries),
        Command::Render {
            sketch,
            table_id,
            headers,
        } => render(ctx, sketch, table_id.as_deref(), headers.as_deref()),
        Command::Repl { checkpoint, table_id } => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            repl(ctx, checkpoint, table_id, stdin.lock(), &mut stdout.lock())
        }
    }
}

fn validate(ctx: &mut Ctx, max_conds: Option<usize>, lenient: bool) -> Result<()> {
    let tables = ctx.load_tables()?;
    let path = ctx.data()?;
    ctx.manifest.input(&path)?;
    let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let loaded = load_examples(&path, Split::Train, mode)?;
    let max_conds = max_conds.unwrap_or(DEFAULT_MAX_CONDS);
    let report = validate_corpus(&loaded.value, &tables, max_conds);
    ctx.manifest.config = json!({ "data": path, "tables": ctx.tables_path()?, "max_conds": max_conds, "lenient": lenient });
    ctx.write_json("validate.json", &json!({ "report": report, "load_warnings": loaded.warnings }))?;
    println!(
        "{} examples, {} violations, {} skipped lines",
        report.n_examples,
        report.violations.len(),
        loaded.warnings.len()
    );
    for v in report.violations.iter().take(10) {
        println!("  example {}: {}", v.index, v.message);
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} examples violate the schema", report.violations.len())))
    }
}

fn synth_config(file: &ConfigFile) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::default();
    for key in file.keys().filter_map(|k| k.strip_prefix("synth.")) {
        let raw = file.get(&format!("synth.{key}")).unwrap_or_default();
        let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("config key `synth.{key}`: {e}"));
        macro_rules! set {
            ($field:ident) => {
                cfg.$field = raw.parse().map_err(|e| bad(&e))?
            };
        }
        match key {
            "n_tables" => set!(n_tables),
            "rows_per_table" => set!(rows_per_table),
            "min_columns" => set!(min_columns),
            "max_columns" => set!(max_columns),
            "questions_per_table" => set!(questions_per_table),
            "max_conds" => set!(max_conds),
            "neutral_header_rate" => set!(neutral_header_rate),
            "omit_where_header_rate" => set!(omit_where_header_rate),
            "values_per_column" => set!(values_per_column),
            "seed" => set!(seed),
            other => return Err(CliError::Usage(format!("unknown config key `synth.{other}`"))),
        }
    }
    Ok(cfg)
}

fn synth_snapshot(cfg: &SynthConfig) -> Value {
    json!({
        "n_tables": cfg.n_tables,
        "rows_per_table": cfg.rows_per_table,
        "min_columns": cfg.min_columns,
        "max_columns": cfg.max_columns,
        "questions_per_table": cfg.questions_per_table,
        "max_conds": cfg.max_conds,
        "neutral_header_rate": cfg.neutral_header_rate,
        "omit_where_header_rate": cfg.omit_where_header_rate,
        "values_per_column": cfg.values_per_column,
        "seed": cfg.seed,
    })
}

fn synth(ctx: &mut Ctx, cfg: SynthConfig, heldout: Option<usize>, probe: Option<usize>) -> Result<()> {
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let main = generate_synthetic_corpus(&cfg);
    let mut tables = main.tables.clone();
    let mut files = vec![("train.jsonl", main.verbose.clone()), ("short.jsonl", main.keyword.clone())];
    let mut manifests = json!({ "train": main.manifest });
    if let Some(n) = heldout {
        let h = generate_synthetic_corpus(&SynthConfig {
            n_tables: n,
            seed: cfg.seed.wrapping_add(1),
            ..cfg.clone()
        });
        tables.extend(h.tables.clone());
        files.push(("heldout.jsonl", h.verbose));
        files.push(("heldout_short.jsonl", h.keyword));
        manifests["heldout"] = serde_json::to_value(&h.manifest).context("serializing manifest")?;
    }
    if let Some(n) = probe {
        let p = generate_ambiguity_probe(&SynthConfig {
            n_tables: n,
            seed: cfg.seed.wrapping_add(2),
            ..cfg.clone()
        });
        tables.extend(p.tables.clone());
        files.push(("probe.jsonl", p.keyword));
        manifests["probe"] = serde_json::to_value(&p.manifest).context("serializing manifest")?;
    }
    let tables_path = ctx.out.join("tables.jsonl");
    write_tables(&tables_path, tables.values())?;
    ctx.manifest.output(&tables_path);
    for (name, corpus) in &files {
        let path = ctx.out.join(name);
        write_examples(&path, corpus)?;
        ctx.manifest.output(&path);
        println!("{:<22} {} examples", name, corpus.len());
    }
    println!("{:<22} {} tables", "tables.jsonl", tables.len());
    ctx.write_json("synth_columns.json", &manifests)?;
    ctx.manifest.config = json!({ "synth": synth_snapshot(&cfg), "heldout": heldout, "probe": probe });
    ctx.manifest.seeds = json!({ "synth": cfg.seed, "heldout": cfg.seed.wrapping_add(1), "probe": cfg.seed.wrapping_add(2) });
    Ok(())
}

fn augment(ctx: &mut Ctx, mix_ratio: Option<f64>, replacements: Option<&Path>) -> Result<()> {
    let tables = ctx.load_tables()?;
    let data = ctx.data()?;
    let corpus = ctx.load_corpus(&data, Split::Train)?;
    let mut cfg: AugmentConfig = ctx.file.overlay("augment", AugmentConfig::default())?;
    cfg.mix_ratio = mix_ratio.unwrap_or(cfg.mix_ratio);
    cfg.seed = ctx.seed(cfg.seed)?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let map = match replacements {
        Some(p) => {
            ctx.manifest.input(p)?;
            ReplacementMap::load(p)?
        }
        None => ReplacementMap::default(),
    };
    let out = augment_corpus_with(&corpus, &tables, &cfg, &map)?;
    let path = ctx.out.join("augmented.jsonl");
    write_examples(&path, &out.corpus)?;
    ctx.manifest.output(&path);
    ctx.write_json("augment_stats.json", &out.stats)?;
    println!(
        "{} originals, {} candidates, {} added, {} total",
        out.stats.originals,
        out.stats.candidates,
        out.stats.added,
        out.corpus.len()
    );
    ctx.manifest.config = json!({ "augment": cfg, "data": data, "replacements": replacements });
    ctx.manifest.seeds = json!({ "augment": cfg.seed });
    Ok(())
}

fn index(ctx: &mut Ctx) -> Result<()> {
    let tables = ctx.load_tables()?;
    let spec = ctx.spec(SamplingSpec::new(Strategy::Random, 3))?;
    let seed = ctx.seed(0)?;
    let mut per_table = Vec::with_capacity(tables.len());
    let mut random = Vec::with_capacity(tables.len());
    for (id, table) in &tables {
        let idx = ContentIndex::build(table);
        per_table.push(json!({
            "table_id": id,
            "cells": idx.cell_count(),
            "patterns": idx.n_patterns(),
            "nodes": idx.n_nodes(),
            "memory_bytes": idx.memory_bytes(),
            "build_seconds": idx.build_seconds(),
        }));
        random.push(sample_random(table, spec.k.max(1), seed));
    }
    let path = ctx.out.join("random_samples.jsonl");
    write_sample_sets(&path, &random)?;
    ctx.manifest.output(&path);
    let total = |k: &str| per_table.iter().map(|t| t[k].as_f64().unwrap_or(0.0)).sum::<f64>();
    let summary = json!({
        "tables": per_table.len(),
        "cells": total("cells"),
        "patterns": total("patterns"),
        "memory_bytes": total("memory_bytes"),
        "build_seconds": total("build_seconds"),
    });
    println!(
        "indexed {} tables: {} cells, {} patterns, {:.3}s",
        per_table.len(),
        summary["cells"],
        summary["patterns"],
        summary["build_seconds"].as_f64().unwrap_or(0.0)
    );
    ctx.write_json("index.json", &json!({ "summary": summary, "tables": per_table }))?;
    ctx.manifest.config = json!({ "random_k": spec.k.max(1) });
    ctx.manifest.seeds = json!({ "random_samples": seed });
    Ok(())
}

fn sample(ctx: &mut Ctx, table_id: &str, question: &str) -> Result<()> {
    let tables = ctx.load_tables()?;
    let spec = ctx.spec(SamplingSpec::new(Strategy::Relevance, 3))?;
    let seed = ctx.seed(0)?;
    let set = SampleSource::new(&tables, spec, seed).samples(question, table_id, 0)?;
    println!("{}", serde_json::to_string_pretty(&set).context("serializing samples")?);
    ctx.manifest.config = json!({ "strategy": spec, "table_id": table_id, "question": question });
    ctx.manifest.seeds = json!({ "sampling": seed });
    Ok(())
}

fn serialize(ctx: &mut Ctx, table_id: &str, question: &str) -> Result<()> {
    let tables = ctx.load_tables()?;
    let spec = ctx.spec(SamplingSpec::new(Strategy::Relevance, 3))?;
    let seed = ctx.seed(0)?;
    let budget = ctx.budget()?;
    let set = SampleSource::new(&tables, spec, seed).samples(question, table_id, 0)?;
    let input = serialize_input(question, &tables[table_id].schema, &set, budget)?;
    println!("{}", input.display());
    println!("({} tokens, budget {budget}, {} samples dropped)", input.len(), input.dropped_samples);
    ctx.manifest.config = json!({ "strategy": spec, "budget": budget, "table_id": table_id, "question": question });
    ctx.manifest.seeds = json!({ "sampling": seed });
    Ok(())
}

fn train_cmd(ctx: &mut Ctx, cfg: TrainConfig, dev: Option<PathBuf>) -> Result<()> {
    let tables = ctx.load_tables()?;
    let data = ctx.data()?;
    let corpus = ctx.load_corpus(&data, Split::Train)?;
    let dev_corpus = match &dev {
        Some(p) => Some(ctx.load_corpus(p, Split::Dev)?),
        None => None,
    };
    let mut cfg = cfg;
    if cfg.checkpoint_every > 0 && cfg.checkpoint_dir.is_none() {
        cfg.checkpoint_dir = Some(ctx.out.join("checkpoints"));
    }
    ctx.manifest.config = json!({ "train": cfg, "data": data, "dev": dev });
    ctx.manifest.seeds = json!({ "train": cfg.seed, "model": cfg.model.seed ^ cfg.seed });
    let outcome = train(&corpus, &tables, &cfg, dev_corpus.as_ref())?;
    let ckpt = ctx.out.join("model.ckpt");
    let last = outcome.history.last().map(|h| h.loss);
    checkpoint::save(
        &outcome.model,
        &ckpt,
        json!({ "train": cfg, "prep": outcome.prep, "augment": outcome.augment, "final_loss": last }),
    )?;
    ctx.manifest.output(&ckpt);
    for c in &outcome.checkpoints {
        ctx.manifest.output(c);
    }
    ctx.write_json("history.json", &outcome.history)?;
    let p = &outcome.prep;
    println!(
        "trained on {} of {} examples ({} unalignable, {} over budget, {} too many conditions)",
        p.kept, p.total, p.unalignable, p.over_budget, p.too_many_conds
    );
    if let Some(h) = outcome.history.last() {
        print!("epoch {}: loss {:.4}", h.epoch, h.loss);
        if let Some(d) = &h.dev {
            print!(", dev LF {:.3} EX {:.3}", d.lf, d.ex);
        }
        println!();
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

/// Loads a checkpoint and the sampling strategy it was trained with.
fn load_model(ctx: &mut Ctx, path: &Path) -> Result<(Model, SamplingSpec)> {
    ctx.manifest.input(path)?;
    let (model, meta) = checkpoint::load(path)?;
    let trained = meta
        .pointer("/train/sampling")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(SamplingSpec::new(Strategy::Relevance, 3));
    Ok((model, trained))
}

fn eval(ctx: &mut Ctx, checkpoint_path: &Path) -> Result<()> {
    let (model, trained) = load_model(ctx, checkpoint_path)?;
    let tables = ctx.load_tables()?;
    let data = ctx.data()?;
    let corpus = ctx.load_corpus(&data, Split::Test)?;
    let spec = ctx.spec(trained)?;
    let options = EvalOptions {
        budget: ctx.budget()?,
        seed: ctx.seed(0)?,
    };
    let report = evaluate(&model, &corpus, &tables, spec, &options)?;
    let preds = ctx.out.join("predictions.jsonl");
    write_predictions(&preds, &report.records)?;
    ctx.manifest.output(&preds);
    ctx.write_json("eval_report.json", &report.summary())?;
    ctx.write_text("eval_report.txt", &report.render_text())?;
    println!("strategy {spec}");
    print!("{}", report.render_text());
    if report.counts.lf_without_ex > 0 {
        warn!("{} LF-correct predictions differ in execution", report.counts.lf_without_ex);
    }
    ctx.manifest.config = json!({ "checkpoint": checkpoint_path, "data": data, "strategy": spec, "options": options });
    ctx.manifest.seeds = json!({ "sampling": options.seed });
    Ok(())
}

fn compare(ctx: &mut Ctx, checkpoints: &[PathBuf], strategies: Option<&str>) -> Result<()> {
    let mut models = Vec::with_capacity(checkpoints.len());
    for p in checkpoints {
        models.push(load_model(ctx, p)?);
    }
    let specs: Vec<SamplingSpec> = match strategies {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse().map_err(|e: colloql::Error| CliError::Usage(e.to_string())))
            .collect::<Result<_>>()?,
        None => models.iter().map(|(_, s)| *s).collect(),
    };
    let entries: Vec<(SamplingSpec, &Model)> = match (models.len(), specs.len()) {
        (1, _) => specs.iter().map(|s| (*s, &models[0].0)).collect(),
        (m, s) if m == s => specs.iter().zip(&models).map(|(s, (m, _))| (*s, m)).collect(),
        (m, s) => {
            return Err(CliError::Usage(format!("{m} checkpoints for {s} strategies; give one checkpoint or one per strategy")))
        }
    };
    let tables = ctx.load_tables()?;
    let data = ctx.data()?;
    let corpus = ctx.load_corpus(&data, Split::Test)?;
    let options = EvalOptions {
        budget: ctx.budget()?,
        seed: ctx.seed(0)?,
    };
    let comparison = compare_strategies(&entries, &corpus, &tables, &options)?;
    let text = comparison.render_text();
    ctx.write_json("comparison.json", &comparison)?;
    ctx.write_text("comparison.txt", &text)?;
    print!("{text}");
    ctx.manifest.config = json!({
        "checkpoints": checkpoints,
        "strategies": specs,
        "data": data,
        "options": options,
    });
    ctx.manifest.seeds = json!({ "sampling": options.seed });
    Ok(())
}

fn bench(ctx: &mut Ctx, rows: Option<&str>, queries: Option<usize>) -> Result<()> {
    let mut cfg: BenchConfig = BenchConfig::default();
    if let Some(r) = ctx.file.get("bench.rows") {
        cfg.rows = parse_rows(r.trim_matches(|c| c == '[' || c == ']'))?;
    }
    for key in ctx.file.keys().filter_map(|k| k.strip_prefix("bench.")) {
        if !matches!(key, "rows" | "queries") {
            return Err(CliError::Usage(format!("unknown config key `bench.{key}`")));
        }
    }
    if let Some(r) = rows {
        cfg.rows = parse_rows(r)?;
    }
    cfg.n_queries = ctx.file.resolve(queries, "bench.queries", cfg.n_queries)?;
    let spec = ctx.spec(SamplingSpec::new(cfg.strategy, cfg.k))?;
    cfg.strategy = spec.strategy;
    cfg.k = spec.k;
    cfg.seed = ctx.seed(cfg.seed)?;
    cfg.budget = ctx.budget()?;
    let report = bench_sampling(&cfg);
    let name = format!("bench_{}.json", spec.strategy);
    ctx.write_json(&name, &report)?;
    let mut text = String::new();
    let _ = writeln!(text, "strategy {spec}, {} queries", report.n_queries);
    let _ = writeln!(text, "{:>9} {:>10} {:>10} {:>12} {:>12}", "rows", "cells", "setup s", "memory B", "query s");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{:>9} {:>10} {:>10} {:>12} {:>12}",
            r.rows,
            r.cells,
            opt(r.setup_seconds),
            r.peak_memory_bytes.map_or("-".to_string(), |m| m.to_string()),
            opt(r.per_query_seconds)
        );
    }
    print!("{text}");
    ctx.manifest.config = json!({
        "rows": cfg.rows,
        "strategy": spec,
        "queries": cfg.n_queries,
        "budget": cfg.budget,
    });
    ctx.manifest.seeds = json!({ "bench": cfg.seed });
    Ok(())
}

fn parse_rows(s: &str) -> Result<Vec<usize>> {
    let rows = s
        .split(',')
        .map(|r| {
            let r = r.trim().replace('_', "");
            r.parse::<usize>()
                .ok()
                .or_else(|| r.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 1.0).map(|v| v as usize))
                .ok_or_else(|| CliError::Usage(format!("bad row count `{r}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() || rows.contains(&0) {
        return Err(CliError::Usage("row counts must be positive".into()));
    }
    Ok(rows)
}

fn render(ctx: &mut Ctx, sketch: &str, table_id: Option<&str>, headers: Option<&str>) -> Result<()> {
    let sketch: SqlSketch = serde_json::from_str(sketch).map_err(|e| CliError::Usage(format!("bad sketch: {e}")))?;
    let schema = match (headers, table_id) {
        (Some(h), id) => {
            let headers: Vec<&str> = h.split(',').map(str::trim).collect();
            TableSchema::text(id.unwrap_or("t"), &headers).map_err(|e| CliError::Usage(e.to_string()))?
        }
        (None, Some(id)) => {
            let tables = ctx.load_tables()?;
            tables
                .get(id)
                .ok_or_else(|| CliError::Invalid(format!("no table `{id}`")))?
                .schema
                .clone()
        }
        (None, None) => return Err(CliError::Usage("render needs --headers or --tables with --table-id".into())),
    };
    let problems = validate_sketch(&sketch, &schema, usize::MAX);
    if !problems.is_empty() {
        return Err(CliError::Invalid(format!("sketch does not fit the table: {problems:?}")));
    }
    println!("{}", render_sql(&sketch, &schema)?);
    ctx.manifest.config = json!({ "sketch": sketch, "headers": schema.headers, "table_id": schema.table_id });
    Ok(())
}

fn format_value(v: &ResultValue) -> String {
    match v {
        ResultValue::Text(s) => s.clone(),
        ResultValue::Number(n) => n.to_string(),
    }
}

/// Reads questions line by line and answers each. Only reads the checkpoint
/// and tables; nothing but the run manifest is written.
fn repl(ctx: &mut Ctx, checkpoint_path: &Path, table_id: &str, input: impl BufRead, out: &mut impl Write) -> Result<()> {
    let (model, trained) = load_model(ctx, checkpoint_path)?;
    let tables = ctx.load_tables()?;
    let table = tables
        .get(table_id)
        .ok_or_else(|| CliError::Invalid(format!("no table `{table_id}`")))?;
    let spec = ctx.spec(trained)?;
    let seed = ctx.seed(0)?;
    let budget = ctx.budget()?.min(model.config.max_positions);
    let mut source = SampleSource::new(&tables, spec, seed);
    let io = |e: std::io::Error| CliError::Failure(e.into());
    writeln!(out, "table {table_id}: {}", table.schema.headers.join(" | ")).map_err(io)?;
    let mut answered = 0usize;
    for (i, line) in input.lines().enumerate() {
        let question = line.map_err(io)?;
        let question = question.trim();
        if question.is_empty() {
            continue;
        }
        if matches!(question, ":q" | ":quit" | "exit") {
            break;
        }
        let samples = source.samples(question, table_id, i as u64)?;
        match model.predict(question, &table.schema, &samples, budget) {
            Ok((sketch, _)) => {
                let sql = render_sql(&sketch, &table.schema)?;
                let rows = execute(&sketch, table)?;
                let shown: Vec<String> = rows.values.iter().map(format_value).collect();
                writeln!(out, "{sql}\n  -> [{}]", shown.join(", ")).map_err(io)?;
            }
            Err(e) => writeln!(out, "cannot answer: {e}").map_err(io)?,
        }
        answered += 1;
    }
    ctx.manifest.config = json!({ "checkpoint": checkpoint_path, "table_id": table_id, "strategy": spec, "budget": budget, "questions": answered });
    ctx.manifest.seeds = json!({ "sampling": seed });
    Ok(())
}
