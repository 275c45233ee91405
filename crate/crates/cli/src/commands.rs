use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atc_core::data::{self, load_dataset, stratified_split, substring_overlap, write_canonical_csv};
use atc_core::engine::prompt::clean_mention;
use atc_core::eval::{build_report_with, render_table};
use atc_core::export::write_sft_jsonl;
use atc_core::knowledge::load_definitions;
use atc_core::ontology::load_ontology;
use atc_core::{
    AtcCode, ChatBackend, Coder, CodingConfig, DefinitionStore, EvalOptions, EvalReport, ExportManifest, ExportOptions,
    HttpChatBackend, HttpChatConfig, LabeledMention, Ontology, OracleBackend, ScriptedBackend, TraceRecord,
};
use serde::Deserialize;

use crate::config::{
    knowledge_paths, required, BackendArgs, BackendSpec, CommonArgs, DatasetArgs, FileConfig, RunConfig,
};
use crate::output::Staged;

fn load_knowledge(ontology: &Path, definitions: Option<&Path>) -> Result<(Ontology, DefinitionStore)> {
    let o = load_ontology(ontology).with_context(|| format!("loading ontology {}", ontology.display()))?;
    let defs = match definitions {
        Some(p) => load_definitions(p).with_context(|| format!("loading definitions {}", p.display()))?,
        None => DefinitionStore::new(),
    };
    Ok((o, defs))
}

fn load_labeled(dataset: &DatasetArgs, file: &FileConfig, path: &Path) -> Result<Vec<LabeledMention>> {
    let (mapping, mode) = dataset.resolve(file, path)?;
    let loaded = load_dataset(path, &mapping, mode).with_context(|| format!("loading {}", path.display()))?;
    for row in &loaded.skipped {
        eprintln!("skipped {}:{}: {}", path.display(), row.line, row.reason);
    }
    if loaded.items.is_empty() {
        bail!("{} holds no usable rows", path.display());
    }
    Ok(loaded.items)
}

fn read_mentions(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_start_matches('\u{feff}').trim();
        if !line.is_empty() {
            out.push(line.to_owned());
        }
    }
    Ok(out)
}

fn build_backend(cfg: &RunConfig, dataset: &DatasetArgs, file: &FileConfig) -> Result<Box<dyn ChatBackend>> {
    Ok(match &cfg.backend {
        BackendSpec::Http { base_url, token_env } => Box::new(HttpChatBackend::new(HttpChatConfig {
            base_url: base_url.clone(),
            token_env: token_env.clone(),
            max_in_flight: cfg.concurrency,
            ..HttpChatConfig::default()
        })?),
        BackendSpec::Oracle { gold } => {
            let items = load_labeled(dataset, file, gold)?;
            Box::new(OracleBackend::new(items.into_iter().map(|m| (m.mention, m.gold))))
        }
        BackendSpec::Scripted { script } => {
            let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
            let replies: Vec<&str> = text.lines().collect();
            if replies.is_empty() {
                bail!("script {} is empty", script.display());
            }
            Box::new(ScriptedBackend::new(replies))
        }
    })
}

pub fn code(
    common: &CommonArgs,
    backend: &BackendArgs,
    dataset: &DatasetArgs,
    out: Option<&Path>,
    input: &Path,
) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let cfg = RunConfig::resolve(common, backend, &file)?;
    let mentions = read_mentions(input)?;
    let (ontology, defs) = load_knowledge(&cfg.ontology, cfg.definitions.as_deref())?;
    let backend = build_backend(&cfg, dataset, &file)?;

    let coding = CodingConfig {
        params: cfg.params.clone(),
        grounding: cfg.grounding,
        retries_per_level: cfg.retries,
        auto_select: cfg.auto_select,
    };
    let coder = Coder::new(&ontology, &defs, backend.as_ref(), coding);
    let results = coder.code_batch(&mentions, cfg.concurrency);

    let (mut coded, mut abstained, mut errored) = (0, 0, 0);
    let records: Vec<TraceRecord> = mentions
        .iter()
        .zip(results)
        .map(|(mention, result)| match result {
            Ok(trace) => {
                if trace.abstained() {
                    abstained += 1;
                } else {
                    coded += 1;
                }
                trace.to_record()
            }
            Err(e) => {
                errored += 1;
                eprintln!("error coding {mention:?}: {e}");
                TraceRecord::failed(mention, cfg.grounding, &e)
            }
        })
        .collect();

    let summary = format!("coded {coded}, abstained {abstained}, errored {errored}");
    match out {
        Some(path) => {
            let mut staged = Staged::new(path)?;
            write_jsonl(&mut staged, &records)?;
            staged.commit()?;
            println!("{summary}");
        }
        None => {
            write_jsonl(&mut io::stdout().lock(), &records)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn write_jsonl<W: Write>(w: &mut W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// The part of a trace line that evaluation needs.
#[derive(Deserialize)]
struct Prediction {
    mention: String,
    #[serde(rename = "final", default)]
    final_code: Option<AtcCode>,
}

fn read_predictions(path: &Path) -> Result<HashMap<String, Option<AtcCode>>> {
    let reader = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad prediction line", path.display(), i + 1))?;
        out.insert(clean_mention(&p.mention), p.final_code);
    }
    Ok(out)
}

fn run_label(path: &Path, labels: &[String], i: usize) -> String {
    labels
        .get(i)
        .cloned()
        .unwrap_or_else(|| path.file_stem().map_or_else(|| format!("run{}", i + 1), |s| s.to_string_lossy().into_owned()))
}

pub fn eval(
    common: &CommonArgs,
    dataset: &DatasetArgs,
    gold: Option<PathBuf>,
    predictions: &[PathBuf],
    labels: &[String],
    full_granularity_only: bool,
    out: Option<&Path>,
) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let gold = required("gold", "--gold", gold.or_else(|| file.gold.clone()))?;
    if labels.len() > predictions.len() {
        bail!("more --label values than --predictions files");
    }
    let items = load_labeled(dataset, &file, &gold)?;
    let options = EvalOptions { full_granularity_only };

    let mut runs: Vec<(String, EvalReport)> = Vec::new();
    for (i, path) in predictions.iter().enumerate() {
        let preds = read_predictions(path)?;
        let mut missing = 0;
        let joined: Vec<(LabeledMention, Option<AtcCode>)> = items
            .iter()
            .map(|item| {
                let predicted = preds.get(&clean_mention(&item.mention)).cloned().unwrap_or_else(|| {
                    missing += 1;
                    None
                });
                (item.clone(), predicted)
            })
            .collect();
        if missing > 0 {
            eprintln!("{}: {missing} mentions have no prediction and count as abstained", path.display());
        }
        let report = build_report_with(&joined, options).with_context(|| format!("scoring {}", path.display()))?;
        runs.push((run_label(path, labels, i), report));
    }

    let table: Vec<(&str, &EvalReport)> = runs.iter().map(|(n, r)| (n.as_str(), r)).collect();
    print!("{}", render_table(&table));
    for (name, r) in &runs {
        println!("{name}: evaluated {}, excluded {}", r.n_evaluated, r.n_excluded);
    }

    if let Some(path) = out {
        let mut staged = Staged::new(path)?;
        if let [(_, report)] = runs.as_slice() {
            serde_json::to_writer_pretty(&mut staged, report)?;
        } else {
            let named: Vec<serde_json::Value> = runs
                .iter()
                .map(|(name, report)| serde_json::json!({ "name": name, "report": report }))
                .collect();
            serde_json::to_writer_pretty(&mut staged, &named)?;
        }
        staged.write_all(b"\n")?;
        staged.commit()?;
    }
    Ok(())
}

pub fn split(
    common: &CommonArgs,
    dataset: &DatasetArgs,
    ratio: f64,
    seed: Option<u64>,
    train_out: &Path,
    test_out: &Path,
    input: &Path,
) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let seed = seed.or(file.seed).unwrap_or(atc_core::GenerationParams::DEFAULT_SEED);
    if train_out == test_out {
        bail!("--train-out and --test-out must differ");
    }
    let items = load_labeled(dataset, &file, input)?;
    let result = stratified_split(&items, ratio, seed)?;

    let mut train = Staged::new(train_out)?;
    write_canonical_csv(&result.train, &mut train)?;
    let mut test = Staged::new(test_out)?;
    write_canonical_csv(&result.test, &mut test)?;
    train.commit()?;
    test.commit()?;
    println!("train {}, test {} (ratio {ratio}, seed {seed})", result.train.len(), result.test.len());
    Ok(())
}

pub fn export_sft(
    common: &CommonArgs,
    dataset: &DatasetArgs,
    gold: Option<PathBuf>,
    include_single_child: bool,
    out: &Path,
    manifest: Option<PathBuf>,
) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let (ontology_path, definitions, grounding) = knowledge_paths(common, &file)?;
    let gold = required("gold", "--gold", gold.or_else(|| file.gold.clone()))?;
    let manifest_path = manifest.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    });
    let (ontology, defs) = load_knowledge(&ontology_path, definitions.as_deref())?;
    let items = load_labeled(dataset, &file, &gold)?;

    let options = ExportOptions { grounding, include_single_child };
    let mut records = Staged::new(out)?;
    let summary = write_sft_jsonl(&items, &ontology, &defs, options, &mut records)?;
    let mut sidecar = Staged::new(&manifest_path)?;
    ExportManifest::new(&ontology, options, &summary).write(&mut sidecar)?;
    records.commit()?;
    sidecar.commit()?;

    println!(
        "{} records from {} mentions ({} skipped: gold code not in ontology)",
        summary.records, summary.mentions, summary.skipped
    );
    Ok(())
}

pub fn ontology_stats(common: &CommonArgs) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let path = required("ontology", "--ontology", common.ontology.clone().or_else(|| file.ontology.clone()))?;
    let o = load_ontology(&path).with_context(|| format!("loading ontology {}", path.display()))?;
    let stats = o.option_stats();
    println!("entries {}", o.len());
    for (i, n) in o.level_counts().iter().enumerate() {
        println!("level {} {n}", i + 1);
    }
    println!("mean options {:.2}", stats.mean_branching);
    println!("max options {}", stats.max_branching);
    println!("sha256 {}", o.fingerprint());
    Ok(())
}

pub fn analyze_overlap(common: &CommonArgs, dataset: &DatasetArgs, input: &Path) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let items = load_labeled(dataset, &file, input)?;
    let overlap = substring_overlap(&items).map_err(|e| match e {
        data::DataError::EmptyEligibleSet => anyhow::anyhow!("no rows carry a generic name (see --generic-col)"),
        other => other.into(),
    })?;
    println!(
        "substring overlap {:.1}% ({} of {})",
        overlap.rate() * 100.0,
        overlap.overlapping,
        overlap.eligible
    );
    Ok(())
}
