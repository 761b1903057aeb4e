use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sysloglm::checkpoint::Checkpoint;
use sysloglm::config::RunConfig;
use sysloglm::error::io_at;
use sysloglm::export::{
    read_scores_csv, select_cases, write_roc_csv, write_traces_jsonl, AttentionHeatmap, AucReport,
    CaseSelection, CaseStudy, ScoreWriter,
};
use sysloglm::model::LanguageModel;
use sysloglm::pipeline::{roc_for, AucSummary, DayCycleState};
use sysloglm::synthgen::write_corpus;
use sysloglm::tokenizer::{
    read_red_keys, tokenize, DayGroups, LanlReader, TokenMode, TokenSequence, Vocabulary,
};
use sysloglm::{Error, Result};

use crate::{Command, OUT_DIR_ENV};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(c) => synth(&load(&c.config)?),
        Command::BuildVocab(c) => build_vocab(&load(&c.config)?),
        Command::Run { config, seed } => {
            let mut cfg = load(&config.config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            run(&cfg)
        }
        Command::Eval { config, scores } => eval(&load(&config.config)?, &scores),
        Command::ExportAttention { config, day } => export_attention(&load(&config.config)?, day),
        Command::ExportCase {
            config,
            day,
            lines,
            top,
            red,
        } => {
            let sel = match (lines.is_empty(), top, red) {
                (false, _, _) => CaseSelection::Lines(lines),
                (true, Some(k), _) => CaseSelection::TopScores(k),
                (true, None, true) => CaseSelection::Red,
                (true, None, false) => {
                    return Err(Error::Config(
                        "select cases with --line, --top or --red".into(),
                    ));
                }
            };
            export_case(&load(&config.config)?, day, &sel)
        }
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        cfg.paths.out_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.paths.out_dir).map_err(with_path(&cfg.paths.out_dir))?;
    Ok(&cfg.paths.out_dir)
}

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| io_at(path, e)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(with_path(path))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(with_path(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(with_path(path))?))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(with_path(path))
}

/// Writes the fully resolved configuration next to a command's outputs.
fn echo_config(cfg: &RunConfig, name: &str) -> Result<()> {
    let path = out_dir(cfg)?.join(name);
    write_file(&path, cfg.resolved_toml()?)?;
    Ok(())
}

fn day_stream(cfg: &RunConfig) -> Result<DayGroups<LanlReader<BufReader<File>>>> {
    let red = read_red_keys(open(&cfg.paths.redteam)?)?;
    let auth = open(&cfg.paths.auth)?;
    Ok(DayGroups::new(LanlReader::new(
        auth,
        red,
        cfg.machine_filter(),
    )))
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    match cfg.model.tokenization {
        TokenMode::Char => Ok(Vocabulary::chars()),
        TokenMode::Word => Vocabulary::load(&cfg.paths.vocab),
    }
}

fn tokenize_day(
    events: &[(u64, sysloglm::tokenizer::RawEvent)],
    vocab: &Vocabulary,
) -> Result<Vec<TokenSequence>> {
    events
        .iter()
        .map(|(id, ev)| tokenize(ev, vocab, *id))
        .collect()
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let n = write_corpus(
        &cfg.synth,
        create(&cfg.paths.auth)?,
        create(&cfg.paths.redteam)?,
    )?;
    echo_config(cfg, "synth.config.toml")?;
    eprintln!("wrote {n} lines to {}", cfg.paths.auth.display());
    Ok(())
}

fn build_vocab(cfg: &RunConfig) -> Result<()> {
    let vocab = match cfg.model.tokenization {
        TokenMode::Char => Vocabulary::chars(),
        TokenMode::Word => {
            let day = cfg.data.vocab_day;
            let mut events = None;
            for item in day_stream(cfg)? {
                let (d, ev) = item?;
                if d == day {
                    events = Some(ev);
                    break;
                }
            }
            let events =
                events.ok_or_else(|| Error::Lookup(format!("day {day} is not in the corpus")))?;
            Vocabulary::build(events.iter().map(|(_, e)| e), cfg.data.vocab_threshold)?
        }
    };
    if let Some(parent) = cfg.paths.vocab.parent() {
        fs::create_dir_all(parent).map_err(with_path(parent))?;
    }
    vocab.save(&cfg.paths.vocab)?;
    echo_config(cfg, "vocab.config.toml")?;
    eprintln!(
        "vocabulary of {} tokens written to {}",
        vocab.len(),
        cfg.paths.vocab.display()
    );
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, day: u32) -> PathBuf {
    cfg.paths
        .out_dir
        .join("checkpoints")
        .join(format!("day_{day:05}.bin"))
}

fn run(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let model = LanguageModel::new(cfg.model_config(vocab.len())?, cfg.seed)?;
    let mut state =
        DayCycleState::new(model, cfg.train_config(), cfg.model.tokenization, cfg.seed)?;
    let dir = out_dir(cfg)?;
    echo_config(cfg, "run.config.toml")?;
    let mut scores = ScoreWriter::new(create(&dir.join("scores.csv"))?);
    let mut log = create(&dir.join("train_log.jsonl"))?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(with_path(&ckpt_dir))?;
    for item in day_stream(cfg)? {
        let (day, events) = item?;
        let seqs = tokenize_day(&events, &vocab)?;
        drop(events);
        let lines = seqs.len();
        let report = state.run_day_cycle(day, seqs, false)?;
        scores.write(&report.scores)?;
        let entry = serde_json::json!({
            "day": day,
            "lines": lines,
            "scored": report.scores.len(),
            "updates": report.train.updates,
            "mean_loss": report.train.mean_loss,
            "max_grad_norm": report.train.max_grad_norm,
            "eval_hash": report.eval_hash,
        });
        writeln!(log, "{entry}")?;
        Checkpoint::new(state.eval.clone(), Some(day), state.eval_contexts.clone())
            .save(&checkpoint_path(cfg, day))?;
        eprintln!(
            "day {day}: {lines} lines, {} scored, train loss {:.4}",
            report.scores.len(),
            report.train.mean_loss
        );
    }
    let n = scores.finish()?;
    log.flush()?;
    eprintln!("{n} scores written to {}", dir.join("scores.csv").display());
    Ok(())
}

fn eval(cfg: &RunConfig, files: &[PathBuf]) -> Result<()> {
    let dir = out_dir(cfg)?;
    let files = if files.is_empty() {
        vec![dir.join("scores.csv")]
    } else {
        files.to_vec()
    };
    let mode = cfg.model.tokenization;
    let mut reports = Vec::new();
    for f in &files {
        let scores = read_scores_csv(open(f)?)?;
        let roc = roc_for(&scores, mode)?;
        reports.push((AucReport::new(&scores, &roc, mode), roc));
    }
    let (mut report, roc) = reports[0].clone();
    write_roc_csv(create(&dir.join("roc.csv"))?, &roc)?;
    if reports.len() > 1 {
        let aucs: Vec<f64> = reports.iter().map(|(r, _)| r.auc).collect();
        let summary = AucSummary::from_values(&aucs)?;
        let table = format!(
            "{:<24} {:>6} {:>6} {:>6} {:>9}\n{}\n",
            "run",
            "Mean",
            "Max",
            "Min",
            "Std. Dev.",
            summary.table_row(&format!("{} runs", summary.runs))
        );
        write_file(&dir.join("auc_table.txt"), &table)?;
        print!("{table}");
        report.auc = summary.mean;
        report.seeds = Some(summary);
    } else {
        println!(
            "AUC {:.4} over {} lines ({} red)",
            report.auc, report.lines, report.red
        );
    }
    write_file(
        &dir.join("auc.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    echo_config(cfg, "eval.config.toml")?;
    Ok(())
}

/// Model state that scored `day` in a run: the checkpoint of the latest earlier day.
fn frozen_state(cfg: &RunConfig, day: u32) -> Result<DayCycleState> {
    let dir = cfg.paths.out_dir.join("checkpoints");
    let mut best: Option<u32> = None;
    for entry in fs::read_dir(&dir).map_err(with_path(&dir))? {
        let name = entry?.file_name();
        let d = name.to_str().and_then(|n| {
            n.strip_prefix("day_")?
                .strip_suffix(".bin")?
                .parse::<u32>()
                .ok()
        });
        if let Some(d) = d.filter(|&d| d < day) {
            best = best.max(Some(d));
        }
    }
    let d = best.ok_or_else(|| {
        Error::Lookup(format!(
            "no checkpoint before day {day} in {}",
            dir.display()
        ))
    })?;
    let ck = Checkpoint::load(&checkpoint_path(cfg, d))?;
    let mut state = DayCycleState::new(
        ck.model,
        cfg.train_config(),
        cfg.model.tokenization,
        cfg.seed,
    )?;
    state.eval_contexts = ck.contexts;
    Ok(state)
}

fn day_lines(cfg: &RunConfig, vocab: &Vocabulary, day: u32) -> Result<Vec<TokenSequence>> {
    for item in day_stream(cfg)? {
        let (d, events) = item?;
        if d == day {
            return tokenize_day(&events, vocab);
        }
    }
    Err(Error::Lookup(format!("day {day} is not in the corpus")))
}

fn export_attention(cfg: &RunConfig, day: u32) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let state = frozen_state(cfg, day)?;
    let seqs = day_lines(cfg, &vocab, day)?;
    let outputs = state.score_frozen(&seqs, true)?;
    let traces: Vec<_> = outputs.iter().filter_map(|o| o.trace.as_ref()).collect();
    let dir = out_dir(cfg)?;
    write_traces_jsonl(
        create(&dir.join(format!("attention_day{day}.jsonl")))?,
        traces.iter().copied(),
    )?;
    let map = AttentionHeatmap::from_traces(traces.iter().copied())?;
    if map.is_empty() {
        eprintln!("warning: no attention traces for day {day}; the heatmap table is empty");
    }
    map.write_csv(
        create(&dir.join(format!("heatmap_day{day}.csv")))?,
        cfg.model.tokenization,
    )?;
    echo_config(cfg, "export.config.toml")?;
    eprintln!("{} traces exported for day {day}", traces.len());
    Ok(())
}

fn export_case(cfg: &RunConfig, day: u32, sel: &CaseSelection) -> Result<()> {
    if cfg.model.kind.is_tiered() {
        return Err(Error::Config("case studies need a non-tiered model".into()));
    }
    let vocab = load_vocab(cfg)?;
    let state = frozen_state(cfg, day)?;
    let seqs = day_lines(cfg, &vocab, day)?;
    let outputs = state.score_frozen(&seqs, true)?;
    let raw: Vec<f64> = outputs.iter().map(|o| o.loss).collect();
    let cases = select_cases(&seqs, &raw, sel)?
        .into_iter()
        .map(|i| CaseStudy::build(&seqs[i], &outputs[i], &vocab))
        .collect::<Result<Vec<_>>>()?;
    let dir = out_dir(cfg)?;
    write_file(
        &dir.join(format!("cases_day{day}.json")),
        serde_json::to_string_pretty(&cases)?,
    )?;
    echo_config(cfg, "export.config.toml")?;
    eprintln!("{} case studies exported for day {day}", cases.len());
    Ok(())
}
