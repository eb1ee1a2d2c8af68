use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaselineMethod, CliError, Command, GoldArg, InputArgs, InputFormat, JaccardRule, SchemeArg, Settings};
use crate::anova::{anova_report, builtin_groupings, parse_scores_tsv, SchemeName};
use crate::cleaning::{run_pipeline, CleaningConfig, LexicalRule};
use crate::corpus::{corpus_stats, load_pairs, write_pairs, write_pairs_to, Lang, LexiconSet, PairFormat, ParallelPair};
use crate::embeddings::enrich_neighbors;
use crate::metrics::{evaluate_corpus, gather_inputs, EvalRequest, GoldPolicy, MetricWeights};
use crate::par;
use crate::prompting::{
    build_prompt, export_training_instances, render_chat, run_inference, ChatTurn, DeleteGenerator, EchoGenerator,
    FewShotRetriever, Generator, InferenceConfig, RemoteGenerator, TemplateStore,
};
use crate::scorer::ScorerBackend;
use crate::spans::{delete_detoxify, detect_spans, duplicate_detoxify};

pub(super) fn dispatch(command: Command, s: &Settings) -> Result<(), CliError> {
    match command {
        Command::Clean {
            input,
            output,
            report,
            ngram,
            jaccard_max,
            jaccard_rule,
            sem_min_mt,
            sem_min_syn,
        } => {
            let pairs = read_input(&input)?;
            let cfg = CleaningConfig {
                ngram_order: ngram,
                jaccard_discard_threshold: jaccard_max,
                lexical_rule: match jaccard_rule {
                    JaccardRule::Above => LexicalRule::DiscardAtOrAbove,
                    JaccardRule::Below => LexicalRule::DiscardAtOrBelow,
                },
                sem_threshold_mt: sem_min_mt,
                sem_threshold_synthetic: sem_min_syn,
            };
            cfg.validate()?;
            let scorer = scorer(s)?;
            let (kept, rep) = run_pipeline(pairs, &cfg, &scorer)?;
            match &output {
                Some(path) => {
                    write_pairs(&kept, path)?;
                }
                None => {
                    let mut out = std::io::stdout().lock();
                    write_pairs_to(&kept, &mut out).map_err(|e| CliError::Io(e.to_string()))?;
                }
            }
            eprint!("{}", rep.render());
            match &report {
                Some(path) => emit_json(Some(path), &rep),
                None => Ok(()),
            }
        }
        Command::Spans { input, output } => {
            let lexicons = lexicons(s)?;
            let pairs = read_input(&input)?;
            let annotated = par::map(&pairs, |p| {
                let mut p = p.clone();
                p.toxic_spans = detect_spans(&p.toxic, &lexicons.get_or_empty(p.lang));
                p
            });
            let found: usize = annotated.iter().map(|p| p.toxic_spans.len()).sum();
            eprintln!("annotated {} pairs with {found} spans", annotated.len());
            write_pairs(&annotated, &output)?;
            Ok(())
        }
        Command::Baseline { method, input, output } => {
            let lexicons = match method {
                BaselineMethod::Delete => lexicons(s)?,
                BaselineMethod::Duplicate => LexiconSet::default(),
            };
            let pairs = read_input(&input)?;
            let out = par::map(&pairs, |p| {
                let mut p = p.clone();
                p.neutral = Some(match method {
                    BaselineMethod::Delete => delete_detoxify(&p.toxic, &lexicons.get_or_empty(p.lang)),
                    BaselineMethod::Duplicate => duplicate_detoxify(&p.toxic),
                });
                p
            });
            eprintln!("wrote {} rewrites", write_pairs(&out, &output)?);
            Ok(())
        }
        Command::Enrich { input, output, k } => {
            let pairs = read_input(&input)?;
            let scorer = scorer(s)?;
            let out = enrich_neighbors(&pairs, &scorer, k)?;
            eprintln!("stored up to {k} neighbours for {} pairs", write_pairs(&out, &output)?);
            Ok(())
        }
        Command::Prompt {
            input,
            corpus,
            output,
            k,
            stored_neighbors,
        } => {
            let pairs = read_input(&input)?;
            let pool = match &corpus {
                Some(path) => load_pairs(path, &PairFormat::Jsonl)?,
                None => pairs.clone(),
            };
            let templates = templates(s)?;
            let scorer = scorer(s)?;
            let retriever = if stored_neighbors {
                FewShotRetriever::from_stored(&pool, &scorer)
            } else {
                FewShotRetriever::build(&pool, &scorer)?
            };
            let records = par::try_map(&pairs, |p| {
                let bundle = build_prompt(p, &retriever, k, &templates)?;
                Ok::<_, CliError>(PromptRecord {
                    id: bundle.id.clone(),
                    lang: bundle.lang,
                    turns: render_chat(&bundle),
                })
            })?;
            write_jsonl(&output, &records)?;
            eprintln!("rendered {} prompts", records.len());
            Ok(())
        }
        Command::ExportTrain {
            input,
            output,
            k,
            overlap_max,
        } => {
            if !(0.0..=1.0).contains(&overlap_max) {
                return Err(CliError::Validation(format!("overlap-max {overlap_max} outside [0, 1]")));
            }
            let pairs = read_input(&input)?;
            let templates = templates(s)?;
            let scorer = scorer(s)?;
            let retriever = FewShotRetriever::build(&pairs, &scorer)?;
            let instances = export_training_instances(&pairs, &retriever, &templates, k, overlap_max)?;
            write_jsonl(&output, &instances)?;
            eprintln!("exported {} of {} pairs", instances.len(), pairs.len());
            Ok(())
        }
        Command::Infer {
            input,
            corpus,
            golds,
            output,
            records,
            n,
            k,
        } => {
            if n == 0 {
                return Err(CliError::Validation("n must be at least 1".into()));
            }
            let pairs = read_input(&input)?;
            let pool = match &corpus {
                Some(path) => load_pairs(path, &PairFormat::Jsonl)?,
                None => pairs.clone(),
            };
            let golds = match &golds {
                Some(path) => read_golds(path)?,
                None => HashMap::new(),
            };
            let templates = templates(s)?;
            let scorer = scorer(s)?;
            let generator = generator(s)?;
            let retriever = FewShotRetriever::build(&pool, &scorer)?;
            let cfg = InferenceConfig {
                k,
                n,
                weights: MetricWeights::default(),
            };
            let (out, recs) = run_inference(&pairs, &retriever, &templates, generator.as_ref(), &scorer, cfg, &golds)?;
            write_pairs(&out, &output)?;
            if let Some(path) = &records {
                write_jsonl(path, &recs)?;
            }
            eprintln!("selected {} rewrites with generator {}", out.len(), generator.name());
            Ok(())
        }
        Command::Evaluate {
            inputs,
            gens,
            golds,
            out,
            summary,
            w_input,
            w_gold,
            gold_policy,
        } => {
            let weights = MetricWeights::new(w_input, w_gold)?;
            let inputs = load_pairs(&inputs, &PairFormat::Jsonl)?;
            let gens: HashMap<String, ParallelPair> =
                load_pairs(&gens, &PairFormat::Jsonl)?.into_iter().map(|p| (p.id.clone(), p)).collect();
            let golds = match &golds {
                Some(path) => read_golds(path)?,
                None => HashMap::new(),
            };
            let requests = inputs
                .iter()
                .map(|p| {
                    let gen = gens
                        .get(&p.id)
                        .and_then(|g| g.neutral.clone())
                        .ok_or_else(|| CliError::Validation(format!("no generation for input {:?}", p.id)))?;
                    Ok(EvalRequest {
                        id: p.id.clone(),
                        lang: p.lang,
                        input_toxic: p.toxic.clone(),
                        output_gen: gen,
                        output_golds: golds.get(&p.id).cloned().unwrap_or_default(),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let scorer = scorer(s)?;
            let rows = gather_inputs(requests, &scorer)?;
            let policy = match gold_policy {
                GoldArg::First => GoldPolicy::First,
                GoldArg::Average => GoldPolicy::Average,
            };
            let (metric_rows, sum) = evaluate_corpus(&rows, &scorer, weights, policy)?;
            write_jsonl(&out, &metric_rows)?;
            eprint!("{}", sum.render());
            emit_json(summary.as_deref(), &sum)
        }
        Command::Anova { scores, scheme, out } => {
            let text = std::fs::read_to_string(&scores).map_err(|e| CliError::Io(format!("{}: {e}", scores.display())))?;
            let scores = parse_scores_tsv(&text, &scores)?;
            let wanted: Option<SchemeName> = match scheme {
                SchemeArg::All => None,
                SchemeArg::Genetic => Some(SchemeName::Genetic),
                SchemeArg::Typology => Some(SchemeName::Typology),
                SchemeArg::Geography => Some(SchemeName::Geography),
                SchemeArg::Resource => Some(SchemeName::Resource),
            };
            let schemes: Vec<_> = builtin_groupings()
                .into_iter()
                .filter(|g| wanted.is_none_or(|w| g.name == w))
                .collect();
            let report = anova_report(&scores, &schemes);
            eprint!("{}", report.render());
            emit_json(out.as_deref(), &report.to_json())?;
            match report.rows.iter().find_map(|(_, r)| r.as_ref().err()) {
                Some(e) if schemes.len() == 1 => Err(e.clone().into()),
                _ => Ok(()),
            }
        }
        Command::Stats { input, out } => {
            let stats = corpus_stats(&read_input(&input)?);
            eprint!("{}", stats.render());
            emit_json(out.as_deref(), &stats)
        }
    }
}

#[derive(Serialize)]
struct PromptRecord {
    id: String,
    lang: Lang,
    turns: Vec<ChatTurn>,
}

/// One reference line: `{"id": .., "neutral": ..}` or `{"id": .., "golds": [..]}`.
/// Several lines may share an id; their references accumulate in order.
#[derive(Deserialize)]
struct GoldLine {
    id: String,
    #[serde(default)]
    neutral: Option<String>,
    #[serde(default)]
    golds: Vec<String>,
}

fn read_golds(path: &Path) -> Result<HashMap<String, Vec<String>>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{}:{}: malformed reference: {e}", path.display(), idx + 1)))?;
        let refs = out.entry(g.id).or_default();
        refs.extend(g.neutral);
        refs.extend(g.golds);
    }
    Ok(out)
}

fn read_input(args: &InputArgs) -> Result<Vec<ParallelPair>, CliError> {
    let format = match args.format {
        InputFormat::Jsonl => PairFormat::Jsonl,
        InputFormat::Tsv => PairFormat::Tsv {
            lang: args.lang.ok_or_else(|| CliError::Validation("--lang is required for TSV input".into()))?,
            source: args.source.into(),
            has_header: args.header,
        },
    };
    Ok(load_pairs(&args.input, &format)?)
}

fn lexicons(s: &Settings) -> Result<LexiconSet, CliError> {
    match &s.lexicon_dir {
        Some(dir) => Ok(LexiconSet::load_dir(dir)?),
        None => {
            log::warn!("no --lexicon-dir given; lexicon lookups match nothing");
            Ok(LexiconSet::default())
        }
    }
}

fn scorer(s: &Settings) -> Result<ScorerBackend, CliError> {
    let lexicons = if s.scorer == "fallback" {
        lexicons(s)?
    } else {
        LexiconSet::default()
    };
    Ok(ScorerBackend::from_setting(&s.scorer, lexicons, s.timeout)?)
}

fn generator(s: &Settings) -> Result<Box<dyn Generator>, CliError> {
    Ok(match s.generator.as_str() {
        "echo" => Box::new(EchoGenerator),
        "delete" => Box::new(DeleteGenerator::new(lexicons(s)?)),
        url if url.starts_with("http://") || url.starts_with("https://") => Box::new(RemoteGenerator::new(url, s.timeout)),
        other => return Err(CliError::Validation(format!("unknown generator {other:?}; expected a URL, echo or delete"))),
    })
}

fn templates(s: &Settings) -> Result<TemplateStore, CliError> {
    let store = TemplateStore::builtin();
    Ok(match &s.templates {
        Some(dir) => store.overlay_dir(dir)?,
        None => store,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Pretty JSON to `path`, or to standard output when no path is given.
fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

