use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use qrec::candidates::write_candidates;
use qrec::eval::{mean_average_precision, mean_ndcg5, precision_recall_curve, write_curve, write_metrics, GradedRanking};
use qrec::features::{parse_feature_matrix, write_feature_matrix, FeatureRow, FEATURE_NAMES};
use qrec::gbdt::{fit, rank, Ensemble};
use qrec::log_core::{clean_log, read_log, segment_sessions, write_log, write_sessions, ClickRecord};
use qrec::pipeline::{build_dataset, run_crossval, synth_logs, PipelineConfig, World};
use qrec::taxonomy::{write_assignments, TaxonomyIndex};
use qrec::text::sig12;

#[derive(Parser)]
#[command(name = "qrec", version, about = "Query recommendation mining from click logs")]
struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for stage outputs and default stage inputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic click log and taxonomy.
    Synth,
    /// Parse and clean a raw log; dump the cleaned log and sessions.
    Ingest {
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Extract candidate pairs for every original query.
    Candidates {
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Assign taxonomy categories to every logged query.
    Assign {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Build the labelled feature matrix with random negative pairs.
    Features {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Fit a model on every row of a feature matrix.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Rank each q1's candidates with a trained model.
    Rank {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a ranking file against the similarity labels.
    Eval {
        #[arg(long)]
        rankings: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Two-fold cross-validation of all ranking methods. Synthesizes data
    /// when no log is given.
    Crossval {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn create(&self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let p = self.out.join(name);
        let f = File::create(&p).with_context(|| format!("cannot create {}", p.display()))?;
        Ok(BufWriter::new(f))
    }
}

fn read_text(p: &Path) -> anyhow::Result<String> {
    fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))
}

fn load_log(p: &Path) -> anyhow::Result<Vec<ClickRecord>> {
    let f = File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
    let parsed = read_log(BufReader::new(f)).with_context(|| p.display().to_string())?;
    if parsed.skipped > 0 {
        eprintln!("{}: skipped {} malformed of {} lines", p.display(), parsed.skipped, parsed.total);
    }
    Ok(parsed.records)
}

fn load_taxonomy(p: &Path) -> anyhow::Result<TaxonomyIndex> {
    TaxonomyIndex::parse(&read_text(p)?).with_context(|| p.display().to_string())
}

fn load_features(p: &Path) -> anyhow::Result<Vec<FeatureRow>> {
    parse_feature_matrix(&read_text(p)?).with_context(|| p.display().to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::parse(&read_text(p)?).with_context(|| p.display().to_string())?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create {}", cli.out.display()))?;
    let ctx = Ctx { cfg, out: cli.out };
    let cfg = &ctx.cfg;

    match &cli.command {
        Command::Synth => {
            let (records, taxonomy) = synth_logs(&cfg.synth)?;
            write_log(ctx.create("log.tsv")?, &records)?;
            taxonomy.write(ctx.create("taxonomy.tsv")?)?;
            println!("{} click records, {} taxonomy sites", records.len(), taxonomy.sites().len());
        }
        Command::Ingest { log } => {
            let records = load_log(&ctx.path(log, "log.tsv"))?;
            let cleaned = clean_log(&records);
            let sessions = segment_sessions(&cleaned, cfg.session_timeout_s);
            write_log(ctx.create("clean_log.tsv")?, &cleaned)?;
            write_sessions(ctx.create("sessions.tsv")?, &sessions)?;
            println!("{} records, {} after cleaning, {} sessions", records.len(), cleaned.len(), sessions.len());
        }
        Command::Candidates { log } => {
            let records = load_log(&ctx.path(log, "clean_log.tsv"))?;
            let world = World::build(&records, &TaxonomyIndex::default(), cfg);
            let q1s: Vec<String> = world
                .ctx
                .stats
                .query_ids()
                .map(|id| world.ctx.stats.query(id).to_string())
                .filter(|q| world.ctx.stats.cnt_q(q) >= cfg.q1_min_freq)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let pairs = world.candidate_pairs(&q1s);
            write_candidates(ctx.create("candidates.tsv")?, &pairs)?;
            println!("{} candidate pairs for {} queries", pairs.len(), q1s.len());
        }
        Command::Assign { log, taxonomy } => {
            let records = load_log(&ctx.path(log, "clean_log.tsv"))?;
            let taxonomy = load_taxonomy(&ctx.path(taxonomy, "taxonomy.tsv"))?;
            let world = World::build(&records, &taxonomy, cfg);
            write_assignments(ctx.create("assignments.tsv")?, world.assignments.values())?;
            let n = world.assignments.values().filter(|a| a.category.is_some()).count();
            println!("{n} of {} queries categorized", world.assignments.len());
        }
        Command::Features { log, taxonomy } => {
            let records = load_log(&ctx.path(log, "clean_log.tsv"))?;
            let taxonomy = load_taxonomy(&ctx.path(taxonomy, "taxonomy.tsv"))?;
            let world = World::build(&records, &taxonomy, cfg);
            let q1s = world.original_queries(cfg.q1_min_freq);
            let pairs = world.candidate_pairs(&q1s);
            let ds = build_dataset(&pairs, &world, cfg.neg_ratio, cfg.seed)?;
            write_feature_matrix(ctx.create("features.tsv")?, &ds.rows)?;
            println!("{} positive and {} random pairs", ds.n_positive, ds.n_negative);
        }
        Command::Train { features } => {
            let rows = load_features(&ctx.path(features, "features.tsv"))?;
            let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.to_array().to_vec()).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.sim).collect();
            let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
            let outcome = fit(&x, &y, &names, &cfg.train)?;
            outcome.model.write(ctx.create("model.txt")?)?;
            println!(
                "{} trees, training MSE {} -> {}",
                outcome.model.trees.len(),
                sig12(outcome.train_mse[0]),
                sig12(*outcome.train_mse.last().expect("initial MSE"))
            );
        }
        Command::Rank { model, features, log } => {
            let model: Ensemble = read_text(&ctx.path(model, "model.txt"))?.parse()?;
            let rows = load_features(&ctx.path(features, "features.tsv"))?;
            let log_path = ctx.path(log, "clean_log.tsv");
            let clusters = if log_path.exists() {
                World::build(&load_log(&log_path)?, &TaxonomyIndex::default(), cfg).clusters
            } else {
                Default::default()
            };
            let mut by_q1: BTreeMap<&str, Vec<(String, [f64; 23])>> = BTreeMap::new();
            for r in &rows {
                by_q1.entry(&r.q1).or_default().push((r.q2.clone(), r.features.to_array()));
            }
            let mut w = ctx.create("rankings.tsv")?;
            writeln!(w, "q1\trank\tq2\tscore")?;
            for (q1, cands) in &by_q1 {
                for (i, (q2, score)) in rank(&model, q1, cands, &clusters)?.iter().enumerate() {
                    writeln!(w, "{q1}\t{}\t{q2}\t{}", i + 1, sig12(*score))?;
                }
            }
            w.flush()?;
            println!("ranked candidates of {} queries", by_q1.len());
        }
        Command::Eval { rankings, features } => {
            let rows = load_features(&ctx.path(features, "features.tsv"))?;
            let sims: BTreeMap<(&str, &str), f64> = rows.iter().map(|r| ((r.q1.as_str(), r.q2.as_str()), r.sim)).collect();
            let text = read_text(&ctx.path(rankings, "rankings.tsv"))?;
            let mut lists: BTreeMap<String, Vec<(String, f64, f64)>> = BTreeMap::new();
            for (i, line) in text.lines().enumerate().skip(1) {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 4 {
                    bail!("rankings line {}: expected 4 fields", i + 1);
                }
                let pos: f64 = f[1].parse().with_context(|| format!("rankings line {}", i + 1))?;
                let Some(&sim) = sims.get(&(f[0], f[2])) else {
                    bail!("rankings line {}: pair not in feature matrix", i + 1);
                };
                lists.entry(f[0].to_string()).or_default().push((f[2].to_string(), -pos, sim));
            }
            let graded = lists
                .into_iter()
                .map(|(q1, items)| GradedRanking::from_scored(q1, items))
                .collect::<qrec::Result<Vec<_>>>()?;
            let row = ("GBDT".to_string(), mean_ndcg5(&graded)?, mean_average_precision(&graded)?);
            write_metrics(ctx.create("metrics.tsv")?, std::slice::from_ref(&row))?;
            write_curve(ctx.create("curve.tsv")?, &precision_recall_curve(&graded, cfg.curve_points))?;
            println!("NDCG5 {}  MAP {}", sig12(row.1), sig12(row.2));
        }
        Command::Crossval { log, taxonomy } => {
            let (records, taxonomy) = match log {
                Some(p) => {
                    let tax = taxonomy.as_ref().context("--taxonomy is required with --log")?;
                    (load_log(p)?, load_taxonomy(tax)?)
                }
                None => synth_logs(&cfg.synth)?,
            };
            let world = World::build(&records, &taxonomy, cfg);
            let q1s = world.original_queries(cfg.q1_min_freq);
            let pairs = world.candidate_pairs(&q1s);
            let ds = build_dataset(&pairs, &world, cfg.neg_ratio, cfg.seed)?;
            let report = run_crossval(&ds, &cfg.train, cfg.curve_points)?;
            let text = report.render();
            ctx.create("report.txt")?.write_all(text.as_bytes())?;
            write_metrics(ctx.create("metrics.tsv")?, &report.metrics_rows())?;
            for m in &report.methods {
                write_curve(ctx.create(&format!("curve_{}.tsv", m.name))?, &m.curve)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qrec: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
