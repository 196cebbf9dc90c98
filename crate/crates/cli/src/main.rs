use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fsod_core::dataset::{load_cohort_config, CohortAssignment, Dataset};
use fsod_core::error::Error as CoreError;
use fsod_core::eval::{evaluate, load_predictions, Detection};
use fsod_core::fedloss::{
    federated_bce, finite_difference_check, ClassSubset, LogitMatrix, Provenance, TargetMatrix,
};
use fsod_core::prompt::{classify, load_embeddings, load_synonym_table, ClassifierMatrix, SynonymTable};
use fsod_core::split::{best_split, build_test_subset, read_split, sample_kshot_split, write_split, PerClassAp};

use fsod_cli::config::RunConfig;
use fsod_cli::server::{self, ServerState, Store, DEFAULT_MAX_BODY_BYTES};

#[derive(Parser)]
#[command(name = "fsod", about = "Few-shot object detection benchmarking toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate K-shot split files for every (k, seed) pair.
    MakeSplits {
        #[arg(long)]
        dataset: PathBuf,
        /// Shots per class; repeatable.
        #[arg(long = "k", required = false)]
        k: Vec<u32>,
        /// Split seeds; repeatable.
        #[arg(long = "seed", required = false)]
        seed: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cohorts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file and print the All/Many/Med/Few table.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cohorts: Option<PathBuf>,
        /// Restrict scoring to validation images holding a Few/Medium annotation.
        #[arg(long)]
        test_subset: bool,
        /// Also write the result as JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assemble a composite split from candidate splits and their AP tables.
    BestSplit {
        #[arg(long)]
        dataset: PathBuf,
        /// Candidate split files, paired with --ap by position; repeatable.
        #[arg(long = "split", required = true)]
        split: Vec<PathBuf>,
        /// Per-class AP JSON files, one per --split; repeatable.
        #[arg(long = "ap", required = true)]
        ap: Vec<PathBuf>,
        #[arg(long)]
        cohorts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the federated loss, gradient, and finite-difference error for
    /// a JSON bundle.
    LossCheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify region features against synonym-averaged class embeddings.
    Classify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the evaluation service with a persisted leaderboard.
    Serve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cohorts: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        max_body_bytes: Option<usize>,
        #[arg(long)]
        token: Option<String>,
        /// Evaluate submissions only on the Few/Medium test subset.
        #[arg(long)]
        test_subset: bool,
    },
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        let code = match e.downcast_ref::<CoreError>() {
            Some(CoreError::Parse { .. })
            | Some(CoreError::Validation(_))
            | Some(CoreError::InvalidArgument(_)) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn load_dataset(path: &PathBuf, cohorts: Option<&PathBuf>) -> Result<Dataset> {
    let assignment = match cohorts {
        Some(p) => CohortAssignment::Explicit(load_cohort_config(p)?),
        None => CohortAssignment::default(),
    };
    let d = Dataset::load(path, assignment)?;
    for w in d.warnings() {
        tracing::warn!("{w}");
    }
    Ok(d)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::MakeSplits { dataset, k, seed, config, cohorts, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let ks = if k.is_empty() { cfg.k.clone() } else { k };
            let seeds = if seed.is_empty() { cfg.seeds.clone() } else { seed };
            if ks.is_empty() || seeds.is_empty() {
                bail!(CoreError::InvalidArgument(
                    "at least one --k and one --seed (or config k/seeds) are required".into()
                ));
            }
            let out_dir = out
                .or(cfg.out_dir)
                .unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating output dir {}", out_dir.display()))?;
            let cohorts = cohorts.or(cfg.cohort_config);
            let d = load_dataset(&dataset, cohorts.as_ref())?;
            for &kk in &ks {
                for &s in &seeds {
                    let split = sample_kshot_split(&d, kk, s)?;
                    for (c, &n) in &split.shortfall {
                        tracing::warn!("k={kk} seed={s}: class {c} has only {n} instances");
                    }
                    let path = out_dir.join(format!("split_k{kk}_seed{s}.json"));
                    write_split(&path, &split)?;
                    println!("{}", path.display());
                }
            }
            Ok(())
        }
        Command::Evaluate { dataset, predictions, config, cohorts, test_subset, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let cohorts = cohorts.or(cfg.cohort_config.clone());
            let d = load_dataset(&dataset, cohorts.as_ref())?;
            let preds = load_predictions(&predictions)?;
            let restrict = test_subset.then(|| build_test_subset(&d));
            let result = evaluate(&d, &preds, &cfg.eval_config(), restrict.as_ref())?;
            print!("{}", result.to_table());
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&result)?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(())
        }
        Command::BestSplit { dataset, split, ap, cohorts, out } => {
            if split.len() != ap.len() {
                bail!(CoreError::InvalidArgument(format!(
                    "{} --split files but {} --ap files",
                    split.len(),
                    ap.len()
                )));
            }
            let d = load_dataset(&dataset, cohorts.as_ref())?;
            let mut candidates = Vec::new();
            for (sp, app) in split.iter().zip(&ap) {
                let s = read_split(sp)?;
                let text = std::fs::read_to_string(app)
                    .with_context(|| format!("reading {}", app.display()))?;
                let table: PerClassAp = serde_json::from_str(&text)
                    .map_err(|e| CoreError::from_json(e, &text))?;
                candidates.push((s, table));
            }
            let combo = best_split(&d, &candidates)?;
            write_split(&out, &combo)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::LossCheck { input, epsilon, out } => {
            let text = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let bundle: LossBundle =
                serde_json::from_str(&text).map_err(|e| CoreError::from_json(e, &text))?;
            let report = loss_check(&bundle, epsilon)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, json)
                    .with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Classify { dataset, embeddings, synonyms, features, temperature, out } => {
            let d = load_dataset(&dataset, None)?;
            let emb = load_embeddings(&embeddings)?;
            let syn = match synonyms {
                Some(p) => load_synonym_table(p)?,
                None => {
                    // synonyms embedded in the dataset's categories
                    let mut t = SynonymTable::new();
                    for c in d.categories() {
                        t.insert(c.name.clone(), c.synonyms.clone());
                    }
                    t
                }
            };
            let classes: Vec<(i64, String)> =
                d.categories().map(|c| (c.id, c.name.clone())).collect();
            let matrix = ClassifierMatrix::build(&classes, &syn, &emb)?;

            let text = std::fs::read_to_string(&features)
                .with_context(|| format!("reading {}", features.display()))?;
            let regions: Vec<RegionFeature> =
                serde_json::from_str(&text).map_err(|e| CoreError::from_json(e, &text))?;
            let feats: Vec<Vec<f64>> = regions.iter().map(|r| r.feature.clone()).collect();
            let scored = classify(&feats, &matrix, temperature)?;
            let dets: Vec<Detection> = regions
                .iter()
                .zip(&scored)
                .map(|(r, s)| Detection {
                    image_id: r.image_id,
                    category_id: matrix.class_ids[s.argmax],
                    bbox: fsod_core::dataset::BBox {
                        x: r.bbox[0],
                        y: r.bbox[1],
                        w: r.bbox[2],
                        h: r.bbox[3],
                    },
                    score: s.max_score,
                })
                .collect();
            let json = serde_json::to_string_pretty(&dets)?;
            match out {
                Some(p) => std::fs::write(&p, json)
                    .with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Serve {
            dataset,
            config,
            cohorts,
            port,
            store,
            max_body_bytes,
            token,
            test_subset,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let cohorts = cohorts.or(cfg.cohort_config.clone());
            let d = load_dataset(&dataset, cohorts.as_ref())?;
            let restrict = test_subset.then(|| build_test_subset(&d));
            let store_path = store
                .or(cfg.leaderboard_store.clone())
                .unwrap_or_else(|| PathBuf::from("leaderboard.jsonl"));
            let port = port.or(cfg.port).unwrap_or(8080);
            let max_body = max_body_bytes
                .or(cfg.max_body_bytes)
                .unwrap_or(DEFAULT_MAX_BODY_BYTES);
            let token = token.or(cfg.token.clone());

            let state = Arc::new(ServerState {
                dataset: d,
                eval_config: cfg.eval_config(),
                restrict,
                store: Mutex::new(Store::open(store_path)?),
                token,
            });
            let app = server::router(state, max_body);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener =
                    tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                tracing::info!("listening on port {port}");
                axum::serve(listener, app).await?;
                Ok(())
            })
        }
    }
}

#[derive(Debug, Deserialize)]
struct RegionFeature {
    image_id: i64,
    bbox: [f64; 4],
    feature: Vec<f64>,
}

/// Input bundle for `loss-check`.
#[derive(Debug, Deserialize)]
struct LossBundle {
    logits: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    subset: Vec<usize>,
    mode: Provenance,
}

#[derive(Debug, Serialize)]
struct LossCheckReport {
    loss: f64,
    grad: Vec<Vec<f64>>,
    fd_error: f64,
}

fn loss_check(bundle: &LossBundle, epsilon: f64) -> Result<LossCheckReport> {
    let rows = bundle.logits.len();
    let cols = bundle.logits.first().map(Vec::len).unwrap_or_else(|| {
        bundle.subset.iter().max().map(|&c| c + 1).unwrap_or(1)
    });
    for (i, row) in bundle.logits.iter().enumerate() {
        if row.len() != cols {
            bail!(CoreError::InvalidArgument(format!(
                "logits row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
    }
    if bundle.targets.len() != rows {
        bail!(CoreError::InvalidArgument(format!(
            "targets have {} rows, logits have {rows}",
            bundle.targets.len()
        )));
    }
    let logits = LogitMatrix::new(rows, cols, bundle.logits.concat())?;
    let targets = TargetMatrix::new(rows, cols, bundle.targets.concat())?;
    let subset = ClassSubset {
        classes: bundle.subset.iter().copied().collect(),
        provenance: bundle.mode,
    };
    let report = federated_bce(&logits, &targets, &subset)?;
    let fd_error = finite_difference_check(&logits, &targets, &subset, epsilon)?;
    let grad: Vec<Vec<f64>> = (0..rows)
        .map(|r| report.grad[r * cols..(r + 1) * cols].to_vec())
        .collect();
    Ok(LossCheckReport { loss: report.loss, grad, fd_error })
}
