use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ffhr_core::checkpoint;
use ffhr_core::data::{generate_synthetic_tree, Adjacency, FilterIndex, Split, Triple, TripleStore};
use ffhr_core::diff::check::{gradcheck_model, GradcheckOptions};
use ffhr_core::eval;
use ffhr_core::model::{EdgeIndex, ModelParams};
use ffhr_core::{Trainer, TransformKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

pub const CONFIG_ECHO: &str = "config.cfg";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn init_threads(cfg: &RunConfig) -> Result<()> {
    let n = cfg.worker_threads()?;
    // a second call in the same process keeps the first pool
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already set: {e}");
    }
    Ok(())
}

fn load_store(dir: &Path) -> Result<TripleStore> {
    TripleStore::load_dir(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    init_threads(cfg)?;
    let model = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    for note in train_cfg.off_grid(&model) {
        log::warn!("setting outside the usual grid: {note}");
    }
    let data_dir = cfg.data_dir.as_deref().context("data_dir is not set")?;
    let store = load_store(data_dir)?;
    log::info!(
        "{} entities, {} relations, {}/{}/{} train/valid/test triples",
        store.num_entities(),
        store.num_relations(),
        store.train().len(),
        store.valid().len(),
        store.test().len()
    );

    let out = &cfg.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_ECHO), cfg.to_text()).context("writing resolved config")?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(
        fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?,
    );

    let vocab = store.vocab_hash();
    let run = cfg.to_json();
    let mut trainer = Trainer::new(model, train_cfg, &store)?;
    let outcome = trainer.fit(|record, params| {
        serde_json::to_writer(&mut metrics, record)?;
        writeln!(metrics).map_err(|e| ffhr_core::Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
        match record.valid_mrr {
            Some(mrr) => {
                log::info!("epoch {:>4} loss {:.5} valid MRR {mrr:.4}", record.epoch, record.loss);
                checkpoint::save(&out.join(LAST_CHECKPOINT), params, &vocab, run.clone())?;
            }
            None => log::debug!("epoch {:>4} loss {:.5}", record.epoch, record.loss),
        }
        Ok(())
    })?;
    metrics.flush().context("writing metrics")?;
    checkpoint::save(&out.join(BEST_CHECKPOINT), &outcome.params, &vocab, run)?;
    log::info!(
        "finished after {} epochs; best epoch {} (valid MRR {})",
        outcome.epochs_run,
        outcome.best_epoch,
        outcome.best_valid_mrr.map_or("n/a".into(), |m| format!("{m:.4}"))
    );

    if !store.test().is_empty() {
        let aug = store.augment_reciprocal();
        let adj = Adjacency::from_store(&aug)?;
        let inference = outcome.params.inference(&adj)?;
        let doc = eval::evaluate_document(&inference, &aug, &FilterIndex::build(&aug), Split::Test, false, None)?;
        print!("{}", doc.to_text());
        fs::write(out.join("test_report.json"), serde_json::to_string_pretty(&doc)?).context("writing test report")?;
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data_dir: PathBuf,
    pub split: Split,
    pub per_relation: bool,
    pub categories: Option<f64>,
    pub output: Option<PathBuf>,
}

pub fn evaluate(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    init_threads(cfg)?;
    let ck = checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let store = load_store(&args.data_dir)?;
    ck.check_vocab(&store)?;
    let aug = store.augment_reciprocal();
    if aug.split(args.split).is_empty() {
        bail!("split {} is empty in {}", args.split.name(), args.data_dir.display());
    }
    let adj = Adjacency::from_store(&aug)?;
    let inference = ck.params.inference(&adj)?;
    let doc = eval::evaluate_document(
        &inference,
        &aug,
        &FilterIndex::build(&aug),
        args.split,
        args.per_relation,
        args.categories,
    )?;
    print!("{}", doc.to_text());
    let path = args.output.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval_{}.json", args.split.name()))
    });
    fs::write(&path, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", path.display()))?;
    log::info!("report written to {}", path.display());
    Ok(())
}

/// The toy problem checked when no dataset is configured: 16 entities, two
/// relations, RESCAL with a 2-layer hyperbolic encoder at d = 8.
pub fn toy_gradcheck_config() -> RunConfig {
    RunConfig {
        model: TransformKind::Full,
        dim: 8,
        layers: 2,
        use_gcn: true,
        ..RunConfig::default()
    }
}

fn toy_store(seed: u64) -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < 24 {
        let h = rng.random_range(0..16);
        let t = rng.random_range(0..16);
        if h != t {
            seen.insert(Triple::new(h, rng.random_range(0..2), t));
        }
    }
    TripleStore::from_ids(16, 2, seen.into_iter().collect(), vec![], vec![]).expect("valid toy ids")
}

/// Returns whether the check passed.
pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    init_threads(cfg)?;
    let model = cfg.model_config()?;
    let store = match &cfg.data_dir {
        Some(dir) => load_store(dir)?,
        None => toy_store(cfg.seed),
    };
    if store.num_entities() > 32 || model.dim > 16 {
        log::warn!(
            "finite differences over {} entities at d = {} may take a long time",
            store.num_entities(),
            model.dim
        );
    }
    let aug = store.augment_reciprocal();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model, aug.num_entities(), aug.num_relations(), &mut rng)?;
    // the zero/identity initialization sits on symmetric points; move away
    for a in params.arrays_mut() {
        a.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    let adj = Adjacency::from_store(&aug)?;
    let edges = params.config().use_gcn.then(|| EdgeIndex::new(&adj, params.config().encoder.self_loops));
    let batch = &aug.train()[..aug.train().len().min(12)];
    let opts = GradcheckOptions {
        reg_coeff: cfg.reg_coeff,
        corrupt: cfg.corrupt_gradient,
        ..GradcheckOptions::default()
    };
    let report = gradcheck_model(&params, edges.as_ref(), batch, opts)?;
    println!("{report}");
    Ok(report.passed())
}

pub fn synth(depth: usize, branching: usize, seed: u64, out: &Path) -> Result<()> {
    let store = generate_synthetic_tree(depth, branching, seed)?;
    store.write_dir(out)?;
    println!(
        "wrote {} entities and {}/{}/{} train/valid/test triples to {}",
        store.num_entities(),
        store.train().len(),
        store.valid().len(),
        store.test().len(),
        out.display()
    );
    Ok(())
}
