use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use logcl::checkpoint;
use logcl::dataset::{load_dataset, write_dataset, DatasetStats, Split};
use logcl::experiment::{ablation, noise_csv, noise_sweep, run_config, test_report};
use logcl::metrics::{merge_rows, to_csv, to_markdown, ResultRow};
use logcl::synthetic::repetition_dataset;
use logcl::train::{evaluate, online_train, TrainOptions};
use logcl::{TemporalKg, TrainConfig};

use crate::manifest::{hash_dataset_files, DatasetFingerprint, RunManifest, MANIFEST_FILE};
use crate::{Command, RunArgs, UsageError};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { dataset, synthetic, out } => prepare(dataset.as_deref(), synthetic.as_deref(), &out),
        Command::Train { run } => train(&run),
        Command::Eval { checkpoint, dataset, split, noise_sigma, online, out } => {
            eval(&checkpoint, &dataset, &split, noise_sigma, online, out.as_deref())
        }
        Command::Ablate { run } => ablate(&run),
        Command::NoiseSweep { run, sigmas, seeds } => sweep(&run, &sigmas, &seeds),
        Command::Report { manifests, out } => report(&manifests, &out),
    }
}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn build_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut config = match &args.preset {
        Some(name) => TrainConfig::preset(name).map_err(usage)?,
        None => TrainConfig::default(),
    };
    if let Some(path) = &args.config {
        if !path.is_file() {
            return Err(usage(format!("config file {} not found", path.display())));
        }
        config.apply_file(path).map_err(usage)?;
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    let flags = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("window", args.window.map(|v| v.to_string())),
        ("tau", args.tau.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("dim", args.dim.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("patience", args.patience.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("noise_sigma", args.noise_sigma.map(|v| v.to_string())),
        ("use_cl", args.no_cl.then(|| "false".into())),
        ("use_eatt", args.no_eatt.then(|| "false".into())),
        ("use_global", args.local_only.then(|| "false".into())),
        ("use_local", args.global_only.then(|| "false".into())),
        ("online", args.online.then(|| "true".into())),
    ];
    pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    for (k, v) in pairs {
        config.set(&k, &v).map_err(usage)?;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn open_dataset(root: &Path) -> Result<TemporalKg> {
    if !root.join("stat.txt").is_file() {
        return Err(usage(format!("{} is not a dataset directory (no stat.txt)", root.display())));
    }
    Ok(load_dataset(root)?)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn stats_csv(name: &str, s: &DatasetStats) -> String {
    format!(
        "dataset,entities,relations,train,valid,test,granularity,snapshots\n{name},{},{},{},{},{},{},{}\n",
        s.entities, s.relations, s.train, s.valid, s.test, s.granularity, s.snapshots
    )
}

fn prepare(dataset: Option<&Path>, synthetic: Option<&str>, out: &Path) -> Result<()> {
    let (kg, source_name) = match (dataset, synthetic) {
        (Some(root), None) => (open_dataset(root)?, root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()),
        (None, Some("repetition")) => (repetition_dataset()?, "repetition".to_string()),
        (None, Some(other)) => return Err(usage(format!("unknown synthetic dataset `{other}`"))),
        _ => return Err(usage("give exactly one of --dataset and --synthetic")),
    };
    let source = match dataset {
        Some(root) => hash_dataset_files(root)?,
        None => source_name.clone(),
    };
    // reuse a previous preparation of the same source if it is intact
    if out.join(MANIFEST_FILE).is_file() {
        let cached = RunManifest::load(out)?;
        let intact = cached.dataset.as_ref().map(|d| d.sha256.clone()) == hash_dataset_files(out).ok();
        if cached.command == "prepare" && cached.source.as_deref() == Some(source.as_str()) && intact {
            println!("{}", stats_csv(&source_name, &kg.stats()).trim_end());
            eprintln!("reusing prepared dataset in {}", out.display());
            return Ok(());
        }
    }
    create_out(out)?;
    write_dataset(&kg, out)?;
    let mut manifest = RunManifest::new("prepare", out);
    manifest.dataset = Some(DatasetFingerprint::of(out, &kg)?);
    for split in Split::ALL {
        manifest.register(&split.to_string(), split.file_name());
    }
    manifest.register("stat", "stat.txt");
    manifest.emit("stats", "stats.json", &json(&kg.stats()))?;
    let csv = stats_csv(&source_name, &kg.stats());
    manifest.emit("stats_csv", "stats.csv", csv.as_bytes())?;
    manifest.source = Some(source);
    manifest.save()?;
    println!("{}", csv.trim_end());
    Ok(())
}

fn train_run(args: &RunArgs, command: &str) -> Result<(TemporalKg, TrainConfig, RunManifest)> {
    let config = build_config(args)?;
    let kg = open_dataset(&args.dataset)?;
    create_out(&args.out)?;
    let mut manifest = RunManifest::new(command, &args.out).with_config(&config);
    manifest.dataset = Some(DatasetFingerprint::of(&args.dataset, &kg)?);
    manifest.emit("config", "config.txt", config.to_text().as_bytes())?;
    Ok((kg, config, manifest))
}

fn train(args: &RunArgs) -> Result<()> {
    let (kg, config, mut manifest) = train_run(args, "train")?;
    let options = TrainOptions {
        log: Some(args.out.join("train_log.jsonl")),
        checkpoint: Some(args.out.join("checkpoint.safetensors")),
        skip_validation: false,
    };
    let (state, report) = run_config(&kg, &config, &options)?;
    if config.online {
        // online updates change the weights after the checkpoint was written
        checkpoint::save(&state, &args.out.join("checkpoint_online.safetensors"))?;
        manifest.register("checkpoint_online", "checkpoint_online.safetensors");
    }
    manifest.register("log", "train_log.jsonl");
    manifest.register("checkpoint", "checkpoint.safetensors");
    manifest.emit("metrics", "metrics.json", &json(&report))?;
    let rows = vec![ResultRow { name: config.variant_name(), report }];
    write_tables(&mut manifest, &rows)?;
    manifest.save()?;
    print!("{}", to_markdown(&rows));
    Ok(())
}

fn write_tables(manifest: &mut RunManifest, rows: &[ResultRow]) -> Result<()> {
    manifest.emit("results", "results.json", &json(&rows))?;
    manifest.emit("results_csv", "results.csv", to_csv(rows).as_bytes())?;
    manifest.emit("results_md", "results.md", to_markdown(rows).as_bytes())?;
    Ok(())
}

fn eval(ckpt: &Path, dataset: &Path, split: &str, sigma: Option<f64>, online: bool, out: Option<&Path>) -> Result<()> {
    let split: Split = split.parse().map_err(usage)?;
    if online && split != Split::Test {
        return Err(usage("--online applies to the test split only"));
    }
    if !ckpt.is_file() {
        bail!("checkpoint {} not found", ckpt.display());
    }
    let mut state = checkpoint::load(ckpt)?;
    let kg = open_dataset(dataset)?;
    let (e, r) = (state.model.num_entities(), state.model.num_relations());
    if e != kg.num_entities() || r != kg.num_relations() {
        bail!(
            "checkpoint expects {e} entities and {r} relations, dataset has {} and {}",
            kg.num_entities(),
            kg.num_relations()
        );
    }
    let sigma = sigma.unwrap_or(state.model.config.noise_sigma);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage(format!("noise sigma must be a non-negative number, got {sigma}")));
    }
    let report = match (online, split) {
        (true, _) => online_train(&mut state, &kg)?,
        (false, Split::Test) => test_report(&state, &kg, sigma)?,
        (false, _) if sigma == 0.0 => evaluate(&state.model, &kg, split)?,
        (false, _) => return Err(usage("noise applies to the test split only")),
    };
    let rows = vec![ResultRow { name: state.model.config.variant_name(), report: report.clone() }];
    if let Some(out) = out {
        create_out(out)?;
        let mut config = state.model.config.clone();
        config.noise_sigma = sigma;
        config.online = online;
        let mut manifest = RunManifest::new("eval", out).with_config(&config);
        manifest.dataset = Some(DatasetFingerprint::of(dataset, &kg)?);
        manifest.emit("metrics", "metrics.json", &json(&report))?;
        write_tables(&mut manifest, &rows)?;
        manifest.save()?;
    }
    print!("{}", to_markdown(&rows));
    Ok(())
}

fn ablate(args: &RunArgs) -> Result<()> {
    let (kg, config, mut manifest) = train_run(args, "ablate")?;
    let rows = ablation(&kg, &config)?;
    write_tables(&mut manifest, &rows)?;
    manifest.save()?;
    print!("{}", to_markdown(&rows));
    Ok(())
}

fn sweep(args: &RunArgs, sigmas: &[f64], seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(usage("--seeds needs at least one seed"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(usage(format!("noise sigma must be a non-negative number, got {s}")));
    }
    let (kg, config, mut manifest) = train_run(args, "noise-sweep")?;
    let points = noise_sweep(&kg, &config, sigmas, seeds)?;
    let csv = noise_csv(&points);
    manifest.emit("noise_points", "noise_points.json", &json(&points))?;
    manifest.emit("noise_csv", "noise.csv", csv.as_bytes())?;
    manifest.save()?;
    print!("{csv}");
    Ok(())
}

fn report(manifests: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let mut sets = Vec::new();
    for path in manifests {
        let m = RunManifest::load(path)?;
        let Some(results) = m.artifact("results") else {
            bail!("{} has no result table", path.display());
        };
        let text = fs::read_to_string(&results).with_context(|| format!("reading {}", results.display()))?;
        let rows: Vec<ResultRow> = serde_json::from_str(&text).with_context(|| format!("parsing {}", results.display()))?;
        sets.push(rows);
    }
    let rows = merge_rows(sets);
    create_out(out)?;
    let mut manifest = RunManifest::new("report", out);
    manifest.emit("report_md", "report.md", to_markdown(&rows).as_bytes())?;
    manifest.emit("report_csv", "report.csv", to_csv(&rows).as_bytes())?;
    manifest.emit("results", "results.json", &json(&rows))?;
    manifest.save()?;
    print!("{}", to_markdown(&rows));
    Ok(())
}
