use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fatigue_core::config::{RunConfig, CONFIG_ENV};
use fatigue_core::dataset::{self, Dataset, Split};
use fatigue_core::lifetime::{
    predict_remaining, AlgorithmOptions, MultiLevelScenario, PalmgrenMiner, RemainingLifePredictor,
};
use fatigue_core::nn::train::evaluate_model;
use fatigue_core::nn::{self, LossWeights, NetworkConfig, SurrogateModel};
use fatigue_core::protocol::ScenarioFile;
use fatigue_core::simulator::{self, build_sn_table, grid_levels, LifeOutcome, SnTable};
use fatigue_core::studies::{self, Family, JumpStudySpec, StudySpec};
use fatigue_core::util::sha256_hex;
use fatigue_core::TOOL_VERSION;

#[derive(Parser)]
#[command(name = "fatigue", version, about = "Concrete fatigue simulation, surrogate training and lifetime prediction")]
struct Cli {
    /// Config file (`key = value` under `[section]` headers).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set material.fc=60`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Verify the command's acceptance property; exit 4 if it does not hold.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Constant-amplitude lives for a set of upper load levels.
    SnCurve {
        /// Comma-separated levels; defaults to 0.65..0.90.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        levels: Option<Vec<f64>>,
    },
    /// Run a block-loading scenario from a JSON file.
    Simulate { scenario: PathBuf },
    /// Label the 630-point two-stage grid.
    GenDataset {
        /// Tag the 60-sample training subset instead of a random split.
        #[arg(long)]
        small_subset: bool,
    },
    /// Train a surrogate on a generated dataset.
    Train {
        /// Directory holding dataset.csv and dataset_meta.json (default: out dir).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Phys)]
        mode: Mode,
    },
    /// Remaining-life prediction for one or many multi-level scenarios.
    Predict {
        scenario: PathBuf,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Validation campaigns.
    Study {
        #[arg(long, value_enum)]
        study: StudyKind,
        #[command(flatten)]
        model: ModelArg,
        /// Also run the multi-jump scenarios through the simulator.
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Args)]
struct ModelArg {
    #[arg(long, required_unless_present = "stub_pm")]
    model: Option<PathBuf>,
    /// Use the Palmgren-Miner predictor (every jump neutral).
    #[arg(long)]
    stub_pm: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Phys,
    Data,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Three,
    Five,
    Jumps,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Check(_) => 4,
        }
    }
}

trait OrFail<T> {
    fn config(self) -> Result<T, Failure>;
    fn numerical(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn numerical(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Numerical(e.into()))
    }
}

struct Ctx {
    cfg: RunConfig,
    fp: String,
    check: bool,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let path = self.out(name);
        fs::write(&path, body)
            .with_context(|| format!("writing {}", path.display()))
            .config()?;
        self.written.push(path);
        Ok(())
    }

    /// CSV or text with a leading fingerprint comment.
    fn write_tagged(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let text = format!("# config {} fatigue {TOOL_VERSION}\n{body}", self.fp);
        self.write(name, &text)
    }

    fn write_json(&mut self, name: &str, mut value: serde_json::Value) -> Result<(), Failure> {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("config_fingerprint".into(), json!(self.fp));
            obj.insert("tool_version".into(), json!(TOOL_VERSION));
        }
        let text = serde_json::to_string_pretty(&value).expect("json serializes") + "\n";
        self.write(name, &text)
    }

    fn manifest(&mut self, command: &str) -> Result<(), Failure> {
        let files: Vec<_> = self
            .written
            .iter()
            .map(|p| {
                let bytes = fs::read(p).unwrap_or_default();
                json!({
                    "file": p.file_name().map(|f| f.to_string_lossy().into_owned()),
                    "sha256": sha256_hex(&bytes),
                })
            })
            .collect();
        let body = json!({ "command": command, "seed": self.cfg.seed, "files": files });
        self.write_json(&format!("manifest_{command}.json"), body)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e:#}"),
                Failure::Numerical(e) => eprintln!("numerical fault: {e:#}"),
                Failure::Check(m) => eprintln!("check failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .config()?;
        cfg.merge_text(&text).config()?;
    }
    cfg.apply_overrides(&cli.overrides).config()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate().config()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")
            .config()?;
    }
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .config()?;
    let mut ctx = Ctx {
        fp: cfg.fingerprint(),
        cfg,
        check: cli.check,
        written: Vec::new(),
    };
    ctx.write("config_used.txt", &ctx.cfg.to_text())?;
    let name = match cli.cmd {
        Command::SnCurve { levels } => {
            cmd_sn_curve(&mut ctx, levels.unwrap_or_else(grid_levels))?;
            "sn-curve"
        }
        Command::Simulate { scenario } => {
            cmd_simulate(&mut ctx, &scenario)?;
            "simulate"
        }
        Command::GenDataset { small_subset } => {
            let small = small_subset || ctx.cfg.small_subset;
            cmd_gen_dataset(&mut ctx, small)?;
            "gen-dataset"
        }
        Command::Train { dataset, mode } => {
            let dir = dataset.unwrap_or_else(|| ctx.cfg.out_dir.clone());
            cmd_train(&mut ctx, &dir, mode)?;
            "train"
        }
        Command::Predict { scenario, model } => {
            let pred = load_predictor(&model)?;
            cmd_predict(&mut ctx, &scenario, pred.as_ref())?;
            "predict"
        }
        Command::Study { study, model, oracle } => {
            let pred = load_predictor(&model)?;
            cmd_study(&mut ctx, study, pred.as_ref(), oracle)?;
            "study"
        }
    };
    ctx.manifest(name)
}

fn load_predictor(arg: &ModelArg) -> Result<Box<dyn RemainingLifePredictor + Sync>, Failure> {
    if arg.stub_pm {
        return Ok(Box::new(PalmgrenMiner));
    }
    let path = arg.model.as_ref().expect("clap enforces --model or --stub-pm");
    let model = SurrogateModel::load(path)
        .with_context(|| format!("loading model {}", path.display()))
        .config()?;
    Ok(Box::new(model))
}

fn sn_table(ctx: &Ctx, levels: &[f64]) -> Result<SnTable, Failure> {
    build_sn_table(&ctx.cfg.material, levels, ctx.cfg.s_min, &ctx.cfg.settings).numerical()
}

fn cmd_sn_curve(ctx: &mut Ctx, levels: Vec<f64>) -> Result<(), Failure> {
    if levels.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!("empty level list")));
    }
    let c = &ctx.cfg;
    let rows = simulator::sn_curve(&c.material, &levels, c.s_min, &c.settings).numerical()?;
    let mut csv = String::from("s_max,n_f,status\n");
    for (s, o) in &rows {
        match o {
            LifeOutcome::Failed { cycles, .. } => csv.push_str(&format!("{s},{cycles},failed\n")),
            LifeOutcome::Runout => {
                csv.push_str(&format!("{s},{},runout\n", ctx.cfg.settings.max_cycles))
            }
        }
    }
    ctx.write_tagged("sn_curve.csv", &csv)?;
    if ctx.check {
        let mut failed: Vec<(f64, u64)> = rows.iter().filter_map(|(s, o)| o.cycles().map(|n| (*s, n))).collect();
        failed.sort_by(|a, b| a.0.total_cmp(&b.0));
        if failed.len() != rows.len() {
            return Err(Failure::Check("runout in the S-N curve".into()));
        }
        if let Some(w) = failed.windows(2).find(|w| w[1].1 >= w[0].1) {
            return Err(Failure::Check(format!(
                "N_f not decreasing: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn cmd_simulate(ctx: &mut Ctx, path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .config()?;
    let file = ScenarioFile::from_json(&text).config()?;
    let mut levels: Vec<f64> = file.levels.iter().map(|l| l.s_max).collect();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let mut c = ctx.cfg.clone();
    c.material.fc = file.fc;
    let sn = build_sn_table(&c.material, &levels, file.s_min, &c.settings).numerical()?;
    let scenario = file
        .to_scenario()
        .and_then(|s| s.resolve_durations(&sn))
        .config()?;
    let r = simulator::run_scenario_with(&c.material, &scenario, &c.settings, true).numerical()?;
    // accumulated life: applied fractions plus the fraction survived in the
    // failing block
    let sum_eta = r.failure_block.map(|b| {
        (0..=b)
            .map(|i| r.cycles_per_block[i] as f64 / sn.get(scenario.blocks[i].s_max).unwrap() as f64)
            .sum::<f64>()
    });
    ctx.write_tagged("creep.csv", &r.creep_csv())?;
    ctx.write_tagged("sn_table.csv", &sn.to_csv())?;
    ctx.write_json(
        "scenario_result.json",
        json!({
            "failed": r.failed,
            "runout": r.runout,
            "failure_block": r.failure_block,
            "failure_cause": r.failure_cause,
            "cycles_per_block": r.cycles_per_block,
            "total_cycles": r.total_cycles(),
            "sum_eta": sum_eta,
        }),
    )
}

fn cmd_gen_dataset(ctx: &mut Ctx, small: bool) -> Result<(), Failure> {
    let c = &ctx.cfg;
    let sn = sn_table(ctx, &grid_levels())?;
    let ds = dataset::generate(&c.material, &sn, &c.settings, c.seed).numerical()?;
    let ds = if small { ds.small_subset() } else { ds.split(c.split, c.seed) }.numerical()?;
    ctx.write_tagged("dataset.csv", &ds.to_csv())?;
    ctx.write("dataset_meta.json", &ds.meta_json())?;
    ctx.write_tagged("sn_table.csv", &sn.to_csv())?;
    if ctx.check {
        let v = ds.sequence_violations();
        if ds.samples.len() != 630 || !v.is_empty() {
            return Err(Failure::Check(format!(
                "{} samples, {} sequence-effect violations",
                ds.samples.len(),
                v.len()
            )));
        }
    }
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, dir: &Path, mode: Mode) -> Result<(), Failure> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    };
    let ds = Dataset::from_files(&read("dataset.csv").config()?, &read("dataset_meta.json").config()?).config()?;
    let weights = match mode {
        Mode::Phys => ctx.cfg.loss,
        Mode::Data => LossWeights::data_only(),
    };
    let tag = match mode {
        Mode::Phys => "phys",
        Mode::Data => "data",
    };
    let (tr, va, te) = (ds.subset(Split::Train), ds.subset(Split::Val), ds.subset(Split::Test));
    let (model, history) = nn::train(&tr, &va, &NetworkConfig::default(), &ctx.cfg.training_config(), &weights)
        .map_err(|e| match e {
            nn::NnError::NonFiniteLoss { .. } => Failure::Numerical(e.into()),
            other => Failure::Config(other.into()),
        })?;
    let test_r2 = if te.is_empty() {
        None
    } else {
        Some(evaluate_model(&model, &te).numerical()?.1)
    };
    let train_r2 = evaluate_model(&model, &tr).ok().map(|r| r.1);
    ctx.write_tagged(&format!("model_{tag}.txt"), &model.to_text())?;
    ctx.write_tagged(&format!("history_{tag}.csv"), &history.to_csv())?;
    ctx.write_json(
        &format!("train_report_{tag}.json"),
        json!({
            "mode": tag,
            "n_train": tr.len(),
            "n_val": va.len(),
            "n_test": te.len(),
            "epochs": history.epochs.len(),
            "best_epoch": history.best_epoch,
            "stop": format!("{:?}", history.stop),
            "train_r2": train_r2,
            "test_r2": test_r2,
        }),
    )?;
    if ctx.check {
        match test_r2 {
            Some(r2) if r2 >= 0.90 => {}
            other => return Err(Failure::Check(format!("test R² {other:?} below 0.90"))),
        }
    }
    Ok(())
}

fn cmd_predict(ctx: &mut Ctx, path: &Path, pred: &(dyn RemainingLifePredictor + Sync)) -> Result<(), Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .config()?;
    let value: serde_json::Value = serde_json::from_str(&text).context("parsing scenarios").config()?;
    let scenarios: Vec<MultiLevelScenario> = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|s| vec![s])
    }
    .context("parsing scenarios")
    .config()?;
    let opts = AlgorithmOptions::default();
    let mut traces = Vec::with_capacity(scenarios.len());
    let mut csv = format!("scenario_id,{}\n", fatigue_core::lifetime::LifetimeTrace::CSV_HEADER);
    for (i, sc) in scenarios.iter().enumerate() {
        sc.validate().config()?;
        let t = predict_remaining(pred, sc, &opts).numerical()?;
        csv.push_str(&format!("{i},{}\n", t.csv_row(sc.n_levels())));
        traces.push(t);
    }
    ctx.write_json("predictions.json", json!({ "traces": traces }))?;
    ctx.write_tagged("predictions.csv", &csv)
}

fn cmd_study(
    ctx: &mut Ctx,
    kind: StudyKind,
    pred: &(dyn RemainingLifePredictor + Sync),
    oracle: bool,
) -> Result<(), Failure> {
    let seed = ctx.cfg.seed;
    match kind {
        StudyKind::Three | StudyKind::Five => {
            let n = if matches!(kind, StudyKind::Three) { 3 } else { 5 };
            let sn = sn_table(ctx, &grid_levels())?;
            let mut summary = Vec::new();
            let mut low = Vec::new();
            for fam in Family::SEQUENCES {
                let spec = StudySpec::sequence(fam, n, seed).config()?;
                let r = studies::run_sequence_study(pred, &ctx.cfg.material, &sn, &ctx.cfg.settings, &spec)
                    .numerical()?;
                let stem = format!("study_{n}level_{}", fam.to_string().to_lowercase());
                ctx.write_tagged(&format!("{stem}.csv"), &r.to_csv())?;
                ctx.write_tagged(&format!("{stem}_plot.csv"), &r.plot_csv())?;
                println!("{fam} ({n} levels): R² = {:.4}, {} excluded", r.r2, r.excluded);
                if r.r2 < 0.85 {
                    low.push(format!("{fam}: {:.4}", r.r2));
                }
                summary.push(json!({
                    "family": fam.to_string(),
                    "levels": spec.levels,
                    "scenarios": r.records.len(),
                    "excluded": r.excluded,
                    "r2": r.r2,
                    "mean_correction": r.mean_correction,
                }));
            }
            ctx.write_json(&format!("study_{n}level_summary.json"), json!({ "families": summary }))?;
            if ctx.check && !low.is_empty() {
                return Err(Failure::Check(format!("R² below 0.85: {}", low.join(", "))));
            }
        }
        StudyKind::Jumps => {
            let mut summary = Vec::new();
            let mut means = Vec::new();
            let sn = if oracle { Some(sn_table(ctx, &grid_levels())?) } else { None };
            for spec in JumpStudySpec::paper_sets(seed) {
                let r = studies::run_multi_jump_study(pred, &spec).numerical()?;
                ctx.write_tagged(&format!("study_jumps_{}level.csv", spec.n_levels), &r.plot_csv())?;
                println!(
                    "{} levels, {} samples: mean accumulated life {:.4}",
                    r.n_levels, r.samples, r.mean_sum_eta
                );
                let mut entry = json!({
                    "n_levels": r.n_levels,
                    "samples": r.samples,
                    "mean_sum_eta": r.mean_sum_eta,
                    "failed_early": r.failed_early,
                });
                if let Some(sn) = &sn {
                    let o = studies::run_multi_jump_oracle(&ctx.cfg.material, sn, &ctx.cfg.settings, &spec)
                        .numerical()?;
                    ctx.write_tagged(&format!("study_jumps_{}level_oracle.csv", spec.n_levels), &o.plot_csv())?;
                    println!("    simulator mean {:.4} ({} failed early)", o.mean_sum_eta, o.failed_early);
                    entry["oracle_mean_sum_eta"] = json!(o.mean_sum_eta);
                    entry["oracle_failed_early"] = json!(o.failed_early);
                }
                means.push(r.mean_sum_eta);
                summary.push(entry);
            }
            ctx.write_json("study_jumps_summary.json", json!({ "sets": summary }))?;
            if ctx.check {
                let targets = [0.830, 0.679, 0.640];
                let ok = means.windows(2).all(|w| w[1] < w[0])
                    && means.iter().all(|m| *m < 1.0)
                    && means.iter().zip(targets).all(|(m, t)| (m - t).abs() <= 0.10);
                if !ok {
                    return Err(Failure::Check(format!("means {means:?} vs {targets:?}")));
                }
            }
        }
    }
    Ok(())
}
