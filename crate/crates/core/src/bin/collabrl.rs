use clap::{Args, Parser, Subcommand};
use collabrl::bench::{run_baseline, run_completion_curve, run_rowwise_experiment, ExperimentConfig, Mode};
use collabrl::completion::curve_csv;
use collabrl::instances::{gen_linear_instance, gen_tabular_instance, Bundle, BundleKind};
use collabrl::linear::run_linear_pipeline_with;
use collabrl::report::{aggregate, aggregate_csv, plot_data, RunReport};
use collabrl::rowwise::estimator_csv;
use collabrl::tabular::{run_tabular_pipeline_with, PipelineConfig};
use collabrl::{Error, Result};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "collabrl", version, about = "Collaborative low-rank multi-user RL harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate instance bundles.
    Gen(Common),
    /// Run the collaborative pipeline.
    Run(Common),
    /// Run the independent per-user baseline.
    Baseline(Common),
    /// Aggregate run reports into CSV and plot data.
    Report {
        /// Run report JSON files.
        files: Vec<PathBuf>,
        #[arg(long, env = "COLLABRL_OUT")]
        out: Option<PathBuf>,
    },
    /// Recovery success rate against sampling rate.
    CompletionCurve(Common),
    /// Synthetic row-wise estimation.
    Rowwise(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Instance bundle; generated from the config when absent.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Run seeds `0..N`.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, env = "COLLABRL_OUT")]
    out: Option<PathBuf>,
    /// Override the config's mode.
    #[arg(long)]
    mode: Option<String>,
    /// Write zero wall-clock times so outputs are byte-identical across runs.
    #[arg(long)]
    no_timing: bool,
}

struct Ctx {
    cfg: ExperimentConfig,
    seeds: Vec<u64>,
    out: PathBuf,
    bundle: Option<Bundle>,
    no_timing: bool,
}

impl Common {
    fn load(&self) -> Result<Ctx> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(m) = &self.mode {
            cfg.mode = serde_json::from_value(serde_json::Value::String(m.clone()))
                .map_err(|_| Error::Config(format!("unknown mode {m}")))?;
            cfg.validate()?;
        }
        let seeds = match self.seed {
            Some(s) => vec![s],
            None => cfg.seed_list(self.seeds),
        };
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out)?;
        let bundle = self.bundle.as_deref().map(Bundle::load).transpose()?;
        Ok(Ctx {
            cfg,
            seeds,
            out,
            bundle,
            no_timing: self.no_timing,
        })
    }
}

impl Ctx {
    /// The bundle given on the command line, else a fresh one for `seed`.
    fn instance(&self, kind: BundleKind, seed: u64) -> Result<Bundle> {
        if let Some(b) = &self.bundle {
            if b.kind != kind {
                return Err(Error::Schema(format!("bundle is {:?}, mode needs {kind:?}", b.kind)));
            }
            return Ok(b.clone());
        }
        match kind {
            BundleKind::Tabular => {
                let mut p = self.cfg.tabular.clone().ok_or_else(|| Error::Config("missing [tabular] section".into()))?;
                p.seed = seed;
                let (mdp, rewards) = gen_tabular_instance(&p)?;
                Ok(Bundle::tabular(p, mdp, rewards))
            }
            BundleKind::Linear => {
                let mut p = self.cfg.linear.clone().ok_or_else(|| Error::Config("missing [linear] section".into()))?;
                p.seed = seed;
                let (mdp, spec, theta) = gen_linear_instance(&p)?;
                Ok(Bundle::linear(p, mdp, spec, theta))
            }
        }
    }

    fn path(&self, name: String) -> PathBuf {
        self.out.join(name)
    }
}

/// Write through a temporary file so readers never see a torn report.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn persist(ctx: &Ctx, stem: &str, report: &RunReport) -> Result<()> {
    let mut r = report.clone();
    if ctx.no_timing {
        r.wall_ms = 0;
    }
    write_atomic(&ctx.path(format!("{stem}.json")), &r.to_json()?)?;
    write_atomic(&ctx.path(format!("{stem}.csv")), &r.to_csv())
}

fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let kind = match ctx.cfg.mode {
        Mode::Linear => BundleKind::Linear,
        _ => BundleKind::Tabular,
    };
    for &seed in &ctx.seeds {
        let b = ctx.instance(kind, seed)?;
        let path = ctx.path(format!("bundle_{}_seed{seed}.json", ctx.cfg.mode.name()));
        let sum = b.save(&path)?;
        println!("{} sha256={sum}", path.display());
    }
    Ok(())
}

fn run_one(ctx: &Ctx, seed: u64) -> Result<()> {
    let stem = format!("report_{}_seed{seed}", ctx.cfg.mode.name());
    let mut sink_err = None;
    let mut sink = |r: &RunReport| {
        if let Err(e) = persist(ctx, &stem, r) {
            sink_err = Some(e);
        }
    };
    let result = match ctx.cfg.mode {
        Mode::Tabular => {
            let b = ctx.instance(BundleKind::Tabular, seed)?;
            let cfg = PipelineConfig {
                seed,
                ..ctx.cfg.pipeline.clone().expect("validated")
            };
            let rewards = b.rewards.as_ref().expect("checked bundle");
            run_tabular_pipeline_with(&b.mdp, rewards, &cfg, &mut sink).map(|_| ())
        }
        Mode::Linear => {
            let b = ctx.instance(BundleKind::Linear, seed)?;
            let mut cfg = ctx.cfg.linear_pipeline.clone().expect("validated");
            cfg.seed = seed;
            let (spec, theta) = (b.spec.as_ref().expect("checked bundle"), b.theta.as_ref().expect("checked bundle"));
            run_linear_pipeline_with(&b.mdp, spec, theta, &cfg, &mut sink).map(|_| ())
        }
        m => return Err(Error::Config(format!("run does not handle mode {}", m.name()))),
    };
    if let Some(e) = sink_err {
        return Err(e);
    }
    result
}

fn for_seeds(ctx: &Ctx, f: impl Fn(u64) -> Result<()> + Sync) -> Result<()> {
    let results: Vec<(u64, Result<()>)> = ctx.seeds.par_iter().map(|&s| (s, f(s))).collect();
    let mut worst: Option<Error> = None;
    for (seed, r) in results {
        match r {
            Ok(()) => println!("seed {seed}: ok"),
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                if worst.as_ref().map_or(true, |w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_baseline(ctx: &Ctx, seed: u64) -> Result<()> {
    let b = ctx.instance(BundleKind::Tabular, seed)?;
    let cfg = ctx.cfg.baseline_config().ok_or_else(|| Error::Config("missing [baseline] section".into()))?;
    let report = run_baseline(&b.mdp, b.rewards.as_ref().expect("checked bundle"), &cfg, seed)?;
    persist(ctx, &format!("report_baseline_seed{seed}"), &report)
}

fn cmd_report(files: &[PathBuf], out: &Path) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Schema("no run reports given".into()));
    }
    let reports = files
        .iter()
        .map(|f| RunReport::from_json(&std::fs::read_to_string(f)?))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&reports)?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("aggregate.csv"), &aggregate_csv(&rows))?;
    write_atomic(&out.join("aggregate.dat"), &plot_data(&rows))?;
    println!("{}", out.join("aggregate.csv").display());
    Ok(())
}

fn cmd_curve(ctx: &Ctx, seed: u64) -> Result<()> {
    let spec = ctx.cfg.completion.as_ref().expect("validated");
    let points = run_completion_curve(spec, seed)?;
    write_atomic(&ctx.path(format!("completion_curve_seed{seed}.csv")), &curve_csv(&points))?;
    let mut dat = String::from("# rate success_fraction\n");
    for p in &points {
        dat.push_str(&format!("{:.16e} {:.16e}\n", p.rate, p.fraction()));
    }
    write_atomic(&ctx.path(format!("completion_curve_seed{seed}.dat")), &dat)
}

fn cmd_rowwise(ctx: &Ctx, seed: u64) -> Result<()> {
    let spec = ctx.cfg.rowwise.as_ref().expect("validated");
    let out = run_rowwise_experiment(spec, seed)?;
    write_atomic(&ctx.path(format!("rowwise_seed{seed}.csv")), &estimator_csv(&out.output.state.log))?;
    write_atomic(&ctx.path(format!("rowwise_seed{seed}.json")), &serde_json::to_string_pretty(&out)?)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(c) => cmd_gen(&c.load()?),
        Cmd::Run(c) => {
            let ctx = c.load()?;
            for_seeds(&ctx, |s| run_one(&ctx, s))
        }
        Cmd::Baseline(c) => {
            let ctx = c.load()?;
            for_seeds(&ctx, |s| cmd_baseline(&ctx, s))
        }
        Cmd::Report { files, out } => cmd_report(&files, &out.unwrap_or_else(|| PathBuf::from("out"))),
        Cmd::CompletionCurve(c) => {
            let ctx = c.load()?;
            for_seeds(&ctx, |s| cmd_curve(&ctx, s))
        }
        Cmd::Rowwise(c) => {
            let ctx = c.load()?;
            for_seeds(&ctx, |s| cmd_rowwise(&ctx, s))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
