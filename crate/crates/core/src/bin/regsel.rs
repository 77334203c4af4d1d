use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regsel::bench::{self, ModelKind, RunConfig};
use regsel::select::{accuracy_curve, RankingSource};
use regsel::{ingest, Error, ErrorKind};

/// Feature selection by regularized logistic regression, with tree and
/// forest baselines.
#[derive(Parser)]
#[command(name = "regsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the problematic class in the sample.
    #[arg(long)]
    include_problematic: bool,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.include_problematic {
            cfg.include_problematic = true;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, clean and sample the data; write the sampled cache.
    Prepare(Common),
    /// Fit full L1 and L2 models and write both feature rankings.
    Rank(Common),
    /// Trace accuracy over the top-k features of one ranking.
    Curve {
        #[command(flatten)]
        common: Common,
        /// Ranking to follow: l1 or l2.
        #[arg(long, default_value = "l1")]
        ranking: String,
        /// Model family: lr-l1, lr-l2, rf or dt.
        #[arg(long, default_value = "lr-l1")]
        model: String,
        /// Comma-separated k values; defaults to every k.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Run the whole pipeline and write every report.
    Grid(Common),
    /// Rewrite reports from a saved grid_result.json.
    Report {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Prepare(common) => {
            let cfg = common.load()?;
            let prepared = bench::prepare(&cfg)?;
            ingest::write_cache(
                &cfg.output_dir,
                "sample",
                &prepared.sample,
                &cfg.label_column,
                &prepared.manifest,
            )?;
            println!(
                "sampled {} of {} rows into {}",
                prepared.sample.n_samples(),
                prepared.source_rows,
                cfg.output_dir.join("sample.csv").display()
            );
        }
        Command::Rank(common) => {
            let cfg = common.load()?;
            let prepared = bench::prepare(&cfg)?;
            let r = bench::fit_rankings(&cfg, &prepared)?;
            let dir = &cfg.output_dir;
            let names = &prepared.split.train.feature_names;
            create_dir(dir)?;
            write(&dir.join("ranking_l1.csv"), &r.ranking_l1.to_csv(names))?;
            write(&dir.join("ranking_l2.csv"), &r.ranking_l2.to_csv(names))?;
            write(
                &dir.join("model_l1.json"),
                &serde_json::to_string_pretty(&r.model_l1.to_document())?,
            )?;
            write(
                &dir.join("model_l2.json"),
                &serde_json::to_string_pretty(&r.model_l2.to_document())?,
            )?;
            println!("wrote rankings and models to {}", dir.display());
        }
        Command::Curve {
            common,
            ranking,
            model,
            k,
        } => {
            let cfg = common.load()?;
            let model = ModelKind::parse(&model)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{model}`")))?;
            let prepared = bench::prepare(&cfg)?;
            let r = bench::fit_rankings(&cfg, &prepared)?;
            let (source, order) = match ranking.as_str() {
                "l1" => (RankingSource::L1, r.ranking_l1.order()),
                "l2" => (RankingSource::L2, r.ranking_l2.order()),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "ranking must be l1 or l2, got `{other}`"
                    )))
                }
            };
            let ks = if k.is_empty() {
                (1..=order.len()).collect()
            } else {
                k
            };
            let family = cfg.family(model, &cfg.seeds())?;
            let curve = accuracy_curve(&prepared.split, &order, &family, &ks, source)?;
            let mut text = String::from("k,accuracy\n");
            for p in &curve.points {
                text.push_str(&format!("{},{}\n", p.k, p.accuracy));
            }
            create_dir(&cfg.output_dir)?;
            let path = cfg
                .output_dir
                .join(format!("curve_{ranking}_{}.csv", model.slug()));
            write(&path, &text)?;
            print!("{text}");
        }
        Command::Grid(common) => {
            let cfg = common.load()?;
            let (result, files) = bench::run_grid(&cfg)?;
            if let Some(a) = &result.analysis {
                println!(
                    "MAX_L1 = {}, MAX_L2 = {}, common = {}",
                    a.max_l1,
                    a.max_l2,
                    a.common.len()
                );
            }
            for row in &result.rows {
                match &row.outcome {
                    Some(o) => println!("{:<16} {:.4}", row.name, o.accuracy),
                    None => println!("{:<16} skipped", row.name),
                }
            }
            println!(
                "wrote {} files to {}",
                files.len(),
                cfg.output_dir.display()
            );
        }
        Command::Report { from, out } => {
            let result = bench::load_result(&from)?;
            let dir =
                out.unwrap_or_else(|| from.parent().map(Path::to_path_buf).unwrap_or_default());
            let timings_path = from.with_file_name("timings.json");
            let timings = std::fs::read_to_string(&timings_path)
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let files = bench::emit_reports(&result, timings.as_ref(), &dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Solver => 3,
            })
        }
    }
}
