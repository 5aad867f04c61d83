use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use urban_subdivide::characterize::KsMethod;
use urban_subdivide::geometry::Contiguity;
use urban_subdivide::ingest::PoiCategory;
use urban_subdivide::metrics::{MetricId, TimeWindow};
use urban_subdivide::pipeline::{self, InputPaths, InputSelection, RunConfig, OUTPUT_DIR_ENV};
use urban_subdivide::spatial::{LocalVariance, SpotLabel};
use urban_subdivide::synth::{self, Block, Pattern, PlantedContrasts, SynthSpec};
use urban_subdivide::{Error, Result};

/// Hot and cold spots of demographic groups in aggregated mobility data.
#[derive(Parser)]
#[command(name = "urban-subdivide", version)]
struct Cli {
    /// Worker threads for the parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check the input files, one line per file.
    Validate(RunArgs),
    /// Compute the standardized ratio fields, cell incomes and POI counts.
    Metrics(RunArgs),
    /// Global Moran's I per metric (needs `metrics` output).
    MoranGlobal(RunArgs),
    /// Local Moran's I and hot/cold labels (needs `moran-global` output).
    MoranLocal(RunArgs),
    /// Hot vs cold comparisons of income and POIs (needs `moran-local` output).
    Characterize(RunArgs),
    /// Full pipeline into a fresh output directory, with report.json.
    Report(RunArgs),
    /// Write a synthetic fixture in the input formats, plus a run.toml.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ContiguityArg {
    Queen,
    Rook,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Anselin,
    PaperLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum KsArg {
    Asymptotic,
    Exact,
    Auto,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; relative paths inside resolve against its directory.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    visits: Option<PathBuf>,
    #[arg(long)]
    neighborhoods: Option<PathBuf>,
    #[arg(long)]
    pois: Option<PathBuf>,
    /// Comma-separated subset of G, E, T.
    #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
    metrics: Option<Vec<MetricId>>,
    /// Time window as START-END hours, e.g. 8-24.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    contiguity: Option<ContiguityArg>,
    #[arg(long, value_enum)]
    local_variance: Option<VarianceArg>,
    #[arg(long)]
    prior_alpha: Option<f64>,
    /// Benjamini–Hochberg correction of local p-values.
    #[arg(long)]
    fdr: bool,
    #[arg(long, value_enum)]
    ks_method: Option<KsArg>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
}

fn parse_metric(s: &str) -> std::result::Result<MetricId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_category(s: &str) -> std::result::Result<PoiCategory, String> {
    s.parse().map_err(|_| format!("unknown POI category `{s}`"))
}

fn parse_window(s: &str) -> Result<TimeWindow> {
    let bad = || Error::InvalidConfig(format!("window `{s}` must look like 8-24"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let start = a.trim().parse().map_err(|_| bad())?;
    let end = b.trim().parse().map_err(|_| bad())?;
    TimeWindow::new(start, end, None)
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let missing = |name: &str| Error::InvalidConfig(format!("--{name} is required without --config"));
                RunConfig::with_inputs(InputPaths {
                    grid: self.grid.clone().ok_or_else(|| missing("grid"))?,
                    visits: self.visits.clone().ok_or_else(|| missing("visits"))?,
                    neighborhoods: self.neighborhoods.clone().ok_or_else(|| missing("neighborhoods"))?,
                    pois: self.pois.clone().ok_or_else(|| missing("pois"))?,
                })
            }
        };
        if let Some(p) = &self.grid {
            cfg.inputs.grid = p.clone();
        }
        if let Some(p) = &self.visits {
            cfg.inputs.visits = p.clone();
        }
        if let Some(p) = &self.neighborhoods {
            cfg.inputs.neighborhoods = p.clone();
        }
        if let Some(p) = &self.pois {
            cfg.inputs.pois = p.clone();
        }
        if let Some(v) = &self.metrics {
            cfg.metrics = v.clone();
            cfg.mark_set("metrics");
        }
        if let Some(w) = &self.window {
            cfg.window = parse_window(w)?;
            cfg.mark_set("window");
        }
        if let Some(v) = self.permutations {
            cfg.permutations = v;
            cfg.mark_set("permutations");
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
            cfg.mark_set("seed");
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
            cfg.mark_set("alpha");
        }
        if let Some(v) = self.contiguity {
            cfg.contiguity = match v {
                ContiguityArg::Queen => Contiguity::Queen,
                ContiguityArg::Rook => Contiguity::Rook,
            };
            cfg.mark_set("contiguity");
        }
        if let Some(v) = self.local_variance {
            cfg.local_variance = match v {
                VarianceArg::Anselin => LocalVariance::Anselin,
                VarianceArg::PaperLiteral => LocalVariance::PaperLiteral,
            };
            cfg.mark_set("local_variance");
        }
        if let Some(v) = self.prior_alpha {
            cfg.prior_alpha = v;
            cfg.mark_set("prior_alpha");
        }
        if self.fdr {
            cfg.fdr = true;
            cfg.mark_set("fdr");
        }
        if let Some(v) = self.ks_method {
            cfg.ks_method = match v {
                KsArg::Asymptotic => KsMethod::Asymptotic,
                KsArg::Exact => KsMethod::Exact,
                KsArg::Auto => KsMethod::Auto,
            };
            cfg.mark_set("ks_method");
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
            cfg.mark_set("output_dir");
        }
        Ok(cfg)
    }

    fn selection(&self) -> Result<InputSelection> {
        let mut sel = InputSelection::default();
        if let Some(path) = &self.config {
            let cfg = RunConfig::load(path)?;
            sel.grid = Some(cfg.inputs.grid);
            sel.visits = Some(cfg.inputs.visits);
            sel.neighborhoods = Some(cfg.inputs.neighborhoods);
            sel.pois = Some(cfg.inputs.pois);
        }
        sel.grid = self.grid.clone().or(sel.grid);
        sel.visits = self.visits.clone().or(sel.visits);
        sel.neighborhoods = self.neighborhoods.clone().or(sel.neighborhoods);
        sel.pois = self.pois.clone().or(sel.pois);
        Ok(sel)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Checkerboard,
    PlantedBlock,
    Random,
    HalfSplit,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the fixture into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long, value_enum, default_value = "planted-block")]
    pattern: PatternArg,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Block origin as ROW,COL (planted-block only).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    block_origin: Option<Vec<usize>>,
    #[arg(long)]
    block_size: Option<usize>,
    /// Block (or left-half) contrast in noise units.
    #[arg(long)]
    contrast: Option<f64>,
    /// POI category multiplied in planted cells.
    #[arg(long, value_parser = parse_category)]
    poi_category: Option<PoiCategory>,
    #[arg(long, default_value_t = 2.0)]
    poi_factor: f64,
    /// Income shift of planted cells in income standard deviations.
    #[arg(long, default_value_t = 0.0)]
    income_shift_sd: f64,
    /// Contiguity written into run.toml.
    #[arg(long, value_enum, default_value = "queen")]
    contiguity: ContiguityArg,
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let pattern = match args.pattern {
        PatternArg::Checkerboard => Pattern::Checkerboard,
        PatternArg::PlantedBlock => Pattern::PlantedBlock,
        PatternArg::Random => Pattern::Random,
        PatternArg::HalfSplit => Pattern::HalfSplit,
    };
    let mut spec = SynthSpec::new(args.rows, args.cols, pattern, args.noise_sd, args.seed).with_contrasts(
        PlantedContrasts {
            poi_category: args.poi_category,
            poi_factor: args.poi_factor,
            income_shift_sd: args.income_shift_sd,
        },
    );
    if args.block_origin.is_some() || args.block_size.is_some() || args.contrast.is_some() {
        let size = args.block_size.unwrap_or(3);
        let origin = match args.block_origin.as_deref() {
            Some([r, c]) => (*r, *c),
            _ => (args.rows.saturating_sub(size) / 2, args.cols.saturating_sub(size) / 2),
        };
        spec = spec.with_block(Block {
            origin,
            size,
            contrast: args.contrast.unwrap_or(3.0),
        });
    }
    let fixture = synth::generate(&spec)?;
    synth::write_fixture(&args.out, &fixture)?;
    let mut cfg = RunConfig::with_inputs(InputPaths {
        grid: "grid.geojson".into(),
        visits: "visits.csv".into(),
        neighborhoods: "neighborhoods.geojson".into(),
        pois: "pois.csv".into(),
    });
    cfg.seed = args.seed;
    cfg.output_dir = "out".into();
    cfg.contiguity = match args.contiguity {
        ContiguityArg::Queen => Contiguity::Queen,
        ContiguityArg::Rook => Contiguity::Rook,
    };
    let path = args.out.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    println!(
        "wrote {}x{} {:?} fixture ({} planted cells) to {}",
        args.rows,
        args.cols,
        pattern,
        fixture.planted.len(),
        args.out.display()
    );
    Ok(())
}

/// Returns the exit code: 0 when every file loads, otherwise the code of
/// the first failure.
fn run_validate(args: &RunArgs) -> Result<u8> {
    let sel = args.selection()?;
    let checks = pipeline::validate_inputs(&sel);
    if checks.is_empty() {
        return Err(Error::InvalidConfig("nothing to validate; pass --config or input paths".into()));
    }
    let mut code = 0;
    for c in &checks {
        match &c.outcome {
            Ok(msg) => println!("OK {} {}: {msg}", c.kind, c.path.display()),
            Err(e) => {
                println!("ERROR {} {}: {}: {e}", c.kind, c.path.display(), e.name());
                if code == 0 {
                    code = e.exit_code() as u8;
                }
            }
        }
    }
    Ok(code)
}

fn execute(command: &Command) -> Result<u8> {
    match command {
        Command::Validate(args) => return run_validate(args),
        Command::Metrics(args) => {
            let cfg = args.config()?;
            pipeline::run_metrics_stage(&cfg)?;
            for m in &cfg.metrics {
                println!("{m}: wrote {}", cfg.output_dir.join(pipeline::output::metric_file(*m)).display());
            }
            Ok(())
        }
        Command::MoranGlobal(args) => {
            let cfg = args.config()?;
            let (_, global) = pipeline::run_global_stage(&cfg)?;
            for g in &global {
                println!(
                    "{}: I = {:.6}, E[I] = {:.6}, pseudo p = {} ({} permutations, n = {})",
                    g.metric, g.i, g.expected_i, g.pseudo_p, g.permutations, g.n
                );
            }
            Ok(())
        }
        Command::MoranLocal(args) => {
            let cfg = args.config()?;
            let (_, spots) = pipeline::run_local_stage(&cfg)?;
            for s in &spots {
                println!(
                    "{}: {} hot, {} cold, {} outlier, {} not significant, {} island",
                    s.metric,
                    s.count(SpotLabel::Hot),
                    s.count(SpotLabel::Cold),
                    s.count(SpotLabel::Outlier),
                    s.count(SpotLabel::NotSignificant),
                    s.count(SpotLabel::Island)
                );
            }
            Ok(())
        }
        Command::Characterize(args) => {
            let cfg = args.config()?;
            let (_, c) = pipeline::run_characterize_stage(&cfg)?;
            print_significant(c.rows.iter().filter(|r| r.significant(cfg.alpha)).map(|r| {
                (r.metric, r.comparison.as_str(), r.category, r.result.statistic, r.result.p_bonferroni)
            }));
            Ok(())
        }
        Command::Report(args) => {
            let cfg = args.config()?;
            let report = pipeline::run_pipeline(&cfg)?;
            for m in &report.metrics {
                println!(
                    "{}: I = {:.6} (pseudo p = {}), {} hot, {} cold",
                    m.metric,
                    m.global.i,
                    m.global.pseudo_p,
                    m.spot_counts.get("hot").unwrap_or(&0),
                    m.spot_counts.get("cold").unwrap_or(&0)
                );
            }
            print_significant(
                report
                    .significant()
                    .map(|c| (c.metric, c.comparison.as_str(), c.category, c.ks, c.p_bonferroni)),
            );
            println!("wrote {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Synth(args) => run_synth(args),
    }
    .map(|()| 0)
}

fn print_significant<'a>(rows: impl Iterator<Item = (MetricId, &'a str, Option<PoiCategory>, f64, f64)>) {
    let mut any = false;
    for (metric, comparison, category, ks, p) in rows {
        any = true;
        let category = category.map(|c| format!(" {}", c.as_str())).unwrap_or_default();
        println!("significant: {metric} {comparison}{category} (KS = {ks:.4}, p_bonferroni = {p:.3e})");
    }
    if !any {
        println!("no comparison significant after Bonferroni correction");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(4);
        }
    }
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
