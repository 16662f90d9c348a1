use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use domcftp::cftp::{perfect_sample_traced, CftpError, Schedule, DEFAULT_MAX_HORIZON};
use domcftp::geometry::GeometryError;
use domcftp::inference::{self, FitOptions, InferenceError};
use domcftp::io::{self as fmt, IoError};
use domcftp::models::{ModelConfig, ModelError};
use domcftp::stats::{self, Correction, EnvelopeConfig, Statistic, StatsError};
use domcftp::{Boundary, MultiscaleModel, Point, PointPattern, ScaleTerm, SeedPath, Window};

#[derive(Parser)]
#[command(
    name = "domcftp",
    version,
    about = "Perfect simulation, fitting and envelopes for multiscale area-interaction processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one exact sample and write it as x,y CSV.
    Simulate(SimulateArgs),
    /// Maximum pseudo-likelihood fit, optionally profiled over radius grids.
    Fit(FitArgs),
    /// Pointwise envelope of simulated summary curves around a data curve.
    Envelope(EnvelopeArgs),
    /// Summary curves (K, L, T) of a point pattern.
    Summary(SummaryArgs),
}

#[derive(Args)]
struct Common {
    /// Window as xmin,xmax,ymin,ymax.
    #[arg(long, value_parser = parse_window)]
    window: Option<[f64; 4]>,
    #[arg(long, value_parser = parse_boundary)]
    boundary: Option<Boundary>,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel parts (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model description as JSON (lambda, terms, window, boundary).
    #[arg(long, conflicts_with_all = ["lambda", "log10_gamma1", "log10_gamma2", "r1", "r2"])]
    model: Option<PathBuf>,
    /// Rate per unit area of the window.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    log10_gamma1: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    log10_gamma2: f64,
    /// Radius of the first term; not needed when its gamma is 1.
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r2: Option<f64>,
    /// Largest backward horizon tried before giving up.
    #[arg(long, default_value_t = DEFAULT_MAX_HORIZON)]
    max_horizon: f64,
}

#[derive(Args)]
struct StatArgs {
    /// Comma-separated subset of K, L, T.
    #[arg(long, default_value = "L", value_delimiter = ',', value_parser = parse_stats)]
    stat: Vec<Statistic>,
    /// Largest distance (default: a quarter of the shorter window side).
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long, default_value_t = stats::DEFAULT_R_STEPS)]
    rsteps: usize,
    /// ripley, torus or none (default: torus on a torus, otherwise ripley, or none for T).
    #[arg(long, value_parser = parse_correction)]
    correction: Option<Correction>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also dump the dominating trajectory of the coalescing run as CSV.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Data as x,y CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r2: Option<f64>,
    /// Profile grid lo:hi:n for r1 (needs --r2-grid too).
    #[arg(long, value_parser = parse_range, requires = "r2_grid", conflicts_with_all = ["r1", "r2"])]
    r1_grid: Option<RadiusGrid>,
    #[arg(long, value_parser = parse_range, requires = "r1_grid")]
    r2_grid: Option<RadiusGrid>,
    /// Dummy grid size nx ny.
    #[arg(long, num_args = 2, value_names = ["NX", "NY"], default_values_t = [inference::DEFAULT_DUMMY.0, inference::DEFAULT_DUMMY.1])]
    dummy: Vec<usize>,
    /// Enforce gamma1 >= 1 and gamma2 <= 1.
    #[arg(long)]
    constrain: bool,
    /// Where to write the r1,r2,logPL table of a profile fit.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct EnvelopeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Data as x,y CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 19)]
    nsim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Multiply data coordinates by this factor before use.
    #[arg(long, default_value_t = 1.0)]
    data_scale: f64,
}

#[derive(Args)]
struct SummaryArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Config(String),
    HorizonCap(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::HorizonCap(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Config(m) | Failure::HorizonCap(m) => m,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<CftpError> for Failure {
    fn from(e: CftpError) -> Self {
        match e {
            CftpError::HorizonCapExceeded { .. } => Failure::HorizonCap(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Simulation {
                source: CftpError::HorizonCapExceeded { .. },
                ..
            } => Failure::HorizonCap(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn parse_window(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err("expected xmin,xmax,ymin,ymax".into());
    }
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.trim().parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    if !(out[0] < out[1] && out[2] < out[3]) {
        return Err("need xmin < xmax and ymin < ymax".into());
    }
    Ok(out)
}

fn parse_boundary(s: &str) -> Result<Boundary, String> {
    match s {
        "clip" => Ok(Boundary::Clip),
        "torus" => Ok(Boundary::Torus),
        other => Err(format!("unknown boundary `{other}` (expected clip or torus)")),
    }
}

fn parse_correction(s: &str) -> Result<Correction, String> {
    s.parse()
}

fn parse_stats(s: &str) -> Result<Statistic, String> {
    s.parse()
}

/// Equally spaced radii from `lo:hi:n`, endpoints included.
#[derive(Debug, Clone)]
struct RadiusGrid(Vec<f64>);

fn parse_range(s: &str) -> Result<RadiusGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err("expected lo:hi:n".into());
    };
    let lo: f64 = lo.parse().map_err(|_| format!("`{lo}` is not a number"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("`{hi}` is not a number"))?;
    let n: usize = n.parse().map_err(|_| format!("`{n}` is not a count"))?;
    if n == 0 || !(lo > 0.0 && hi >= lo) {
        return Err("need 0 < lo <= hi and n >= 1".into());
    }
    if n == 1 {
        return Ok(RadiusGrid(vec![lo]));
    }
    Ok(RadiusGrid(
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    ))
}

impl Common {
    fn window(&self) -> Result<Window, Failure> {
        let [a, b, c, d] = self
            .window
            .ok_or_else(|| Failure::Config("--window is required".into()))?;
        Ok(Window::new(a, b, c, d, self.boundary.unwrap_or_default())?)
    }

    fn output(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(p, e))?)),
            None => Box::new(BufWriter::new(std::io::stdout().lock())),
        })
    }
}

impl ModelArgs {
    fn build(&self, common: &Common) -> Result<MultiscaleModel, Failure> {
        if let Some(path) = &self.model {
            let file = File::open(path).map_err(|e| io_failure(path, e))?;
            let mut config: ModelConfig = serde_json::from_reader(BufReader::new(file))
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            if let Some(w) = common.window {
                config.window = w;
            }
            if let Some(b) = common.boundary {
                config.boundary = b;
            }
            return Ok(MultiscaleModel::from_config(&config)?);
        }
        let lambda = self
            .lambda
            .ok_or_else(|| Failure::Config("--lambda (or --model) is required".into()))?;
        let mut terms = Vec::new();
        for (name, lg, r) in [
            ("--r1", self.log10_gamma1, self.r1),
            ("--r2", self.log10_gamma2, self.r2),
        ] {
            if lg == 0.0 {
                continue;
            }
            let r = r.ok_or_else(|| Failure::Config(format!("{name} is required when its gamma differs from 1")))?;
            terms.push(ScaleTerm::new(lg, r)?);
        }
        Ok(MultiscaleModel::new(lambda, terms, common.window()?)?)
    }

    fn schedule(&self) -> Schedule {
        Schedule {
            max_horizon: self.max_horizon,
            ..Schedule::default()
        }
    }
}

impl StatArgs {
    fn grid(&self, window: &Window) -> Result<Vec<f64>, Failure> {
        let rmax = self.rmax.unwrap_or(window.shorter_side() / 4.0);
        if self.rsteps == 0 || rmax.is_nan() || rmax <= 0.0 {
            return Err(Failure::Config("need --rmax > 0 and --rsteps >= 1".into()));
        }
        Ok(stats::r_grid(rmax, self.rsteps))
    }

    fn correction(&self, statistic: Statistic, window: &Window) -> Correction {
        self.correction.unwrap_or(match (window.boundary(), statistic) {
            (Boundary::Torus, _) => Correction::Torus,
            (Boundary::Clip, Statistic::T) => Correction::None,
            (Boundary::Clip, _) => Correction::Ripley,
        })
    }
}

fn read_pattern(path: &Path, window: Window, scale: f64) -> Result<PointPattern, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let raw = fmt::read_raw_points(BufReader::new(file)).map_err(|e| match e {
        IoError::Io(e) => io_failure(path, e),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })?;
    let pts: Vec<Point> = raw.into_iter().map(|p| Point::new(p.x * scale, p.y * scale)).collect();
    if let Some(p) = pts.iter().find(|p| !window.contains(**p)) {
        return Err(Failure::Config(format!(
            "{}: point ({}, {}) lies outside the window",
            path.display(),
            p.x,
            p.y
        )));
    }
    Ok(PointPattern::new(window, pts)?)
}

fn write_result(result: Result<(), IoError>, path: Option<&Path>) -> Outcome {
    result.map_err(|e| {
        let shown = path.map_or_else(|| "<stdout>".to_string(), |p| p.display().to_string());
        Failure::Io(format!("{shown}: {e}"))
    })
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let model = args.model.build(&args.common)?;
    let (result, traj) = perfect_sample_traced(&model, SeedPath::new(args.seed), &args.model.schedule())?;
    eprintln!(
        "horizon_used={} restarts={} events_processed={}",
        result.horizon_used, result.restarts, result.events_processed
    );
    write_result(
        fmt::write_points(args.common.output()?, &result.sample),
        args.common.out.as_deref(),
    )?;
    if let Some(path) = &args.trajectory {
        let file = File::create(path).map_err(|e| io_failure(path, e))?;
        write_result(fmt::write_trajectory(BufWriter::new(file), &traj), Some(path))?;
    }
    Ok(())
}

fn fit(args: &FitArgs) -> Outcome {
    let window = args.common.window()?;
    let data = read_pattern(&args.input, window, 1.0)?;
    if data.is_empty() {
        return Err(Failure::Config(format!("{}: no points to fit", args.input.display())));
    }
    let scheme = inference::make_quadrature(&data, args.dummy[0], args.dummy[1])?;
    let options = if args.constrain {
        FitOptions::two_scale_constrained()
    } else {
        FitOptions::default()
    };
    let result = match (&args.r1_grid, &args.r2_grid) {
        (Some(g1), Some(g2)) => {
            let profile = inference::profile_radii(&data, &g1.0, &g2.0, &scheme, &options)?;
            if let Some(path) = &args.profile {
                let file = File::create(path).map_err(|e| io_failure(path, e))?;
                write_result(fmt::write_profile(BufWriter::new(file), &profile.table), Some(path))?;
            }
            profile.best
        }
        _ => {
            let radii: Vec<f64> = args.r1.into_iter().chain(args.r2).collect();
            inference::fit_mple(&data, &radii, &scheme, &options)?
        }
    };
    write_result(
        fmt::write_fit_report(args.common.output()?, &result),
        args.common.out.as_deref(),
    )
}

fn envelope(args: &EnvelopeArgs) -> Outcome {
    let model = args.model.build(&args.common)?;
    let window = *model.window();
    let data = read_pattern(&args.input, window, args.data_scale)?;
    let [statistic] = args.stat.stat[..] else {
        return Err(Failure::Config("envelope takes exactly one statistic".into()));
    };
    let config = EnvelopeConfig {
        statistic,
        correction: args.stat.correction(statistic, &window),
        r: args.stat.grid(&window)?,
        n_sim: args.nsim,
        schedule: args.model.schedule(),
    };
    let band = stats::envelope(&model, &data, &config, SeedPath::new(args.seed))?;
    write_result(
        fmt::write_envelope(args.common.output()?, &band),
        args.common.out.as_deref(),
    )
}

/// With several statistics, `curves.csv` becomes `curves_K.csv`, `curves_L.csv`, ...
fn per_stat_path(out: &Path, statistic: Statistic) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{statistic}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{statistic}"),
    };
    out.with_file_name(name)
}

fn summary(args: &SummaryArgs) -> Outcome {
    let window = args.common.window()?;
    let data = read_pattern(&args.input, window, 1.0)?;
    let r = args.stat.grid(&window)?;
    let several = args.stat.stat.len() > 1;
    if several && args.common.out.is_none() {
        return Err(Failure::Config("--out is required with several statistics".into()));
    }
    for &statistic in &args.stat.stat {
        let curve = stats::summary(statistic, &data, &r, args.stat.correction(statistic, &window))?;
        let path = args.common.out.as_deref().map(|p| {
            if several {
                per_stat_path(p, statistic)
            } else {
                p.to_path_buf()
            }
        });
        let out: Box<dyn Write> = match &path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(p, e))?)),
            None => Box::new(BufWriter::new(std::io::stdout().lock())),
        };
        write_result(fmt::write_curve(out, &curve), path.as_deref())?;
    }
    Ok(())
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(a) => &a.common,
            Command::Fit(a) => &a.common,
            Command::Envelope(a) => &a.common,
            Command::Summary(a) => &a.common,
        }
    }

    fn execute(&self) -> Outcome {
        match self {
            Command::Simulate(a) => simulate(a),
            Command::Fit(a) => fit(a),
            Command::Envelope(a) => envelope(a),
            Command::Summary(a) => summary(a),
        }
    }
}

fn run(command: &Command) -> Outcome {
    match command.common().jobs {
        Some(0) => Err(Failure::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Config(e.to_string()))?
            .install(|| command.execute()),
        None => command.execute(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
