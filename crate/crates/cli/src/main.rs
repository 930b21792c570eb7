//! Command-line driver: single runs, convergence studies and amplitude scans.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vepic::harness::{
    self, AmplitudeScan, AmplitudeUnits, Coupling, DatumKind, PhaseStudy, RunConfig, RunDigest, SchemeName,
    SnapshotFormat, TauStudy, VariantName,
};
use vepic::phase_space::{decompose, validate_initial};
use vepic::{Error, Execution};

const EXIT_FAIL: u8 = 1;
const EXIT_MONITOR_ABORT: u8 = 2;
const EXIT_UNCLASSIFIED: u8 = 3;

#[derive(Parser)]
#[command(name = "vepic", version, about = "Particle-in-cell Vlasov-Einstein solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one configuration and write diagnostics, snapshots and metadata.
    Run(RunArgs),
    /// Two-phase runs at several time steps against an RK4 reference.
    TauStudy(TauArgs),
    /// RK4 runs along a ladder of kernel widths, compared through their fields.
    PhaseStudy(PhaseArgs),
    /// Bisect the amplitude between a dispersing and a collapsing run.
    AmpScan(ScanArgs),
    /// Check the initial datum and report its decomposition without evolving.
    Validate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    /// Run every loop sequentially.
    #[arg(long)]
    sequential: bool,

    #[arg(long, value_enum)]
    datum: Option<DatumArg>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long, value_enum)]
    amplitude_units: Option<UnitsArg>,
    /// Radial support of the bump as `MIN,MAX`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    r: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    w: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    l: Option<Vec<f64>>,

    /// Kernel width. Unless given explicitly, epsilon becomes delta² and tau delta/4.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    quad_order: Option<usize>,

    /// Disable the bound monitors.
    #[arg(long)]
    no_bounds: bool,
    #[arg(long)]
    d_bound: Option<f64>,
    #[arg(long)]
    factor: Option<f64>,
    /// Log bound violations instead of stopping.
    #[arg(long)]
    no_abort: bool,
    #[arg(long)]
    collapse_threshold: Option<f64>,
    #[arg(long)]
    near_collapse_margin: Option<f64>,
    #[arg(long)]
    central_radius: Option<f64>,
    #[arg(long)]
    dispersal_fraction: Option<f64>,

    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    snapshot_stride: Option<usize>,
    #[arg(long, value_enum)]
    snapshot_format: Option<FormatArg>,
    #[arg(long)]
    record_stride: Option<usize>,
    #[arg(long)]
    profile_points: Option<usize>,
}

#[derive(Args)]
struct TauArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Time steps, decreasing; defaults to delta/4, delta/8, delta/16.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// The RK4 reference step is the smallest tau divided by this.
    #[arg(long, default_value_t = 10)]
    refine: usize,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Kernel widths, decreasing; the last is the reference.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
    deltas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = CouplingArg::Square)]
    coupling: CouplingArg,
    /// RK4 step as a multiple of delta.
    #[arg(long, default_value_t = 0.25)]
    tau_ratio: f64,
    /// Comparison times; defaults to 0, T/2 and T.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long, default_value_t = 801)]
    grid_points: usize,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0.1)]
    a_lo: f64,
    #[arg(long, default_value_t = 10.0)]
    a_hi: f64,
    #[arg(long, default_value_t = 6)]
    steps: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatumArg {
    Bump,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    Reference,
    Absolute,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    SemiRk4,
    FullEuler,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Corrected,
    PaperLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Square,
    Cube,
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::read(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::standard(),
        };
        if let Some(d) = self.delta {
            c.discretization.delta = d;
            c.discretization.epsilon = d * d;
            c.discretization.tau = d / 4.0;
        }
        let d = &mut c.datum;
        if let Some(k) = self.datum {
            d.kind = match k {
                DatumArg::Bump => DatumKind::Bump,
                DatumArg::Table => DatumKind::Table,
            };
        }
        if let Some(t) = &self.table {
            d.table = Some(t.clone());
        }
        if let Some(a) = self.amplitude {
            d.amplitude = a;
        }
        if let Some(u) = self.amplitude_units {
            d.amplitude_units = match u {
                UnitsArg::Reference => AmplitudeUnits::Reference,
                UnitsArg::Absolute => AmplitudeUnits::Absolute,
            };
        }
        if let Some(v) = &self.r {
            d.r = pair(v);
        }
        if let Some(v) = &self.w {
            d.w = pair(v);
        }
        if let Some(v) = &self.l {
            d.l = pair(v);
        }

        let z = &mut c.discretization;
        if let Some(e) = self.epsilon {
            z.epsilon = e;
        }
        if let Some(t) = self.tau {
            z.tau = t;
        }
        if let Some(t) = self.t_end {
            z.t_end = t;
        }
        if let Some(s) = self.scheme {
            z.scheme = match s {
                SchemeArg::SemiRk4 => SchemeName::SemiRk4,
                SchemeArg::FullEuler => SchemeName::FullEuler,
            };
        }
        if let Some(v) = self.variant {
            z.variant = match v {
                VariantArg::Corrected => VariantName::Corrected,
                VariantArg::PaperLiteral => VariantName::PaperLiteral,
            };
        }
        if let Some(q) = self.quad_order {
            z.quad_order = q;
        }

        let m = &mut c.monitor;
        if self.no_bounds {
            m.bounds = false;
        }
        if self.d_bound.is_some() {
            m.d_bound = self.d_bound;
        }
        if self.factor.is_some() {
            m.factor = self.factor;
        }
        if self.no_abort {
            m.abort_on_violation = false;
        }
        if let Some(x) = self.collapse_threshold {
            m.collapse_threshold = x;
        }
        if let Some(x) = self.near_collapse_margin {
            m.near_collapse_margin = x;
        }
        if self.central_radius.is_some() {
            m.central_radius = self.central_radius;
        }
        if let Some(x) = self.dispersal_fraction {
            m.dispersal_fraction = x;
        }

        let o = &mut c.output;
        if let Some(p) = &self.output {
            o.directory = p.clone();
        }
        if let Some(s) = self.snapshot_stride {
            o.snapshot_stride = s;
        }
        if let Some(f) = self.snapshot_format {
            o.snapshot_format = match f {
                FormatArg::Csv => SnapshotFormat::Csv,
                FormatArg::Binary => SnapshotFormat::Binary,
            };
        }
        if let Some(s) = self.record_stride {
            o.record_stride = s;
        }
        if let Some(p) = self.profile_points {
            o.profile_points = p;
        }
        c.validate()?;
        Ok(c)
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Error>() {
                Some(Error::MonitorAbort(_)) => EXIT_MONITOR_ABORT,
                Some(Error::Unclassified { .. } | Error::BracketNotVerified { .. }) => EXIT_UNCLASSIFIED,
                _ => EXIT_FAIL,
            };
            ExitCode::from(code)
        }
    }
}

/// Prints the configuration instead of running when asked to.
fn resolve(args: &RunArgs) -> Result<Option<RunConfig>> {
    let c = args.config()?;
    if args.print_config {
        print!("{}", c.to_toml());
        return Ok(None);
    }
    Ok(Some(c))
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => {
            let Some(cfg) = resolve(&args)? else { return Ok(0) };
            run(&cfg, args.exec())
        }
        Command::Validate(args) => {
            let Some(cfg) = resolve(&args)? else { return Ok(0) };
            validate(&cfg)
        }
        Command::TauStudy(a) => {
            let Some(base) = resolve(&a.run)? else { return Ok(0) };
            tau_study(base, a.taus, a.refine, a.run.exec())
        }
        Command::PhaseStudy(a) => {
            let Some(base) = resolve(&a.run)? else { return Ok(0) };
            let mut spec = PhaseStudy::standard(base);
            spec.deltas = a.deltas;
            spec.coupling = match a.coupling {
                CouplingArg::Square => Coupling::Square,
                CouplingArg::Cube => Coupling::Cube,
            };
            spec.tau_ratio = a.tau_ratio;
            if let Some(t) = a.times {
                spec.sample_times = t;
            }
            spec.grid_points = a.grid_points;
            phase_study(&spec, a.run.exec())
        }
        Command::AmpScan(a) => {
            let Some(base) = resolve(&a.run)? else { return Ok(0) };
            amp_scan(
                &AmplitudeScan {
                    base,
                    a_lo: a.a_lo,
                    a_hi: a.a_hi,
                    steps: a.steps,
                },
                a.run.exec(),
            )
        }
    }
}

fn run(cfg: &RunConfig, exec: Execution) -> Result<u8> {
    let summary = harness::run_single(cfg, exec)?;
    let info = &summary.metadata.run;
    println!("particles      {}", info.particles);
    println!("steps          {}", info.steps);
    println!("final time     {}", info.final_time);
    println!("termination    {}", info.termination);
    if let Some(last) = summary.evolution.records.last() {
        let d = &last.diagnostics;
        println!("ADM mass       {:.12e}", d.adm_mass);
        println!("max 2m/r       {:.6}", d.max_compactness);
    }
    println!("output         {}", cfg.output.directory.display());
    Ok(0)
}

fn validate(cfg: &RunConfig) -> Result<u8> {
    let datum = cfg.build_datum()?;
    println!("reference amplitude  {:.12e}", datum.reference_amplitude);
    println!("absolute amplitude   {:.12e}", datum.absolute_amplitude);
    if let Some(h) = &datum.table_hash {
        println!("table hash           {h}");
    }
    let report = validate_initial(&datum.datum, cfg.discretization.quad_order.max(4))?;
    println!(
        "number margin        {:.6e} at r = {:.6}",
        report.number.margin, report.number.radius
    );
    println!("mass margin          {:.6e} at r = {:.6}", report.mass.margin, report.mass.radius);
    let cells = decompose(&datum.datum, cfg.discretization.epsilon)?.counts();
    println!("cells                {} x {} x {}", cells[0], cells[1], cells[2]);
    println!("particles (at most)  {}", cells.iter().product::<usize>());
    Ok(0)
}

fn write_report(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_digests(runs: &[RunDigest]) {
    for r in runs {
        let status = if r.sound() { "ok".to_string() } else { format!("{:?}", r.structural) };
        println!("  {:<28} N={:<8} steps={:<6} {status}", r.label, r.particles, r.steps);
    }
}

fn fmt_order(o: Option<f64>) -> String {
    o.map_or_else(|| "exact".into(), |p| format!("{p:.4}"))
}

fn tau_study(base: RunConfig, taus: Option<Vec<f64>>, refine: usize, exec: Execution) -> Result<u8> {
    let dir = base.output.directory.clone();
    let mut spec = TauStudy::standard(base);
    if let Some(t) = taus {
        spec.taus = t;
    }
    spec.reference_refinement = refine;
    let report = harness::run_tau_study(&spec, exec)?;
    let mut csv = String::from("tau,e_r,e_w,e_m,total\n");
    for row in &report.rows {
        let n = &row.norms;
        writeln!(csv, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", row.tau, n.r, n.w, n.m, n.total())?;
        println!("tau = {:<10} total error {:.6e}", row.tau, n.total());
    }
    write_report(&dir, "tau_study.csv", &csv)?;
    print_digests(&report.runs);
    println!("observed order {}", fmt_order(report.order));
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    Ok(if report.pass { 0 } else { EXIT_FAIL })
}

fn phase_study(spec: &PhaseStudy, exec: Execution) -> Result<u8> {
    let report = harness::run_phase_study(spec, exec)?;
    let mut csv = String::from("delta,epsilon,particles,m,lambda,mu,rho,p,j\n");
    for row in &report.rows {
        let n = &row.norms;
        writeln!(
            csv,
            "{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            row.delta, row.epsilon, row.particles, n.m, n.lam, n.mu, n.rho, n.p, n.j
        )?;
        println!(
            "delta = {:<6} N = {:<8} metric gap {:.4e}  source gap {:.4e}",
            row.delta,
            row.particles,
            n.metric(),
            n.sources()
        );
    }
    write_report(&spec.base.output.directory, "phase_study.csv", &csv)?;
    print_digests(&report.runs);
    println!("metric order {}", fmt_order(report.metric_order));
    println!(
        "source order {}{}",
        fmt_order(report.source_order),
        if report.source_gated { "" } else { " (reported only)" }
    );
    if report.low_confidence {
        println!("low confidence: orders rest on two points");
    }
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    Ok(if report.pass { 0 } else { EXIT_FAIL })
}

fn amp_scan(spec: &AmplitudeScan, exec: Execution) -> Result<u8> {
    let mut csv = String::from("amplitude,class,max_2m_over_r,peak_central_rho,final_central_rho,reason\n");
    let result = harness::run_amplitude_scan_with(spec, exec, |r| {
        let _ = writeln!(
            csv,
            "{:.17e},{:?},{:.17e},{:.17e},{:.17e},\"{}\"",
            r.amplitude, r.class, r.max_compactness, r.peak_central_rho, r.final_central_rho, r.reason
        );
        println!("A = {:<22} {:?}  ({})", r.amplitude, r.class, r.reason);
    });
    write_report(&spec.base.output.directory, "amp_scan.csv", &csv)?;
    let report = result?;
    println!("bracket [{}, {}]", report.bracket.0, report.bracket.1);
    Ok(0)
}
