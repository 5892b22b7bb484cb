// SPDX-License-Identifier: Apache-2.0

//! `geoflow`: transfer entropy and GeoC from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use geoflow::corr_dim::{
    dimension, geoc_transitions, CorrelationSumCurve, D2Estimate, DimensionParams, FitPolicy, GeoCResult,
    RadiusPolicy,
};
use geoflow::entropy::{transfer_entropy_transitions, KnnParams, TEEstimate};
use geoflow::io::{ingest_csv, read_table, write_csv, AnalysisReport, ColumnSelector, IngestOptions};
use geoflow::maps::{AdditiveMap, Rect, Transform};
use geoflow::oracles::{
    h_cond_closed_form, h_cond_semianalytic, noise_entropy, te_noisy_linear, te_semianalytic, te_upper_bound,
    Density1D, NoiseKind, NoiseSpec, Quadrature,
};
use geoflow::synth::{generate, Family, SystemSpec};
use geoflow::transfer_op::{asymmetric_pushforward, pinsker_lower_bound, small_b_approx, DensityGrid, Kernel};
use geoflow::{Error, PointCloud, TimeSeries, Transitions};

#[derive(Parser, Debug)]
#[command(name = "geoflow", version, about = "Transfer entropy and geometric causality (GeoC) between time series")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GEOFLOW_THREADS")]
    threads: Option<usize>,

    /// Report path stem: writes <stem>.txt and <stem>.<curve>.csv.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Unit of entropies and transfer entropies.
    #[arg(long, global = true, value_enum, default_value_t = Units::Nats)]
    units: Units,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic system as a CSV of x, y, x' columns.
    Gen(GenArgs),
    /// Correlation dimension of the cloud formed by CSV columns.
    D2(D2Args),
    /// Transfer entropy in both directions.
    Te(PairArgs),
    /// GeoC in both directions.
    Geoc(PairArgs),
    /// Analytic oracles and bounds for a map family.
    Bound(BoundArgs),
    /// Reproduce a reference table or sweep.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Units {
    Nats,
    Bits,
}

impl Units {
    fn scale(self, nats: f64) -> f64 {
        match self {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    Uniform,
    Gaussian,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Manhattan,
    Coarea,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Manhattan => Kernel::Manhattan,
            KernelArg::Coarea => Kernel::Coarea,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Linear,
    Additive,
    HenonUniform,
    HenonAttractor,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Linear => Family::LinearXy,
            FamilyArg::Additive => Family::Additive,
            FamilyArg::HenonUniform => Family::HenonUniform,
            FamilyArg::HenonAttractor => Family::HenonAttractor,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TransformArg {
    Identity,
    Square,
    Exp,
    Log,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Identity => Transform::Identity,
            TransformArg::Square => Transform::Square,
            TransformArg::Exp => Transform::Exp,
            TransformArg::Log => Transform::Log,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct NoiseOpts {
    /// Noise level: width of the uniform noise, or standard deviation.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = NoiseArg::Uniform)]
    noise: NoiseArg,
}

impl NoiseOpts {
    fn spec(&self) -> Result<Option<NoiseSpec>, Error> {
        self.eps
            .map(|e| {
                NoiseSpec::new(
                    match self.noise {
                        NoiseArg::Uniform => NoiseKind::Uniform,
                        NoiseArg::Gaussian => NoiseKind::Gaussian,
                    },
                    e,
                )
            })
            .transpose()
    }
}

#[derive(Args, Debug, Clone)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Linear)]
    family: FamilyArg,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coefficient of g1(x); family default when omitted.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Coupling coefficient of g2(y).
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    #[arg(long, value_enum)]
    g1: Option<TransformArg>,
    #[arg(long, value_enum)]
    g2: Option<TransformArg>,
    /// Range of the i.i.d. inputs, `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    inputs: Option<(f64, f64)>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Coefficient of the y update of the attractor orbit.
    #[arg(long)]
    y_coef: Option<f64>,
    #[command(flatten)]
    noise: NoiseOpts,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct EstimatorOpts {
    /// Neighbor rank of the entropy estimator.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Theiler window: temporal neighbors excluded from every pair count.
    #[arg(long, default_value_t = 0)]
    theiler: usize,
    /// Number of log-spaced radii, or an explicit comma-separated list.
    #[arg(long, default_value = "40")]
    radii: String,
    /// Radii per local-slope window of the scaling-region search.
    #[arg(long, default_value_t = 5)]
    fit_window: usize,
    /// Rescale every coordinate to zero mean and unit variance first.
    #[arg(long)]
    standardize: bool,
}

impl EstimatorOpts {
    fn dimension_params(&self) -> Result<DimensionParams, Error> {
        let radii = if self.radii.contains(',') || self.radii.contains('.') {
            RadiusPolicy::Explicit(
                self.radii
                    .split(',')
                    .map(|r| r.trim().parse::<f64>().map_err(|_| Error::Argument(format!("bad radius `{r}`"))))
                    .collect::<Result<_, _>>()?,
            )
        } else {
            let count = self
                .radii
                .parse()
                .map_err(|_| Error::Argument(format!("bad radius count `{}`", self.radii)))?;
            match RadiusPolicy::default() {
                RadiusPolicy::Percentile { lo_pct, hi_pct, sample_pairs, .. } => {
                    RadiusPolicy::Percentile { count, lo_pct, hi_pct, sample_pairs }
                }
                other => other,
            }
        };
        Ok(DimensionParams {
            radii,
            theiler: self.theiler,
            fit: FitPolicy { window: self.fit_window, ..FitPolicy::default() },
            standardize: self.standardize,
            ..DimensionParams::default()
        })
    }

    fn knn(&self) -> Result<KnnParams, Error> {
        KnnParams::new(self.k, self.theiler)
    }

    fn echo(&self, r: &mut AnalysisReport) {
        r.param("k", self.k)
            .param("theiler", self.theiler)
            .param("radii", &self.radii)
            .param("fit_window", self.fit_window)
            .param("standardize", self.standardize);
    }
}

#[derive(Args, Debug, Clone)]
struct InputOpts {
    /// CSV file.
    #[arg(long)]
    input: PathBuf,
    /// The file starts with a header row.
    #[arg(long)]
    header: bool,
    /// Refuse files with non-numeric rows instead of dropping them.
    #[arg(long)]
    strict: bool,
}

impl InputOpts {
    fn options(&self) -> IngestOptions {
        IngestOptions { has_header: self.header, strict: self.strict, ..IngestOptions::default() }
    }
}

#[derive(Args, Debug, Clone)]
struct D2Args {
    #[command(flatten)]
    input: InputOpts,
    /// Comma-separated columns (1-based positions or header names).
    #[arg(long, default_value = "1")]
    columns: String,
    #[command(flatten)]
    est: EstimatorOpts,
}

#[derive(Args, Debug, Clone)]
struct PairArgs {
    #[command(flatten)]
    input: InputOpts,
    /// Column of the driven series x.
    #[arg(long, default_value = "1")]
    x: String,
    /// Column of the driving series y.
    #[arg(long, default_value = "2")]
    y: String,
    /// Column holding the successor of x for rows that are independent
    /// transition samples; without it the rows form one time series.
    #[arg(long)]
    x_next: Option<String>,
    #[command(flatten)]
    est: EstimatorOpts,
}

#[derive(Args, Debug, Clone)]
struct BoundArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Linear)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Transform of y in the additive family.
    #[arg(long, value_enum, default_value_t = TransformArg::Identity)]
    g2: TransformArg,
    #[command(flatten)]
    noise: NoiseOpts,
    /// Square domain of (x, y), `lo,hi` (family default when omitted).
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    domain: Option<(f64, f64)>,
    /// Weight along level sets of the planar pushforward.
    #[arg(long, value_enum, default_value_t = KernelArg::Manhattan)]
    kernel: KernelArg,
    /// Cells per axis of the quadrature grids.
    #[arg(long, default_value_t = 256)]
    grid: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Table {
    /// Closed-form conditional entropies against kNN estimates.
    Entropy,
    /// GeoC and transfer entropy of the Henon map.
    Henon,
    /// GeoC and transfer entropy of a heart-rate/respiration recording.
    Heart,
    /// GeoC and transfer entropy of x' = x + b y over a range of b.
    BSweep,
    /// Transfer entropy of x' = x + y + noise over a range of noise levels.
    EpsSweep,
}

#[derive(Args, Debug, Clone)]
struct BenchArgs {
    #[arg(long, value_enum)]
    table: Table,
    /// Samples per system (table default when omitted).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Recording for the heart table.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value = "1")]
    x: String,
    #[arg(long, default_value = "2")]
    y: String,
    /// Largest coupling of the b sweep.
    #[arg(long, default_value_t = 2.0)]
    b_max: f64,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(format!("empty range {lo},{hi}"))
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Argument(_) | Error::UnknownLabel(_)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        // fails only if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn new_report(cli: &Cli, name: &str) -> AnalysisReport {
    let mut r = AnalysisReport::new();
    r.input("command", name);
    r.param("units", format!("{:?}", cli.units).to_lowercase());
    r.param("threads", cli.threads.map_or("all".to_string(), |t| t.to_string()));
    r
}

fn finish(cli: &Cli, report: &AnalysisReport) -> Result<(), Error> {
    print!("{}", report.render());
    if let Some(stem) = &cli.out {
        for p in report.write(stem)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::D2(a) => cmd_d2(cli, a),
        Command::Te(a) => cmd_te(cli, a),
        Command::Geoc(a) => cmd_geoc(cli, a),
        Command::Bound(a) => cmd_bound(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
    }
}

fn system_spec(a: &GenArgs) -> Result<SystemSpec, Error> {
    let mut spec = match a.family {
        FamilyArg::Linear => SystemSpec::linear(1.0, a.n, a.seed),
        FamilyArg::Additive => SystemSpec::additive(1.0, Transform::Identity, a.n, a.seed),
        FamilyArg::HenonUniform => SystemSpec::henon_uniform(a.n, a.seed),
        FamilyArg::HenonAttractor => SystemSpec { seed: a.seed, ..SystemSpec::henon_attractor(a.n) },
    };
    spec.family = a.family.into();
    if let Some(v) = a.a {
        spec.a = v;
    }
    if let Some(v) = a.b {
        spec.b = v;
    }
    if let Some(v) = a.c {
        spec.c = v;
    }
    if let Some(v) = a.g1 {
        spec.g1 = v.into();
    }
    if let Some(v) = a.g2 {
        spec.g2 = v.into();
    }
    if let Some((lo, hi)) = a.inputs {
        spec.inputs = (lo, hi);
    }
    if let Some(v) = a.burn_in {
        spec.burn_in = v;
    }
    if let Some(v) = a.y_coef {
        spec.y_coef = v;
    }
    spec.noise = a.noise.spec()?;
    Ok(spec)
}

fn echo_spec(r: &mut AnalysisReport, s: &SystemSpec) {
    r.param("family", s.family)
        .param("n", s.n)
        .param("seed", s.seed)
        .param("a", s.a)
        .param("b", s.b)
        .param("c", s.c)
        .param("g1", s.g1)
        .param("g2", s.g2)
        .param("inputs", format!("{},{}", s.inputs.0, s.inputs.1))
        .param("burn_in", s.burn_in)
        .param("y_coef", s.y_coef);
    match s.noise {
        Some(z) => r.param("noise", format!("{:?}", z.kind()).to_lowercase()).param("eps", z.eps()),
        None => r.param("noise", "none"),
    };
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<(), Error> {
    let spec = system_spec(a)?;
    let t = generate(&spec)?;
    let cols = [t.x().values(), t.y().values(), t.x_next().values()];
    let headers = ["x", "y", "x_next"];
    match &a.output {
        Some(p) => {
            write_csv(std::fs::File::create(p)?, &headers, &cols)?;
            let mut r = new_report(cli, "gen");
            r.input("output", p.display());
            echo_spec(&mut r, &spec);
            r.result("rows", t.len() as f64)?;
            finish(cli, &r)
        }
        None => write_csv(std::io::stdout().lock(), &headers, &cols),
    }
}

fn csum_curve(r: &mut AnalysisReport, name: &str, c: &CorrelationSumCurve) {
    r.curve(
        name,
        &["radius", "csum", "count"],
        vec![c.radii.clone(), c.csum.clone(), c.counts.iter().map(|&k| k as f64).collect()],
    );
}

fn d2_diag(r: &mut AnalysisReport, label: &str, d: &D2Estimate) {
    r.diagnostic(format!("{label}_fit_range"), format!("{},{}", d.fit_range.0, d.fit_range.1));
    r.diagnostic(format!("{label}_stderr"), d.slope_stderr);
    r.diagnostic(format!("{label}_reference_points"), d.curve.n_reference);
}

fn cmd_d2(cli: &Cli, a: &D2Args) -> Result<(), Error> {
    let table = read_table(std::fs::File::open(&a.input.input)?, &a.input.options())?;
    let sels: Vec<ColumnSelector> = a.columns.split(',').map(str::parse).collect::<Result<_, _>>()?;
    let idx: Vec<usize> = sels.iter().map(|s| table.column_index(s)).collect::<Result<_, _>>()?;
    let rows = table.rows();
    let data: Vec<f64> = (0..rows).flat_map(|i| idx.iter().map(move |&c| (c, i))).map(|(c, i)| table.columns[c][i]).collect();
    let cloud = PointCloud::new(idx.len(), data, a.input.input.display().to_string())?;
    let est = dimension(&cloud, &a.est.dimension_params()?)?;
    let mut r = new_report(cli, "d2");
    r.input("file", a.input.input.display()).input("columns", &a.columns).input("rows", rows);
    if !table.rejected_rows.is_empty() {
        r.diagnostic("rejected_rows", format!("{:?}", table.rejected_rows));
    }
    a.est.echo(&mut r);
    r.result("d2", est.value)?;
    d2_diag(&mut r, "d2", &est);
    csum_curve(&mut r, "csum", &est.curve);
    finish(cli, &r)
}

fn load_pair(input: &InputOpts, x: &str, y: &str, r: &mut AnalysisReport) -> Result<(TimeSeries, TimeSeries), Error> {
    let (sx, sy): (ColumnSelector, ColumnSelector) = (x.parse()?, y.parse()?);
    let data = ingest_csv(&input.input, (&sx, &sy), &input.options())?;
    r.input("file", input.input.display())
        .input("x", &sx)
        .input("y", &sy)
        .input("rows", data.x.len())
        .param("header", input.header)
        .param("strict", input.strict);
    if !data.rejected_rows.is_empty() {
        r.diagnostic("rejected_rows", format!("{:?}", data.rejected_rows));
    }
    Ok((data.x, data.y))
}

/// Forward transitions `y -> x` and, for time series, the reverse `x -> y`.
fn load_directions(a: &PairArgs, r: &mut AnalysisReport) -> Result<(Transitions, Option<Transitions>), Error> {
    let Some(next) = &a.x_next else {
        let (x, y) = load_pair(&a.input, &a.x, &a.y, r)?;
        return Ok((Transitions::from_series(&x, &y)?, Some(Transitions::from_series(&y, &x)?)));
    };
    let table = read_table(std::fs::File::open(&a.input.input)?, &a.input.options())?;
    let sels: [ColumnSelector; 3] = [a.x.parse()?, a.y.parse()?, next.parse()?];
    if table.rows() < a.input.options().min_rows {
        return Err(Error::InsufficientData { usable: table.rows(), required: a.input.options().min_rows });
    }
    let [x, y, xn] = [&sels[0], &sels[1], &sels[2]].map(|s| table.series(s));
    r.input("file", a.input.input.display())
        .input("x", &sels[0])
        .input("y", &sels[1])
        .input("x_next", &sels[2])
        .input("rows", table.rows())
        .param("header", a.input.header)
        .param("strict", a.input.strict);
    if !table.rejected_rows.is_empty() {
        r.diagnostic("rejected_rows", format!("{:?}", table.rejected_rows));
    }
    r.diagnostic("reverse", "not available for transition samples");
    Ok((Transitions::from_samples(x?, y?, xn?)?, None))
}

fn report_te(r: &mut AnalysisReport, units: Units, fwd: &TEEstimate, rev: Option<&TEEstimate>) -> Result<(), Error> {
    r.result("te", units.scale(fwd.value))?;
    if let Some(rev) = rev {
        r.result("te_reverse", units.scale(rev.value))?;
    }
    r.result("h_cond_x", units.scale(fwd.h_cond_x))?;
    r.result("h_cond_xy", units.scale(fwd.h_cond_xy))?;
    for w in fwd.warnings.iter().chain(rev.into_iter().flat_map(|e| &e.warnings)) {
        r.diagnostic("warning", w);
    }
    r.diagnostic("samples_used", fwd.n_used);
    Ok(())
}

fn cmd_te(cli: &Cli, a: &PairArgs) -> Result<(), Error> {
    let mut r = new_report(cli, "te");
    let (fwd, rev) = load_directions(a, &mut r)?;
    a.est.echo(&mut r);
    let p = a.est.knn()?;
    let te = transfer_entropy_transitions(&fwd, &p)?;
    let te_rev = rev.map(|t| transfer_entropy_transitions(&t, &p)).transpose()?;
    report_te(&mut r, cli.units, &te, te_rev.as_ref())?;
    finish(cli, &r)
}

fn report_geoc(r: &mut AnalysisReport, fwd: &GeoCResult, rev: Option<&GeoCResult>) -> Result<(), Error> {
    r.result("geoc", fwd.geoc)?;
    if let Some(rev) = rev {
        r.result("geoc_reverse", rev.geoc)?;
    }
    r.result("geoc_cond_x", fwd.geoc_cond_x)?;
    r.result("geoc_cond_xy", fwd.geoc_cond_xy)?;
    for (label, d) in [("d2_x", &fwd.d2_x), ("d2_xxp", &fwd.d2_xxp), ("d2_xy", &fwd.d2_xy), ("d2_xyxp", &fwd.d2_xyxp)] {
        r.result(label, d.value)?;
        d2_diag(r, label, d);
    }
    for w in fwd.warnings.iter().chain(rev.into_iter().flat_map(|g| &g.warnings)) {
        r.diagnostic("warning", w);
    }
    Ok(())
}

fn cmd_geoc(cli: &Cli, a: &PairArgs) -> Result<(), Error> {
    let mut r = new_report(cli, "geoc");
    let (fwd, rev) = load_directions(a, &mut r)?;
    a.est.echo(&mut r);
    let params = a.est.dimension_params()?;
    let g = geoc_transitions(&fwd, &params)?;
    let g_rev = rev.map(|t| geoc_transitions(&t, &params)).transpose()?;
    report_geoc(&mut r, &g, g_rev.as_ref())?;
    for (name, d) in [("csum_x", &g.d2_x), ("csum_xxp", &g.d2_xxp), ("csum_xy", &g.d2_xy), ("csum_xyxp", &g.d2_xyxp)] {
        csum_curve(&mut r, name, &d.curve);
    }
    finish(cli, &r)
}

fn cmd_bound(cli: &Cli, a: &BoundArgs) -> Result<(), Error> {
    let (map, default_domain) = match a.family {
        FamilyArg::Linear => (AdditiveMap::linear(1.0, a.b, 0.0), (1.0, 2.0)),
        FamilyArg::Additive => (AdditiveMap::coupled(a.b, a.g2.into()), (1.0, 2.0)),
        FamilyArg::HenonUniform | FamilyArg::HenonAttractor => (AdditiveMap::henon(-1.4, a.b), (-1.5, 1.5)),
    };
    let (lo, hi) = a.domain.unwrap_or(default_domain);
    let domain = Rect::square(lo, hi)?;
    let noise = a.noise.spec()?;
    let mut r = new_report(cli, "bound");
    r.param("family", format!("{:?}", a.family).to_lowercase())
        .param("map", map)
        .param("b", a.b)
        .param("domain", format!("{lo},{hi}"))
        .param("kernel", format!("{:?}", a.kernel).to_lowercase())
        .param("grid", a.grid);
    match noise {
        Some(z) => r.param("noise", format!("{:?}", z.kind()).to_lowercase()).param("eps", z.eps()),
        None => r.param("noise", "none"),
    };
    let u = cli.units;
    let monotone_y = map.m.check_monotone_on(lo, hi).is_ok();
    if monotone_y && map.g.check_monotone_on(lo, hi).is_ok() {
        let px = Density1D::uniform(lo, hi, 64)?;
        let py = Density1D::uniform(lo, hi, 64)?;
        let h = h_cond_semianalytic(&map, &px, &py, noise.as_ref(), Quadrature::default())?;
        if h.value.is_finite() {
            r.result("h_cond_x", u.scale(h.value))?;
            r.diagnostic("h_cond_x_error_estimate", u.scale(h.error_estimate));
        } else {
            r.diagnostic("h_cond_x", "-inf (deterministic map without noise)");
        }
        let te = te_semianalytic(&map, &px, &py, noise.as_ref(), Quadrature::default())?;
        r.result("te", u.scale(te))?;
        if let Some(z) = &noise {
            r.result("h_cond_xy", u.scale(noise_entropy(z)))?;
        }
        if noise.is_none() && a.b > 0.0 && lo == 1.0 && hi == 2.0 {
            r.result("h_cond_x_closed_form", u.scale(h_cond_closed_form(a.b, map.m)?))?;
        }
    } else {
        r.diagnostic("h_cond_x", "not available: map is not monotone on the domain");
    }
    if let Some(z) = noise.filter(|z| z.kind() == NoiseKind::Uniform && a.family == FamilyArg::Linear && hi - lo == 1.0) {
        r.result("te_noisy_linear", u.scale(te_noisy_linear(a.b, z.eps())?))?;
    }
    if let Some(z) = &noise {
        match te_upper_bound(&map, domain, z.eps()) {
            Ok(v) => {
                r.result("bound_te_upper", u.scale(v))?;
            }
            Err(Error::Precondition(why)) => {
                r.diagnostic("bound_te_upper", format!("not applicable: {why}"));
            }
            Err(e) => return Err(e),
        }
    }
    match pinsker_lower_bound(&map, domain, a.grid) {
        Ok(p) => {
            r.result("bound_pinsker", u.scale(p))?;
            let s = small_b_approx(&map, domain, a.grid)?;
            r.result("bound_small_b", u.scale(s.value))?;
            if let Some(w) = s.warning {
                r.diagnostic("warning", w);
            }
        }
        Err(e @ Error::SingularMap(_)) => {
            r.diagnostic("bound_pinsker", format!("not available: {e}"));
        }
        Err(e) => return Err(e),
    }
    let rho = DensityGrid::uniform(domain, a.grid, a.grid)?;
    let push = asymmetric_pushforward(&rho, &map, None, a.kernel.into())?;
    r.diagnostic("pushforward_raw_mass", push.raw_mass);
    let d = &push.density;
    r.curve("pushforward", &["x_next", "density"], vec![d.midpoints().collect(), d.values().to_vec()]);
    finish(cli, &r)
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<(), Error> {
    let mut r = new_report(cli, "bench");
    r.param("table", format!("{:?}", a.table).to_lowercase())
        .param("seed", a.seed)
        .param("k", a.k);
    let u = cli.units;
    let knn = KnnParams::new(a.k, 0)?;
    match a.table {
        Table::Entropy => {
            let n = a.n.unwrap_or(100_000);
            r.param("n", n);
            let px = Density1D::uniform(1.0, 2.0, 64)?;
            let (mut id, mut bs, mut orc, mut est) = (vec![], vec![], vec![], vec![]);
            for (code, m) in [(0.0, Transform::Identity), (1.0, Transform::Log), (2.0, Transform::Square)] {
                for b in [0.5, 1.0, 2.0] {
                    let h = h_cond_semianalytic(&AdditiveMap::coupled(b, m), &px, &px, None, Quadrature::default())?;
                    let t = generate(&SystemSpec::additive(b, m, n, a.seed))?;
                    let [cx, cxxp, _, _] = t.clouds()?;
                    let e = geoflow::entropy::conditional_entropy(&cxxp, &cx, &knn)?;
                    r.result(format!("h_cond_x_oracle.{m}.b{b}"), u.scale(h.value))?;
                    r.result(format!("h_cond_x_estimate.{m}.b{b}"), u.scale(e))?;
                    id.push(code);
                    bs.push(b);
                    orc.push(u.scale(h.value));
                    est.push(u.scale(e));
                }
            }
            r.diagnostic("transform_codes", "0 identity, 1 log, 2 square");
            r.curve("entropy", &["transform", "b", "oracle", "estimate"], vec![id, bs, orc, est]);
        }
        Table::Henon => {
            let n = a.n.unwrap_or(100_000);
            r.param("n", n);
            for (label, spec, params, theiler, geoc_ref, te_ref) in [
                ("uniform", SystemSpec::henon_uniform(n, a.seed), DimensionParams::default(), 0, 0.90, 2.4116),
                ("attractor", SystemSpec::henon_attractor(n), DimensionParams::for_time_series(), 10, 0.2712, 0.7942),
            ] {
                let t = generate(&spec)?;
                let g = geoc_transitions(&t, &params)?;
                let te = transfer_entropy_transitions(&t, &KnnParams::new(a.k, theiler)?)?;
                r.result(format!("geoc_{label}"), g.geoc)?;
                r.result(format!("te_{label}"), u.scale(te.value))?;
                r.result(format!("geoc_{label}_reference"), geoc_ref)?;
                r.result(format!("te_{label}_reference"), u.scale(te_ref))?;
                for (l, d) in [("d2_x", &g.d2_x), ("d2_xxp", &g.d2_xxp), ("d2_xy", &g.d2_xy), ("d2_xyxp", &g.d2_xyxp)] {
                    r.result(format!("{l}_{label}"), d.value)?;
                }
            }
        }
        Table::Heart => {
            let input = a
                .input
                .clone()
                .ok_or_else(|| Error::Argument("the heart table needs --input".into()))?;
            let opts = InputOpts { input, header: a.header, strict: false };
            let (x, y) = load_pair(&opts, &a.x, &a.y, &mut r)?;
            let params = DimensionParams { standardize: true, ..DimensionParams::for_time_series() };
            let (fwd, rev) = (Transitions::from_series(&x, &y)?, Transitions::from_series(&y, &x)?);
            let (g, g_rev) = (geoc_transitions(&fwd, &params)?, geoc_transitions(&rev, &params)?);
            report_geoc(&mut r, &g, Some(&g_rev))?;
            let p = KnnParams::new(a.k, params.theiler)?;
            let (te, te_rev) = (transfer_entropy_transitions(&fwd, &p)?, transfer_entropy_transitions(&rev, &p)?);
            report_te(&mut r, u, &te, Some(&te_rev))?;
        }
        Table::BSweep => {
            let n = a.n.unwrap_or(10_000);
            r.param("n", n).param("b_max", a.b_max);
            let steps = 20;
            let (mut bs, mut gs, mut ts) = (vec![], vec![], vec![]);
            for i in 0..=steps {
                let b = a.b_max * i as f64 / steps as f64;
                let t = generate(&SystemSpec::linear(b, n, a.seed).with_inputs(0.0, 1.0))?;
                let g = geoc_transitions(&t, &DimensionParams::default())?;
                let te = transfer_entropy_transitions(&t, &knn)?;
                r.result(format!("geoc.b{b}"), g.geoc)?;
                r.result(format!("te.b{b}"), u.scale(te.value))?;
                bs.push(b);
                gs.push(g.geoc);
                ts.push(u.scale(te.value));
            }
            r.curve("b_sweep", &["b", "geoc", "te"], vec![bs, gs, ts]);
        }
        Table::EpsSweep => {
            let n = a.n.unwrap_or(100_000);
            r.param("n", n).param("b", 1);
            let domain = Rect::square(1.0, 2.0)?;
            let (mut es, mut est, mut exact, mut upper) = (vec![], vec![], vec![], vec![]);
            for i in 0..=8 {
                let eps = 10f64.powf(-3.0 + 0.25 * i as f64);
                let spec = SystemSpec::linear(1.0, n, a.seed).with_noise(NoiseSpec::uniform(eps)?);
                let te = transfer_entropy_transitions(&generate(&spec)?, &knn)?;
                let oracle = te_noisy_linear(1.0, eps)?;
                r.result(format!("te_estimate.eps{eps:.3e}"), u.scale(te.value))?;
                r.result(format!("te_exact.eps{eps:.3e}"), u.scale(oracle))?;
                es.push(eps);
                est.push(u.scale(te.value));
                exact.push(u.scale(oracle));
                upper.push(u.scale(te_upper_bound(&AdditiveMap::linear(1.0, 1.0, 0.0), domain, eps)?));
            }
            r.curve("eps_sweep", &["eps", "te_estimate", "te_exact", "te_upper_bound"], vec![es, est, exact, upper]);
        }
    }
    finish(cli, &r)
}
