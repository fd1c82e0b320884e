use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use excellence_core::domain::{covariate_label, parse_covariate_label};
use excellence_core::ingest::{build_subject_datasets, write_aggregated_counts};
use excellence_core::indicators::write_assignments;
use excellence_core::persistence::Store;
use excellence_core::pipeline::{edition_curves, fit_subject_model, ingest_inputs, run_pipeline, PipelineConfig};
use excellence_core::ranking::{pairwise_compare, significance_filter, write_curves, PairwiseVerdict, RankingTable};
use excellence_core::report::{summarize, write_comparison_tsv, write_correlations_tsv};
use excellence_core::simulate::{simulate_clusters, write_aggregated, write_fixture, ClusterSimParams, FixtureParams};
use excellence_core::{Covariate, Error, Indicator};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "excellence", version, about = "Covariate-adjusted excellence rankings of research institutions")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and store a new edition.
    Run(RunArgs),
    /// Compute percentiles and per-institution counts without fitting.
    Ingest(IngestArgs),
    /// Generate synthetic input data.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Fit one subject model from the config inputs and print its summary.
    Fit(FitArgs),
    /// Print a stored ranking table.
    Rank(RankArgs),
    /// Print the model comparison and correlation tables of an edition.
    Report(ReportArgs),
    /// Emit predicted-rate curves of an overall covariate model.
    Curves(CurvesArgs),
    /// Serve stored editions over HTTP.
    Serve(ServeArgs),
}

/// Flags that override fields of the config file.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Pipeline config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    edition_id: Option<String>,
    /// Restrict to these indicators (repeatable).
    #[arg(long = "indicator")]
    indicators: Vec<String>,
    /// Restrict to these covariates (repeatable).
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    #[arg(long)]
    quadrature_nodes: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Skip the all-subject models.
    #[arg(long)]
    no_overall: bool,
    #[arg(long)]
    store: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(id) = &self.edition_id {
            cfg.edition_id = id.clone();
        }
        if !self.indicators.is_empty() {
            cfg.indicators = self.indicators.clone();
        }
        if !self.covariates.is_empty() {
            cfg.covariates = self.covariates.clone();
        }
        if let Some(n) = self.quadrature_nodes {
            cfg.quadrature_nodes = n;
        }
        if let Some(t) = self.tolerance {
            cfg.tolerance = t;
        }
        if let Some(m) = self.max_iterations {
            cfg.max_iterations = m;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if self.no_overall {
            cfg.overall_models = false;
        }
        if let Some(s) = &self.store {
            cfg.store = Some(s.clone());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Aggregated counts CSV.
    #[arg(short, long)]
    out: PathBuf,
    /// Also write per-paper percentile assignments.
    #[arg(long)]
    percentiles: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SimulateCommand {
    /// Paper-level fixture (papers, journals, institutions, countries) plus an edition config.
    Fixture(FixtureArgs),
    /// Aggregated binomial counts from the random-intercept model.
    Clusters(ClusterArgs),
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = FixtureParams::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = FixtureParams::default().n_institutions)]
    institutions: usize,
    /// Subject areas (repeatable); defaults to three.
    #[arg(long = "subject")]
    subjects: Vec<String>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "Chemistry")]
    subject: String,
    #[arg(long, default_value_t = ClusterSimParams::default().n_clusters)]
    clusters: usize,
    #[arg(long, default_value_t = ClusterSimParams::default().n_min)]
    n_min: u64,
    #[arg(long, default_value_t = ClusterSimParams::default().n_max)]
    n_max: u64,
    #[arg(long, default_value_t = ClusterSimParams::default().beta0, allow_hyphen_values = true)]
    beta0: f64,
    #[arg(long, default_value_t = ClusterSimParams::default().beta1, allow_hyphen_values = true)]
    beta1: f64,
    #[arg(long, default_value_t = ClusterSimParams::default().sigma2)]
    sigma2: f64,
    #[arg(long, default_value_t = ClusterSimParams::default().seed)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    subject: String,
    #[arg(long, default_value = "best_paper")]
    indicator: Indicator,
    /// Covariate name or `none`.
    #[arg(long, default_value = "none")]
    covariate: String,
    #[arg(long)]
    quadrature_nodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Debug, Args)]
struct EditionArgs {
    #[arg(short, long)]
    store: PathBuf,
    #[arg(short, long)]
    edition: String,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    edition: EditionArgs,
    #[arg(long)]
    subject: String,
    #[arg(long, default_value = "best_paper")]
    indicator: Indicator,
    #[arg(long, default_value = "none")]
    covariate: String,
    /// Only institutions whose Goldstein interval excludes the reference.
    #[arg(long)]
    significant_only: bool,
    /// Compare two institutions instead of printing the table.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    compare: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    edition: EditionArgs,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[command(flatten)]
    edition: EditionArgs,
    #[arg(long, default_value = "best_paper")]
    indicator: Indicator,
    #[arg(long, default_value = "gdp")]
    covariate: Covariate,
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(short, long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Directory with the explorer's static assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    cfg.plan()?;
    let root = cfg.store.clone().context("no store directory (set `store` in the config or pass --store)")?;
    let store = Store::open(root);
    let outcome = run_pipeline(&cfg, &store, now())?;
    for w in &outcome.warnings {
        eprintln!("warning: {} in {} excluded: {}", w.institution_id, w.subject_area, w.reason);
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "edition_id": outcome.entry.edition_id,
        "checksum": outcome.entry.checksum,
        "files": outcome.entry.files.len(),
        "warnings": outcome.warnings.len(),
    }))?);
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let cfg = PipelineConfig::from_file(&args.config)?;
    let out = ingest_inputs(&cfg.inputs, cfg.publication_window)?;
    let mut w = create(&args.out)?;
    write_aggregated_counts(&mut w, &out.counts)?;
    w.flush()?;
    if let Some(path) = &args.percentiles {
        let Some(assignments) = &out.percentiles else {
            bail!("percentiles need paper-level input");
        };
        let mut w = create(path)?;
        write_assignments(assignments, &mut w)?;
        w.flush()?;
    }
    eprintln!("{} institution-subject rows written to {}", out.counts.len(), args.out.display());
    Ok(())
}

fn simulate(cmd: SimulateCommand) -> Result<()> {
    match cmd {
        SimulateCommand::Fixture(a) => {
            let mut params = FixtureParams { seed: a.seed, n_institutions: a.institutions, ..Default::default() };
            if !a.subjects.is_empty() {
                params.subjects = a.subjects;
            }
            std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
            let files = write_fixture(&a.out, &params)?;
            let mut cfg = PipelineConfig::new("fixture", (params.first_year, params.last_year), files.inputs());
            cfg.store = Some(a.out.join("store"));
            let relative = |p: &Path| p.strip_prefix(&a.out).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
            cfg.inputs.papers = cfg.inputs.papers.as_deref().map(relative);
            cfg.inputs.journals = cfg.inputs.journals.as_deref().map(relative);
            cfg.inputs.institutions = relative(&cfg.inputs.institutions);
            cfg.inputs.countries = relative(&cfg.inputs.countries);
            cfg.store = cfg.store.as_deref().map(relative);
            std::fs::write(a.out.join("edition.toml"), toml::to_string(&cfg)?)?;
            eprintln!("fixture written to {}", a.out.display());
        }
        SimulateCommand::Clusters(a) => {
            let params = ClusterSimParams {
                n_clusters: a.clusters,
                n_min: a.n_min,
                n_max: a.n_max,
                beta0: a.beta0,
                beta1: a.beta1,
                sigma2: a.sigma2,
                seed: a.seed,
            };
            let sim = simulate_clusters(&params)?;
            let mut w = create(&a.out)?;
            write_aggregated(&mut w, &a.subject, &sim.clusters)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let cfg = PipelineConfig::from_file(&args.config)?;
    let mut plan = cfg.plan()?;
    if let Some(n) = args.quadrature_nodes {
        plan.options.quadrature_nodes = n;
    }
    let covariate = parse_covariate_label(&args.covariate)?;
    let ingest = ingest_inputs(&cfg.inputs, cfg.publication_window)?;
    let built = build_subject_datasets(
        &ingest.counts,
        &ingest.institutions,
        &ingest.countries,
        ingest.collaboration.as_ref(),
        args.indicator,
    )?;
    let wanted = args.subject.to_lowercase();
    let ds = built
        .datasets
        .iter()
        .find(|d| d.subject_area.as_str().to_lowercase() == wanted || d.subject_area.slug() == wanted)
        .ok_or_else(|| {
            let names: Vec<&str> = built.datasets.iter().map(|d| d.subject_area.as_str()).collect();
            Error::NotFound(format!("subject `{}` (modelled subjects: {})", args.subject, names.join(", ")))
        })?;
    let model = fit_subject_model(ds, covariate, &plan.options)?;
    let null_sigma2 = match covariate {
        None => model.fit.sigma2,
        Some(_) => fit_subject_model(ds, None, &plan.options)?.fit.sigma2,
    };
    let summary = summarize(covariate, &model.fit, null_sigma2)?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "subject_area": ds.subject_area,
        "indicator": args.indicator,
        "summary": summary,
        "fit": model.fit,
        "eb": model.eb,
    }))?);
    Ok(())
}

fn write_table(mut out: impl Write, t: &RankingTable) -> Result<()> {
    writeln!(
        out,
        "# {} / {} / {} (reference {:.4})",
        t.subject_area,
        t.indicator,
        covariate_label(t.covariate),
        t.reference_probability
    )?;
    writeln!(out, "rank\tinstitution_id\tname\tcountry\tn_papers\tprobability\tlower_139\tupper_139\tdelta_rank\tsignificant")?;
    for e in &t.entries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            e.rank,
            e.institution_id,
            e.name,
            e.country,
            e.n_papers,
            e.probability,
            e.interval_goldstein.lower,
            e.interval_goldstein.upper,
            e.delta_rank.map_or(String::new(), |d| format!("{d:+}")),
            if e.significant_vs_mean { "*" } else { "" }
        )?;
    }
    Ok(())
}

fn rank(args: RankArgs) -> Result<()> {
    let store = Store::open(&args.edition.store);
    let edition = store.edition(&args.edition.edition)?;
    let subject = edition
        .subject_by_key(&args.subject)
        .ok_or_else(|| Error::NotFound(format!("subject `{}` in edition `{}`", args.subject, edition.edition_id)))?;
    let covariate = parse_covariate_label(&args.covariate)?;
    let mut table = store.load_ranking(&edition.edition_id, subject, args.indicator, covariate)?;
    if let Some(pair) = &args.compare {
        let find = |id: &str| {
            table.entry(id).ok_or_else(|| Error::NotFound(format!("institution `{id}` in this table")))
        };
        let (a, b) = (find(&pair[0])?, find(&pair[1])?);
        let verdict = pairwise_compare(a, b);
        match args.format {
            Format::Json => println!("{}", serde_json::to_string(&verdict)?),
            Format::Tsv => println!(
                "{}",
                match verdict {
                    PairwiseVerdict::AHigher => format!("{} is significantly higher than {}", a.name, b.name),
                    PairwiseVerdict::BHigher => format!("{} is significantly higher than {}", b.name, a.name),
                    PairwiseVerdict::Indistinguishable =>
                        format!("{} and {} are not significantly different", a.name, b.name),
                }
            ),
        }
        return Ok(());
    }
    if args.significant_only {
        table = significance_filter(&table);
    }
    let mut out = output(None)?;
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&table)?)?,
        Format::Tsv => write_table(&mut out, &table)?,
    }
    out.flush()?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let store = Store::open(&args.edition.store);
    let report = store.load_report(&args.edition.edition)?;
    let mut out = output(None)?;
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        Format::Tsv => {
            for cmp in report.overall.iter().chain(&report.per_subject) {
                write_comparison_tsv(&mut out, cmp)?;
                writeln!(out)?;
            }
            if let Some(c) = &report.correlations {
                write_correlations_tsv(&mut out, c)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn curves(args: CurvesArgs) -> Result<()> {
    let store = Store::open(&args.edition.store);
    let points = edition_curves(&store, &args.edition.edition, args.indicator, args.covariate, args.points)?;
    let mut out = output(args.out.as_deref())?;
    write_curves(&mut out, &points)?;
    out.flush()?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("cannot bind {}", args.addr))?;
        let app = excellence_service::router(Store::open(&args.store), args.static_dir);
        excellence_service::serve(listener, app).await?;
        Ok(())
    })
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
            || matches!(c.downcast_ref::<Error>(), Some(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Usage(_)) => 2,
        Some(Error::NotFound(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(io::stderr)
        .init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Ingest(a) => ingest(a),
        Command::Simulate(c) => simulate(c),
        Command::Fit(a) => fit(a),
        Command::Rank(a) => rank(a),
        Command::Report(a) => report(a),
        Command::Curves(a) => curves(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
