use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use biaslab_core::experiment::{
    configure_workers, emit_plots, run_experiment, ExperimentConfig, Strategy,
};
use biaslab_core::linmodel::nested_cv_predict;
use biaslab_core::proxy::inject;
use biaslab_core::rng::derive_seed;
use biaslab_core::synth::generate_pool;
use biaslab_core::template::{
    annotate, generate_corpus, instantiate, parse_template, serialize_template, validate,
    validate_and_repair, CorpusConfig, InstantiationContext, KnownNames, Lexicon, NamePool,
    Variant, DEFAULT_MAX_REPAIR_ITERATIONS,
};

#[derive(Parser)]
#[command(
    name = "biaslab",
    version,
    about = "Label-bias laboratory: synthetic pools, proxy-label audits, mitigation strategies, \
             and audit-material templating"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override (generator, proxy, CV, and probe seeds).
    #[arg(long)]
    seed: Option<u64>,
    /// Pool size override.
    #[arg(long)]
    n: Option<usize>,
    /// CI-sized protocol: n = 500, 3 repetitions, reduced CV.
    #[arg(long)]
    fast: bool,
    /// Paper-scale protocol: 20 repetitions.
    #[arg(long, conflicts_with = "fast")]
    full: bool,
    /// Strategy list override, comma separated
    /// (none|orthogonalize|redact|marginalize|rubric|kitchen_sink).
    #[arg(long)]
    mitigation: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None if self.fast => ExperimentConfig::fast_mode(),
            None if self.full => ExperimentConfig::full_mode(),
            None => ExperimentConfig::default(),
        };
        if self.config.is_some() && self.fast {
            config.generator.n = 500;
            config.cv = biaslab_core::linmodel::CvConfig::fast();
        }
        if self.config.is_some() && self.full {
            config.cv.repetitions = 20;
        }
        if let Some(seed) = self.seed {
            config.generator.seed = seed;
            config.proxy.seed = derive_seed(seed, "proxy", &[]);
            config.cv.seed = derive_seed(seed, "cv", &[]);
            config.audit.probe.seed = derive_seed(seed, "probe", &[]);
        }
        if let Some(n) = self.n {
            config.generator.n = n;
        }
        if let Some(spec) = &self.mitigation {
            let strategies: Vec<Strategy> = spec
                .split(',')
                .map(|s| Strategy::parse(s.trim()))
                .collect::<biaslab_core::Result<_>>()?;
            config.strategies = strategies;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        if self.print_config {
            println!("{}", serde_json::to_string_pretty(&config)?);
            std::process::exit(0);
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pool and export it as CSV.
    Generate(ConfigArgs),
    /// Generate a pool and append proxy-label columns for the b grid.
    Inject(ConfigArgs),
    /// Fit one strategy with nested CV at a single b and export the
    /// out-of-sample predictions.
    Fit {
        #[command(flatten)]
        common: ConfigArgs,
        /// Strategy to fit.
        #[arg(long, default_value = "none")]
        strategy: String,
        /// Male advantage to inject before fitting.
        #[arg(long, default_value_t = 0.0)]
        b: f64,
    },
    /// Run the sweep and report the audited bias curve.
    Audit(ConfigArgs),
    /// Run the sweep and report the cohort and accuracy curves.
    Cohort(ConfigArgs),
    /// Audit-material templating pipeline.
    Template {
        #[command(subcommand)]
        command: TemplateCommand,
    },
    /// Full experiment: generate, inject, fit, audit, cohort, report.
    Run(ConfigArgs),
    /// Emit gnuplot-compatible panel data from a run directory.
    Plot {
        /// Run directory containing the CSV reports.
        #[arg(long, default_value = "runs/default")]
        dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct NameArgs {
    /// Applicant first name for name-token matching.
    #[arg(long, default_value = "")]
    first: String,
    /// Applicant last name for name-token matching.
    #[arg(long, default_value = "")]
    last: String,
    /// Lexicon file; the builtin lexicon is used when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl NameArgs {
    fn known(&self) -> KnownNames {
        if self.first.is_empty() && self.last.is_empty() {
            KnownNames::none()
        } else {
            KnownNames::new(&self.first, &self.last)
        }
    }

    fn lexicon(&self) -> Result<Lexicon> {
        Ok(match &self.lexicon {
            Some(path) => Lexicon::from_path(path)?,
            None => Lexicon::builtin(),
        })
    }
}

#[derive(Subcommand)]
enum TemplateCommand {
    /// Wrap gender signals and name tokens in wire-format markers.
    Annotate {
        /// Source document.
        #[arg(long)]
        input: PathBuf,
        /// Output template file (wire format).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        names: NameArgs,
    },
    /// Report uncaptured signals, malformed markers, and render drift.
    Validate {
        /// Template file (wire format).
        #[arg(long)]
        input: PathBuf,
        /// Source document for original-render checking.
        #[arg(long)]
        source: Option<PathBuf>,
        #[command(flatten)]
        names: NameArgs,
    },
    /// Run the validate-repair loop and write the repaired template.
    Repair {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        source: Option<PathBuf>,
        /// Repair iterations before flagging for manual review.
        #[arg(long, default_value_t = DEFAULT_MAX_REPAIR_ITERATIONS)]
        max_iterations: usize,
        #[command(flatten)]
        names: NameArgs,
    },
    /// Render one variant (original|neutral|male|female).
    Instantiate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: String,
        /// Applicant country for name sampling.
        #[arg(long, default_value = "US")]
        country: String,
        /// Applicant identifier; fixes the name draw.
        #[arg(long, default_value = "a00000")]
        applicant_id: String,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Name pool CSV; the builtin pool is used when omitted.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Generate the synthetic document corpus.
    Corpus {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Output directory for documents and sidecar metadata.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    configure_workers();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => {
            let config = args.resolve()?;
            let pool = generate_pool(&config.generator)?;
            std::fs::create_dir_all(&config.output_dir)?;
            let path = config.output_dir.join("pool.csv");
            pool.write_csv(&[], std::fs::File::create(&path)?)?;
            println!("{}", path.display());
        }
        Command::Inject(args) => {
            let config = args.resolve()?;
            let pool = generate_pool(&config.generator)?;
            let mut columns = Vec::new();
            for (gi, &b) in config.proxy.grid.iter().enumerate() {
                let cfg =
                    config.proxy.at(b, derive_seed(config.proxy.seed, "inject", &[gi as u64, 0]));
                columns.push((format!("y_proxy_b{b}"), inject(&pool, &cfg)?));
            }
            let column_refs: Vec<_> = columns.iter().map(|(name, v)| (name.clone(), v)).collect();
            std::fs::create_dir_all(&config.output_dir)?;
            let path = config.output_dir.join("pool_proxies.csv");
            pool.write_csv(&column_refs, std::fs::File::create(&path)?)?;
            println!("{}", path.display());
        }
        Command::Fit { common, strategy, b } => {
            let config = common.resolve()?;
            let strategy = Strategy::parse(&strategy)?;
            let pool = generate_pool(&config.generator)?;
            let groups = pool.groups();
            let features = match strategy {
                Strategy::BlackBox | Strategy::Marginalized => pool.black_box().clone(),
                Strategy::Rubric => pool.rubric().clone(),
                Strategy::KitchenSink => pool.kitchen_sink().clone(),
                Strategy::Redacted => biaslab_core::mitigation::redact(
                    pool.black_box(),
                    &biaslab_core::mitigation::RedactionMap::FeatureSpace,
                )?,
                Strategy::Orthogonalized => {
                    biaslab_core::mitigation::orthogonalize(pool.black_box(), &groups)?.0
                }
            };
            let proxy_cfg = config.proxy.at(b, derive_seed(config.proxy.seed, "fit", &[]));
            let labels = inject(&pool, &proxy_cfg)?;
            let predictions = nested_cv_predict(&features, &labels, &groups, &config.cv)?;
            std::fs::create_dir_all(&config.output_dir)?;
            let path = config.output_dir.join(format!("predictions_{strategy}_b{b}.csv"));
            let ids: Vec<String> = pool.applicants.iter().map(|a| a.id.clone()).collect();
            predictions.write_csv(&ids, std::fs::File::create(&path)?)?;
            println!("{}", path.display());
        }
        Command::Audit(args) => {
            let config = args.resolve()?;
            let (_, manifest) = run_experiment(&config)?;
            println!("{}", config.output_dir.join("bias_curve.csv").display());
            eprintln!("config hash {}", manifest.config_hash);
        }
        Command::Cohort(args) => {
            let config = args.resolve()?;
            let (_, manifest) = run_experiment(&config)?;
            println!("{}", config.output_dir.join("cohort_curves.csv").display());
            println!("{}", config.output_dir.join("mse_curves.csv").display());
            eprintln!("config hash {}", manifest.config_hash);
        }
        Command::Template { command } => run_template(command)?,
        Command::Run(args) => {
            let config = args.resolve()?;
            let (result, manifest) = run_experiment(&config)?;
            for warning in &result.warnings {
                eprintln!("warning: {warning}");
            }
            for name in manifest.files.keys() {
                println!("{}", config.output_dir.join(name).display());
            }
            println!("{}", config.output_dir.join("manifest.json").display());
        }
        Command::Plot { dir } => {
            let bundle = emit_plots(&dir)?;
            for warning in &bundle.warnings {
                eprintln!("warning: {warning}");
            }
            for file in &bundle.files {
                println!("{}", file.display());
            }
        }
    }
    Ok(())
}

fn run_template(command: TemplateCommand) -> Result<()> {
    match command {
        TemplateCommand::Annotate { input, out, names } => {
            let document = std::fs::read_to_string(&input)?;
            let template = annotate(&document, &names.lexicon()?, &names.known())?;
            std::fs::write(&out, serialize_template(&template))?;
            println!("{}", out.display());
        }
        TemplateCommand::Validate { input, source, names } => {
            let template = parse_template(&std::fs::read_to_string(&input)?)?;
            let source_text = match &source {
                Some(path) => Some(std::fs::read_to_string(path)?),
                None => None,
            };
            let issues =
                validate(&template, &names.lexicon()?, &names.known(), source_text.as_deref());
            for issue in &issues {
                println!("{}", serde_json::to_string(issue)?);
            }
            eprintln!("{} issue(s)", issues.len());
        }
        TemplateCommand::Repair { input, out, source, max_iterations, names } => {
            let template = parse_template(&std::fs::read_to_string(&input)?)?;
            let source_text = match &source {
                Some(path) => Some(std::fs::read_to_string(path)?),
                None => None,
            };
            let lexicon = names.lexicon()?;
            let outcome = validate_and_repair(
                &template,
                &lexicon,
                &lexicon,
                &names.known(),
                source_text.as_deref(),
                max_iterations,
            );
            std::fs::write(&out, serialize_template(&outcome.template))?;
            if outcome.needs_manual_review {
                eprintln!(
                    "flagged for manual review after {} iteration(s); {} unresolved issue(s)",
                    outcome.iterations,
                    outcome.unresolved.len()
                );
            }
            println!("{}", out.display());
        }
        TemplateCommand::Instantiate { input, out, variant, country, applicant_id, seed, pool } => {
            let template = parse_template(&std::fs::read_to_string(&input)?)?;
            let variant = Variant::parse(&variant)?;
            let name_pool = match &pool {
                Some(path) => NamePool::from_path(path)?,
                None => NamePool::builtin(),
            };
            let ctx = InstantiationContext {
                name_pool: &name_pool,
                country: &country,
                applicant_id: &applicant_id,
                seed,
            };
            let rendered = instantiate(&template, variant, &ctx)?;
            for warning in &rendered.warnings {
                eprintln!("warning: {warning}");
            }
            std::fs::write(&out, rendered.text)?;
            println!("{}", out.display());
        }
        TemplateCommand::Corpus { n, seed, out } => {
            let docs = generate_corpus(&CorpusConfig { n_docs: n, seed }, &NamePool::builtin())?;
            std::fs::create_dir_all(&out)?;
            for doc in &docs {
                std::fs::write(out.join(format!("{}.txt", doc.id)), &doc.text)?;
            }
            let meta: Vec<serde_json::Value> = docs
                .iter()
                .map(|d| {
                    serde_json::json!({
                        "id": d.id,
                        "country": d.country,
                        "gender": d.gender.code(),
                        "first": d.name.first,
                        "last": d.name.last,
                    })
                })
                .collect();
            std::fs::write(out.join("corpus.json"), serde_json::to_string_pretty(&meta)?)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}
