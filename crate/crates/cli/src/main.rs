use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use soaforge::arena::{Interconnect, LinkModel};
use soaforge::bench::{self, PrecisionChoice};
use soaforge::pipelines::{
    run_variant, AccessTable, ExecutionMode, PipelineConfig, PipelineVariant, Population,
};
use soaforge::schema::{self, SchemaDocument};
use soaforge::sph::{self, ParticleState, Writeback};
use soaforge::study;
use soaforge::validate::{self, Fault};

mod report;

#[derive(Parser, Debug)]
#[command(
    name = "soaforge",
    version,
    about = "Reduced-precision particle storage benchmarks"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// Schema file with field and kernel declarations (default: built-in particle schema)
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Initial conditions CSV (`id,x0,x1,x2,v0,v1,v2,u,m,h`) instead of random particles
    #[arg(long, global = true)]
    init: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 4096)]
    particles: usize,
    #[arg(long, global = true, default_value_t = 64)]
    buffer_size: usize,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Comma separated widths in [7, 64]; `schema` keeps declared formats
    #[arg(long, global = true, value_delimiter = ',')]
    precision: Vec<String>,
    /// Comma separated variant names (default: all)
    #[arg(long, global = true, value_delimiter = ',')]
    variant: Vec<PipelineVariant>,
    /// Comma separated: inplace, streaming (default: both)
    #[arg(long, global = true, value_delimiter = ',')]
    mode: Vec<ExecutionMode>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; CSV goes to stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Modeled per-transfer latency in seconds
    #[arg(long, global = true, default_value_t = 5e-6)]
    latency: f64,
    /// Modeled link bandwidth in bytes per second
    #[arg(long, global = true, default_value_t = 64e9)]
    bandwidth: f64,
    #[arg(long, global = true, default_value = "deferred")]
    writeback: Writeback,
    /// Global timestep used by kick and drift
    #[arg(long, global = true, default_value_t = 1e-3)]
    dt: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Conversion, kernel and pipeline timings
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Accuracy studies
    #[command(subcommand)]
    Study(StudyCmd),
    /// Run the invariant suite; exits nonzero on any failure
    Validate {
        /// Corrupt data at one point: layout, variant, oracle or momentum
        #[arg(long)]
        fault: Option<Fault>,
        /// Write a hex dump of the first buffer (`-` for stdout)
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run one timestep with a single variant and report its metrics
    Run {
        /// Pipeline config file (`variant=.. mode=.. kernels=.. order=..`); flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        /// Disable hoisting of neighbour-side conversions
        #[arg(long)]
        no_hoist: bool,
        /// Write the per-transfer ledger as CSV
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Print the resolved record layout
    Schema,
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    /// Host-side versus device-side layout conversion
    Transform,
    /// Kernel compute time over AoS and SoA views
    Kernels,
    /// Whole-timestep variants and modes
    Pipeline,
}

#[derive(Subcommand, Debug)]
enum StudyCmd {
    /// Acceleration error against binary64 across storage widths
    Truncation,
}

struct Workload {
    doc: SchemaDocument,
    access: AccessTable,
    states: Vec<Vec<ParticleState>>,
}

impl Opts {
    fn link(&self) -> Result<LinkModel> {
        if !(self.latency >= 0.0 && self.bandwidth > 0.0) {
            bail!("latency must be >= 0 and bandwidth > 0");
        }
        Ok(LinkModel {
            latency_s: self.latency,
            bandwidth_bytes_per_s: self.bandwidth,
        })
    }

    fn params(&self) -> sph::KernelParams {
        sph::KernelParams {
            dt: self.dt,
            writeback: self.writeback,
        }
    }

    fn document(&self) -> Result<SchemaDocument> {
        match &self.schema {
            None => Ok(schema::particle_document()),
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                schema::parse_document(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    fn workload(&self) -> Result<Workload> {
        let doc = self.document()?;
        for set in &doc.kernels {
            set.validate(&doc.schema)?;
        }
        let states = match &self.init {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                sph::from_csv(&text, self.buffer_size, self.dt)?
            }
            None => sph::generate(self.particles, self.buffer_size, self.seed, self.dt)?,
        };
        let access = AccessTable::from_sets(&doc.kernels);
        Ok(Workload {
            doc,
            access,
            states,
        })
    }

    fn precisions(&self, allow_schema: bool) -> Result<Vec<PrecisionChoice>> {
        if self.precision.is_empty() {
            return Ok(vec![None]);
        }
        let mut out = Vec::new();
        for p in &self.precision {
            if p == "schema" && allow_schema {
                out.push(None);
                continue;
            }
            let t: u32 = p
                .parse()
                .with_context(|| format!("precision `{p}` is not a width"))?;
            study::check_sweep(&[t])?;
            out.push(Some(t));
        }
        Ok(out)
    }

    fn variants(&self) -> Result<Vec<PipelineVariant>> {
        if !self.mode.is_empty() {
            if let Some(v) = self.variant.iter().find(|v| v.is_cpu()) {
                bail!("--mode does not apply to CPU variant `{v}`, which never moves data");
            }
        }
        Ok(if self.variant.is_empty() {
            PipelineVariant::ALL.to_vec()
        } else {
            self.variant.clone()
        })
    }

    fn modes(&self) -> Vec<ExecutionMode> {
        if self.mode.is_empty() {
            ExecutionMode::ALL.to_vec()
        } else {
            self.mode.clone()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let opts = &cli.opts;
    if let Some(n) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Bench(BenchCmd::Transform) => {
            let w = opts.workload()?;
            let rows = bench::bench_transform(
                &w.doc.schema,
                &w.states,
                &opts.precisions(true)?,
                &w.access,
                opts.link()?,
            )?;
            emit(opts, &report::transform_csv(&rows)?, || {
                report::transform_summary(&rows)
            })
        }
        Command::Bench(BenchCmd::Kernels) => {
            let w = opts.workload()?;
            let rows = bench::bench_kernels(
                &w.doc.schema,
                &w.states,
                &opts.precisions(true)?,
                &opts.params(),
            )?;
            emit(opts, &report::kernels_csv(&rows)?, || {
                report::kernels_summary(&rows)
            })
        }
        Command::Bench(BenchCmd::Pipeline) => {
            let variants = opts.variants()?;
            let w = opts.workload()?;
            let rows = bench::bench_pipeline(
                &w.doc.schema,
                &w.states,
                &opts.precisions(true)?,
                &variants,
                &opts.modes(),
                &w.access,
                &opts.params(),
                opts.link()?,
            )?;
            emit(opts, &report::pipeline_csv(&rows)?, || {
                report::pipeline_summary(&rows)
            })
        }
        Command::Study(StudyCmd::Truncation) => {
            let sweep: Vec<u32> = if opts.precision.is_empty() {
                study::DEFAULT_SWEEP.to_vec()
            } else {
                opts.precisions(false)?.into_iter().flatten().collect()
            };
            study::check_sweep(&sweep)?;
            let w = opts.workload()?;
            let rows = study::truncation_study(&w.doc.schema, &w.states, &sweep, &w.access)?;
            emit(opts, &report::truncation_csv(&rows)?, || {
                report::truncation_summary(&rows)
            })
        }
        Command::Validate { fault, dump } => {
            let w = opts.workload()?;
            let schema = match opts.precisions(true)?.as_slice() {
                [p] => bench::schema_at(&w.doc.schema, *p)?,
                _ => bail!("validate takes a single --precision"),
            };
            if let Some(path) = dump {
                let pop = Population::from_states(Arc::new(schema.clone()), &w.states[..1]);
                write_text(path, &validate::dump(&pop.buffers[0]))?;
            }
            let report = validate::validate(&schema, &w.states, &w.access, *fault);
            print!("{report}");
            if !report.passed() {
                let names: Vec<_> = report.failures().map(|c| c.name).collect();
                bail!("validation failed: {}", names.join(", "));
            }
            Ok(())
        }
        Command::Run {
            config,
            no_hoist,
            ledger,
        } => run(opts, config.as_deref(), *no_hoist, ledger.as_deref()),
        Command::Schema => {
            let doc = opts.document()?;
            let mut out = String::new();
            report::layout_table(&doc, &mut out);
            print!("{out}");
            Ok(())
        }
    }
}

fn run(opts: &Opts, config: Option<&Path>, no_hoist: bool, ledger: Option<&Path>) -> Result<()> {
    let mut cfg = PipelineConfig {
        params: opts.params(),
        ..Default::default()
    };
    if let Some(p) = config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_file(&text)?;
    }
    match opts.variant.as_slice() {
        [] => {}
        [v] => cfg.variant = *v,
        _ => bail!("run takes a single --variant"),
    }
    match opts.mode.as_slice() {
        [] => {}
        [m] => {
            if cfg.variant.is_cpu() {
                bail!(
                    "--mode does not apply to CPU variant `{}`, which never moves data",
                    cfg.variant
                );
            }
            cfg.mode = *m;
        }
        _ => bail!("run takes a single --mode"),
    }
    if no_hoist {
        cfg.hoist = false;
    }
    let w = opts.workload()?;
    let schema = match opts.precisions(true)?.as_slice() {
        [p] => bench::schema_at(&w.doc.schema, *p)?,
        _ => bail!("run takes a single --precision"),
    };
    let pop = Population::from_states(Arc::new(schema), &w.states);
    let ic = Interconnect::new(opts.link()?);
    let (_, m) = run_variant(&cfg, &pop, &w.access, &ic)?;
    if let Some(path) = ledger {
        write_text(path, &report::ledger_csv(&ic.ledger.rows())?)?;
    }
    print!("{}", report::run_summary(&cfg, &m, pop.particles()));
    Ok(())
}

/// CSV to `--out` plus a summary on stdout, or CSV alone on stdout.
fn emit(opts: &Opts, csv: &str, summary: impl FnOnce() -> String) -> Result<()> {
    match &opts.out {
        Some(path) => {
            write_text(path, csv)?;
            print!("{}", summary());
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if path == Path::new("-") {
        io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
