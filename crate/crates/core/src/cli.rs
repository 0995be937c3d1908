//! Command-line experiment driver.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_ablation, run_round, AllocatorKind, CodecKind, ExecutionMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::randomness::SharedSeed;
use crate::stats::{locality_cdf, GradientView, Granularity, GroupLayout};
use crate::synth::{generate, generate_workers, GeneratorKind, GeneratorSpec};
use crate::topology::TopologyKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Budgets swept by `sweep-budget` unless overridden.
pub const DEFAULT_SWEEP: [f64; 4] = [3.0, 4.0, 5.0, 6.0];

/// Everything an experiment needs, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub n: usize,
    pub generator: GeneratorSpec,
    pub b: f64,
    pub group_size: usize,
    pub super_group_size: usize,
    pub topology: TopologyKind,
    pub allocator: AllocatorKind,
    pub codec: CodecKind,
    pub execution: ExecutionMode,
    pub non_uniform: bool,
    pub variable_width: bool,
    pub hierarchical_scales: bool,
    pub correlated: bool,
    pub fixed_width: u32,
    pub seeds: Vec<u64>,
    /// Budgets for `sweep-budget`.
    pub budgets: Vec<f64>,
    /// CSV output; stdout when absent.
    pub output: Option<PathBuf>,
    /// JSON records output.
    pub json_output: Option<PathBuf>,
    /// Directory for `locality` CSVs.
    pub out_dir: Option<PathBuf>,
}

impl Default for Experiment {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            n: 4,
            generator: GeneratorSpec::default(),
            b: p.bits_per_coordinate,
            group_size: p.group_size,
            super_group_size: p.super_group_size,
            topology: p.topology,
            allocator: p.allocator,
            codec: p.codec,
            execution: p.execution,
            non_uniform: p.non_uniform,
            variable_width: p.variable_width,
            hierarchical_scales: p.hierarchical_scales,
            correlated: p.correlated,
            fixed_width: p.fixed_width,
            seeds: vec![0],
            budgets: DEFAULT_SWEEP.to_vec(),
            output: None,
            json_output: None,
            out_dir: None,
        }
    }
}

impl Experiment {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.topology == TopologyKind::Butterfly && (self.n < 2 || !self.n.is_power_of_two()) {
            return Err(Error::Config(format!("butterfly needs a power-of-two worker count, got {}", self.n)));
        }
        self.pipeline(0).validate()?;
        self.generator_for(0).validate()?;
        Ok(())
    }

    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            non_uniform: self.non_uniform,
            variable_width: self.variable_width,
            hierarchical_scales: self.hierarchical_scales,
            correlated: self.correlated,
            fixed_width: self.fixed_width,
            bits_per_coordinate: self.b,
            group_size: self.group_size,
            super_group_size: self.super_group_size,
            topology: self.topology,
            allocator: self.allocator,
            codec: self.codec,
            execution: self.execution,
            seed,
            round: 0,
            trace: false,
        }
    }

    pub fn generator_for(&self, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            seed,
            ..self.generator.clone()
        }
    }

    fn workers(&self, seed: u64) -> Result<Vec<Vec<f32>>> {
        generate_workers(&self.generator_for(seed), self.n)
    }

    /// Short name of the configured pipeline variant.
    pub fn variant_name(&self) -> String {
        if self.codec == CodecKind::Lossless {
            return "lossless".into();
        }
        let mut parts = vec![if self.non_uniform { "non-uniform" } else { "uniform" }];
        if !self.variable_width {
            parts.push("fixed");
        }
        if !self.hierarchical_scales {
            parts.push("direct-scales");
        }
        if !self.correlated {
            parts.push("independent");
        }
        parts.join("+")
    }
}

/// One row of `allreduce`, `ablate` and `sweep-budget` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub variant: String,
    pub n: usize,
    pub topology: TopologyKind,
    pub b: f64,
    pub seed: u64,
    pub vnmse: f64,
    pub bits_per_coord: f64,
    pub traffic_hash: String,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyPair {
    pub n: usize,
    pub b: f64,
    pub seed: u64,
    pub ring_vnmse: f64,
    pub butterfly_vnmse: f64,
    /// Butterfly over ring.
    pub ratio: f64,
    pub wall_time: f64,
}

fn for_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.par_iter().map(|&s| f(s)).collect()
}

pub fn cmd_allreduce(exp: &Experiment) -> Result<Vec<Record>> {
    exp.validate()?;
    for_seeds(&exp.seeds, |seed| {
        let workers = exp.workers(seed)?;
        let start = Instant::now();
        let r = run_round(&workers, &exp.pipeline(seed))?;
        Ok(Record {
            variant: exp.variant_name(),
            n: exp.n,
            topology: exp.topology,
            b: exp.b,
            seed,
            vnmse: r.report.vnmse,
            bits_per_coord: r.report.bits.per_representation,
            traffic_hash: r.traffic_hash,
            wall_time: start.elapsed().as_secs_f64(),
        })
    })
}

pub fn cmd_ablate(exp: &Experiment) -> Result<Vec<Record>> {
    exp.validate()?;
    let per_seed = for_seeds(&exp.seeds, |seed| {
        let workers = exp.workers(seed)?;
        let start = Instant::now();
        let rows = run_ablation(&workers, &exp.pipeline(seed))?;
        let wall = start.elapsed().as_secs_f64() / rows.len() as f64;
        Ok(rows
            .into_iter()
            .map(|row| Record {
                variant: row.variant,
                n: exp.n,
                topology: exp.topology,
                b: exp.b,
                seed,
                vnmse: row.vnmse,
                bits_per_coord: row.bits_per_coordinate,
                traffic_hash: row.traffic_hash,
                wall_time: wall,
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub fn cmd_topology_compare(exp: &Experiment) -> Result<Vec<TopologyPair>> {
    let ring = Experiment {
        topology: TopologyKind::Ring,
        ..exp.clone()
    };
    let fly = Experiment {
        topology: TopologyKind::Butterfly,
        ..exp.clone()
    };
    ring.validate()?;
    fly.validate()?;
    for_seeds(&exp.seeds, |seed| {
        let workers = exp.workers(seed)?;
        let start = Instant::now();
        let r = run_round(&workers, &ring.pipeline(seed))?.report.vnmse;
        let b = run_round(&workers, &fly.pipeline(seed))?.report.vnmse;
        Ok(TopologyPair {
            n: exp.n,
            b: exp.b,
            seed,
            ring_vnmse: r,
            butterfly_vnmse: b,
            ratio: b / r,
            wall_time: start.elapsed().as_secs_f64(),
        })
    })
}

pub fn cmd_sweep_budget(exp: &Experiment) -> Result<Vec<Record>> {
    if exp.budgets.is_empty() {
        return Err(Error::Config("budget list is empty".into()));
    }
    if let Some(b) = exp.budgets.iter().find(|b| !(3.0..=8.0).contains(*b)) {
        return Err(Error::Config(format!("budget {b} outside the sweep range 3..=8")));
    }
    let mut out = Vec::new();
    for &b in &exp.budgets {
        out.extend(cmd_allreduce(&Experiment { b, ..exp.clone() })?);
    }
    Ok(out)
}

/// The four locality CDF files: file stem and sorted block norms.
pub fn cmd_locality(exp: &Experiment) -> Result<Vec<(String, Vec<f64>)>> {
    if exp.generator.kind == GeneratorKind::File {
        let path = exp
            .generator
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("locality needs an input path".into()))?;
        if !Path::new(&path.to_string_lossy().replace("{rank}", "0")).exists() {
            return Err(Error::Io(format!("input {} not found", path.display())));
        }
    }
    let seed = *exp.seeds.first().ok_or_else(|| Error::Config("seed list is empty".into()))?;
    let layout = GroupLayout::new(exp.group_size, exp.super_group_size)?;
    let g = GradientView::new(generate(&exp.generator_for(seed), 0)?, layout)?;
    let shared = SharedSeed::new(seed, 0);
    let mut out = Vec::new();
    for (gran, name) in [(Granularity::Group, "group"), (Granularity::SuperGroup, "super_group")] {
        for (shuffle, tag) in [(false, "original"), (true, "shuffled")] {
            out.push((format!("{name}_{tag}"), locality_cdf(&g, gran, shuffle, shared)?));
        }
    }
    Ok(out)
}

/// Serializes rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn write_csv<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    let text = to_csv(rows)?;
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_json<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(rows).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(p, text)?;
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of vNMSE per variant, in first-seen order.
fn summarize(records: &[Record], key: impl Fn(&Record) -> String) -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    for r in records {
        let k = key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let rows: Vec<&Record> = records.iter().filter(|r| key(r) == k).collect();
            let (m, s) = mean_std(&rows.iter().map(|r| r.vnmse).collect::<Vec<_>>());
            let bits = rows.iter().map(|r| r.bits_per_coord).sum::<f64>() / rows.len() as f64;
            format!("{k:<24} vnmse {m:.6e} ± {s:.2e}  bits/coord {bits:.4}  ({} seeds)", rows.len())
        })
        .collect()
}

#[derive(Parser, Debug)]
#[command(name = "dynamiq", version, about = "Compressed all-reduce experiments on simulated workers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run all-reduce rounds, one record per seed.
    Allreduce(RunArgs),
    /// Run the five-step feature ladder.
    Ablate(RunArgs),
    /// Paired ring and butterfly runs.
    TopologyCompare(RunArgs),
    /// Write group and super-group norm CDFs, original and shuffled.
    Locality(RunArgs),
    /// vNMSE as a function of the bit budget.
    SweepBudget(RunArgs),
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// JSON experiment file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub topology: Option<TopologyKind>,
    /// Bits per coordinate, scale metadata included.
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    /// iid-gaussian, locality or file.
    #[arg(long = "gen")]
    pub generator: Option<GeneratorKind>,
    #[arg(long)]
    pub sigma_log: Option<f64>,
    #[arg(long)]
    pub group_sigma_log: Option<f64>,
    /// Raw gradient file for `--gen file`; `{rank}` expands to the worker rank.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed.
    #[arg(long, env = "DYNAMIQ_SEED")]
    pub seed: Option<u64>,
    /// Explicit comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub super_group_size: Option<usize>,
    /// general or fast.
    #[arg(long, value_parser = parse_allocator)]
    pub allocator: Option<AllocatorKind>,
    /// quantized or lossless.
    #[arg(long, value_parser = parse_codec)]
    pub codec: Option<CodecKind>,
    /// Run each worker on its own thread.
    #[arg(long)]
    pub threaded: bool,
    /// Uniform codebooks.
    #[arg(long)]
    pub uniform: bool,
    /// Same width for every super-group.
    #[arg(long)]
    pub fixed_width: Option<u32>,
    /// One binary16 scale per group.
    #[arg(long)]
    pub direct_scales: bool,
    /// Independent rounding randomness per hop.
    #[arg(long)]
    pub independent: bool,
    /// Comma-separated budgets for `sweep-budget`.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    /// CSV output path.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON records output path.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Output directory for `locality`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn parse_allocator(s: &str) -> std::result::Result<AllocatorKind, String> {
    match s {
        "general" => Ok(AllocatorKind::General),
        "fast" => Ok(AllocatorKind::Fast),
        _ => Err(format!("unknown allocator `{s}`")),
    }
}

fn parse_codec(s: &str) -> std::result::Result<CodecKind, String> {
    match s {
        "quantized" => Ok(CodecKind::Quantized),
        "lossless" => Ok(CodecKind::Lossless),
        _ => Err(format!("unknown codec `{s}`")),
    }
}

impl RunArgs {
    pub fn experiment(&self) -> Result<Experiment> {
        let mut e = match &self.config {
            Some(p) => Experiment::load(p)?,
            None => Experiment::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(e.n, self.n);
        set!(e.topology, self.topology);
        set!(e.b, self.b);
        set!(e.generator.d, self.d);
        set!(e.generator.kind, self.generator);
        set!(e.generator.sigma_log, self.sigma_log);
        set!(e.generator.group_sigma_log, self.group_sigma_log);
        set!(e.group_size, self.group_size);
        set!(e.super_group_size, self.super_group_size);
        set!(e.allocator, self.allocator);
        set!(e.codec, self.codec);
        set!(e.budgets, self.budgets);
        if let Some(p) = &self.input {
            e.generator.path = Some(p.clone());
            e.generator.kind = GeneratorKind::File;
        }
        if self.seeds.is_some() || self.seed.is_some() {
            let first = self.seed.unwrap_or_else(|| e.seeds.first().copied().unwrap_or(0));
            let count = self.seeds.unwrap_or(1) as u64;
            e.seeds = (first..first + count).collect();
        }
        set!(e.seeds, self.seed_list);
        e.generator.super_group_size = e.super_group_size;
        e.generator.group_size = e.group_size;
        if self.threaded {
            e.execution = ExecutionMode::Threaded;
        }
        if self.uniform {
            e.non_uniform = false;
        }
        if let Some(w) = self.fixed_width {
            e.variable_width = false;
            e.fixed_width = w;
        }
        if self.direct_scales {
            e.hierarchical_scales = false;
        }
        if self.independent {
            e.correlated = false;
        }
        if self.output.is_some() {
            e.output = self.output.clone();
        }
        if self.json.is_some() {
            e.json_output = self.json.clone();
        }
        if self.out_dir.is_some() {
            e.out_dir = self.out_dir.clone();
        }
        Ok(e)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnsupportedBitwidth(_) | Error::Schedule(_) => EXIT_CONFIG,
        Error::BudgetInfeasible { .. } | Error::ScaleOverflow(_) => EXIT_INFEASIBLE,
        _ => EXIT_FAILURE,
    }
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Allreduce(a) | Command::Ablate(a) | Command::SweepBudget(a) => {
            let exp = a.experiment()?;
            let (records, key): (_, fn(&Record) -> String) = match command {
                Command::Allreduce(_) => (cmd_allreduce(&exp)?, |r| r.variant.clone()),
                Command::Ablate(_) => (cmd_ablate(&exp)?, |r| r.variant.clone()),
                _ => (cmd_sweep_budget(&exp)?, |r| format!("b={}", r.b)),
            };
            write_csv(&records, exp.output.as_deref())?;
            write_json(&records, exp.json_output.as_deref())?;
            for line in summarize(&records, key) {
                eprintln!("{line}");
            }
        }
        Command::TopologyCompare(a) => {
            let exp = a.experiment()?;
            let pairs = cmd_topology_compare(&exp)?;
            write_csv(&pairs, exp.output.as_deref())?;
            write_json(&pairs, exp.json_output.as_deref())?;
            let (r, _) = mean_std(&pairs.iter().map(|p| p.ring_vnmse).collect::<Vec<_>>());
            let (b, _) = mean_std(&pairs.iter().map(|p| p.butterfly_vnmse).collect::<Vec<_>>());
            eprintln!("n={} ring {r:.6e} butterfly {b:.6e} mean ratio {:.4}", exp.n, b / r);
        }
        Command::Locality(a) => {
            let exp = a.experiment()?;
            let dir = exp.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            for (name, norms) in cmd_locality(&exp)? {
                let rows: Vec<CdfRow> = norms
                    .iter()
                    .enumerate()
                    .map(|(k, &norm)| CdfRow {
                        rank_fraction: (k + 1) as f64 / norms.len() as f64,
                        norm,
                    })
                    .collect();
                let path = dir.join(format!("{name}.csv"));
                write_csv(&rows, Some(&path))?;
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CdfRow {
    rank_fraction: f64,
    norm: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
