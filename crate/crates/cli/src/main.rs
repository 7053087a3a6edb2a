//! `pruneflow`: run, verify and benchmark two-party private inference.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pruneflow_core::channel::NetworkModel;
use pruneflow_core::experiments::{bench, bench_csv, loglog_slope, verify_suite};
use pruneflow_core::pipeline::toy::{bench_model, calibrate, toy_input, toy_model, Calibration, ToyShape};
use pruneflow_core::pipeline::{private_forward, Model, Variant};
use pruneflow_core::sharing::{AdderKind, SessionConfig};
use pruneflow_core::{Error, FixedPointParams};

#[derive(Parser)]
#[command(name = "pruneflow", version, about = "Two-party private transformer inference with oblivious token pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one private inference and write its report as JSON.
    Infer(InferArgs),
    /// Check the private pass against the plaintext oracle on toy models.
    Verify(VerifyArgs),
    /// Measure communication as the token count grows; writes CSV.
    Bench(BenchArgs),
    /// Write a toy model as a manifest/blob pair.
    GenModel(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Net {
    Lan,
    Wan,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Baseline,
    Prune,
    PruneReduce,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::Prune => Variant::Prune,
            VariantArg::PruneReduce => Variant::PruneReduce,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AdderArg {
    Ripple,
    Prefix,
}

impl From<AdderArg> for AdderKind {
    fn from(a: AdderArg) -> Self {
        match a {
            AdderArg::Ripple => AdderKind::Ripple,
            AdderArg::Prefix => AdderKind::Prefix,
        }
    }
}

#[derive(Args)]
struct NetArgs {
    /// network preset
    #[arg(long, value_enum, default_value = "lan")]
    net: Net,
    /// custom bandwidth in bits per second
    #[arg(long = "bw", value_name = "BITS_PER_S")]
    bw: Option<f64>,
    /// custom latency per round in seconds
    #[arg(long = "lat", value_name = "SECONDS")]
    lat: Option<f64>,
}

impl NetArgs {
    fn model(&self) -> Result<NetworkModel, Error> {
        let preset = match self.net {
            Net::Lan => NetworkModel::lan(),
            Net::Wan => NetworkModel::wan(),
        };
        NetworkModel::new(self.bw.unwrap_or(preset.bandwidth), self.lat.unwrap_or(preset.latency))
    }
}

#[derive(Args)]
struct InferArgs {
    /// model manifest; the blob is read from the matching `.blob` file
    #[arg(long, value_name = "MANIFEST")]
    model: PathBuf,
    /// token matrix as a JSON array of rows
    #[arg(long, value_name = "PATH", conflicts_with = "tokens")]
    input: Option<PathBuf>,
    /// number of synthetic tokens
    #[arg(long, value_name = "N")]
    tokens: Option<usize>,
    /// width of each synthetic token (must match the model)
    #[arg(long, value_name = "D")]
    dim: Option<usize>,
    /// seeds the dealer, the parties and synthetic input
    #[arg(long, value_name = "S", default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, value_enum, default_value = "prune-reduce")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "ripple")]
    adder: AdderArg,
    #[arg(long, value_name = "PATH", default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// first seed of the sweep
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,
    /// number of toy models
    #[arg(long, value_name = "K", default_value_t = 20)]
    cases: u64,
    /// corrupt one dealer triple to check that the suite notices
    #[arg(long)]
    inject_fault: bool,
    #[arg(long, value_name = "PATH", default_value = "verify.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// comma-separated token counts
    #[arg(long, value_name = "N,N,...", value_delimiter = ',', default_value = "32,64,128,256")]
    ns: Vec<usize>,
    #[arg(long, value_name = "S", default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, value_enum, default_value = "ripple")]
    adder: AdderArg,
    #[arg(long, value_name = "PATH", default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    /// random weights
    Toy,
    /// the scaling-benchmark model
    Bench,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "toy")]
    kind: ModelKind,
    #[arg(long, value_name = "S", default_value_t = 7)]
    seed: u64,
    /// token width
    #[arg(long, value_name = "D", default_value_t = 8)]
    dim: usize,
    /// longest supported input
    #[arg(long, value_name = "N", default_value_t = 32)]
    tokens: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    model_dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// calibrate thresholds to prune about this fraction of tokens per
    /// layer on synthetic input of `--tokens` rows; 0 disables pruning
    #[arg(long, value_name = "FRACTION", default_value_t = 0.3)]
    prune: f64,
    /// fraction of kept tokens to reduce
    #[arg(long, value_name = "FRACTION", default_value_t = 0.5)]
    reduce: f64,
    /// manifest path; the blob goes next to it
    #[arg(long, value_name = "PATH", default_value = "toy.manifest.json")]
    out: PathBuf,
}

/// Failure of a command with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::TapeExhausted(_) | Error::TripleReuse(_) | Error::Deadlock | Error::ChannelClosed | Error::Frame(_) => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn read_tokens(path: &Path, params: &FixedPointParams, width: usize) -> Result<(Vec<u64>, usize), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: expected a JSON array of rows: {e}", path.display())))?;
    let mut out = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(usage(format!("{}: row {i} has {} values, the model expects {width}", path.display(), r.len())));
        }
        for &v in r {
            out.push(params.encode(v)?.0);
        }
    }
    Ok((out, rows.len()))
}

fn infer(a: &InferArgs) -> Result<(), Failure> {
    let net = a.net.model()?;
    let model = Model::load_manifest(&a.model)?;
    let params = model.params();
    let width = model.dims().input_dim;
    let (tokens, n) = match (&a.input, a.tokens) {
        (Some(path), _) => read_tokens(path, &params, width)?,
        (None, Some(n)) => {
            if let Some(d) = a.dim.filter(|&d| d != width) {
                return Err(usage(format!("--dim {d} does not match the model's token width {width}")));
            }
            (toy_input(&params, n, width, a.seed), n)
        }
        (None, None) => return Err(usage("give --input PATH or --tokens N")),
    };
    let mut cfg = SessionConfig::new(params, a.seed);
    cfg.adder = a.adder.into();
    cfg.keep_transcript = false;
    let run = private_forward(&model, &tokens, n, a.variant.into(), &cfg, &net)?;
    let mut json = run.report.to_json();
    json.push('\n');
    write_out(&a.out, &json)?;
    println!("{}", run.report.summary());
    println!("logits: {:?}", run.report.logits);
    println!("report written to {}", a.out.display());
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<(), Failure> {
    if a.cases == 0 {
        println!("no cases");
        return Err(Failure { code: 1, msg: "no cases".into() });
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.cases).collect();
    let fault = a.inject_fault.then_some(0);
    let summary = verify_suite(&seeds, fault)?;
    for c in &summary.cases {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} seed={} n={} L={} D={} counts={:?} max_err={:.6}{}",
            c.seed,
            c.tokens,
            c.layers,
            c.model_dim,
            c.private_counts,
            c.max_logit_err,
            c.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default()
        );
    }
    let passed = summary.cases.iter().filter(|c| c.passed()).count();
    let json = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    write_out(&a.out, &json)?;
    println!("{passed}/{} cases passed; details in {}", summary.cases.len(), a.out.display());
    if summary.passed() {
        Ok(())
    } else {
        Err(Failure { code: 1, msg: "verification failed".into() })
    }
}

fn run_bench(a: &BenchArgs) -> Result<(), Failure> {
    if a.ns.is_empty() || a.ns.contains(&0) {
        return Err(usage("--ns needs positive token counts"));
    }
    let net = a.net.model()?;
    let variants = [Variant::Baseline, Variant::Prune, Variant::PruneReduce];
    let rows = bench(&a.ns, &variants, a.seed, a.adder.into())?;
    write_out(&a.out, &bench_csv(&rows))?;
    for v in variants {
        let pts: Vec<(f64, f64)> =
            rows.iter().filter(|r| r.variant == v.name()).map(|r| (r.n as f64, r.bytes as f64)).collect();
        let slope = if pts.len() >= 2 { format!("{:.3}", loglog_slope(&pts)) } else { "n/a".into() };
        let last = rows.iter().rfind(|r| r.variant == v.name()).expect("one row per variant");
        let secs = last.bytes as f64 * 8.0 / net.bandwidth + last.rounds as f64 * net.latency;
        println!(
            "{:<13} bytes slope {slope}; at n={}: {} bytes, {} rounds, est {:.3}s",
            v.name(),
            last.n,
            last.bytes,
            last.rounds,
            secs
        );
    }
    println!("table written to {}", a.out.display());
    Ok(())
}

fn gen_model(a: &GenArgs) -> Result<(), Failure> {
    let mut model = match a.kind {
        ModelKind::Bench => bench_model(a.tokens, a.seed)?,
        ModelKind::Toy => {
            let shape = ToyShape {
                layers: a.layers,
                model_dim: a.model_dim,
                heads: a.heads,
                ffn_dim: 2 * a.model_dim,
                input_dim: a.dim,
                max_tokens: a.tokens,
                classes: 2,
            };
            if shape.layers == 0 || shape.heads == 0 || shape.model_dim % shape.heads != 0 || a.dim == 0 || a.tokens == 0 {
                return Err(usage("need positive sizes and heads dividing --model-dim"));
            }
            let mut m = toy_model(&shape, a.seed)?;
            if a.prune > 0.0 || a.reduce > 0.0 {
                let x = toy_input(&m.params(), a.tokens, a.dim, a.seed);
                calibrate(&mut m, &x, a.tokens, Calibration { prune: a.prune, reduce: a.reduce, ..Default::default() })?;
            }
            m
        }
    };
    model.manifest.validate()?;
    let name = a.out.file_name().and_then(|s| s.to_str()).unwrap_or("model");
    let name = name.strip_suffix(".manifest.json").unwrap_or(name).to_string();
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let (mp, bp) = model.save(dir, &name)?;
    // re-read to confirm the pair loads
    model = Model::load(&mp, &bp)?;
    let one = (1u64 << model.params().f) as f64;
    let thresholds: Vec<String> = model
        .manifest
        .layers
        .iter()
        .map(|l| format!("({:.4}, {:.4})", l.theta as f64 / one, l.beta as f64 / one))
        .collect();
    println!(
        "wrote {} and {}: {} layers, D={}, token width {}, thresholds {}",
        mp.display(),
        bp.display(),
        model.manifest.layers.len(),
        model.dims().model_dim,
        model.dims().input_dim,
        thresholds.join(" ")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Infer(a) => infer(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => run_bench(a),
        Command::GenModel(a) => gen_model(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
