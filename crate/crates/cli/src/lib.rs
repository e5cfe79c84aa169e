//! Command-line driver: compile, optimize, sweep, simulate, pack, report and
//! export-models. Every artifact is a pure function of the inputs; nothing
//! time- or host-dependent is written.
//!
//! Exit codes: 0 success, 1 no feasible policy, 2 any other error. Failures
//! print one JSON line `{"error":<kind>,"message":<text>}` on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cutpoint_core::alloc::assign_buffers_forcing;
use cutpoint_core::codegen::{emit_instructions, pack_image};
use cutpoint_core::cost::{baseline_dram, MB};
use cutpoint_core::funcref::{read_tensor, synthetic_weights, Tensor};
use cutpoint_core::graph::{parse_network_with_input, serialize_network};
use cutpoint_core::report::{assignment_csv, cost_report, sweep_csv};
use cutpoint_core::search::{evaluate, minimum_buffer_search, search_cut_points, sweep_cut_points, Evaluation};
use cutpoint_core::sim::simulate_network;
use cutpoint_core::{zoo, Error, HwConfig, ReusePolicy, Schedule};

/// Directory searched for `hw.json` and `models/<name>.json` when no explicit path is given.
pub const CONFIG_DIR_ENV: &str = "CUTPOINT_CONFIG_DIR";

#[derive(Parser, Debug)]
#[command(name = "cutpoint", version, about = "Reuse-aware scheduling compiler for CNN accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, fuse, allocate and emit a packed image with synthetic weights.
    Compile(ImageArgs),
    /// Search cut-points and write the cost report.
    Optimize(Common),
    /// Evaluate every cut-point tuple and write the curve as CSV.
    Sweep(Common),
    /// Simulate latency for a policy and write the report and memory trace.
    Simulate(PolicyArgs),
    /// Pack an image from a tensor fixture and seeded weights.
    Pack(ImageArgs),
    /// Compare the optimized schedule of several models against their baselines.
    Report(ReportArgs),
    /// Write the built-in network encodings as JSON.
    ExportModels {
        #[arg(long, default_value = "models")]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Network JSON path or built-in model name.
    #[arg(long)]
    pub model: String,
    /// Square input resolution override.
    #[arg(long)]
    pub input_size: Option<u32>,
    /// Hardware configuration JSON; defaults to `$CUTPOINT_CONFIG_DIR/hw.json`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ti: Option<u32>,
    #[arg(long)]
    pub to: Option<u32>,
    #[arg(long)]
    pub bram_budget: Option<u32>,
    #[arg(long)]
    pub mac_budget: Option<u32>,
    #[arg(long)]
    pub bus_bytes: Option<u32>,
    /// Activation/weight width in bits.
    #[arg(long)]
    pub qa: Option<u32>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PolicyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated cut-points, one per segment; searched when omitted.
    #[arg(long, value_delimiter = ',')]
    pub cut_points: Option<Vec<usize>>,
}

#[derive(Args, Debug, Clone)]
pub struct ImageArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Seed for synthetic weights (and the input, when no fixture is given).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input tensor fixture (`TENSOR i8 h w c` header + raw bytes).
    #[arg(long)]
    pub input_tensor: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Models to include; all built-in models when omitted.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Error with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    pub code: i32,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match e {
            Error::Infeasible { .. } => ("infeasible", 1),
            Error::Parse(_) | Error::UnknownKind { .. } | Error::ShapeMismatch { .. } | Error::Cycle { .. } => ("parse", 2),
            Error::InvalidLayer { .. } | Error::MalformedGraph(_) => ("graph", 2),
            Error::AddressOverflow { .. } | Error::Image(_) | Error::Decode(_) => ("codegen", 2),
            Error::Io(_) => ("io", 2),
            _ => ("invalid", 2),
        };
        Failure { kind, message: e.to_string(), code }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { kind: "io", message: e.to_string(), code: 2 }
    }
}

impl Failure {
    pub fn record(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { kind: "invalid", message: msg.into(), code: 2 }
}

fn config_dir() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from)
}

pub fn load_hw(c: &Common) -> Res<HwConfig> {
    let mut hw = load_hw_file(c.config.as_deref())?;
    if let Some(t) = c.ti.or(c.to) {
        if c.ti.is_some() && c.to.is_some() && c.ti != c.to {
            return Err(invalid("--ti and --to must be equal"));
        }
        hw.ti = t;
        hw.to = t;
        hw.n_mac = 2 * t * t;
    }
    if let Some(b) = c.bram_budget {
        hw.bram_budget = b;
    }
    if let Some(m) = c.mac_budget {
        hw.mac_budget = m;
    }
    if let Some(b) = c.bus_bytes {
        hw.bus_bytes_per_cycle = b;
    }
    if let Some(q) = c.qa {
        hw.qa = q;
    }
    hw.validate()?;
    Ok(hw)
}

fn load_hw_file(path: Option<&Path>) -> Res<HwConfig> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => match config_dir().map(|d| d.join("hw.json")).filter(|p| p.exists()) {
            Some(p) => p,
            None => return Ok(HwConfig::default()),
        },
    };
    let text = fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Resolves a model argument: an existing file, `$CUTPOINT_CONFIG_DIR/models/<name>.json`, or a built-in name.
pub fn load_model(model: &str, input_size: Option<u32>) -> Res<Schedule> {
    let wh = input_size.map(|s| (s, s));
    let from_file = |p: &Path| -> Res<Schedule> {
        let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        Ok(Schedule::new(parse_network_with_input(&text, wh)?)?)
    };
    let p = Path::new(model);
    if p.exists() {
        return from_file(p);
    }
    if let Some(p) = config_dir().map(|d| d.join("models").join(format!("{model}.json"))).filter(|p| p.exists()) {
        return from_file(&p);
    }
    match zoo::shipped().into_iter().find(|(n, _)| *n == model) {
        Some((_, b)) => {
            let text = serde_json::to_string(&b.file).expect("network file serializes");
            Ok(Schedule::new(parse_network_with_input(&text, wh)?)?)
        }
        None => Err(invalid(format!("model `{model}` is neither a file nor a built-in network"))),
    }
}

fn choose(s: &Schedule, cut_points: &Option<Vec<usize>>, hw: &HwConfig) -> Res<Evaluation> {
    Ok(match cut_points {
        Some(cp) => evaluate(s, &ReusePolicy::new(cp.clone()), hw)?,
        None => search_cut_points(s, hw)?,
    })
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Res<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, bytes)?;
    Ok(p)
}

fn stem(s: &Schedule) -> String {
    s.graph.name.replace(|c: char| !c.is_ascii_alphanumeric() && c != '_' && c != '-', "_")
}

fn build_image(a: &ImageArgs, fixture_required: bool, out: &mut dyn Write) -> Res<()> {
    let c = &a.policy.common;
    let hw = load_hw(c)?;
    let s = load_model(&c.model, c.input_size)?;
    let e = choose(&s, &a.policy.cut_points, &hw)?;
    let (asg, _, _) = assign_buffers_forcing(&s, &e.schemes, &hw)?;
    let prog = emit_instructions(&s, &asg, &hw)?;
    let g = &s.graph;
    let input = match &a.input_tensor {
        Some(p) => {
            let t = read_tensor(std::io::BufReader::new(fs::File::open(p)?))?;
            if (t.h, t.w, t.c) != (g.input_h as usize, g.input_w as usize, g.input_c as usize) {
                return Err(invalid(format!(
                    "input tensor is {}x{}x{}, network expects {}x{}x{}",
                    t.h, t.w, t.c, g.input_h, g.input_w, g.input_c
                )));
            }
            t
        }
        None if fixture_required => return Err(invalid("pack requires --input-tensor")),
        None => Tensor::random(g.input_h as usize, g.input_w as usize, g.input_c as usize, a.seed),
    };
    let ab = hw.act_bytes() as usize;
    let mut bytes = Vec::new();
    if prog.layout.input_len > 0 {
        for v in &input.data {
            bytes.push(*v as u8);
            bytes.extend(std::iter::repeat_n(if *v < 0 { 0xFF } else { 0 }, ab - 1));
        }
    }
    let img = pack_image(&s, &prog, &synthetic_weights(g, a.seed), &bytes, &hw)?;
    let name = stem(&s);
    let p = write(&c.out, &format!("{name}.img"), &img)?;
    write(&c.out, &format!("{name}.alloc.csv"), assignment_csv(&s, &asg))?;
    write(&c.out, &format!("{name}.program.json"), serde_json::to_string_pretty(&prog.instructions).unwrap() + "\n")?;
    writeln!(out, "{}: {} instructions, {} bytes", p.display(), prog.instructions.len(), img.len())?;
    Ok(())
}

fn report_row(s: &Schedule, hw: &HwConfig) -> Res<String> {
    let e = search_cut_points(s, hw)?;
    let m = minimum_buffer_search(s, hw)?;
    let r = cost_report(s, &e, hw);
    let row = evaluate(s, &ReusePolicy::all_row(&s.plan), hw)?;
    Ok(format!(
        "{},{},{:.4},{:.4},{:.4},{:.2},{:.4},{:.4},{},{:.3}\n",
        r.model,
        r.schemes,
        r.dram_feature_bytes as f64 / MB,
        r.dram_total_bytes as f64 / MB,
        baseline_dram(s, hw) as f64 / MB,
        r.off_chip_reduction_pct,
        r.requirements.sram_total as f64 / MB,
        m.requirements.sram_total as f64 / MB,
        r.cycles,
        row.cycles as f64 / e.cycles as f64,
    ))
}

/// Runs one command, writing human-readable progress to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Res<()> {
    match cli.command {
        Command::Compile(a) => build_image(&a, false, out),
        Command::Pack(a) => build_image(&a, true, out),
        Command::Optimize(c) => {
            let hw = load_hw(&c)?;
            let s = load_model(&c.model, c.input_size)?;
            let e = search_cut_points(&s, &hw)?;
            let r = cost_report(&s, &e, &hw);
            let name = stem(&s);
            write(&c.out, &format!("{name}.report.json"), r.to_json())?;
            write(&c.out, &format!("{name}.report.txt"), r.to_text())?;
            write!(out, "{}", r.to_text())?;
            Ok(())
        }
        Command::Sweep(c) => {
            let hw = load_hw(&c)?;
            let s = load_model(&c.model, c.input_size)?;
            let evals = sweep_cut_points(&s, &hw)?;
            let name = stem(&s);
            let p = write(&c.out, &format!("{name}.sweep.csv"), sweep_csv(&evals))?;
            let m = minimum_buffer_search(&s, &hw)?;
            writeln!(
                out,
                "{}: {} candidates; minimum SRAM {:.3} MB at cut points {:?}",
                p.display(),
                evals.len(),
                m.requirements.sram_total as f64 / MB,
                m.policy.map(|p| p.cut_points).unwrap_or_default()
            )?;
            Ok(())
        }
        Command::Simulate(a) => {
            let c = &a.common;
            let hw = load_hw(c)?;
            let s = load_model(&c.model, c.input_size)?;
            let e = choose(&s, &a.cut_points, &hw)?;
            let (asg, _, _) = assign_buffers_forcing(&s, &e.schemes, &hw)?;
            let lat = simulate_network(&s, &asg, &hw)?;
            let name = stem(&s);
            write(&c.out, &format!("{name}.latency.json"), serde_json::to_string_pretty(&lat.groups).unwrap() + "\n")?;
            write(&c.out, &format!("{name}.trace.txt"), lat.trace_text())?;
            writeln!(
                out,
                "{}: {} cycles ({:.3} ms at {} MHz), {:.1} GOPS, {:.3} MB feature traffic",
                s.graph.name,
                lat.cycles,
                lat.seconds * 1e3,
                hw.freq_hz / 1e6,
                lat.gops,
                lat.feature_bytes() as f64 / MB
            )?;
            Ok(())
        }
        Command::Report(a) => {
            let hw = load_hw_file(a.config.as_deref())?;
            hw.validate()?;
            let names: Vec<String> = if a.models.is_empty() {
                zoo::shipped().into_iter().map(|(n, _)| n.to_string()).collect()
            } else {
                a.models.clone()
            };
            let mut csv = String::from(
                "model,schemes,dram_feature_mb,dram_total_mb,baseline_mb,reduction_pct,sram_mb,min_sram_mb,cycles,speedup_vs_all_row\n",
            );
            for n in &names {
                csv += &report_row(&load_model(n, None)?, &hw)?;
            }
            let p = write(&a.out, "report.csv", &csv)?;
            write!(out, "{csv}")?;
            writeln!(out, "wrote {}", p.display())?;
            Ok(())
        }
        Command::ExportModels { out: dir } => {
            for (name, b) in zoo::shipped() {
                let g = b.build()?;
                let p = write(&dir, &format!("{name}.json"), serialize_network(&g) + "\n")?;
                writeln!(out, "{}", p.display())?;
            }
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let f = Failure { kind: "usage", message: e.to_string().lines().next().unwrap_or("").to_string(), code: 2 };
            let _ = writeln!(err, "{}", f.record());
            return f.code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "{}", f.record());
            f.code
        }
    }
}
