//! Command-line driver: synthetic corpus generation, the distillation
//! experiment grid, bound/cost sweeps, the online simulation, and policy
//! export/apply. Every command takes `--seed` (falling back to a config file,
//! then the `FPHTC_SEED` env var) and writes byte-identical outputs for a
//! fixed seed.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fphtc::analysis::{
    fphtc_bound, optimal_lambda, packet_bound, teacher_bound, total_cost, BoundParams,
};
use fphtc::distillation::{
    confidence_interval, run_fphtc, run_regular_baseline, ExperimentConfig,
};
use fphtc::ingestion::{
    generate_synthetic, preset, read_pcap, write_pcap, AppMix, CaptureManifest,
};
use fphtc::online_sim::{metrics_to_csv, run_simulation, OnlineConfig, TrafficSchedule};
use fphtc::policy::{
    compile_rules, export_policy, import_policy, load_tree, packet_features,
};
use fphtc::teacher::GbdtConfig;
use fphtc::traffic_model::{cos_of_app, AppType, ALL_APPS, ALL_COS};
use fphtc::Error;

#[derive(Parser)]
#[command(name = "fphtc", version, about = "Flow-packet hybrid traffic classification")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness (falls back to config, then $FPHTC_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pcap corpus plus a labeling manifest.
    Synth(SynthArgs),
    /// Run the hybrid pipeline and the packet-only baseline over an n-grid.
    Distill(DistillArgs),
    /// Sweep the generalization bounds and labeling cost over lambda.
    Bounds(BoundsArgs),
    /// Run the time-slotted online simulation.
    Online(OnlineArgs),
    /// Compile a stored student tree into a routing-policy rule file.
    ExportPolicy(ExportPolicyArgs),
    /// Apply a routing-policy file to every packet of a capture.
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Traffic preset: separable | overlapping.
    #[arg(long)]
    preset: Option<String>,
    /// Total flows across all apps.
    #[arg(long)]
    flows: Option<usize>,
    /// Comma-separated app subset (default: all eight).
    #[arg(long, value_delimiter = ',')]
    apps: Vec<AppType>,
    /// Output directory for per-app pcaps and manifest.tsv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    preset: Option<String>,
    /// Student corpus sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// DPI-labeled flow count; lambda = dpi_flows / n at each grid point.
    #[arg(long)]
    dpi_flows: Option<usize>,
    /// DPI-labeled fraction; overrides --dpi-flows when set.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Held-out test flows per replicate.
    #[arg(long)]
    test_flows: Option<usize>,
    /// Cost units per DPI-labeled flow.
    #[arg(long)]
    c_dpi: Option<f64>,
    /// Boosting rounds for the teacher.
    #[arg(long)]
    rounds: Option<usize>,
    /// Per-replicate results CSV (summary always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the student tree from the first replicate of the last n.
    #[arg(long)]
    tree_out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    cap_fl: Option<f64>,
    #[arg(long)]
    cap_rp: Option<f64>,
    #[arg(long)]
    eps_fl: Option<f64>,
    #[arg(long)]
    eps_rp: Option<f64>,
    #[arg(long)]
    eps_pk: Option<f64>,
    #[arg(long)]
    k_weight: Option<f64>,
    #[arg(long)]
    c_dpi: Option<f64>,
    /// Lambda grid points on (0,1].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OnlineArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    flows_per_slot: Option<usize>,
    #[arg(long)]
    accuracy_threshold: Option<f64>,
    #[arg(long)]
    saturation_threshold: Option<f64>,
    #[arg(long)]
    dpi_flows_per_slot: Option<usize>,
    #[arg(long)]
    teacher_labeled_flows: Option<usize>,
    /// Boosting rounds for the per-slot teacher.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportPolicyArgs {
    /// Stored student decision tree.
    #[arg(long)]
    tree: PathBuf,
    /// Rule-file destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Routing-policy rule file.
    #[arg(long)]
    policy: PathBuf,
    /// Capture to classify.
    #[arg(long)]
    pcap: PathBuf,
    /// Per-packet action lines (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    preset: Option<String>,
    synth: Option<SynthFile>,
    distill: Option<DistillFile>,
    bounds: Option<BoundsFile>,
    online: Option<OnlineFile>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    flows: Option<usize>,
    apps: Option<Vec<String>>,
    out_dir: Option<PathBuf>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct DistillFile {
    n: Option<Vec<usize>>,
    dpi_flows: Option<usize>,
    lambda: Option<f64>,
    replicates: Option<usize>,
    test_flows: Option<usize>,
    c_dpi: Option<f64>,
    rounds: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    n: Option<u64>,
    alpha: Option<f64>,
    cap_fl: Option<f64>,
    cap_rp: Option<f64>,
    eps_fl: Option<f64>,
    eps_rp: Option<f64>,
    eps_pk: Option<f64>,
    k_weight: Option<f64>,
    c_dpi: Option<f64>,
    grid: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct OnlineFile {
    slots: Option<usize>,
    flows_per_slot: Option<usize>,
    accuracy_threshold: Option<f64>,
    saturation_threshold: Option<f64>,
    dpi_flows_per_slot: Option<usize>,
    teacher_labeled_flows: Option<usize>,
    rounds: Option<usize>,
    out: Option<PathBuf>,
}

fn load_config(path: Option<&PathBuf>) -> Result<FileConfig, Error> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))
        }
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<u64, Error> {
    if let Some(s) = flag.or(cfg.seed) {
        return Ok(s);
    }
    match std::env::var("FPHTC_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("FPHTC_SEED is not a u64: {v}"))),
        Err(_) => Ok(0),
    }
}

fn resolve_preset(flag: Option<&String>, cfg: &FileConfig) -> Result<fphtc::ingestion::ProfileSet, Error> {
    let name = flag
        .or(cfg.preset.as_ref())
        .map(String::as_str)
        .unwrap_or("separable");
    preset(name)
}

fn uniform_mix(apps: &[AppType]) -> AppMix {
    apps.iter().map(|&a| (a, 1.0)).collect()
}

fn write_output(path: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn cmd_synth(args: &SynthArgs, cfg: &FileConfig, seed: u64) -> Result<(), Error> {
    let file = cfg.synth.clone().unwrap_or_default();
    let profiles = resolve_preset(args.preset.as_ref(), cfg)?;
    let flows = args.flows.or(file.flows).unwrap_or(1000);
    let apps: Vec<AppType> = if !args.apps.is_empty() {
        args.apps.clone()
    } else if let Some(names) = &file.apps {
        names
            .iter()
            .map(|s| AppType::from_str(s))
            .collect::<Result<_, _>>()?
    } else {
        ALL_APPS.to_vec()
    };
    let out_dir = args
        .out_dir
        .clone()
        .or(file.out_dir)
        .ok_or_else(|| Error::InvalidArgument("--out-dir is required".into()))?;
    fs::create_dir_all(&out_dir)?;

    let generated = generate_synthetic(&profiles, &uniform_mix(&apps), flows, seed)?;
    let mut manifest = CaptureManifest::new();
    let mut app_counts = Vec::new();
    for &app in &apps {
        let packets: Vec<_> = generated
            .iter()
            .filter(|f| f.true_app == Some(app))
            .flat_map(|f| f.packets.iter().cloned())
            .collect();
        let n_flows = generated
            .iter()
            .filter(|f| f.true_app == Some(app))
            .count();
        let file_name = format!("{}.pcap", app.name().to_lowercase());
        write_pcap(&out_dir.join(&file_name), &packets)?;
        manifest.insert(file_name, app);
        app_counts.push((app, n_flows));
    }
    fs::write(out_dir.join("manifest.tsv"), manifest.to_text())?;

    let mut summary = String::new();
    for (app, n) in &app_counts {
        writeln!(summary, "{}\t{n}", app.name()).unwrap();
    }
    for cos in ALL_COS {
        let n: usize = app_counts
            .iter()
            .filter(|(a, _)| cos_of_app(*a) == cos)
            .map(|(_, n)| n)
            .sum();
        writeln!(summary, "{}\t{n}", cos.name()).unwrap();
    }
    print!("{summary}");
    Ok(())
}

fn cmd_distill(args: &DistillArgs, cfg: &FileConfig, seed: u64) -> Result<(), Error> {
    let file = cfg.distill.clone().unwrap_or_default();
    let profiles = resolve_preset(args.preset.as_ref(), cfg)?;
    let n_grid: Vec<usize> = if !args.n.is_empty() {
        args.n.clone()
    } else {
        file.n.unwrap_or_else(|| vec![5000, 10_000, 20_000])
    };
    let dpi_flows = args.dpi_flows.or(file.dpi_flows).unwrap_or(1000);
    let lambda_override = args.lambda.or(file.lambda);
    let replicates = args.replicates.or(file.replicates).unwrap_or(3);
    let test_flows = args.test_flows.or(file.test_flows).unwrap_or(2000);
    let c_dpi = args.c_dpi.or(file.c_dpi).unwrap_or(1.0);
    let rounds = args.rounds.or(file.rounds).unwrap_or(GbdtConfig::default().n_rounds);
    let out = args.out.clone().or(file.out);
    if replicates == 0 {
        return Err(Error::InvalidArgument("--replicates must be >= 1".into()));
    }
    if replicates == 1 {
        eprintln!("warning: one replicate; confidence intervals omitted");
    }

    let mix = uniform_mix(&ALL_APPS);
    let mut csv = String::from(
        "pipeline,n,lambda,seed,student_acc,teacher_acc,rule_count,flows_labeled,dpi_cost\n",
    );
    let mut summary = String::from("n,lambda,fphtc_median,baseline_median,teacher_median,fphtc_ci_lo,fphtc_ci_hi\n");
    for &n in &n_grid {
        let lambda = match lambda_override {
            Some(l) => l,
            None => dpi_flows as f64 / n as f64,
        };
        let mut fphtc_accs = Vec::new();
        let mut base_accs = Vec::new();
        let mut teacher_accs = Vec::new();
        for r in 0..replicates {
            let rep_seed = seed.wrapping_add(1_000_003 * r as u64);
            let corpus = generate_synthetic(&profiles, &mix, n, rep_seed)?;
            let test = generate_synthetic(&profiles, &mix, test_flows, rep_seed ^ 0x7e57)?;
            let exp = ExperimentConfig {
                n,
                lambda,
                teacher_config: GbdtConfig {
                    n_rounds: rounds,
                    ..Default::default()
                },
                student_config: Default::default(),
                c_dpi,
                seed: rep_seed,
                keep_dpi_truth: false,
            };
            let hybrid = run_fphtc(&corpus, &exp, &test)?;
            if r == 0 {
                if let Some(path) = &args.tree_out {
                    fphtc::policy::save_tree(&hybrid.student_tree, path)?;
                }
            }
            for run in [hybrid, run_regular_baseline(&corpus, &exp, &test)?] {
                let rep = &run.report;
                writeln!(
                    csv,
                    "{},{},{:.6},{},{:.6},{},{},{},{:.3}",
                    rep.pipeline,
                    n,
                    lambda,
                    rep_seed,
                    rep.student_balanced_acc,
                    rep.teacher_balanced_acc
                        .map(|a| format!("{a:.6}"))
                        .unwrap_or_default(),
                    rep.rule_count,
                    rep.flows_labeled,
                    rep.dpi_cost
                )
                .unwrap();
                match rep.pipeline.as_str() {
                    "fphtc" => {
                        fphtc_accs.push(rep.student_balanced_acc);
                        teacher_accs.push(rep.teacher_balanced_acc.unwrap());
                    }
                    _ => base_accs.push(rep.student_balanced_acc),
                }
            }
        }
        let ci = if replicates > 1 {
            let (lo, hi) = confidence_interval(&fphtc_accs, 0.95)?;
            format!("{lo:.6},{hi:.6}")
        } else {
            ",".into()
        };
        writeln!(
            summary,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            n,
            lambda,
            median(&mut fphtc_accs),
            median(&mut base_accs),
            median(&mut teacher_accs),
            ci
        )
        .unwrap();
    }
    write_output(out.as_ref(), &csv)?;
    print!("{summary}");
    Ok(())
}

fn cmd_bounds(args: &BoundsArgs, cfg: &FileConfig) -> Result<(), Error> {
    let file = cfg.bounds.clone().unwrap_or_default();
    let p = BoundParams {
        n: args.n.or(file.n).unwrap_or(1000),
        lambda: 1.0, // per-row value below
        alpha: args.alpha.or(file.alpha).unwrap_or(0.5),
        cap_fl: args.cap_fl.or(file.cap_fl).unwrap_or(10.0),
        cap_rp: args.cap_rp.or(file.cap_rp).unwrap_or(1.0),
        eps_fl: args.eps_fl.or(file.eps_fl).unwrap_or(0.01),
        eps_rp: args.eps_rp.or(file.eps_rp).unwrap_or(0.01),
        eps_pk: args.eps_pk.or(file.eps_pk).unwrap_or(0.1),
        k_weight: args.k_weight.or(file.k_weight).unwrap_or(1.0),
        c_dpi: args.c_dpi.or(file.c_dpi).unwrap_or(0.001),
    };
    p.validate()?;
    let grid = args.grid.or(file.grid).unwrap_or(100);
    if grid == 0 {
        return Err(Error::InvalidArgument("--grid must be >= 1".into()));
    }
    let out = args.out.clone().or(file.out);

    let mut csv = String::from("lambda,teacher_bound,fphtc_bound,packet_bound,total_cost\n");
    for i in 1..=grid {
        let q = BoundParams {
            lambda: i as f64 / grid as f64,
            ..p
        };
        writeln!(
            csv,
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            q.lambda,
            teacher_bound(&q),
            fphtc_bound(&q),
            packet_bound(&q),
            total_cost(&q, q.lambda)
        )
        .unwrap();
    }
    write_output(out.as_ref(), &csv)?;
    let opt = optimal_lambda(&p);
    println!("optimal_lambda,{:.6},clamped,{}", opt.lambda, opt.clamped);
    Ok(())
}

fn cmd_online(args: &OnlineArgs, cfg: &FileConfig, seed: u64) -> Result<(), Error> {
    let file = cfg.online.clone().unwrap_or_default();
    let profiles = resolve_preset(args.preset.as_ref(), cfg)?;
    let slots = args.slots.or(file.slots).unwrap_or(30);
    let flows_per_slot = args.flows_per_slot.or(file.flows_per_slot).unwrap_or(400);
    let out = args.out.clone().or(file.out);

    let mut schedule = TrafficSchedule::default_preset(flows_per_slot);
    schedule.slots.truncate(slots);
    if schedule.slots.len() < slots {
        let last = schedule.slots.last().cloned().ok_or_else(|| {
            Error::InvalidArgument("--slots must be >= 1".into())
        })?;
        schedule.slots.resize(slots, last);
    }

    let mut online = OnlineConfig::with_profiles(profiles, seed);
    if let Some(v) = args.accuracy_threshold.or(file.accuracy_threshold) {
        online.accuracy_threshold = v;
    }
    if let Some(v) = args.saturation_threshold.or(file.saturation_threshold) {
        online.saturation_threshold = v;
    }
    if let Some(v) = args.dpi_flows_per_slot.or(file.dpi_flows_per_slot) {
        online.dpi_flows_per_slot = v;
    }
    if let Some(v) = args.teacher_labeled_flows.or(file.teacher_labeled_flows) {
        online.teacher_labeled_flows = v;
    }
    if let Some(v) = args.rounds.or(file.rounds) {
        online.teacher_config.n_rounds = v;
    }

    let metrics = run_simulation(&schedule, &online)?;
    write_output(out.as_ref(), &metrics_to_csv(&metrics))
}

fn cmd_export_policy(args: &ExportPolicyArgs) -> Result<(), Error> {
    let tree = load_tree(&args.tree)?;
    let policy = compile_rules(&tree);
    export_policy(&policy, &args.out)?;
    println!("rules,{}", policy.rules.len());
    Ok(())
}

fn cmd_classify(args: &ClassifyArgs) -> Result<(), Error> {
    let policy = import_policy(&args.policy)?;
    let capture = read_pcap(&args.pcap)?;
    let started = std::time::Instant::now();
    let mut lines = String::new();
    for p in &capture.packets {
        let f = packet_features(p);
        let rule = policy.lookup(&f).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no rule matches packet {}:{} -> {}:{}",
                p.src_ip, p.src_port, p.dst_ip, p.dst_port
            ))
        })?;
        writeln!(
            lines,
            "{},{},{},{} -> {}",
            f.src_ip_dec,
            f.dst_ip_dec,
            f.src_port,
            f.dst_port,
            rule.action.name()
        )
        .unwrap();
    }
    let elapsed = started.elapsed().as_secs_f64();
    write_output(args.out.as_ref(), &lines)?;
    if elapsed > 0.0 {
        eprintln!(
            "classified {} packets ({:.0} packets/s)",
            capture.packets.len(),
            capture.packets.len() as f64 / elapsed
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli.config.as_ref())?;
    let seed = resolve_seed(cli.seed, &cfg)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg, seed),
        Command::Distill(a) => cmd_distill(a, &cfg, seed),
        Command::Bounds(a) => cmd_bounds(a, &cfg),
        Command::Online(a) => cmd_online(a, &cfg, seed),
        Command::ExportPolicy(a) => cmd_export_policy(a),
        Command::Classify(a) => cmd_classify(a),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::EmptyClass(_) => 1,
        Error::PcapFormat(_)
        | Error::Manifest(_)
        | Error::ModelFormat(_)
        | Error::PolicyFormat { .. }
        | Error::Io(_) => 2,
        Error::MissingGroundTruth | Error::MissingLabel | Error::DimensionMismatch { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success; anything else is a usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
