//! Command-line front-end: `run` for custom experiments, `preset` for the
//! canned figure-style studies and `selftest` for a fast built-in check of
//! the core machinery.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors. The
//! `SIM_THREADS` environment variable caps the Monte Carlo worker count
//! (0 or unset = automatic).

use crate::detect::{
    conventional_sic, gl_sic, ml_oracle, mmse_linear, DetectorContext, DetectorKind,
};
use crate::harness::{
    count_bit_errors, expand_range, format_sig10, preset_specs, run_experiment, write_csv,
    ExperimentSpec, RelaySelector, ResultRow, Sweep,
};
use crate::relaysel::{select_exhaustive, select_proposed_greedy, select_standard_greedy};
use crate::sysmodel::{
    generate_channels, generate_codes, Modulation, SystemConfig,
};
use crate::txsim::snr_to_sigma2;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "cdma-coop",
    version,
    about = "Link-level simulator for cooperative DS-CDMA uplinks: list-based SIC detection, \
             greedy relay selection and Monte Carlo BER/SINR sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a custom experiment and write its CSV.
    Run(RunArgs),
    /// Run a named preset study: fig3, fig4a, fig4b or fig5.
    Preset(PresetArgs),
    /// Run the fast built-in verification subset.
    Selftest,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Number of users K.
    #[arg(long, default_value_t = 10)]
    users: usize,
    /// Number of relays L.
    #[arg(long, default_value_t = 6)]
    relays: usize,
    /// Spreading gain N in chips.
    #[arg(long, default_value_t = 16)]
    spreading: usize,
    /// Multipath taps per link.
    #[arg(long, default_value_t = 3)]
    paths: usize,
    /// Modulation: bpsk or qpsk.
    #[arg(long, default_value = "bpsk")]
    modulation: Modulation,
    /// Reliability threshold (grey-band half-width).
    #[arg(long, default_value_t = 0.25, allow_hyphen_values = true)]
    dth: f64,
    /// Users examined jointly per list-SIC stage.
    #[arg(long, default_value_t = 2)]
    group: usize,
    /// Packet length in symbols.
    #[arg(long, default_value_t = 1000)]
    packet: usize,
    /// SNR sweep: comma list "0,4,8" or inclusive range "start:step:stop".
    #[arg(long, default_value = "0:2:16", allow_hyphen_values = true)]
    snr: String,
    /// Monte Carlo trials per sweep point.
    #[arg(long, default_value_t = 300)]
    trials: usize,
    /// Master seed for the reproducible trial streams.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Detector: rake, mmse, sic, glsic, mbglsic or mloracle.
    #[arg(long, default_value = "glsic")]
    detector: DetectorKind,
    /// Relay policy: none, all, standard, proposed or exhaustive.
    #[arg(long, default_value = "none")]
    selector: RelaySelector,
    /// Output CSV path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PresetArgs {
    /// Preset name: fig3, fig4a, fig4b or fig5.
    name: String,
    /// Override the user count of every spec in the preset.
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    relays: Option<usize>,
    #[arg(long)]
    spreading: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    modulation: Option<Modulation>,
    #[arg(long, allow_hyphen_values = true)]
    dth: Option<f64>,
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    packet: Option<usize>,
    /// Override the SNR sweep (or the fixed SNR of a user-count sweep).
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

/// Usage problems detected after clap parsing (range checks, malformed
/// sweeps, unknown presets).
#[derive(Debug)]
struct UsageError(String);

fn parse_snr_spec(spec: &str) -> Result<Vec<f64>, UsageError> {
    let parse_one = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| UsageError(format!("bad SNR value '{s}': {e}")))
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(UsageError(format!(
                "SNR range must be start:step:stop, got '{spec}'"
            )));
        }
        let start = parse_one(parts[0])?;
        let step = parse_one(parts[1])?;
        let stop = parse_one(parts[2])?;
        expand_range(start, step, stop).map_err(|e| UsageError(e.to_string()))
    } else {
        spec.split(',').map(parse_one).collect()
    }
}

fn check_run_args(args: &RunArgs) -> Result<(), UsageError> {
    if !(args.dth >= 0.0) {
        return Err(UsageError(format!(
            "--dth must be nonnegative, got {}",
            args.dth
        )));
    }
    Ok(())
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec, UsageError> {
    check_run_args(args)?;
    let snr_values = parse_snr_spec(&args.snr)?;
    let config = SystemConfig {
        users: args.users,
        relays: args.relays,
        spreading: args.spreading,
        paths: args.paths,
        modulation: args.modulation,
        d_th: args.dth,
        group_size: args.group,
        packet_len: args.packet,
        snr_db: snr_values.first().copied().unwrap_or(0.0),
        trials: args.trials,
        master_seed: args.seed,
        power_profile_db: default_profile(args.paths),
        fixed_codes: false,
    };
    let spec = ExperimentSpec {
        config,
        sweep: Sweep::SnrDb(snr_values),
        detector: args.detector,
        selector: args.selector,
        cooperative: args.selector != RelaySelector::None,
    };
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(spec)
}

/// Default relative tap powers: 3 dB decay per path, normalized profile of
/// the documented three-path scenario when `paths == 3`.
fn default_profile(paths: usize) -> Vec<f64> {
    (0..paths).map(|p| -3.0 * p as f64).collect()
}

/// Canonical flag serialization of a run invocation; `parse(format(parse))`
/// is stable.
#[cfg(test)]
fn format_run_flags(args: &RunArgs) -> Vec<String> {
    let snr = match parse_snr_spec(&args.snr) {
        Ok(values) => values
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(","),
        Err(_) => args.snr.clone(),
    };
    vec![
        "run".into(),
        "--users".into(),
        args.users.to_string(),
        "--relays".into(),
        args.relays.to_string(),
        "--spreading".into(),
        args.spreading.to_string(),
        "--paths".into(),
        args.paths.to_string(),
        "--modulation".into(),
        args.modulation.to_string(),
        "--dth".into(),
        args.dth.to_string(),
        "--group".into(),
        args.group.to_string(),
        "--packet".into(),
        args.packet.to_string(),
        "--snr".into(),
        snr,
        "--trials".into(),
        args.trials.to_string(),
        "--seed".into(),
        args.seed.to_string(),
        "--detector".into(),
        args.detector.to_string(),
        "--selector".into(),
        args.selector.to_string(),
        "--out".into(),
        args.out.display().to_string(),
    ]
}

fn apply_preset_overrides(
    specs: &mut [ExperimentSpec],
    args: &PresetArgs,
) -> Result<(), UsageError> {
    if let Some(dth) = args.dth {
        if !(dth >= 0.0) {
            return Err(UsageError(format!("--dth must be nonnegative, got {dth}")));
        }
    }
    let snr_values = args.snr.as_deref().map(parse_snr_spec).transpose()?;
    for spec in specs.iter_mut() {
        let cfg = &mut spec.config;
        if let Some(v) = args.users {
            cfg.users = v;
        }
        if let Some(v) = args.relays {
            cfg.relays = v;
        }
        if let Some(v) = args.spreading {
            cfg.spreading = v;
        }
        if let Some(v) = args.paths {
            cfg.paths = v;
            cfg.power_profile_db = default_profile(v);
        }
        if let Some(v) = args.modulation {
            cfg.modulation = v;
        }
        if let Some(v) = args.dth {
            cfg.d_th = v;
        }
        if let Some(v) = args.group {
            cfg.group_size = v;
        }
        if let Some(v) = args.packet {
            cfg.packet_len = v;
        }
        if let Some(v) = args.trials {
            cfg.trials = v;
        }
        if let Some(v) = args.seed {
            cfg.master_seed = v;
        }
        if let Some(values) = &snr_values {
            match &mut spec.sweep {
                Sweep::SnrDb(sweep) => *sweep = values.clone(),
                Sweep::Users(_) => {
                    if values.len() != 1 {
                        return Err(UsageError(
                            "this preset sweeps the user count; --snr must be a single value"
                                .into(),
                        ));
                    }
                    cfg.snr_db = values[0];
                }
            }
        }
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
    }
    Ok(())
}

fn print_summary(rows: &[ResultRow]) {
    for row in rows {
        println!(
            "sweep={} detector={} selector={} ber={} errors={} bits={} mean_set_size={} mean_minmax_sinr_db={}",
            format_sig10(row.sweep_value),
            row.detector,
            row.selector,
            format_sig10(row.ber),
            row.bit_errors,
            row.bits,
            format_sig10(row.mean_set_size),
            format_sig10(row.mean_minmax_sinr_db),
        );
    }
}

fn run_specs_and_write(specs: &[ExperimentSpec], out: &PathBuf) -> Result<(), crate::SimError> {
    let mut rows = Vec::new();
    for spec in specs {
        rows.extend(run_experiment(spec)?);
    }
    write_csv(&rows, out)?;
    print_summary(&rows);
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

/// Entry point used by `main`; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => {
            let spec = match build_spec(&args) {
                Ok(spec) => spec,
                Err(UsageError(msg)) => {
                    eprintln!("error: {msg}");
                    return 2;
                }
            };
            match run_specs_and_write(std::slice::from_ref(&spec), &args.out) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Command::Preset(args) => {
            let mut specs = match preset_specs(&args.name) {
                Some(specs) => specs,
                None => {
                    eprintln!(
                        "error: unknown preset '{}' (expected fig3, fig4a, fig4b or fig5)",
                        args.name
                    );
                    return 2;
                }
            };
            if let Err(UsageError(msg)) = apply_preset_overrides(&mut specs, &args) {
                eprintln!("error: {msg}");
                return 2;
            }
            match run_specs_and_write(&specs, &args.out) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Command::Selftest => match selftest() {
            Ok(()) => {
                println!("selftest: all checks passed");
                0
            }
            Err(msg) => {
                eprintln!("selftest: FAIL: {msg}");
                1
            }
        },
    }
}

// --- selftest -------------------------------------------------------------

type CheckResult = Result<(), String>;

fn check(name: &str, result: CheckResult) -> CheckResult {
    match result {
        Ok(()) => {
            println!("selftest {name}: PASS");
            Ok(())
        }
        Err(msg) => Err(format!("{name}: {msg}")),
    }
}

/// Fast subset of the acceptance checks: noiseless exactness, the
/// reliable-path reduction, branch enumeration counts, selection dominance
/// and the CSV formatting contract.
pub fn selftest() -> CheckResult {
    check("noiseless exactness", selftest_noiseless())?;
    check("reliable-path reduction", selftest_reliable_path())?;
    check("branch enumeration", selftest_branch_counts())?;
    check("relay selection dominance", selftest_selection())?;
    check("csv formatting", selftest_csv())?;
    Ok(())
}

fn selftest_config(users: usize, relays: usize, spreading: usize, paths: usize) -> SystemConfig {
    SystemConfig {
        users,
        relays,
        spreading,
        paths,
        power_profile_db: default_profile(paths),
        ..SystemConfig::default()
    }
}

fn random_instance(
    config: &SystemConfig,
    seed: u64,
) -> (
    Vec<crate::sysmodel::SignatureMatrix>,
    crate::sysmodel::ChannelRealization,
) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let codes = generate_codes(config, &mut rng);
    let channels = generate_channels(config, &mut rng);
    (codes, channels)
}

fn direct_context(
    config: &SystemConfig,
    codes: &[crate::sysmodel::SignatureMatrix],
    channels: &crate::sysmodel::ChannelRealization,
    d_th: f64,
    group: usize,
    sigma2: f64,
) -> DetectorContext {
    let eff: Vec<Vec<num_complex::Complex64>> = (0..config.users)
        .map(|k| crate::sysmodel::effective_signature(&codes[k], &channels.sd[k]))
        .collect();
    DetectorContext::new(eff, config.constellation(), d_th, group, sigma2)
}

fn random_symbols(
    config: &SystemConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<num_complex::Complex64> {
    let constellation = config.constellation();
    (0..config.users)
        .map(|_| constellation.random_point(rng))
        .collect()
}

fn noiseless_observation(
    ctx: &DetectorContext,
    symbols: &[num_complex::Complex64],
) -> Vec<num_complex::Complex64> {
    let mut y = vec![num_complex::Complex64::new(0.0, 0.0); ctx.obs_len()];
    for (k, &b) in symbols.iter().enumerate() {
        for (yi, &si) in y.iter_mut().zip(ctx.eff(k)) {
            *yi += si * b;
        }
    }
    y
}

fn selftest_noiseless() -> CheckResult {
    use rand::SeedableRng;
    let config = SystemConfig {
        paths: 1,
        power_profile_db: vec![0.0],
        ..selftest_config(4, 0, 8, 1)
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(101);
    let (codes, channels) = random_instance(&config, 11);
    let ctx = direct_context(&config, &codes, &channels, config.d_th, 2, 0.0);
    // Tiny ridge keeps the MMSE covariance invertible while the data stays
    // noiseless.
    let ridge_ctx = direct_context(&config, &codes, &channels, config.d_th, 2, 1e-12);
    // Plain SIC (like the RAKE bank) has no noiseless exactness guarantee on
    // unrestricted random codes, so the check covers the list detectors, the
    // oracle and ridge-regularized MMSE.
    for _ in 0..500 {
        let tx = random_symbols(&config, &mut rng);
        let y = noiseless_observation(&ctx, &tx);
        let outputs = [
            gl_sic(&y, &ctx, None).decisions,
            crate::detect::mb_gl_sic(&y, &ctx).decisions,
            ml_oracle(&y, &ctx).map_err(|e| e.to_string())?.decisions,
            mmse_linear(&y, &ridge_ctx).map_err(|e| e.to_string())?.decisions,
        ];
        for decisions in outputs {
            if count_bit_errors(&tx, &decisions, &config.constellation()) != 0 {
                return Err("noiseless detection produced bit errors".into());
            }
        }
    }
    Ok(())
}

fn selftest_reliable_path() -> CheckResult {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let config = selftest_config(5, 0, 16, 3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(202);
    let sigma2 = snr_to_sigma2(8.0);
    for i in 0..200 {
        let (codes, channels) = random_instance(&config, 5000 + i);
        // Zero threshold forces every verdict reliable; single-user stages
        // make the reduction to conventional SIC exact.
        let ctx = direct_context(&config, &codes, &channels, 0.0, 1, sigma2);
        let tx = random_symbols(&config, &mut rng);
        let mut y = noiseless_observation(&ctx, &tx);
        let s = (sigma2 / 2.0).sqrt();
        for v in y.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += num_complex::Complex64::new(s * re, s * im);
        }
        let a = gl_sic(&y, &ctx, None);
        let b = conventional_sic(&y, &ctx);
        if a.decisions != b.decisions || a.ordering != b.ordering {
            return Err(format!("divergence on frame {i}"));
        }
    }
    Ok(())
}

fn selftest_branch_counts() -> CheckResult {
    use num_complex::Complex64;
    let c = |re: f64| Complex64::new(re, 0.0);
    let eff = vec![
        vec![c(0.5), c(0.5), c(0.5), c(0.5)],
        vec![c(0.5), c(-0.5), c(0.5), c(-0.5)],
    ];
    let ctx = DetectorContext::new(
        eff.clone(),
        crate::sysmodel::Constellation::new(Modulation::Bpsk),
        0.25,
        2,
        0.0,
    );
    let observe = |a: f64, b: f64| {
        let mut y = vec![Complex64::new(0.0, 0.0); 4];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = eff[0][i] * a + eff[1][i] * b;
        }
        y
    };
    let cases = [
        (0.05, 0.10, 4usize),
        (1.0, 0.10, 2),
        (1.0, -1.0, 1),
    ];
    for (a, b, expected) in cases {
        let out = gl_sic(&observe(a, b), &ctx, None);
        if out.lists_examined != expected {
            return Err(format!(
                "soft pair ({a}, {b}) examined {} lists, expected {expected}",
                out.lists_examined
            ));
        }
    }
    Ok(())
}

fn selftest_selection() -> CheckResult {
    let config = selftest_config(4, 5, 16, 3);
    let sigma2 = snr_to_sigma2(15.0);
    for seed in 0..50u64 {
        let (codes, channels) = random_instance(&config, 7000 + seed);
        let ex = select_exhaustive(&codes, &channels, &config, sigma2).map_err(|e| e.to_string())?;
        let sg =
            select_standard_greedy(&codes, &channels, &config, sigma2).map_err(|e| e.to_string())?;
        let pg =
            select_proposed_greedy(&codes, &channels, &config, sigma2).map_err(|e| e.to_string())?;
        if ex.evaluations != 31 {
            return Err(format!("exhaustive evaluations {} != 31", ex.evaluations));
        }
        if sg.evaluations > 5 || pg.evaluations > 15 {
            return Err("greedy evaluation bounds exceeded".into());
        }
        if sg.subset.sinr > ex.subset.sinr + 1e-12 || pg.subset.sinr > ex.subset.sinr + 1e-12 {
            return Err("greedy SINR exceeded the exhaustive optimum".into());
        }
        for seq in [&sg.accepted_sinrs, &pg.accepted_sinrs] {
            if seq.windows(2).any(|w| w[1] <= w[0]) {
                return Err("accepted SINR sequence not strictly increasing".into());
            }
        }
    }
    Ok(())
}

fn selftest_csv() -> CheckResult {
    if format_sig10(3.0 / 1000.0) != "0.003000000000" {
        return Err("10-significant-digit formatting violated".into());
    }
    let rows = vec![ResultRow {
        sweep_value: 4.0,
        detector: DetectorKind::GlSic,
        selector: RelaySelector::ProposedGreedy,
        bit_errors: 3,
        bits: 1000,
        ber: 0.003,
        mean_set_size: 4.5,
        mean_minmax_sinr_db: 3.25,
        trials: 5,
        seed: 9,
    }];
    let mut out = Vec::new();
    crate::harness::write_csv_to(&mut out, &rows).map_err(|e| e.to_string())?;
    let text = String::from_utf8(out).map_err(|e| e.to_string())?;
    let parsed = crate::harness::parse_csv(&text).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    crate::harness::write_csv_to(&mut again, &parsed).map_err(|e| e.to_string())?;
    if text.as_bytes() != again.as_slice() {
        return Err("CSV round trip is not byte-stable".into());
    }
    Ok(())
}
