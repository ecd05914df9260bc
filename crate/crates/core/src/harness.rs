//! Monte Carlo experiment engine: orchestrates packets, trials and
//! detector/selector combinations, accumulates exact bit-error counts and
//! selection statistics, and writes deterministic CSV.
//!
//! Reproducibility contract: every trial reseeds its own stream from the
//! master seed and the trial index through a fixed splitmix64-style mixer, so
//! results are a pure function of the experiment spec regardless of how many
//! workers run the trials. Sweep points share trial streams, which pairs
//! their channel, symbol and noise draws for low-variance comparisons.

use crate::detect::{Detector, DetectorContext, DetectorKind};
use crate::relaysel::{
    select_exhaustive, select_proposed_greedy, select_standard_greedy, subset_sinr,
};
use crate::sysmodel::{
    effective_signature, generate_channels, generate_codes, power_normalize, Constellation,
    SystemConfig,
};
use crate::txsim::{
    relay_process, snr_to_sigma2, stack_destination, stacked_effective_signature, synth_phase1,
    synth_phase2, SymbolFrame,
};
use crate::SimError;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Relay-set policy for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaySelector {
    /// Direct transmission only (non-cooperative).
    None,
    /// Every relay forwards; no selection.
    AllRelays,
    StandardGreedy,
    ProposedGreedy,
    Exhaustive,
}

impl std::fmt::Display for RelaySelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            RelaySelector::None => "none",
            RelaySelector::AllRelays => "all",
            RelaySelector::StandardGreedy => "standard",
            RelaySelector::ProposedGreedy => "proposed",
            RelaySelector::Exhaustive => "exhaustive",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for RelaySelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RelaySelector::None),
            "all" => Ok(RelaySelector::AllRelays),
            "standard" => Ok(RelaySelector::StandardGreedy),
            "proposed" => Ok(RelaySelector::ProposedGreedy),
            "exhaustive" => Ok(RelaySelector::Exhaustive),
            other => Err(format!(
                "unknown selector '{other}' (expected none, all, standard, proposed or exhaustive)"
            )),
        }
    }
}

/// The quantity an experiment sweeps.
#[derive(Debug, Clone)]
pub enum Sweep {
    SnrDb(Vec<f64>),
    Users(Vec<usize>),
}

/// A full experiment: scenario, sweep, detector and relay policy.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: SystemConfig,
    pub sweep: Sweep,
    pub detector: DetectorKind,
    pub selector: RelaySelector,
    pub cooperative: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.config.validate()?;
        if self.cooperative != (self.selector != RelaySelector::None) {
            return Err(SimError::InvalidConfig(
                "selector 'none' is exactly the non-cooperative mode: use cooperative \
                 experiments with all/standard/proposed/exhaustive"
                    .into(),
            ));
        }
        if self.cooperative && self.config.relays == 0 {
            return Err(SimError::InvalidConfig(
                "cooperative experiments need at least one relay".into(),
            ));
        }
        let max_users = match &self.sweep {
            Sweep::SnrDb(_) => self.config.users,
            Sweep::Users(list) => {
                for &k in list {
                    if k < self.config.group_size {
                        return Err(SimError::InvalidConfig(format!(
                            "swept user count {k} is below the group size {}",
                            self.config.group_size
                        )));
                    }
                }
                list.iter().copied().max().unwrap_or(self.config.users)
            }
        };
        if self.detector == DetectorKind::MlOracle {
            let bits = max_users as f64
                * (self.config.constellation().points().len() as f64).log2();
            if bits > 20.0 + 1e-9 {
                return Err(SimError::GuardExceeded(format!(
                    "mloracle requires K*log2(Nc) <= 20, got {bits:.1}"
                )));
            }
        }
        Ok(())
    }

    /// Sweep points in ascending order as (display value, per-point config).
    fn sweep_points(&self) -> Vec<(f64, SystemConfig)> {
        match &self.sweep {
            Sweep::SnrDb(values) => {
                let mut v = values.clone();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v.into_iter()
                    .map(|snr| {
                        let mut cfg = self.config.clone();
                        cfg.snr_db = snr;
                        (snr, cfg)
                    })
                    .collect()
            }
            Sweep::Users(values) => {
                let mut v = values.clone();
                v.sort_unstable();
                v.into_iter()
                    .map(|k| {
                        let mut cfg = self.config.clone();
                        cfg.users = k;
                        (k as f64, cfg)
                    })
                    .collect()
            }
        }
    }
}

/// One aggregated sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub detector: DetectorKind,
    pub selector: RelaySelector,
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub mean_set_size: f64,
    pub mean_minmax_sinr_db: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Raw counts from one packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub bit_errors: u64,
    pub bits: u64,
    pub set_size: usize,
    pub minmax_sinr_db: f64,
}

/// splitmix64 finalizer; the fixed integer mixer behind per-trial reseeding.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for one trial: `splitmix64(master ^ splitmix64(trial))`.
pub fn trial_seed(master_seed: u64, trial_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(trial_index))
}

/// Reserved stream tag for the experiment-wide code draw used when
/// `fixed_codes` is set.
const FIXED_CODES_STREAM: u64 = u64::MAX;

/// Exact bit errors between a transmitted and a decided symbol vector.
pub fn count_bit_errors(
    tx: &[Complex64],
    decided: &[Complex64],
    constellation: &Constellation,
) -> u64 {
    assert_eq!(tx.len(), decided.len(), "symbol vector length mismatch");
    tx.iter()
        .zip(decided)
        .map(|(&a, &b)| constellation.bit_errors_between(a, b) as u64)
        .sum()
}

/// Simulate one packet: draw codes and channels, select relays once, push
/// every symbol through both phases with decode-and-forward relays, detect at
/// the destination and count bit errors against the transmitted frame.
pub fn run_trial(
    spec: &ExperimentSpec,
    config: &SystemConfig,
    trial_index: usize,
) -> Result<TrialOutcome, SimError> {
    let constellation = config.constellation();
    let sigma2 = snr_to_sigma2(config.snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.master_seed, trial_index as u64));

    let codes = if config.fixed_codes {
        let mut code_rng =
            ChaCha8Rng::seed_from_u64(trial_seed(config.master_seed, FIXED_CODES_STREAM));
        generate_codes(config, &mut code_rng)
    } else {
        generate_codes(config, &mut rng)
    };
    let channels_raw = generate_channels(config, &mut rng);

    // Relay selection runs once per packet, before any data flows.
    let (active, minmax_sinr) = match spec.selector {
        RelaySelector::None => {
            let report = subset_sinr(&[], &codes, &channels_raw, config, sigma2);
            (Vec::new(), report.min_value)
        }
        RelaySelector::AllRelays => {
            let all: Vec<usize> = (0..config.relays).collect();
            let report = subset_sinr(&all, &codes, &channels_raw, config, sigma2);
            (all, report.min_value)
        }
        RelaySelector::StandardGreedy => {
            let result = select_standard_greedy(&codes, &channels_raw, config, sigma2)?;
            (result.subset.members, result.subset.sinr)
        }
        RelaySelector::ProposedGreedy => {
            let result = select_proposed_greedy(&codes, &channels_raw, config, sigma2)?;
            (result.subset.members, result.subset.sinr)
        }
        RelaySelector::Exhaustive => {
            let result = select_exhaustive(&codes, &channels_raw, config, sigma2)?;
            (result.subset.members, result.subset.sinr)
        }
    };
    let amps = power_normalize(config, &active);
    let channels = channels_raw.apply_amplitudes(&amps);

    // Destination context: stacked signatures when cooperating, direct ones
    // otherwise.
    let dest_eff: Vec<Vec<Complex64>> = if spec.cooperative {
        (0..config.users)
            .map(|k| stacked_effective_signature(k, &codes, &channels, &active))
            .collect()
    } else {
        (0..config.users)
            .map(|k| effective_signature(&codes[k], &channels.sd[k]))
            .collect()
    };
    let dest_ctx = DetectorContext::new(
        dest_eff,
        constellation.clone(),
        config.d_th,
        config.group_size,
        sigma2,
    );
    let dest_detector = Detector::new(spec.detector, &dest_ctx)?;

    // Active relays run the same detector family on their own links.
    let relay_ctxs: Vec<Option<DetectorContext>> = (0..config.relays)
        .map(|l| {
            if active.contains(&l) {
                let eff: Vec<Vec<Complex64>> = (0..config.users)
                    .map(|k| effective_signature(&codes[k], &channels.sr[l][k]))
                    .collect();
                Some(DetectorContext::new(
                    eff,
                    constellation.clone(),
                    config.d_th,
                    config.group_size,
                    sigma2,
                ))
            } else {
                None
            }
        })
        .collect();
    let relay_detectors: Vec<Option<Detector<'_>>> = relay_ctxs
        .iter()
        .map(|ctx| ctx.as_ref().map(|c| Detector::new(spec.detector, c)).transpose())
        .collect::<Result<_, _>>()?;

    let frame = SymbolFrame::random(config.users, config.packet_len, &constellation, &mut rng);
    let mut bit_errors = 0u64;
    for i in 0..config.packet_len {
        let tx = frame.at_instant(i);
        let (y_sd, y_sr) = synth_phase1(&codes, &channels, &tx, sigma2, &mut rng);
        let observation = if spec.cooperative {
            let decisions = relay_process(&y_sr, &relay_detectors, config.users, &constellation);
            let y_rd = synth_phase2(&codes, &channels, &decisions, &active, sigma2, &mut rng);
            stack_destination(&y_sd, &y_rd)
        } else {
            y_sd
        };
        let detected = dest_detector.detect(&observation);
        bit_errors += count_bit_errors(&tx, &detected.decisions, &constellation);
    }

    let bits =
        (config.packet_len * config.users) as u64 * u64::from(constellation.bits_per_symbol());
    Ok(TrialOutcome {
        bit_errors,
        bits,
        set_size: active.len(),
        minmax_sinr_db: 10.0 * minmax_sinr.log10(),
    })
}

fn sim_threads() -> Option<usize> {
    std::env::var("SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn with_worker_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R, SimError> {
    match sim_threads() {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SimError::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Run every sweep point of an experiment. Trials run in parallel but are
/// reduced in trial order, so the output is identical for any worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, SimError> {
    spec.validate()?;
    let points = spec.sweep_points();
    with_worker_pool(move || -> Result<Vec<ResultRow>, SimError> {
        let mut rows = Vec::with_capacity(points.len());
        for (sweep_value, config) in &points {
            let outcomes: Vec<TrialOutcome> = (0..config.trials)
                .into_par_iter()
                .map(|t| run_trial(spec, config, t))
                .collect::<Result<_, _>>()?;
            let mut bit_errors = 0u64;
            let mut bits = 0u64;
            let mut set_size_sum = 0.0;
            let mut sinr_db_sum = 0.0;
            for o in &outcomes {
                bit_errors += o.bit_errors;
                bits += o.bits;
                set_size_sum += o.set_size as f64;
                sinr_db_sum += o.minmax_sinr_db;
            }
            rows.push(ResultRow {
                sweep_value: *sweep_value,
                detector: spec.detector,
                selector: spec.selector,
                bit_errors,
                bits,
                ber: bit_errors as f64 / bits as f64,
                mean_set_size: set_size_sum / config.trials as f64,
                mean_minmax_sinr_db: sinr_db_sum / config.trials as f64,
                trials: config.trials,
                seed: config.master_seed,
            });
        }
        Ok(rows)
    })?
}

/// Decimal formatting with 10 significant digits, fixed notation.
pub fn format_sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (9 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

pub const CSV_HEADER: &str =
    "sweep,detector,selector,bit_errors,bits,ber,mean_set_size,mean_minmax_sinr_db,trials,seed";

pub fn write_csv_to<W: Write>(writer: &mut W, rows: &[ResultRow]) -> std::io::Result<()> {
    writeln!(writer, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{},{},{}",
            format_sig10(r.sweep_value),
            r.detector,
            r.selector,
            r.bit_errors,
            r.bits,
            format_sig10(r.ber),
            format_sig10(r.mean_set_size),
            format_sig10(r.mean_minmax_sinr_db),
            r.trials,
            r.seed,
        )?;
    }
    Ok(())
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), SimError> {
    let mut file = std::fs::File::create(path).map_err(|e| {
        SimError::Io(std::io::Error::new(
            e.kind(),
            format!("cannot write {}: {e}", path.display()),
        ))
    })?;
    write_csv_to(&mut file, rows)?;
    file.flush()?;
    Ok(())
}

/// Parse a CSV produced by [`write_csv`]; used by tests and downstream
/// tooling.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, SimError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(SimError::InvalidConfig(format!(
                "unexpected CSV header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(SimError::InvalidConfig(format!(
                "expected 10 CSV fields, got {}",
                fields.len()
            )));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| SimError::InvalidConfig(format!("bad float '{s}': {e}")))
        };
        rows.push(ResultRow {
            sweep_value: parse_f(fields[0])?,
            detector: fields[1]
                .parse()
                .map_err(SimError::InvalidConfig)?,
            selector: fields[2]
                .parse()
                .map_err(SimError::InvalidConfig)?,
            bit_errors: fields[3]
                .parse()
                .map_err(|e| SimError::InvalidConfig(format!("bad count: {e}")))?,
            bits: fields[4]
                .parse()
                .map_err(|e| SimError::InvalidConfig(format!("bad count: {e}")))?,
            ber: parse_f(fields[5])?,
            mean_set_size: parse_f(fields[6])?,
            mean_minmax_sinr_db: parse_f(fields[7])?,
            trials: fields[8]
                .parse()
                .map_err(|e| SimError::InvalidConfig(format!("bad count: {e}")))?,
            seed: fields[9]
                .parse()
                .map_err(|e| SimError::InvalidConfig(format!("bad seed: {e}")))?,
        });
    }
    Ok(rows)
}

/// Inclusive `start:step:stop` sweep expansion.
pub fn expand_range(start: f64, step: f64, stop: f64) -> Result<Vec<f64>, SimError> {
    if !(start.is_finite() && step.is_finite() && stop.is_finite()) {
        return Err(SimError::InvalidConfig("range bounds must be finite".into()));
    }
    if step <= 0.0 {
        return Err(SimError::InvalidConfig("range step must be positive".into()));
    }
    if stop < start {
        return Err(SimError::InvalidConfig("range stop is below its start".into()));
    }
    let mut values = Vec::new();
    let mut i = 0u32;
    loop {
        let v = start + step * f64::from(i);
        if v > stop + 1e-9 {
            break;
        }
        values.push(v);
        i += 1;
    }
    Ok(values)
}

/// The named experiment presets. Each expands to one spec per curve of the
/// corresponding figure-style study; callers may override trials, packet
/// length, seed or sweep afterwards.
pub fn preset_specs(name: &str) -> Option<Vec<ExperimentSpec>> {
    let snr_sweep = expand_range(0.0, 2.0, 16.0).expect("static range");
    match name {
        // Non-cooperative detector comparison on a loaded system.
        "fig3" => {
            let config = SystemConfig {
                users: 20,
                relays: 0,
                spreading: 32,
                ..SystemConfig::default()
            };
            Some(
                [
                    DetectorKind::Mmse,
                    DetectorKind::Sic,
                    DetectorKind::GlSic,
                    DetectorKind::MbGlSic,
                ]
                .into_iter()
                .map(|detector| ExperimentSpec {
                    config: config.clone(),
                    sweep: Sweep::SnrDb(snr_sweep.clone()),
                    detector,
                    selector: RelaySelector::None,
                    cooperative: false,
                })
                .collect(),
            )
        }
        // Relay-selection strategies under a fixed detector, BER vs SNR.
        "fig4a" => {
            let config = SystemConfig::default();
            Some(
                [
                    RelaySelector::AllRelays,
                    RelaySelector::StandardGreedy,
                    RelaySelector::ProposedGreedy,
                    RelaySelector::Exhaustive,
                ]
                .into_iter()
                .map(|selector| ExperimentSpec {
                    config: config.clone(),
                    sweep: Sweep::SnrDb(snr_sweep.clone()),
                    detector: DetectorKind::GlSic,
                    selector,
                    cooperative: true,
                })
                .collect(),
            )
        }
        // Relay-selection strategies, BER vs user count at 15 dB.
        "fig4b" => {
            let config = SystemConfig {
                snr_db: 15.0,
                ..SystemConfig::default()
            };
            Some(
                [
                    RelaySelector::AllRelays,
                    RelaySelector::StandardGreedy,
                    RelaySelector::ProposedGreedy,
                    RelaySelector::Exhaustive,
                ]
                .into_iter()
                .map(|selector| ExperimentSpec {
                    config: config.clone(),
                    sweep: Sweep::Users(vec![4, 6, 8, 10, 12, 14, 16]),
                    detector: DetectorKind::GlSic,
                    selector,
                    cooperative: true,
                })
                .collect(),
            )
        }
        // Detector comparison under the best-drop greedy selection.
        "fig5" => {
            let config = SystemConfig::default();
            Some(
                [
                    DetectorKind::Sic,
                    DetectorKind::Mmse,
                    DetectorKind::GlSic,
                    DetectorKind::MbGlSic,
                ]
                .into_iter()
                .map(|detector| ExperimentSpec {
                    config: config.clone(),
                    sweep: Sweep::SnrDb(snr_sweep.clone()),
                    detector,
                    selector: RelaySelector::ProposedGreedy,
                    cooperative: true,
                })
                .collect(),
            )
        }
        _ => None,
    }
}
