//! Max-min SINR evaluation of relay subsets and the three selection
//! strategies built on it: exhaustive search over all nonempty subsets,
//! standard greedy removal of the poorest forwarding link, and best-drop
//! greedy removal that tries every leave-one-out subset per stage.
//!
//! Subset evaluation assumes error-free forwarding (selection runs once per
//! packet before any data flows) and re-normalizes the power split for every
//! candidate subset so larger sets never win on raw transmit power.

use crate::sysmodel::{
    effective_signature, power_normalize, Amplitudes, ChannelRealization, LinkChannel,
    SignatureMatrix, SystemConfig,
};
use crate::SimError;
use itertools::Itertools;
use num_complex::Complex64;

/// A candidate or selected set of relays, sorted ascending, with its max-min
/// SINR on linear scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaySubset {
    pub members: Vec<usize>,
    pub sinr: f64,
}

/// Per-user SINR of one subset evaluation.
#[derive(Debug, Clone)]
pub struct SinrReport {
    pub per_user: Vec<f64>,
    /// `min(per_user)`: the subset's figure of merit.
    pub min_value: f64,
    /// Subset evaluations consumed (always 1 for a single call; selection
    /// routines aggregate into [`SelectionResult::evaluations`]).
    pub evaluations: usize,
}

/// Outcome of a selection run, with the bookkeeping the dominance and
/// complexity checks need.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub subset: RelaySubset,
    /// Total subset-SINR evaluations performed.
    pub evaluations: usize,
    /// The strictly increasing sequence of accepted stage SINRs (greedy
    /// strategies), starting from the full set.
    pub accepted_sinrs: Vec<f64>,
}

/// Squared norm of a link's channel taps.
pub fn path_power(ch: &LinkChannel) -> f64 {
    ch.taps.iter().map(|t| t.norm_sqr()).sum()
}

/// Precomputed per-link effective signatures so that evaluating many subsets
/// of the same realization stays cheap. Links are used exactly as given
/// (amplitudes are applied per subset, so pass the raw realization).
pub struct SinrEvaluator {
    /// Per-user direct signature, length `M`.
    direct: Vec<Vec<Complex64>>,
    /// Per-relay, per-user forwarding signature, length `M`.
    relayed: Vec<Vec<Vec<Complex64>>>,
    window: usize,
}

impl SinrEvaluator {
    pub fn new(codes: &[SignatureMatrix], channels: &ChannelRealization) -> Self {
        assert_eq!(codes.len(), channels.users(), "code/channel user mismatch");
        let direct: Vec<Vec<Complex64>> = codes
            .iter()
            .zip(&channels.sd)
            .map(|(sig, link)| effective_signature(sig, &LinkChannel::new(link.taps.clone(), 1.0)))
            .collect();
        let relayed = channels
            .rd
            .iter()
            .map(|row| {
                codes
                    .iter()
                    .zip(row)
                    .map(|(sig, link)| {
                        effective_signature(sig, &LinkChannel::new(link.taps.clone(), 1.0))
                    })
                    .collect()
            })
            .collect();
        let window = codes[0].rows();
        Self {
            direct,
            relayed,
            window,
        }
    }

    fn users(&self) -> usize {
        self.direct.len()
    }

    /// Stacked signature of one user under a subset and power split: scaled
    /// direct part on top, scaled sum of the subset's forwarding parts below.
    fn stacked_signature(&self, user: usize, subset: &[usize], amps: &Amplitudes) -> Vec<Complex64> {
        let mut h = Vec::with_capacity(2 * self.window);
        h.extend(self.direct[user].iter().map(|&v| v * amps.source));
        let mut lower = vec![Complex64::new(0.0, 0.0); self.window];
        for &l in subset {
            let a = amps.relays[l];
            for (t, &v) in lower.iter_mut().zip(&self.relayed[l][user]) {
                *t += v * a;
            }
        }
        h.extend(lower);
        h
    }

    /// Per-user RAKE SINR of a subset: signal power through the full-bank
    /// Gram matrix over interference-plus-noise, minimized over users.
    pub fn evaluate(&self, subset: &[usize], amps: &Amplitudes, sigma2: f64) -> SinrReport {
        let k = self.users();
        let h: Vec<Vec<Complex64>> = (0..k)
            .map(|q| self.stacked_signature(q, subset, amps))
            .collect();
        // Gram matrix g[a][b] = h_a^H h_b.
        let mut gram = vec![vec![Complex64::new(0.0, 0.0); k]; k];
        for a in 0..k {
            for b in 0..k {
                gram[a][b] = h[a]
                    .iter()
                    .zip(&h[b])
                    .map(|(x, y)| x.conj() * y)
                    .sum();
            }
        }
        let total_energy: f64 = (0..k).map(|a| gram[a][a].re).sum();
        let per_user: Vec<f64> = (0..k)
            .map(|q| {
                let numerator: f64 = (0..k).map(|a| gram[a][q].norm_sqr()).sum();
                let interference = total_energy - gram[q][q].re;
                let noise = sigma2 * gram[q][q].re;
                numerator / (interference + noise)
            })
            .collect();
        let min_value = per_user.iter().copied().fold(f64::INFINITY, f64::min);
        SinrReport {
            per_user,
            min_value,
            evaluations: 1,
        }
    }
}

/// One-shot subset evaluation with the equal power split for that subset.
pub fn subset_sinr(
    subset: &[usize],
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    config: &SystemConfig,
    sigma2: f64,
) -> SinrReport {
    let amps = power_normalize(config, subset);
    SinrEvaluator::new(codes, channels).evaluate(subset, &amps, sigma2)
}

/// Upper bound on relay count for the exhaustive search.
const EXHAUSTIVE_MAX_RELAYS: usize = 20;

/// Evaluate all `2^L - 1` nonempty subsets and return the max-min SINR
/// optimum. Ties resolve to the smaller cardinality, then lexicographically.
pub fn select_exhaustive(
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    config: &SystemConfig,
    sigma2: f64,
) -> Result<SelectionResult, SimError> {
    let l = channels.relays();
    if l == 0 {
        return Err(SimError::InvalidConfig(
            "relay selection requires at least one relay".into(),
        ));
    }
    if l > EXHAUSTIVE_MAX_RELAYS {
        return Err(SimError::GuardExceeded(format!(
            "exhaustive selection supports at most {EXHAUSTIVE_MAX_RELAYS} relays, got {l}"
        )));
    }
    let evaluator = SinrEvaluator::new(codes, channels);
    let mut evaluations = 0usize;
    let mut best: Option<RelaySubset> = None;
    for cardinality in 1..=l {
        for subset in (0..l).combinations(cardinality) {
            let amps = power_normalize(config, &subset);
            let report = evaluator.evaluate(&subset, &amps, sigma2);
            evaluations += 1;
            let better = match &best {
                None => true,
                Some(b) => report.min_value > b.sinr,
            };
            if better {
                best = Some(RelaySubset {
                    members: subset,
                    sinr: report.min_value,
                });
            }
        }
    }
    let subset = best.expect("at least one subset evaluated");
    let sinr = subset.sinr;
    Ok(SelectionResult {
        subset,
        evaluations,
        accepted_sinrs: vec![sinr],
    })
}

/// Aggregate forwarding-link power of one relay across users.
fn relay_path_power(channels: &ChannelRealization, relay: usize) -> f64 {
    channels.rd[relay].iter().map(path_power).sum()
}

/// Standard greedy selection: start from the full set and keep removing the
/// relay with the weakest forwarding link while the max-min SINR improves.
pub fn select_standard_greedy(
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    config: &SystemConfig,
    sigma2: f64,
) -> Result<SelectionResult, SimError> {
    let l = channels.relays();
    if l == 0 {
        return Err(SimError::InvalidConfig(
            "relay selection requires at least one relay".into(),
        ));
    }
    let evaluator = SinrEvaluator::new(codes, channels);
    let mut current: Vec<usize> = (0..l).collect();
    let amps = power_normalize(config, &current);
    let mut sinr_pre = evaluator.evaluate(&current, &amps, sigma2).min_value;
    let mut evaluations = 1usize;
    let mut accepted = vec![sinr_pre];
    while current.len() > 1 {
        // Poorest remaining forwarding link; ties remove the smallest index.
        let victim = current
            .iter()
            .copied()
            .fold(None::<(f64, usize)>, |acc, relay| {
                let p = relay_path_power(channels, relay);
                match acc {
                    None => Some((p, relay)),
                    Some((bp, _)) if p < bp => Some((p, relay)),
                    other => other,
                }
            })
            .expect("nonempty set")
            .1;
        let candidate: Vec<usize> = current.iter().copied().filter(|&r| r != victim).collect();
        let amps = power_normalize(config, &candidate);
        let sinr_cur = evaluator.evaluate(&candidate, &amps, sigma2).min_value;
        evaluations += 1;
        if sinr_cur > sinr_pre {
            sinr_pre = sinr_cur;
            current = candidate;
            accepted.push(sinr_pre);
        } else {
            break;
        }
    }
    Ok(SelectionResult {
        subset: RelaySubset {
            members: current,
            sinr: sinr_pre,
        },
        evaluations,
        accepted_sinrs: accepted,
    })
}

/// Best-drop greedy selection: per stage, evaluate every leave-one-out subset
/// of the incumbent set, take the best, and accept it while it improves the
/// max-min SINR, stopping once a single relay remains. Ties drop the smallest
/// relay index.
pub fn select_proposed_greedy(
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    config: &SystemConfig,
    sigma2: f64,
) -> Result<SelectionResult, SimError> {
    let l = channels.relays();
    if l == 0 {
        return Err(SimError::InvalidConfig(
            "relay selection requires at least one relay".into(),
        ));
    }
    let evaluator = SinrEvaluator::new(codes, channels);
    let mut current: Vec<usize> = (0..l).collect();
    let amps = power_normalize(config, &current);
    let mut sinr_pre = evaluator.evaluate(&current, &amps, sigma2).min_value;
    let mut evaluations = 1usize;
    let mut accepted = vec![sinr_pre];
    while current.len() > 1 {
        let mut stage_best: Option<(f64, Vec<usize>)> = None;
        for &drop in &current {
            let candidate: Vec<usize> = current.iter().copied().filter(|&r| r != drop).collect();
            let amps = power_normalize(config, &candidate);
            let sinr = evaluator.evaluate(&candidate, &amps, sigma2).min_value;
            evaluations += 1;
            if stage_best.as_ref().map_or(true, |(best, _)| sinr > *best) {
                stage_best = Some((sinr, candidate));
            }
        }
        let (sinr_cur, omega_cur) = stage_best.expect("nonempty set");
        if sinr_cur > sinr_pre {
            sinr_pre = sinr_cur;
            current = omega_cur;
            accepted.push(sinr_pre);
        } else {
            break;
        }
    }
    Ok(SelectionResult {
        subset: RelaySubset {
            members: current,
            sinr: sinr_pre,
        },
        evaluations,
        accepted_sinrs: accepted,
    })
}
