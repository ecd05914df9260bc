//! Synthesis of the two-phase cooperative transmission: the direct and
//! source->relay signals of phase one, decode-and-forward processing at the
//! relays, the relay->destination superposition of phase two, and the stacked
//! destination observation the detectors consume.
//!
//! Everything here is a pure function of its inputs and the provided noise
//! stream, so trials parallelize without shared state.

use crate::detect::Detector;
use crate::sysmodel::{
    effective_signature, ChannelRealization, Constellation, LinkChannel, SignatureMatrix,
};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// One packet of transmitted symbols, `users x packet_len`.
#[derive(Debug, Clone)]
pub struct SymbolFrame {
    symbols: Vec<Vec<Complex64>>,
}

impl SymbolFrame {
    /// Draw a uniform random frame, symbol-instant major so the stream layout
    /// is independent of how the frame is consumed.
    pub fn random<R: Rng + ?Sized>(
        users: usize,
        packet_len: usize,
        constellation: &Constellation,
        rng: &mut R,
    ) -> Self {
        let mut symbols = vec![vec![Complex64::new(0.0, 0.0); packet_len]; users];
        for i in 0..packet_len {
            for row in symbols.iter_mut() {
                row[i] = constellation.random_point(rng);
            }
        }
        Self { symbols }
    }

    pub fn from_rows(symbols: Vec<Vec<Complex64>>) -> Self {
        assert!(!symbols.is_empty());
        let p = symbols[0].len();
        assert!(symbols.iter().all(|r| r.len() == p), "ragged symbol frame");
        Self { symbols }
    }

    pub fn users(&self) -> usize {
        self.symbols.len()
    }

    pub fn packet_len(&self) -> usize {
        self.symbols[0].len()
    }

    pub fn symbol(&self, user: usize, instant: usize) -> Complex64 {
        self.symbols[user][instant]
    }

    /// All users' symbols at one instant.
    pub fn at_instant(&self, instant: usize) -> Vec<Complex64> {
        self.symbols.iter().map(|row| row[instant]).collect()
    }
}

/// Hard decisions produced by the relays for one symbol instant, indexed
/// `[relay][user]`. Decisions are forwarded whether or not they are correct.
#[derive(Debug, Clone)]
pub struct RelayDecisions {
    pub decided: Vec<Vec<Complex64>>,
}

/// Received windows for one symbol instant.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    /// Direct-phase window at the destination, length `M`.
    pub y_sd: Vec<Complex64>,
    /// Phase-one window at each relay, `L x M`.
    pub y_sr: Vec<Vec<Complex64>>,
    /// Relay-phase superposition at the destination, length `M`.
    pub y_rd: Vec<Complex64>,
    /// Both destination windows stacked, length `2M`.
    pub y_stacked: Vec<Complex64>,
    pub noise_variance: f64,
}

impl ReceivedFrame {
    /// Bundle the windows of one instant; the stacked vector is always the
    /// exact concatenation of the two destination windows.
    pub fn assemble(
        y_sd: Vec<Complex64>,
        y_sr: Vec<Vec<Complex64>>,
        y_rd: Vec<Complex64>,
        noise_variance: f64,
    ) -> Self {
        let y_stacked = stack_destination(&y_sd, &y_rd);
        Self {
            y_sd,
            y_sr,
            y_rd,
            y_stacked,
            noise_variance,
        }
    }
}

/// Circular complex Gaussian noise with total variance `sigma2` per sample.
fn add_noise<R: Rng + ?Sized>(y: &mut [Complex64], sigma2: f64, rng: &mut R) {
    if sigma2 == 0.0 {
        return;
    }
    let s = (sigma2 / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(s * re, s * im);
    }
}

fn superimpose(
    target: &mut [Complex64],
    codes: &[SignatureMatrix],
    links: &[LinkChannel],
    symbols: &[Complex64],
) {
    for ((sig, link), &b) in codes.iter().zip(links).zip(symbols) {
        if link.amplitude == 0.0 {
            continue;
        }
        let eff = effective_signature(sig, link);
        for (t, &e) in target.iter_mut().zip(&eff) {
            *t += e * b;
        }
    }
}

/// Phase one: every source transmits once; the destination and each relay
/// receive it through their own links with independent noise.
pub fn synth_phase1<R: Rng + ?Sized>(
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    symbols: &[Complex64],
    sigma2: f64,
    rng: &mut R,
) -> (Vec<Complex64>, Vec<Vec<Complex64>>) {
    assert_eq!(codes.len(), channels.users(), "code/channel user mismatch");
    assert_eq!(codes.len(), symbols.len(), "code/symbol user mismatch");
    let m = codes[0].rows();
    let mut y_sd = vec![Complex64::new(0.0, 0.0); m];
    superimpose(&mut y_sd, codes, &channels.sd, symbols);
    add_noise(&mut y_sd, sigma2, rng);

    let mut y_sr = Vec::with_capacity(channels.relays());
    for links in &channels.sr {
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        superimpose(&mut y, codes, links, symbols);
        add_noise(&mut y, sigma2, rng);
        y_sr.push(y);
    }
    (y_sd, y_sr)
}

/// Decode-and-forward processing: each active relay runs its detector on its
/// phase-one window and stores hard decisions. Inactive relays (handle
/// `None`) get placeholder points that phase two never transmits.
pub fn relay_process(
    y_sr: &[Vec<Complex64>],
    detectors: &[Option<Detector<'_>>],
    users: usize,
    constellation: &Constellation,
) -> RelayDecisions {
    assert_eq!(y_sr.len(), detectors.len(), "relay window/detector mismatch");
    let placeholder = constellation.points()[0];
    let decided = y_sr
        .iter()
        .zip(detectors)
        .map(|(y, det)| match det {
            Some(det) => det.detect(y).decisions,
            None => vec![placeholder; users],
        })
        .collect();
    RelayDecisions { decided }
}

/// Phase two: the active relays re-spread and forward their decisions; the
/// destination receives the superposition plus fresh noise. An empty active
/// set yields noise only.
pub fn synth_phase2<R: Rng + ?Sized>(
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    decisions: &RelayDecisions,
    active_relays: &[usize],
    sigma2: f64,
    rng: &mut R,
) -> Vec<Complex64> {
    let m = codes[0].rows();
    let mut y_rd = vec![Complex64::new(0.0, 0.0); m];
    for &l in active_relays {
        superimpose(&mut y_rd, codes, &channels.rd[l], &decisions.decided[l]);
    }
    add_noise(&mut y_rd, sigma2, rng);
    y_rd
}

/// Stack the two destination windows into the joint observation.
pub fn stack_destination(y_sd: &[Complex64], y_rd: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(y_sd.len(), y_rd.len(), "phase windows differ in length");
    let mut y = Vec::with_capacity(2 * y_sd.len());
    y.extend_from_slice(y_sd);
    y.extend_from_slice(y_rd);
    y
}

/// Stacked effective signature of one user at the destination: the direct
/// link in the upper rows, the sum of the active relays' forwarding links in
/// the lower rows. This is the matched-filter column the destination
/// detectors use (relays assumed to forward the transmitted symbol).
pub fn stacked_effective_signature(
    user: usize,
    codes: &[SignatureMatrix],
    channels: &ChannelRealization,
    active_relays: &[usize],
) -> Vec<Complex64> {
    let m = codes[0].rows();
    let direct = effective_signature(&codes[user], &channels.sd[user]);
    let mut relay_part = vec![Complex64::new(0.0, 0.0); m];
    for &l in active_relays {
        let eff = effective_signature(&codes[user], &channels.rd[l][user]);
        for (t, &e) in relay_part.iter_mut().zip(&eff) {
            *t += e;
        }
    }
    stack_destination(&direct, &relay_part)
}

/// Noise variance for a per-user receive SNR in dB: with unit-energy codes,
/// unit-power channels and a unit per-user power split, `sigma^2 =
/// 10^(-snr/10)`.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    assert!(snr_db.is_finite(), "SNR must be finite");
    10f64.powf(-snr_db / 10.0)
}
