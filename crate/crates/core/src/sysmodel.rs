//! Scenario configuration, spreading codes, channel realizations and the
//! effective-signature constructions shared by every other module.
//!
//! All types here are immutable after construction and safe to share across
//! concurrent trial workers; random generation always takes an explicit
//! caller-owned stream.

use crate::SimError;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

/// Symbol constellation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> u32 {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modulation::Bpsk => write!(f, "bpsk"),
            Modulation::Qpsk => write!(f, "qpsk"),
        }
    }
}

impl std::str::FromStr for Modulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            other => Err(format!("unknown modulation '{other}' (expected bpsk or qpsk)")),
        }
    }
}

/// Unit-energy constellation with its canonical point order.
///
/// The canonical order doubles as the slicer tie-break: the point with the
/// smallest index wins when distances are equal.
#[derive(Debug, Clone)]
pub struct Constellation {
    modulation: Modulation,
    points: Vec<Complex64>,
    min_distance: f64,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let (points, min_distance) = match modulation {
            Modulation::Bpsk => (
                vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                2.0,
            ),
            Modulation::Qpsk => (
                vec![
                    Complex64::new(inv_sqrt2, inv_sqrt2),
                    Complex64::new(inv_sqrt2, -inv_sqrt2),
                    Complex64::new(-inv_sqrt2, inv_sqrt2),
                    Complex64::new(-inv_sqrt2, -inv_sqrt2),
                ],
                2.0 * inv_sqrt2,
            ),
        };
        Self {
            modulation,
            points,
            min_distance,
        }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Distance between the two nearest constellation points.
    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.modulation.bits_per_symbol()
    }

    /// Draw one constellation point uniformly at random.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        self.points[rng.gen_range(0..self.points.len())]
    }

    /// Number of bit positions that differ between two (Gray-labelled)
    /// constellation points. Points are labelled by the signs of their real
    /// and imaginary parts, so adjacent points differ in exactly one bit.
    pub fn bit_errors_between(&self, a: Complex64, b: Complex64) -> u32 {
        match self.modulation {
            Modulation::Bpsk => u32::from(a.re.signum() != b.re.signum()),
            Modulation::Qpsk => {
                u32::from(a.re.signum() != b.re.signum())
                    + u32::from(a.im.signum() != b.im.signum())
            }
        }
    }
}

/// Full scenario description. All other modules derive their dimensions from
/// this; the chip window `M = N + L_p - 1` is always computed, never stored.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    /// Number of users K.
    pub users: usize,
    /// Number of relays L (0 for a non-cooperative system).
    pub relays: usize,
    /// Spreading gain N in chips per symbol.
    pub spreading: usize,
    /// Multipath taps L_p per link (1 <= L_p < N).
    pub paths: usize,
    pub modulation: Modulation,
    /// Reliability threshold: half-width of the grey band around each
    /// decision boundary, in constellation units.
    pub d_th: f64,
    /// Users examined jointly per list-SIC stage.
    pub group_size: usize,
    /// Packet length P in symbols.
    pub packet_len: usize,
    /// Per-user SNR in dB.
    pub snr_db: f64,
    /// Monte Carlo trials (one packet per trial).
    pub trials: usize,
    pub master_seed: u64,
    /// Relative tap powers in dB, one entry per path.
    pub power_profile_db: Vec<f64>,
    /// Keep one spreading-code draw for the whole experiment instead of
    /// redrawing codes every trial.
    pub fixed_codes: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            users: 10,
            relays: 6,
            spreading: 16,
            paths: 3,
            modulation: Modulation::Bpsk,
            d_th: 0.25,
            group_size: 2,
            packet_len: 1000,
            snr_db: 15.0,
            trials: 300,
            master_seed: 1,
            power_profile_db: vec![0.0, -3.0, -6.0],
            fixed_codes: false,
        }
    }
}

impl SystemConfig {
    /// Chip window per symbol: M = N + L_p - 1.
    pub fn window_len(&self) -> usize {
        self.spreading + self.paths - 1
    }

    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.modulation)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.users == 0 {
            return fail("user count must be >= 1".into());
        }
        if self.spreading < 2 {
            return fail("spreading gain must be >= 2".into());
        }
        if self.paths == 0 || self.paths >= self.spreading {
            return fail(format!(
                "path count must satisfy 1 <= L_p < N (got L_p={}, N={})",
                self.paths, self.spreading
            ));
        }
        if !(self.d_th >= 0.0) {
            return fail(format!("reliability threshold must be >= 0 (got {})", self.d_th));
        }
        if self.group_size == 0 || self.group_size > self.users {
            return fail(format!(
                "group size must satisfy 1 <= n <= K (got n={}, K={})",
                self.group_size, self.users
            ));
        }
        if self.packet_len == 0 {
            return fail("packet length must be >= 1".into());
        }
        if self.trials == 0 {
            return fail("trial count must be >= 1".into());
        }
        if !self.snr_db.is_finite() {
            return fail(format!("SNR must be finite (got {})", self.snr_db));
        }
        if self.power_profile_db.len() != self.paths {
            return fail(format!(
                "power profile must have exactly L_p={} entries (got {})",
                self.paths,
                self.power_profile_db.len()
            ));
        }
        Ok(())
    }
}

/// One user's spreading code together with its shifted-column matrix.
///
/// Column `c` holds the code shifted down by `c` chips, zero-padded, so the
/// matrix has `M = N + L_p - 1` rows and `L_p` columns and every column has
/// unit energy.
#[derive(Debug, Clone)]
pub struct SignatureMatrix {
    code: Vec<f64>,
    paths: usize,
}

impl SignatureMatrix {
    pub fn from_code(code: Vec<f64>, paths: usize) -> Self {
        assert!(paths >= 1 && paths < code.len(), "need 1 <= L_p < N");
        Self { code, paths }
    }

    /// Chip sequence, entries in +/-1/sqrt(N).
    pub fn code(&self) -> &[f64] {
        &self.code
    }

    pub fn rows(&self) -> usize {
        self.code.len() + self.paths - 1
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Matrix entry at (row, col): `code[row - col]` inside the shifted band,
    /// zero outside.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows() && col < self.paths, "signature index out of range");
        if row >= col && row - col < self.code.len() {
            self.code[row - col]
        } else {
            0.0
        }
    }
}

/// One propagation link: multipath taps plus the transmit amplitude applied
/// on top of them.
#[derive(Debug, Clone)]
pub struct LinkChannel {
    pub taps: Vec<Complex64>,
    pub amplitude: f64,
}

impl LinkChannel {
    pub fn new(taps: Vec<Complex64>, amplitude: f64) -> Self {
        assert!(amplitude >= 0.0, "amplitude must be nonnegative");
        Self { taps, amplitude }
    }
}

/// Per-packet channel state for every link of the two-phase system.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Source -> destination, one per user.
    pub sd: Vec<LinkChannel>,
    /// Source -> relay, indexed `[relay][user]`.
    pub sr: Vec<Vec<LinkChannel>>,
    /// Relay -> destination, indexed `[relay][user]`.
    pub rd: Vec<Vec<LinkChannel>>,
}

impl ChannelRealization {
    pub fn users(&self) -> usize {
        self.sd.len()
    }

    pub fn relays(&self) -> usize {
        self.sr.len()
    }

    /// Copy of this realization with the given power split applied. The
    /// split normalizes what arrives at the destination: the direct link
    /// carries the source amplitude and each forwarding link its relay's
    /// amplitude. Source->relay links are outside the normalized set and
    /// keep unit amplitude.
    pub fn apply_amplitudes(&self, amps: &Amplitudes) -> ChannelRealization {
        assert_eq!(amps.relays.len(), self.relays(), "amplitude/relay count mismatch");
        let sd = self
            .sd
            .iter()
            .map(|ch| LinkChannel::new(ch.taps.clone(), amps.source))
            .collect();
        let sr = self
            .sr
            .iter()
            .map(|row| {
                row.iter()
                    .map(|ch| LinkChannel::new(ch.taps.clone(), 1.0))
                    .collect()
            })
            .collect();
        let rd = self
            .rd
            .iter()
            .enumerate()
            .map(|(l, row)| {
                row.iter()
                    .map(|ch| LinkChannel::new(ch.taps.clone(), amps.relays[l]))
                    .collect()
            })
            .collect();
        ChannelRealization { sd, sr, rd }
    }
}

/// Equal power split across the source and the active relays.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplitudes {
    pub source: f64,
    /// Per-relay forwarding amplitude; zero for inactive relays.
    pub relays: Vec<f64>,
}

/// Draw K random antipodal spreading codes with chips in +/-1/sqrt(N) and
/// build their shifted signature matrices.
pub fn generate_codes<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Vec<SignatureMatrix> {
    assert!(config.spreading >= 2, "spreading gain must be >= 2");
    let scale = 1.0 / (config.spreading as f64).sqrt();
    (0..config.users)
        .map(|_| {
            let code = (0..config.spreading)
                .map(|_| if rng.gen_bool(0.5) { scale } else { -scale })
                .collect();
            SignatureMatrix::from_code(code, config.paths)
        })
        .collect()
}

fn draw_link<R: Rng + ?Sized>(profile_mag: &[f64], rng: &mut R) -> LinkChannel {
    let mut taps: Vec<Complex64> = profile_mag
        .iter()
        .map(|&mag| {
            // Uniform magnitude factor in (0, 1], uniform phase.
            let u = 1.0 - rng.gen::<f64>();
            let phase = rng.gen::<f64>() * 2.0 * PI;
            Complex64::from_polar(mag * u, phase)
        })
        .collect();
    let power: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
    let inv = 1.0 / power.sqrt();
    for t in &mut taps {
        *t *= inv;
    }
    LinkChannel::new(taps, 1.0)
}

/// Draw a fresh block-fading realization of every link.
///
/// Tap magnitudes follow the configured dB profile scaled by a uniform factor
/// in (0, 1] with uniform phase, then each link is rescaled to unit total
/// power. Links are drawn in a fixed order (direct, then source->relay, then
/// relay->destination, relay-major) so equal seeds reproduce equal
/// realizations.
pub fn generate_channels<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> ChannelRealization {
    let profile_mag: Vec<f64> = config
        .power_profile_db
        .iter()
        .map(|db| 10f64.powf(db / 20.0))
        .collect();
    let sd = (0..config.users).map(|_| draw_link(&profile_mag, rng)).collect();
    let sr = (0..config.relays)
        .map(|_| (0..config.users).map(|_| draw_link(&profile_mag, rng)).collect())
        .collect();
    let rd = (0..config.relays)
        .map(|_| (0..config.users).map(|_| draw_link(&profile_mag, rng)).collect())
        .collect();
    ChannelRealization { sd, sr, rd }
}

/// Per-user receive vector for one link: amplitude x (signature matrix x
/// taps), length `M`. This is the column every RAKE, cancellation and SINR
/// computation works with.
pub fn effective_signature(sig: &SignatureMatrix, ch: &LinkChannel) -> Vec<Complex64> {
    assert_eq!(
        sig.paths(),
        ch.taps.len(),
        "signature path count and channel tap count disagree"
    );
    let code = sig.code();
    let m = sig.rows();
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for (shift, &tap) in ch.taps.iter().enumerate() {
        let weight = tap * ch.amplitude;
        for (i, &chip) in code.iter().enumerate() {
            out[shift + i] += weight * chip;
        }
    }
    out
}

/// Equal power split with unit per-user total: the source and each active
/// relay transmit with amplitude `1/sqrt(1 + |active|)`.
pub fn power_normalize(config: &SystemConfig, active_relays: &[usize]) -> Amplitudes {
    let a = 1.0 / ((1 + active_relays.len()) as f64).sqrt();
    let mut relays = vec![0.0; config.relays];
    for &l in active_relays {
        assert!(l < config.relays, "relay index {l} out of range");
        relays[l] = a;
    }
    Amplitudes { source: a, relays }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn test_config() -> SystemConfig {
        SystemConfig {
            users: 4,
            relays: 2,
            spreading: 8,
            paths: 3,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn signature_matrix_is_shifted_code() {
        let code = vec![0.5, -0.5, 0.5, -0.5];
        let sig = SignatureMatrix::from_code(code.clone(), 2);
        assert_eq!(sig.rows(), 5);
        assert_eq!(sig.paths(), 2);
        // Column 1 is column 0 shifted down one row.
        for r in 0..sig.rows() {
            let expected0 = if r < 4 { code[r] } else { 0.0 };
            assert_eq!(sig.entry(r, 0), expected0);
            let expected1 = if r >= 1 && r < 5 { code[r - 1] } else { 0.0 };
            assert_eq!(sig.entry(r, 1), expected1);
        }
    }

    #[test]
    fn generated_codes_have_unit_norm_columns() {
        let cfg = SystemConfig {
            users: 6,
            spreading: 16,
            paths: 3,
            ..SystemConfig::default()
        };
        let codes = generate_codes(&cfg, &mut rng(7));
        assert_eq!(codes.len(), 6);
        for sig in &codes {
            assert_eq!(sig.rows(), 18);
            for c in 0..sig.paths() {
                let norm2: f64 = (0..sig.rows()).map(|r| sig.entry(r, c).powi(2)).sum();
                assert_relative_eq!(norm2, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gram_of_signature_matrix_has_unit_diagonal() {
        let cfg = test_config();
        let codes = generate_codes(&cfg, &mut rng(3));
        for sig in &codes {
            for c in 0..sig.paths() {
                let diag: f64 = (0..sig.rows()).map(|r| sig.entry(r, c).powi(2)).sum();
                assert_relative_eq!(diag, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn channels_are_unit_power() {
        let cfg = test_config();
        let ch = generate_channels(&cfg, &mut rng(11));
        let all_links = ch
            .sd
            .iter()
            .chain(ch.sr.iter().flatten())
            .chain(ch.rd.iter().flatten());
        for link in all_links {
            let p: f64 = link.taps.iter().map(|t| t.norm_sqr()).sum();
            assert_relative_eq!(p, 1.0, epsilon = 1e-12);
            assert_eq!(link.taps.len(), cfg.paths);
        }
        assert_eq!(ch.sd.len(), 4);
        assert_eq!(ch.sr.len(), 2);
        assert_eq!(ch.rd[0].len(), 4);
    }

    #[test]
    fn single_path_channel_has_unit_magnitude_tap() {
        let cfg = SystemConfig {
            users: 1,
            relays: 0,
            spreading: 8,
            paths: 1,
            power_profile_db: vec![0.0],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, &mut rng(5));
        assert_relative_eq!(ch.sd[0].taps[0].norm(), 1.0, epsilon = 1e-12);
    }

    /// Monte Carlo oracle for the generator marginals: the default
    /// [0, -3, -6] dB profile must order the mean tap powers.
    #[test]
    fn power_profile_orders_mean_tap_powers() {
        let cfg = SystemConfig {
            users: 1,
            relays: 0,
            spreading: 8,
            paths: 3,
            ..SystemConfig::default()
        };
        let mut r = rng(2024);
        let mut mean = [0.0f64; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let ch = generate_channels(&cfg, &mut r);
            for (i, t) in ch.sd[0].taps.iter().enumerate() {
                mean[i] += t.norm_sqr() / draws as f64;
            }
        }
        assert!(mean[0] > mean[1] && mean[1] > mean[2], "mean powers {mean:?}");
    }

    #[test]
    fn effective_signature_identity_channel_returns_code_column() {
        let code = vec![0.5, -0.5, 0.5, -0.5];
        let sig = SignatureMatrix::from_code(code.clone(), 2);
        let ch = LinkChannel::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], 1.0);
        let eff = effective_signature(&sig, &ch);
        for (r, v) in eff.iter().enumerate() {
            assert_relative_eq!(v.re, sig.entry(r, 0), epsilon = 1e-15);
            assert_relative_eq!(v.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn effective_signature_zero_amplitude_is_zero() {
        let sig = SignatureMatrix::from_code(vec![0.5, -0.5, 0.5, -0.5], 2);
        let ch = LinkChannel::new(vec![Complex64::new(0.3, 0.4), Complex64::new(0.1, -0.9)], 0.0);
        let eff = effective_signature(&sig, &ch);
        assert!(eff.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn effective_signature_combines_columns_linearly() {
        let code = vec![0.5, -0.5, 0.5, -0.5];
        let sig = SignatureMatrix::from_code(code, 2);
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let ch = LinkChannel::new(vec![Complex64::new(w, 0.0), Complex64::new(w, 0.0)], 0.7);
        let eff = effective_signature(&sig, &ch);
        for (r, v) in eff.iter().enumerate() {
            let expected = 0.7 * w * (sig.entry(r, 0) + sig.entry(r, 1));
            assert_relative_eq!(v.re, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn power_split_matches_active_set_size() {
        let cfg = SystemConfig {
            relays: 6,
            ..SystemConfig::default()
        };
        let none = power_normalize(&cfg, &[]);
        assert_relative_eq!(none.source, 1.0);
        assert!(none.relays.iter().all(|&a| a == 0.0));

        let three = power_normalize(&cfg, &[0, 2, 4]);
        assert_relative_eq!(three.source, 0.5);
        assert_relative_eq!(three.relays[2], 0.5);
        assert_eq!(three.relays[1], 0.0);

        let all: Vec<usize> = (0..6).collect();
        let amps = power_normalize(&cfg, &all);
        let total = amps.source.powi(2) + amps.relays.iter().map(|a| a * a).sum::<f64>();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let cfg = test_config();
        let codes_a = generate_codes(&cfg, &mut rng(42));
        let codes_b = generate_codes(&cfg, &mut rng(42));
        for (a, b) in codes_a.iter().zip(&codes_b) {
            assert_eq!(a.code(), b.code());
        }
        let ch_a = generate_channels(&cfg, &mut rng(42));
        let ch_b = generate_channels(&cfg, &mut rng(42));
        for (a, b) in ch_a.sd.iter().zip(&ch_b.sd) {
            assert_eq!(a.taps, b.taps);
        }
    }

    #[test]
    fn constellation_bit_accounting() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        assert_eq!(bpsk.points().len(), 2);
        assert_eq!(bpsk.bits_per_symbol(), 1);
        assert_eq!(bpsk.bit_errors_between(bpsk.points()[0], bpsk.points()[1]), 1);

        let qpsk = Constellation::new(Modulation::Qpsk);
        assert_eq!(qpsk.points().len(), 4);
        for p in qpsk.points() {
            assert_relative_eq!(p.norm(), 1.0, epsilon = 1e-12);
        }
        // Diagonally opposite quadrants differ in both bits.
        assert_eq!(qpsk.bit_errors_between(qpsk.points()[0], qpsk.points()[3]), 2);
        assert_eq!(qpsk.bit_errors_between(qpsk.points()[0], qpsk.points()[1]), 1);
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let ok = SystemConfig::default();
        assert!(ok.validate().is_ok());

        let bad_dth = SystemConfig {
            d_th: -0.1,
            ..SystemConfig::default()
        };
        assert!(bad_dth.validate().is_err());

        let bad_paths = SystemConfig {
            paths: 16,
            spreading: 16,
            ..SystemConfig::default()
        };
        assert!(bad_paths.validate().is_err());

        let bad_profile = SystemConfig {
            power_profile_db: vec![0.0],
            ..SystemConfig::default()
        };
        assert!(bad_profile.validate().is_err());

        let bad_group = SystemConfig {
            users: 2,
            group_size: 3,
            ..SystemConfig::default()
        };
        assert!(bad_group.validate().is_err());
    }
}
