//! Multiuser detectors over a bank of effective signatures.
//!
//! Every detector is a pure function of the observation and a
//! [`DetectorContext`], so the same code serves the relays (single-phase
//! window of length `M`) and the destination (stacked window of length `2M`).
//!
//! The family:
//!
//! * [`conventional_sic`] — one user at a time, strongest first, re-ranked by
//!   the residual matched-filter magnitude after every cancellation.
//! * [`gl_sic`] — group-wise SIC with a reliability check on each soft
//!   output. A stage whose soft outputs all clear the grey region is sliced
//!   and cancelled like conventional SIC; the first stage containing
//!   unreliable users opens one branch per constellation assignment of those
//!   users, each branch is completed by conventional SIC, and the final list
//!   is chosen by the smallest residual norm.
//! * [`mb_gl_sic`] — runs GL-SIC under cyclically shifted and reversed
//!   detection orders and refines the best list user by user.
//! * [`mmse_linear`] / [`ml_oracle`] / RAKE bank — linear and exhaustive
//!   baselines.

use crate::sysmodel::Constellation;
use crate::SimError;
use num_complex::Complex64;

/// Everything a detector needs to know about the scenario: one effective
/// signature per user (all the same length), the constellation, the
/// grey-region half-width `d_th`, the stage group size and the noise
/// variance.
#[derive(Debug, Clone)]
pub struct DetectorContext {
    eff: Vec<Vec<Complex64>>,
    energies: Vec<f64>,
    constellation: Constellation,
    d_th: f64,
    group_size: usize,
    sigma2: f64,
}

impl DetectorContext {
    pub fn new(
        eff: Vec<Vec<Complex64>>,
        constellation: Constellation,
        d_th: f64,
        group_size: usize,
        sigma2: f64,
    ) -> Self {
        assert!(!eff.is_empty(), "need at least one user signature");
        let len = eff[0].len();
        assert!(eff.iter().all(|e| e.len() == len), "signature lengths disagree");
        assert!(group_size >= 1 && group_size <= eff.len(), "group size out of range");
        assert!(d_th >= 0.0, "reliability threshold must be nonnegative");
        assert!(sigma2 >= 0.0, "noise variance must be nonnegative");
        let energies: Vec<f64> = eff
            .iter()
            .map(|e| e.iter().map(|v| v.norm_sqr()).sum())
            .collect();
        assert!(
            energies.iter().all(|&p| p > 0.0),
            "zero-norm effective signature"
        );
        Self {
            eff,
            energies,
            constellation,
            d_th,
            group_size,
            sigma2,
        }
    }

    pub fn num_users(&self) -> usize {
        self.eff.len()
    }

    pub fn obs_len(&self) -> usize {
        self.eff[0].len()
    }

    pub fn eff(&self, user: usize) -> &[Complex64] {
        &self.eff[user]
    }

    pub fn signatures(&self) -> &[Vec<Complex64>] {
        &self.eff
    }

    /// Squared norm of a user's effective signature.
    pub fn energy(&self, user: usize) -> f64 {
        self.energies[user]
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn d_th(&self) -> f64 {
        self.d_th
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// A complete tentative decision vector together with the detection order
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    /// One constellation point per user, indexed by user.
    pub decisions: Vec<Complex64>,
    /// Permutation of the user indices in the order they were detected.
    pub ordering: Vec<usize>,
    /// Index of the winning branch among the lists that were enumerated.
    pub branch_id: usize,
    /// How many candidate lists were examined to produce this one.
    pub lists_examined: usize,
}

/// Unnormalized matched-filter output `eff^H y`.
fn mf(y: &[Complex64], eff: &[Complex64]) -> Complex64 {
    debug_assert_eq!(y.len(), eff.len());
    eff.iter().zip(y).map(|(e, v)| e.conj() * v).sum()
}

/// Normalized RAKE soft output: `eff^H y / eff^H eff`, so a noiseless
/// isolated user yields exactly its transmitted point.
pub fn rake(y: &[Complex64], eff: &[Complex64]) -> Complex64 {
    assert_eq!(y.len(), eff.len(), "observation/signature length mismatch");
    let energy: f64 = eff.iter().map(|v| v.norm_sqr()).sum();
    assert!(energy > 0.0, "zero-norm effective signature");
    mf(y, eff) / energy
}

fn rake_with_energy(y: &[Complex64], eff: &[Complex64], energy: f64) -> Complex64 {
    mf(y, eff) / energy
}

/// Nearest constellation point in Euclidean distance; ties resolve to the
/// smallest index in the canonical point order.
pub fn slice(u: Complex64, constellation: &Constellation) -> Complex64 {
    let points = constellation.points();
    let mut best = points[0];
    let mut best_dist = (u - points[0]).norm_sqr();
    for &p in &points[1..] {
        let d = (u - p).norm_sqr();
        if d < best_dist {
            best_dist = d;
            best = p;
        }
    }
    best
}

/// A soft estimate is reliable when it falls outside the grey region: the
/// union of bands of half-width `d_th` around every decision boundary, taken
/// per axis that separates constellation points.
pub fn is_reliable(u: Complex64, constellation: &Constellation, d_th: f64) -> bool {
    match constellation.modulation() {
        crate::sysmodel::Modulation::Bpsk => u.re.abs() >= d_th,
        crate::sysmodel::Modulation::Qpsk => u.re.abs() >= d_th && u.im.abs() >= d_th,
    }
}

/// Squared residual norm `|| y - sum_k eff_k b_k ||^2` of a full decision
/// vector; the list-selection metric.
pub fn ml_metric(y: &[Complex64], signatures: &[Vec<Complex64>], decisions: &[Complex64]) -> f64 {
    assert_eq!(signatures.len(), decisions.len(), "decision/user count mismatch");
    let mut acc = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let mut r = yi;
        for (sig, &b) in signatures.iter().zip(decisions) {
            r -= sig[i] * b;
        }
        acc += r.norm_sqr();
    }
    acc
}

fn residual_of(
    y: &[Complex64],
    signatures: &[Vec<Complex64>],
    decisions: &[Complex64],
) -> Vec<Complex64> {
    let mut r = y.to_vec();
    for (sig, &b) in signatures.iter().zip(decisions) {
        for (ri, &si) in r.iter_mut().zip(sig) {
            *ri -= si * b;
        }
    }
    r
}

/// `|| residual + eff * delta ||^2` without materializing the shifted vector.
fn shifted_metric(residual: &[Complex64], eff: &[Complex64], delta: Complex64) -> f64 {
    residual
        .iter()
        .zip(eff)
        .map(|(&r, &e)| (r + e * delta).norm_sqr())
        .sum()
}

fn cancel(residual: &mut [Complex64], eff: &[Complex64], decision: Complex64) {
    for (r, &e) in residual.iter_mut().zip(eff) {
        *r -= e * decision;
    }
}

/// User with the largest statistic; ties go to the smallest user index.
fn pick_strongest<F: FnMut(usize) -> f64>(remaining: &[usize], mut stat: F) -> usize {
    let mut best = remaining[0];
    let mut best_stat = stat(best);
    for &u in &remaining[1..] {
        let s = stat(u);
        if s > best_stat {
            best_stat = s;
            best = u;
        }
    }
    best
}

/// Top `n` remaining users by the current ranking: effective-signature energy
/// before anything was cancelled, residual matched-filter power afterwards.
/// Ties break to the smaller user index.
fn next_stage_users(
    ctx: &DetectorContext,
    residual: &[Complex64],
    remaining: &[usize],
    anything_cancelled: bool,
    forced: Option<&[usize]>,
    n: usize,
) -> Vec<usize> {
    if let Some(perm) = forced {
        return perm
            .iter()
            .copied()
            .filter(|u| remaining.contains(u))
            .take(n)
            .collect();
    }
    let mut ranked: Vec<(f64, usize)> = remaining
        .iter()
        .map(|&u| {
            let s = if anything_cancelled {
                mf(residual, ctx.eff(u)).norm_sqr()
            } else {
                ctx.energy(u)
            };
            (s, u)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    ranked.into_iter().take(n).map(|(_, u)| u).collect()
}

/// Standard successive interference cancellation: detect the strongest user,
/// subtract its reconstructed contribution, re-rank the rest by the residual
/// matched-filter magnitude, repeat.
pub fn conventional_sic(y: &[Complex64], ctx: &DetectorContext) -> CandidateList {
    assert_eq!(y.len(), ctx.obs_len(), "observation length mismatch");
    let k = ctx.num_users();
    let mut residual = y.to_vec();
    let mut decisions = vec![Complex64::new(0.0, 0.0); k];
    let mut ordering = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..k).collect();
    while !remaining.is_empty() {
        let user = if ordering.is_empty() {
            pick_strongest(&remaining, |u| ctx.energy(u))
        } else {
            pick_strongest(&remaining, |u| mf(&residual, ctx.eff(u)).norm_sqr())
        };
        let soft = rake_with_energy(&residual, ctx.eff(user), ctx.energy(user));
        let d = slice(soft, ctx.constellation());
        decisions[user] = d;
        cancel(&mut residual, ctx.eff(user), d);
        ordering.push(user);
        remaining.retain(|&u| u != user);
    }
    CandidateList {
        decisions,
        ordering,
        branch_id: 0,
        lists_examined: 1,
    }
}

/// Greedy list-based SIC.
///
/// Users are processed in stages of `ctx.group_size()`. Each stage takes the
/// strongest remaining users, judges all of their soft outputs against the
/// grey region on the stage-start residual, and if every verdict is reliable
/// slices and cancels them one at a time like conventional SIC. At the first
/// stage with unreliable users, the reliable ones are sliced directly and
/// every constellation assignment of the unreliable ones opens a branch; each
/// branch cancels the whole stage, finishes the remaining users with
/// conventional SIC and the branch with the smallest residual norm wins (ties
/// to the smallest branch index).
///
/// `forced_ordering` fixes the stage grouping to consecutive chunks of the
/// given permutation instead of the power/residual ranking; the reliability
/// logic is unchanged. This is the hook the multi-branch detector uses.
pub fn gl_sic(
    y: &[Complex64],
    ctx: &DetectorContext,
    forced_ordering: Option<&[usize]>,
) -> CandidateList {
    assert_eq!(y.len(), ctx.obs_len(), "observation length mismatch");
    let k = ctx.num_users();
    if let Some(perm) = forced_ordering {
        debug_assert!(is_permutation(perm, k), "forced ordering must be a permutation");
    }
    let n = ctx.group_size();
    let mut residual = y.to_vec();
    let mut decisions = vec![Complex64::new(0.0, 0.0); k];
    let mut ordering: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..k).collect();

    while !remaining.is_empty() {
        let stage = next_stage_users(
            ctx,
            &residual,
            &remaining,
            !ordering.is_empty(),
            forced_ordering,
            n,
        );
        let softs: Vec<Complex64> = stage
            .iter()
            .map(|&u| rake_with_energy(&residual, ctx.eff(u), ctx.energy(u)))
            .collect();
        let all_reliable = softs
            .iter()
            .all(|&s| is_reliable(s, ctx.constellation(), ctx.d_th()));
        if all_reliable {
            // The stage verdict is joint, but cancellation proceeds user by
            // user like conventional SIC: each member is sliced from the
            // residual with the previous members already removed.
            for &user in &stage {
                let soft = rake_with_energy(&residual, ctx.eff(user), ctx.energy(user));
                let d = slice(soft, ctx.constellation());
                decisions[user] = d;
                cancel(&mut residual, ctx.eff(user), d);
                ordering.push(user);
            }
            remaining.retain(|u| !stage.contains(u));
        } else {
            return branch_stage(
                y,
                ctx,
                residual,
                decisions,
                ordering,
                &remaining,
                &stage,
                &softs,
                forced_ordering,
            );
        }
    }
    CandidateList {
        decisions,
        ordering,
        branch_id: 0,
        lists_examined: 1,
    }
}

#[allow(clippy::too_many_arguments)]
fn branch_stage(
    y: &[Complex64],
    ctx: &DetectorContext,
    stage_start_residual: Vec<Complex64>,
    decisions_pre: Vec<Complex64>,
    ordering_pre: Vec<usize>,
    remaining: &[usize],
    stage: &[usize],
    softs: &[Complex64],
    forced: Option<&[usize]>,
) -> CandidateList {
    let constellation = ctx.constellation();
    let mut reliable: Vec<(usize, Complex64)> = Vec::new();
    let mut unreliable: Vec<usize> = Vec::new();
    for (&user, &soft) in stage.iter().zip(softs) {
        if is_reliable(soft, constellation, ctx.d_th()) {
            reliable.push((user, soft));
        } else {
            unreliable.push(user);
        }
    }

    // Reliable stage members are common to every branch; like the reliable
    // path they are sliced sequentially with intermediate cancellation.
    let mut residual = stage_start_residual;
    let mut decisions = decisions_pre;
    let mut ordering = ordering_pre;
    for &(user, _) in &reliable {
        let soft = rake_with_energy(&residual, ctx.eff(user), ctx.energy(user));
        let d = slice(soft, constellation);
        decisions[user] = d;
        cancel(&mut residual, ctx.eff(user), d);
        ordering.push(user);
    }
    let after_stage: Vec<usize> = remaining
        .iter()
        .copied()
        .filter(|u| !stage.contains(u))
        .collect();

    let points = constellation.points();
    let n_c = points.len();
    let n_q = unreliable.len();
    let num_branches = n_c.pow(n_q as u32);

    let mut best: Option<(f64, CandidateList)> = None;
    for branch in 0..num_branches {
        let mut b_res = residual.clone();
        let mut b_dec = decisions.clone();
        let mut b_ord = ordering.clone();
        // The first unreliable user is the most significant digit of the
        // branch index, with digits in canonical constellation order.
        for (pos, &user) in unreliable.iter().enumerate() {
            let div = n_c.pow((n_q - 1 - pos) as u32);
            let point = points[(branch / div) % n_c];
            b_dec[user] = point;
            cancel(&mut b_res, ctx.eff(user), point);
            b_ord.push(user);
        }
        // Finish the list with one-at-a-time SIC.
        match forced {
            Some(perm) => {
                for &user in perm.iter().filter(|u| after_stage.contains(u)) {
                    let soft = rake_with_energy(&b_res, ctx.eff(user), ctx.energy(user));
                    let d = slice(soft, constellation);
                    b_dec[user] = d;
                    cancel(&mut b_res, ctx.eff(user), d);
                    b_ord.push(user);
                }
            }
            None => {
                let mut rem = after_stage.clone();
                while !rem.is_empty() {
                    let user = pick_strongest(&rem, |u| mf(&b_res, ctx.eff(u)).norm_sqr());
                    let soft = rake_with_energy(&b_res, ctx.eff(user), ctx.energy(user));
                    let d = slice(soft, constellation);
                    b_dec[user] = d;
                    cancel(&mut b_res, ctx.eff(user), d);
                    b_ord.push(user);
                    rem.retain(|&u| u != user);
                }
            }
        }
        let metric = ml_metric(y, ctx.signatures(), &b_dec);
        if best.as_ref().map_or(true, |(m, _)| metric < *m) {
            best = Some((
                metric,
                CandidateList {
                    decisions: b_dec,
                    ordering: b_ord,
                    branch_id: branch,
                    lists_examined: num_branches,
                },
            ));
        }
    }
    best.expect("at least one branch").1
}

fn is_permutation(perm: &[usize], k: usize) -> bool {
    if perm.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    for &u in perm {
        if u >= k || seen[u] {
            return false;
        }
        seen[u] = true;
    }
    true
}

/// The detection orders explored by multi-branch processing: the base order,
/// its right cyclic shifts by 1..K-1 positions and its reversal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSet {
    pub orderings: Vec<Vec<usize>>,
}

pub fn mb_orderings(base: &[usize]) -> BranchSet {
    let k = base.len();
    assert!(k >= 1, "empty ordering");
    let mut orderings = Vec::with_capacity(k + 1);
    orderings.push(base.to_vec());
    for shift in 1..k {
        orderings.push((0..k).map(|i| base[(i + k - shift) % k]).collect());
    }
    orderings.push(base.iter().rev().copied().collect());
    BranchSet { orderings }
}

/// GL-SIC with multi-branch processing.
///
/// Runs GL-SIC under the natural power ordering, re-runs it under every
/// shifted/reversed version of the realized order, picks the list with the
/// smallest residual norm as the base, then sweeps users in ascending index
/// order substituting each user's decision from the other branches whenever
/// that strictly lowers the metric.
pub fn mb_gl_sic(y: &[Complex64], ctx: &DetectorContext) -> CandidateList {
    let k = ctx.num_users();
    let base_run = gl_sic(y, ctx, None);
    let branch_set = mb_orderings(&base_run.ordering);
    let mut lists: Vec<CandidateList> = Vec::with_capacity(k + 1);
    let mut lists_examined = base_run.lists_examined;
    lists.push(base_run);
    for ordering in branch_set.orderings.iter().skip(1) {
        let run = gl_sic(y, ctx, Some(ordering));
        lists_examined += run.lists_examined;
        lists.push(run);
    }

    let metrics: Vec<f64> = lists
        .iter()
        .map(|l| ml_metric(y, ctx.signatures(), &l.decisions))
        .collect();
    let mut base_idx = 0;
    for (i, &m) in metrics.iter().enumerate() {
        if m < metrics[base_idx] {
            base_idx = i;
        }
    }

    let mut current = lists[base_idx].decisions.clone();
    let mut cur_metric = metrics[base_idx];
    let mut residual = residual_of(y, ctx.signatures(), &current);
    for user in 0..k {
        let mut improvement: Option<(f64, Complex64)> = None;
        for (b, list) in lists.iter().enumerate() {
            if b == base_idx {
                continue;
            }
            let candidate = list.decisions[user];
            if candidate == current[user] {
                continue;
            }
            let delta = current[user] - candidate;
            let m = shifted_metric(&residual, ctx.eff(user), delta);
            if m < cur_metric && improvement.map_or(true, |(best, _)| m < best) {
                improvement = Some((m, candidate));
            }
        }
        if let Some((m, candidate)) = improvement {
            let delta = current[user] - candidate;
            for (r, &e) in residual.iter_mut().zip(ctx.eff(user)) {
                *r += e * delta;
            }
            current[user] = candidate;
            cur_metric = m;
        }
    }

    CandidateList {
        decisions: current,
        ordering: lists[base_idx].ordering.clone(),
        branch_id: base_idx,
        lists_examined,
    }
}

/// Per-user linear MMSE filters `(sum_j eff_j eff_j^H + sigma^2 I)^-1 eff_k`,
/// solved through a Cholesky factorization of the covariance.
pub fn mmse_weights(ctx: &DetectorContext) -> Result<Vec<Vec<Complex64>>, SimError> {
    let d = ctx.obs_len();
    let k = ctx.num_users();
    let g = nalgebra::DMatrix::from_fn(d, k, |r, c| ctx.eff(c)[r]);
    let mut cov = &g * g.adjoint();
    for i in 0..d {
        cov[(i, i)] += Complex64::new(ctx.sigma2(), 0.0);
    }
    let chol = nalgebra::linalg::Cholesky::new(cov).ok_or_else(|| {
        SimError::SingularSystem(
            "MMSE covariance is not positive definite (zero noise with rank-deficient signatures)"
                .into(),
        )
    })?;
    let w = chol.solve(&g);
    Ok((0..k).map(|c| w.column(c).iter().copied().collect()).collect())
}

fn mmse_detect(y: &[Complex64], ctx: &DetectorContext, weights: &[Vec<Complex64>]) -> CandidateList {
    let decisions = weights
        .iter()
        .map(|w| slice(mf(y, w), ctx.constellation()))
        .collect();
    CandidateList {
        decisions,
        ordering: (0..ctx.num_users()).collect(),
        branch_id: 0,
        lists_examined: 1,
    }
}

/// Linear MMSE detection. Fails when the covariance cannot be factorized
/// (zero noise variance with rank-deficient signatures).
pub fn mmse_linear(y: &[Complex64], ctx: &DetectorContext) -> Result<CandidateList, SimError> {
    let weights = mmse_weights(ctx)?;
    Ok(mmse_detect(y, ctx, &weights))
}

/// Enumeration guard for the exhaustive oracle: at most `2^20` hypotheses.
const ML_ORACLE_MAX_BITS: f64 = 20.0;

fn ml_oracle_guard(ctx: &DetectorContext) -> Result<(), SimError> {
    let bits = ctx.num_users() as f64 * (ctx.constellation().points().len() as f64).log2();
    if bits > ML_ORACLE_MAX_BITS + 1e-9 {
        return Err(SimError::GuardExceeded(format!(
            "ML oracle needs K*log2(Nc) <= {ML_ORACLE_MAX_BITS}, got {bits:.1}"
        )));
    }
    Ok(())
}

fn ml_oracle_search(y: &[Complex64], ctx: &DetectorContext) -> CandidateList {
    let k = ctx.num_users();
    let points = ctx.constellation().points();
    let n_c = points.len();
    let total = n_c.pow(k as u32);
    let mut decisions = vec![points[0]; k];
    let mut best_decisions = decisions.clone();
    let mut best_metric = f64::INFINITY;
    let mut best_index = 0;
    for index in 0..total {
        for (user, d) in decisions.iter_mut().enumerate() {
            let div = n_c.pow((k - 1 - user) as u32);
            *d = points[(index / div) % n_c];
        }
        let metric = ml_metric(y, ctx.signatures(), &decisions);
        if metric < best_metric {
            best_metric = metric;
            best_decisions.copy_from_slice(&decisions);
            best_index = index;
        }
    }
    CandidateList {
        decisions: best_decisions,
        ordering: (0..k).collect(),
        branch_id: best_index,
        lists_examined: total,
    }
}

/// Exhaustive maximum-likelihood search over all `Nc^K` symbol vectors; ties
/// resolve to the lexicographically smallest vector. Refuses instances beyond
/// the enumeration guard.
pub fn ml_oracle(y: &[Complex64], ctx: &DetectorContext) -> Result<CandidateList, SimError> {
    ml_oracle_guard(ctx)?;
    Ok(ml_oracle_search(y, ctx))
}

fn rake_bank(y: &[Complex64], ctx: &DetectorContext) -> CandidateList {
    let decisions = (0..ctx.num_users())
        .map(|u| {
            slice(
                rake_with_energy(y, ctx.eff(u), ctx.energy(u)),
                ctx.constellation(),
            )
        })
        .collect();
    CandidateList {
        decisions,
        ordering: (0..ctx.num_users()).collect(),
        branch_id: 0,
        lists_examined: 1,
    }
}

/// Detector selection for the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Rake,
    Mmse,
    Sic,
    GlSic,
    MbGlSic,
    MlOracle,
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DetectorKind::Rake => "rake",
            DetectorKind::Mmse => "mmse",
            DetectorKind::Sic => "sic",
            DetectorKind::GlSic => "glsic",
            DetectorKind::MbGlSic => "mbglsic",
            DetectorKind::MlOracle => "mloracle",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rake" => Ok(DetectorKind::Rake),
            "mmse" => Ok(DetectorKind::Mmse),
            "sic" => Ok(DetectorKind::Sic),
            "glsic" => Ok(DetectorKind::GlSic),
            "mbglsic" => Ok(DetectorKind::MbGlSic),
            "mloracle" => Ok(DetectorKind::MlOracle),
            other => Err(format!(
                "unknown detector '{other}' (expected rake, mmse, sic, glsic, mbglsic or mloracle)"
            )),
        }
    }
}

/// A detector bound to one context. Construction performs the per-packet
/// work (MMSE factorization, oracle guard); [`Detector::detect`] is then
/// infallible and pure per symbol.
pub struct Detector<'a> {
    kind: DetectorKind,
    ctx: &'a DetectorContext,
    mmse: Option<Vec<Vec<Complex64>>>,
}

impl<'a> Detector<'a> {
    pub fn new(kind: DetectorKind, ctx: &'a DetectorContext) -> Result<Self, SimError> {
        let mmse = match kind {
            DetectorKind::Mmse => Some(mmse_weights(ctx)?),
            DetectorKind::MlOracle => {
                ml_oracle_guard(ctx)?;
                None
            }
            _ => None,
        };
        Ok(Self { kind, ctx, mmse })
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn context(&self) -> &DetectorContext {
        self.ctx
    }

    pub fn detect(&self, y: &[Complex64]) -> CandidateList {
        match self.kind {
            DetectorKind::Rake => rake_bank(y, self.ctx),
            DetectorKind::Mmse => mmse_detect(y, self.ctx, self.mmse.as_ref().expect("built")),
            DetectorKind::Sic => conventional_sic(y, self.ctx),
            DetectorKind::GlSic => gl_sic(y, self.ctx, None),
            DetectorKind::MbGlSic => mb_gl_sic(y, self.ctx),
            DetectorKind::MlOracle => ml_oracle_search(y, self.ctx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{Constellation, Modulation};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bpsk() -> Constellation {
        Constellation::new(Modulation::Bpsk)
    }

    /// Orthogonal single-path signatures from a 4x4 Hadamard-style pattern.
    fn orthogonal_signatures(k: usize) -> Vec<Vec<Complex64>> {
        let rows = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        (0..k)
            .map(|i| rows[i].iter().map(|&v| c(v / 2.0, 0.0)).collect())
            .collect()
    }

    fn random_signatures(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<Vec<Complex64>> {
        let scale = 1.0 / (n as f64).sqrt();
        (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| c(if rng.gen_bool(0.5) { scale } else { -scale }, 0.0))
                    .collect()
            })
            .collect()
    }

    fn combine(signatures: &[Vec<Complex64>], symbols: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![c(0.0, 0.0); signatures[0].len()];
        for (sig, &b) in signatures.iter().zip(symbols) {
            for (yi, &si) in y.iter_mut().zip(sig) {
                *yi += si * b;
            }
        }
        y
    }

    fn ctx_for(eff: Vec<Vec<Complex64>>, d_th: f64, group: usize, sigma2: f64) -> DetectorContext {
        DetectorContext::new(eff, bpsk(), d_th, group, sigma2)
    }

    fn add_noise(y: &mut [Complex64], sigma2: f64, rng: &mut ChaCha8Rng) {
        use rand_distr::StandardNormal;
        let s = (sigma2 / 2.0).sqrt();
        for v in y.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += c(s * re, s * im);
        }
    }

    #[test]
    fn rake_projects_onto_signature() {
        let eff: Vec<Complex64> = vec![c(0.5, 0.0), c(-0.5, 0.0), c(0.5, 0.0), c(-0.5, 0.0)];
        assert_relative_eq!(rake(&eff, &eff).re, 1.0, epsilon = 1e-12);

        let orth = vec![c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)];
        assert_relative_eq!(rake(&orth, &eff).norm(), 0.0, epsilon = 1e-12);

        let mixed: Vec<Complex64> = eff
            .iter()
            .zip(&orth)
            .map(|(&e, &o)| e * 0.5 + o * 3.0)
            .collect();
        assert_relative_eq!(rake(&mixed, &eff).re, 0.5, epsilon = 1e-12);
    }

    #[test]
    #[should_panic(expected = "zero-norm")]
    fn rake_rejects_zero_signature() {
        let z = vec![c(0.0, 0.0); 4];
        rake(&z, &z);
    }

    #[test]
    fn slicer_picks_nearest_point() {
        let b = bpsk();
        assert_eq!(slice(c(0.3, -0.1), &b), c(1.0, 0.0));
        assert_eq!(slice(c(-0.01, 0.0), &b), c(-1.0, 0.0));
        let q = Constellation::new(Modulation::Qpsk);
        let p = slice(c(0.9, 0.8), &q);
        let w = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(p.re, w, epsilon = 1e-12);
        assert_relative_eq!(p.im, w, epsilon = 1e-12);
    }

    #[test]
    fn reliability_uses_boundary_bands() {
        let b = bpsk();
        assert!(!is_reliable(c(0.10, 0.4), &b, 0.25));
        assert!(is_reliable(c(0.90, 0.0), &b, 0.25));
        assert!(is_reliable(c(-0.90, 0.0), &b, 0.25));
        // Zero threshold makes everything (off the boundary) reliable.
        assert!(is_reliable(c(0.001, 0.0), &b, 0.0));

        let q = Constellation::new(Modulation::Qpsk);
        assert!(!is_reliable(c(0.9, 0.1), &q, 0.25));
        assert!(!is_reliable(c(0.1, 0.9), &q, 0.25));
        assert!(is_reliable(c(0.9, -0.9), &q, 0.25));
    }

    #[test]
    fn conventional_sic_recovers_orthogonal_users_exactly() {
        let eff = orthogonal_signatures(4);
        let tx = vec![c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)];
        let y = combine(&eff, &tx);
        let ctx = ctx_for(eff, 0.25, 2, 0.0);
        let out = conventional_sic(&y, &ctx);
        assert_eq!(out.decisions, tx);
        assert!(is_permutation(&out.ordering, 4));
    }

    #[test]
    fn conventional_sic_single_user_is_rake_and_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let eff = random_signatures(&mut rng, 1, 8);
            let tx = vec![if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) }];
            let mut y = combine(&eff, &tx);
            add_noise(&mut y, 0.5, &mut rng);
            let ctx = ctx_for(eff.clone(), 0.25, 1, 0.5);
            let out = conventional_sic(&y, &ctx);
            assert_eq!(out.decisions[0], slice(rake(&y, &eff[0]), ctx.constellation()));
        }
    }

    /// Brute-force oracle comparison: with strictly decreasing powers and all
    /// pairwise correlations below 1/3, noiseless SIC must equal ML.
    #[test]
    fn conventional_sic_matches_ml_oracle_under_low_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let amplitudes = [1.0, 0.9, 0.8, 0.7];
        let mut matches = 0usize;
        let mut total = 0usize;
        'instance: while total < 1000 {
            let base = random_signatures(&mut rng, 4, 8);
            // Reject code sets with pairwise correlation >= 1/3.
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let corr = mf(&base[i], &base[j]).norm();
                    if corr >= 1.0 / 3.0 - 1e-12 {
                        continue 'instance;
                    }
                }
            }
            let eff: Vec<Vec<Complex64>> = base
                .iter()
                .zip(amplitudes)
                .map(|(sig, a)| sig.iter().map(|&v| v * a).collect())
                .collect();
            let tx: Vec<Complex64> = (0..4)
                .map(|_| if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) })
                .collect();
            let y = combine(&eff, &tx);
            let ctx = ctx_for(eff, 0.25, 2, 0.0);
            let sic = conventional_sic(&y, &ctx);
            let ml = ml_oracle(&y, &ctx).unwrap();
            total += 1;
            if sic.decisions == ml.decisions {
                matches += 1;
            }
        }
        println!("SIC/ML match rate on qualifying instances: {matches}/{total}");
        assert_eq!(matches, total);
    }

    #[test]
    fn gl_sic_single_user_stages_reduce_to_conventional_sic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let eff = random_signatures(&mut rng, 5, 16);
            let tx: Vec<Complex64> = (0..5)
                .map(|_| if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) })
                .collect();
            let mut y = combine(&eff, &tx);
            add_noise(&mut y, 0.3, &mut rng);
            // d_th = 0 forces every verdict reliable; single-user stages make
            // the reduction exact.
            let ctx = ctx_for(eff, 0.0, 1, 0.3);
            let glsic = gl_sic(&y, &ctx, None);
            let sic = conventional_sic(&y, &ctx);
            assert_eq!(glsic.decisions, sic.decisions);
            assert_eq!(glsic.ordering, sic.ordering);
            assert_eq!(glsic.lists_examined, 1);
        }
    }

    #[test]
    fn gl_sic_branch_count_matches_unreliable_users() {
        // Orthogonal users: soft outputs are exactly the per-user amplitudes.
        let eff = orthogonal_signatures(2);
        let tx = [c(0.05, 0.0), c(0.10, 0.0)];
        let y = combine(&eff, &tx);
        let ctx = ctx_for(eff.clone(), 0.25, 2, 0.0);
        // Both users land inside the grey band: 2^2 branches.
        let out = gl_sic(&y, &ctx, None);
        assert_eq!(out.lists_examined, 4);

        // One reliable, one unreliable: 2^1 branches.
        let tx = [c(1.0, 0.0), c(0.10, 0.0)];
        let y = combine(&eff, &tx);
        let out = gl_sic(&y, &ctx, None);
        assert_eq!(out.lists_examined, 2);

        // Both confidently decided: a single list.
        let tx = [c(1.0, 0.0), c(-1.0, 0.0)];
        let y = combine(&eff, &tx);
        let out = gl_sic(&y, &ctx, None);
        assert_eq!(out.lists_examined, 1);
    }

    #[test]
    fn gl_sic_remainder_stage_handles_k_not_multiple_of_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let eff = random_signatures(&mut rng, 5, 16);
        let tx: Vec<Complex64> = (0..5).map(|_| c(1.0, 0.0)).collect();
        let mut y = combine(&eff, &tx);
        add_noise(&mut y, 0.1, &mut rng);
        let ctx = ctx_for(eff, 0.25, 2, 0.1);
        let out = gl_sic(&y, &ctx, None);
        assert!(is_permutation(&out.ordering, 5));
        assert_eq!(out.decisions.len(), 5);
    }

    #[test]
    fn gl_sic_cancellation_of_correct_decisions_zeroes_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let eff = random_signatures(&mut rng, 4, 16);
        let tx: Vec<Complex64> = (0..4)
            .map(|_| if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) })
            .collect();
        let y = combine(&eff, &tx);
        let ctx = ctx_for(eff, 0.25, 2, 0.0);
        let out = gl_sic(&y, &ctx, None);
        assert_eq!(out.decisions, tx);
        let residual_norm = ml_metric(&y, ctx.signatures(), &out.decisions);
        assert!(residual_norm < 1e-24, "residual {residual_norm}");
    }

    #[test]
    fn mb_orderings_are_shifts_and_reversal() {
        let set = mb_orderings(&[0, 1, 2]);
        assert_eq!(
            set.orderings,
            vec![vec![0, 1, 2], vec![2, 0, 1], vec![1, 2, 0], vec![2, 1, 0]]
        );
        let one = mb_orderings(&[0]);
        assert_eq!(one.orderings, vec![vec![0], vec![0]]);
        let set = mb_orderings(&[3, 1, 0, 2]);
        assert_eq!(set.orderings.len(), 5);
        for ordering in &set.orderings {
            assert!(is_permutation(ordering, 4));
        }
    }

    #[test]
    fn mb_gl_sic_agrees_with_base_when_all_branches_agree() {
        let eff = orthogonal_signatures(3);
        let tx = vec![c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)];
        let y = combine(&eff, &tx);
        let ctx = ctx_for(eff, 0.25, 2, 0.0);
        let base = gl_sic(&y, &ctx, None);
        let mb = mb_gl_sic(&y, &ctx);
        assert_eq!(mb.decisions, base.decisions);
    }

    #[test]
    fn mb_gl_sic_never_increases_the_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..100 {
            let eff = random_signatures(&mut rng, 4, 8);
            let tx: Vec<Complex64> = (0..4)
                .map(|_| if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) })
                .collect();
            let mut y = combine(&eff, &tx);
            add_noise(&mut y, 0.4, &mut rng);
            let ctx = ctx_for(eff, 0.25, 2, 0.4);
            let base = gl_sic(&y, &ctx, None);
            let mb = mb_gl_sic(&y, &ctx);
            let m_base = ml_metric(&y, ctx.signatures(), &base.decisions);
            let m_mb = ml_metric(&y, ctx.signatures(), &mb.decisions);
            assert!(m_mb <= m_base + 1e-9, "mb {m_mb} vs base {m_base}");
        }
    }

    #[test]
    fn ml_oracle_dominates_every_detector_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for _ in 0..100 {
            let eff = random_signatures(&mut rng, 4, 8);
            let tx: Vec<Complex64> = (0..4)
                .map(|_| if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) })
                .collect();
            let mut y = combine(&eff, &tx);
            add_noise(&mut y, 0.5, &mut rng);
            let ctx = ctx_for(eff, 0.25, 2, 0.5);
            let ml = ml_oracle(&y, &ctx).unwrap();
            let m_ml = ml_metric(&y, ctx.signatures(), &ml.decisions);
            for candidate in [
                conventional_sic(&y, &ctx),
                gl_sic(&y, &ctx, None),
                mb_gl_sic(&y, &ctx),
            ] {
                let m = ml_metric(&y, ctx.signatures(), &candidate.decisions);
                assert!(m_ml <= m + 1e-9);
            }
        }
    }

    #[test]
    fn ml_oracle_recovers_noiseless_transmissions() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let eff = random_signatures(&mut rng, 4, 8);
        let tx = vec![c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)];
        let y = combine(&eff, &tx);
        let ctx = ctx_for(eff, 0.25, 2, 0.0);
        let ml = ml_oracle(&y, &ctx).unwrap();
        assert_eq!(ml.decisions, tx);
        assert_eq!(ml.lists_examined, 16);
    }

    #[test]
    fn ml_oracle_refuses_oversized_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let eff = random_signatures(&mut rng, 21, 32);
        let ctx = ctx_for(eff, 0.25, 2, 0.1);
        let y = vec![c(0.0, 0.0); ctx.obs_len()];
        assert!(matches!(ml_oracle(&y, &ctx), Err(SimError::GuardExceeded(_))));
    }

    #[test]
    fn mmse_matches_matched_filter_for_orthogonal_codes() {
        let eff = orthogonal_signatures(4);
        let tx = vec![c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)];
        let mut y = combine(&eff, &tx);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        add_noise(&mut y, 0.05, &mut rng);
        let ctx = ctx_for(eff.clone(), 0.25, 2, 0.05);
        let out = mmse_linear(&y, &ctx).unwrap();
        let matched: Vec<Complex64> = eff
            .iter()
            .map(|e| slice(rake(&y, e), ctx.constellation()))
            .collect();
        assert_eq!(out.decisions, matched);
    }

    #[test]
    fn mmse_single_user_low_noise_limit_is_rake() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..20 {
            let eff = random_signatures(&mut rng, 1, 8);
            let tx = vec![if rng.gen_bool(0.5) { c(1.0, 0.0) } else { c(-1.0, 0.0) }];
            let mut y = combine(&eff, &tx);
            add_noise(&mut y, 0.01, &mut rng);
            let ctx = ctx_for(eff.clone(), 0.25, 1, 1e-9);
            let out = mmse_linear(&y, &ctx).unwrap();
            assert_eq!(out.decisions[0], slice(rake(&y, &eff[0]), ctx.constellation()));
        }
    }

    #[test]
    fn mmse_fails_on_singular_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let eff = random_signatures(&mut rng, 2, 8);
        let ctx = ctx_for(eff, 0.25, 1, 0.0);
        let y = vec![c(0.0, 0.0); 8];
        assert!(matches!(
            mmse_linear(&y, &ctx),
            Err(SimError::SingularSystem(_))
        ));
    }

    #[test]
    fn slicer_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for modulation in [Modulation::Bpsk, Modulation::Qpsk] {
            let constellation = Constellation::new(modulation);
            for _ in 0..200 {
                let u = c(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0);
                let once = slice(u, &constellation);
                assert_eq!(slice(once, &constellation), once);
            }
        }
    }

    #[test]
    fn detector_wrapper_dispatches_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let eff = random_signatures(&mut rng, 3, 8);
        let tx = vec![c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)];
        let mut y = combine(&eff, &tx);
        add_noise(&mut y, 0.05, &mut rng);
        let ctx = ctx_for(eff, 0.25, 2, 0.05);
        for kind in [
            DetectorKind::Rake,
            DetectorKind::Mmse,
            DetectorKind::Sic,
            DetectorKind::GlSic,
            DetectorKind::MbGlSic,
            DetectorKind::MlOracle,
        ] {
            let det = Detector::new(kind, &ctx).unwrap();
            let out = det.detect(&y);
            assert_eq!(out.decisions.len(), 3);
            assert!(is_permutation(&out.ordering, 3));
            for d in &out.decisions {
                assert!(ctx.constellation().points().contains(d));
            }
        }
    }

    #[test]
    fn detector_names_round_trip() {
        for kind in [
            DetectorKind::Rake,
            DetectorKind::Mmse,
            DetectorKind::Sic,
            DetectorKind::GlSic,
            DetectorKind::MbGlSic,
            DetectorKind::MlOracle,
        ] {
            let parsed: DetectorKind = kind.to_string().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("vitterbi".parse::<DetectorKind>().is_err());
    }
}
