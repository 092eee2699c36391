//! WMMSE and simple baselines for the K-pair interference channel with
//! multi-antenna transmitters and single-antenna receivers.
//!
//! One iteration runs the three block updates (receive coefficient `U`, MSE
//! weight `W`, beamformer `V`), with the power constraint enforced through a
//! bisected dual variable. The same code path covers the scalar power-control
//! case (`Nt = 1`); there is no separate specialization to diverge from.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::{check_feasible, dot_h, Allocation};
use crate::scenario::ChannelRealization;
use crate::{Error, Result};

/// Per-user solver state after some number of iterations.
#[derive(Clone, Debug)]
pub struct WmmseState {
    /// Receive coefficients, one complex scalar per user.
    pub u: Vec<Complex64>,
    /// MSE weights; `>= 1` at fixed points.
    pub w: Vec<f64>,
    /// Beamformers, `K x Nt`.
    pub v: Vec<Vec<Complex64>>,
    pub iterations: usize,
}

/// Outcome of a solve: final allocation plus the objective trajectory
/// (`len = iterations + 1`, entry 0 is the initial objective).
#[derive(Clone, Debug)]
pub struct SolverReport {
    pub allocation: Allocation,
    pub objective_trajectory: Vec<f64>,
    pub wall_time: Duration,
    pub iterations: usize,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trajectory.last().unwrap()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "final_objective": self.final_objective(),
            "objective_trajectory": self.objective_trajectory,
            "wall_time_ms": self.wall_time.as_secs_f64() * 1e3,
            "iterations": self.iterations,
        })
    }
}

/// Random feasible start: each beamformer is `sqrt(pmax)` times a uniform
/// point on the complex unit sphere.
pub fn random_init(k: usize, nt: usize, pmax: f64, rng: &mut impl Rng) -> Allocation {
    let mut rows = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<Complex64> = (0..nt)
            .map(|_| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            })
            .collect();
        let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { pmax.sqrt() / norm } else { 0.0 };
        for c in &mut v {
            *c *= scale;
        }
        rows.push(v);
    }
    Allocation::from_beamformers(&rows)
}

/// Full-power start along the real axis; used for shared-initialization
/// comparisons where the network and the solver must start from one point.
pub fn full_power_init(k: usize, nt: usize, pmax: f64) -> Allocation {
    let amp = (pmax / nt as f64).sqrt();
    let rows = vec![vec![Complex64::new(amp, 0.0); nt]; k];
    Allocation::from_beamformers(&rows)
}

/// Weighted sum rate of an allocation on full CSI.
pub fn objective(chan: &ChannelRealization, beams: &[Vec<Complex64>]) -> f64 {
    let k = chan.num_pairs;
    let mut obj = 0.0;
    for i in 0..k {
        let signal = dot_h(chan.h(i, i), &beams[i]).norm_sqr();
        let mut interference = 0.0;
        for (j, beam) in beams.iter().enumerate() {
            if j != i {
                interference += dot_h(chan.h(j, i), beam).norm_sqr();
            }
        }
        obj += chan.weights[i] * (1.0 + signal / (interference + chan.noise[i])).log2();
    }
    obj
}

/// Solves `(m + mu I) v = b` and finds the smallest `mu >= 0` with
/// `‖v‖² <= pmax`.
///
/// `m` is Hermitian PSD (`Nt x Nt`, row-major). Returns `(mu, v)`: `mu = 0`
/// when the unconstrained solution is feasible, otherwise the unique root of
/// `‖v(mu)‖² = pmax` (the norm is strictly decreasing in `mu`), bracketed by
/// doubling and bisected to relative tolerance 1e-10.
pub fn bisect_mu(m: &[Complex64], b: &[Complex64], pmax: f64) -> Result<(f64, Vec<Complex64>)> {
    let nt = b.len();
    if m.len() != nt * nt {
        return Err(Error::Shape(format!("bisect_mu: matrix {} vs vector {nt}", m.len())));
    }
    if !(pmax > 0.0) {
        return Err(Error::InvalidConfig("bisect_mu needs pmax > 0".into()));
    }
    let bnorm2: f64 = b.iter().map(|c| c.norm_sqr()).sum();
    if bnorm2 == 0.0 {
        return Ok((0.0, vec![Complex64::new(0.0, 0.0); nt]));
    }

    let solve_at = |mu: f64| -> Option<Vec<Complex64>> {
        let mut shifted = m.to_vec();
        for t in 0..nt {
            shifted[t * nt + t] += mu;
        }
        solve_hermitian(&mut shifted, b)
    };
    let norm2 = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();

    // Unconstrained attempt; a rank-deficient m shows up as a failed solve or
    // a solution that does not satisfy the system.
    if let Some(v0) = solve_at(0.0) {
        let residual_ok = {
            let mut max_res = 0.0f64;
            for r in 0..nt {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..nt {
                    acc += m[r * nt + c] * v0[c];
                }
                max_res = max_res.max((acc - b[r]).norm());
            }
            max_res <= 1e-8 * (1.0 + bnorm2.sqrt())
        };
        if residual_ok && norm2(&v0) <= pmax {
            return Ok((0.0, v0));
        }
    }

    // Bracket: ‖v(mu)‖² falls below pmax for large enough mu.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut v_hi = loop {
        match solve_at(hi) {
            Some(v) if norm2(&v) < pmax => break v,
            _ => {
                hi *= 2.0;
                if hi > 1e18 {
                    return Err(Error::Diverged("bisect_mu failed to bracket the dual".into()));
                }
            }
        }
    };
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match solve_at(mid) {
            Some(v) if norm2(&v) <= pmax => {
                hi = mid;
                v_hi = v;
            }
            _ => lo = mid,
        }
    }
    Ok((hi, v_hi))
}

/// In-place Gaussian elimination with partial pivoting; returns `None` for a
/// numerically singular system. Fine for the tiny Nt used here.
fn solve_hermitian(a: &mut [Complex64], b: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].norm();
        for r in col + 1..n {
            let mag = a[r * n + col].norm();
            if mag > best {
                best = mag;
                pivot = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            x.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / diag;
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= factor * v;
            }
            let xv = x[col];
            x[r] -= factor * xv;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for c in col + 1..n {
            acc -= a[col * n + c] * x[c];
        }
        x[col] = acc / a[col * n + col];
    }
    if x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// One full WMMSE iteration: all `U`, then all `W`, then all `V`.
pub fn wmmse_iteration(
    chan: &ChannelRealization,
    pmax: f64,
    state: &mut WmmseState,
) -> Result<()> {
    let k = chan.num_pairs;
    let nt = chan.num_tx_antennas;
    // Receive coefficients from the current beamformers.
    let mut direct = Vec::with_capacity(k);
    for i in 0..k {
        let mut den = chan.noise[i];
        for (j, v) in state.v.iter().enumerate() {
            den += dot_h(chan.h(j, i), v).norm_sqr();
        }
        let c = dot_h(chan.h(i, i), &state.v[i]);
        state.u[i] = c / den;
        direct.push(c);
    }
    // MSE weights.
    for i in 0..k {
        let mse = 1.0 - (state.u[i].conj() * direct[i]).re;
        state.w[i] = 1.0 / mse;
    }
    // Beamformers, one constrained least squares per transmitter.
    let coef: Vec<f64> = (0..k)
        .map(|j| chan.weights[j] * state.u[j].norm_sqr() * state.w[j])
        .collect();
    let mut new_v = Vec::with_capacity(k);
    for i in 0..k {
        let mut m = vec![Complex64::new(0.0, 0.0); nt * nt];
        for j in 0..k {
            let h = chan.h(i, j);
            for r in 0..nt {
                for c in 0..nt {
                    m[r * nt + c] += coef[j] * h[r] * h[c].conj();
                }
            }
        }
        let scale = chan.weights[i] * state.w[i] * state.u[i];
        let b: Vec<Complex64> = chan.h(i, i).iter().map(|hc| hc * scale).collect();
        let (_, v) = bisect_mu(&m, &b, pmax)?;
        new_v.push(v);
    }
    state.v = new_v;
    state.iterations += 1;
    Ok(())
}

fn state_from_alloc(chan: &ChannelRealization, init: &Allocation) -> WmmseState {
    let k = chan.num_pairs;
    WmmseState {
        u: vec![Complex64::new(0.0, 0.0); k],
        w: vec![1.0; k],
        v: (0..k).map(|i| init.beamformer(i)).collect(),
        iterations: 0,
    }
}

/// Runs WMMSE for `iters` iterations from `init` (random when `None`).
pub fn wmmse_solve(
    chan: &ChannelRealization,
    pmax: f64,
    iters: usize,
    init: Option<&Allocation>,
    rng: &mut impl Rng,
) -> Result<SolverReport> {
    if iters < 1 {
        return Err(Error::InvalidConfig("wmmse_solve needs iters >= 1".into()));
    }
    let owned;
    let init = match init {
        Some(a) => a,
        None => {
            owned = random_init(chan.num_pairs, chan.num_tx_antennas, pmax, rng);
            &owned
        }
    };
    if !check_feasible(init, pmax) {
        return Err(Error::InvalidConfig("wmmse_solve init violates the power budget".into()));
    }
    let start = Instant::now();
    let mut state = state_from_alloc(chan, init);
    let mut trajectory = Vec::with_capacity(iters + 1);
    trajectory.push(objective(chan, &state.v));
    for _ in 0..iters {
        wmmse_iteration(chan, pmax, &mut state)?;
        let obj = objective(chan, &state.v);
        if !obj.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite objective after iteration {}",
                state.iterations
            )));
        }
        trajectory.push(obj);
    }
    Ok(SolverReport {
        allocation: Allocation::from_beamformers(&state.v),
        objective_trajectory: trajectory,
        wall_time: start.elapsed(),
        iterations: iters,
    })
}

/// Best final objective over independent random restarts.
pub fn best_of_restarts(
    chan: &ChannelRealization,
    pmax: f64,
    n_restarts: usize,
    iters: usize,
    rng: &mut impl Rng,
) -> Result<SolverReport> {
    if n_restarts < 1 {
        return Err(Error::InvalidConfig("best_of_restarts needs n_restarts >= 1".into()));
    }
    let start = Instant::now();
    let mut best: Option<SolverReport> = None;
    for _ in 0..n_restarts {
        let report = wmmse_solve(chan, pmax, iters, None, rng)?;
        if best.as_ref().is_none_or(|b| report.final_objective() > b.final_objective()) {
            best = Some(report);
        }
    }
    let mut best = best.unwrap();
    best.wall_time = start.elapsed();
    Ok(best)
}

/// Activates the top `ceil(rho * K)` pairs by direct-channel gain at full
/// power with matched-filter beamformers; the rest stay silent.
pub fn strongest_baseline(chan: &ChannelRealization, pmax: f64, rho: f64) -> Result<Allocation> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfig(format!("rho must be in (0, 1], got {rho}")));
    }
    let k = chan.num_pairs;
    let nt = chan.num_tx_antennas;
    let n_active = ((rho * k as f64).ceil() as usize).clamp(1, k);
    let mut order: Vec<usize> = (0..k).collect();
    let gain = |i: usize| chan.h(i, i).iter().map(|c| c.norm_sqr()).sum::<f64>();
    order.sort_by(|&a, &b| gain(b).partial_cmp(&gain(a)).unwrap().then(a.cmp(&b)));
    let mut rows = vec![vec![Complex64::new(0.0, 0.0); nt]; k];
    for &i in order.iter().take(n_active) {
        let h = chan.h(i, i);
        let norm = gain(i).sqrt();
        if norm > 0.0 {
            let scale = pmax.sqrt() / norm;
            rows[i] = h.iter().map(|c| c * scale).collect();
        }
    }
    Ok(Allocation::from_beamformers(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{permute_alloc, permute_channel, Permutation};
    use crate::scenario::{generate_layout, sample_channels, SystemConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(k: usize, nt: usize, seed: u64, snr_db: f64) -> ChannelRealization {
        let cfg = SystemConfig {
            num_pairs: k,
            num_tx_antennas: nt,
            rng_seed: seed,
            snr_db,
            ..SystemConfig::default()
        };
        let mut rng = cfg.stream_rng(0);
        let scen = generate_layout(&cfg, &mut rng).unwrap();
        sample_channels(&cfg, &scen, &mut rng).unwrap()
    }

    #[test]
    fn bisect_identity_feasible_case() {
        let m = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0),
                     Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let (mu, v) = bisect_mu(&m, &b, 1.0).unwrap();
        assert_eq!(mu, 0.0);
        assert!((v[0] - b[0]).norm() <= 1e-12);
        assert!(v[1].norm() <= 1e-12);
    }

    #[test]
    fn bisect_identity_constrained_closed_form() {
        // m = I, b = (2, 0): ‖b‖²/(1+mu)² = 1 has the root mu = 1, v = (1, 0).
        let m = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0),
                     Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        let b = vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)];
        let (mu, v) = bisect_mu(&m, &b, 1.0).unwrap();
        assert!((mu - 1.0).abs() <= 1e-9, "mu = {mu}");
        assert!((v[0].re - 1.0).abs() <= 1e-9);
        assert!(v[0].im.abs() <= 1e-12 && v[1].norm() <= 1e-12);
    }

    #[test]
    fn bisect_zero_rhs() {
        let m = vec![Complex64::new(3.0, 0.0)];
        let (mu, v) = bisect_mu(&m, &[Complex64::new(0.0, 0.0)], 2.0).unwrap();
        assert_eq!(mu, 0.0);
        assert_eq!(v[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn bisect_constrained_norm_lands_on_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let nt = 2;
            // Random PSD m = a a^H + small ridge, random b scaled to force
            // the constrained branch.
            let a: Vec<Complex64> = (0..nt * nt)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let mut m = vec![Complex64::new(0.0, 0.0); nt * nt];
            for r in 0..nt {
                for c in 0..nt {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..nt {
                        acc += a[r * nt + t] * a[c * nt + t].conj();
                    }
                    m[r * nt + c] = acc;
                }
                m[r * nt + r] += 0.01;
            }
            let b: Vec<Complex64> = (0..nt)
                .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal) * 10.0, rng.sample::<f64, _>(StandardNormal) * 10.0))
                .collect();
            let pmax = 1.0;
            let (mu, v) = bisect_mu(&m, &b, pmax).unwrap();
            let norm2: f64 = v.iter().map(|c| c.norm_sqr()).sum();
            assert!(norm2 <= pmax + 1e-12);
            if mu > 0.0 {
                assert!(norm2 >= pmax * (1.0 - 1e-8), "norm² = {norm2} at mu = {mu}");
            }
        }
    }

    #[test]
    fn single_pair_converges_to_full_power() {
        for nt in [1, 2] {
            let chan = instance(1, nt, 5, 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let report = wmmse_solve(&chan, 1.0, 50, None, &mut rng).unwrap();
            let p = report.allocation.power(0);
            assert!(p >= 0.999, "Nt={nt}: power {p}");
            assert!(check_feasible(&report.allocation, 1.0));
        }
    }

    #[test]
    fn objective_trajectory_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (k, nt, seed) in [(2, 1, 0), (5, 1, 1), (10, 1, 2), (2, 2, 3), (5, 2, 4), (10, 2, 5)] {
            let chan = instance(k, nt, seed, 10.0);
            let report = wmmse_solve(&chan, 1.0, 30, None, &mut rng).unwrap();
            assert_eq!(report.objective_trajectory.len(), 31);
            for w in report.objective_trajectory.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "objective decreased: {} -> {}", w[0], w[1]);
            }
            assert!(check_feasible(&report.allocation, 1.0));
        }
    }

    #[test]
    fn two_user_power_control_matches_grid_search() {
        // Exhaustive 1001 x 1001 oracle over (p1, p2) in [0, 1]^2.
        let chan = instance(2, 1, 11, 0.0);
        let mut best = f64::NEG_INFINITY;
        let eval = |p1: f64, p2: f64| {
            let beams = vec![
                vec![Complex64::new(p1.sqrt(), 0.0)],
                vec![Complex64::new(p2.sqrt(), 0.0)],
            ];
            objective(&chan, &beams)
        };
        for i in 0..=1000 {
            for j in 0..=1000 {
                let obj = eval(i as f64 / 1000.0, j as f64 / 1000.0);
                if obj > best {
                    best = obj;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let report = wmmse_solve(&chan, 1.0, 100, None, &mut rng).unwrap();
        let gap = best - report.final_objective();
        if gap > 1e-3 {
            // WMMSE converged to a worse stationary point; the run must at
            // least be stationary. Record the gap in the assertion message.
            let mut state = state_from_alloc(&chan, &report.allocation);
            wmmse_iteration(&chan, 1.0, &mut state).unwrap();
            let drift: f64 = state
                .v
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.iter()
                        .zip(&report.allocation.beamformer(i))
                        .map(|(a, b)| (a - b).norm())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            assert!(drift <= 1e-8, "gap {gap} with non-stationary point (drift {drift})");
        } else {
            assert!(gap.abs() <= 1e-3, "grid best {best} vs wmmse {}", report.final_objective());
        }
    }

    #[test]
    fn solver_is_equivariant_under_relabeling() {
        let chan = instance(5, 2, 13, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let init = random_init(5, 2, 1.0, &mut rng);
        let pi = Permutation::random(5, &mut rng);
        let report = wmmse_solve(&chan, 1.0, 20, Some(&init), &mut rng).unwrap();
        let chan_p = permute_channel(&chan, &pi);
        let init_p = permute_alloc(&init, &pi).unwrap();
        let report_p = wmmse_solve(&chan_p, 1.0, 20, Some(&init_p), &mut rng).unwrap();
        let expected = permute_alloc(&report.allocation, &pi).unwrap();
        for k in 0..5 {
            for (a, b) in expected.gamma.row(k).iter().zip(report_p.allocation.gamma.row(k)) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
        for (a, b) in report
            .objective_trajectory
            .iter()
            .zip(&report_p.objective_trajectory)
        {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn strongest_selects_by_sorted_gain() {
        let chan = instance(10, 1, 15, 0.0);
        let alloc = strongest_baseline(&chan, 1.0, 0.3).unwrap();
        // ceil(0.3 * 10) = 3 active pairs.
        let mut gains: Vec<(usize, f64)> = (0..10)
            .map(|i| (i, chan.h(i, i)[0].norm_sqr()))
            .collect();
        gains.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let expected: std::collections::BTreeSet<usize> =
            gains.iter().take(3).map(|&(i, _)| i).collect();
        for i in 0..10 {
            let p = alloc.power(i);
            if expected.contains(&i) {
                assert!((p - 1.0).abs() <= 1e-12, "pair {i} power {p}");
            } else {
                assert_eq!(p, 0.0, "pair {i} should be silent");
            }
        }
    }

    #[test]
    fn strongest_full_proportion_and_single_pair() {
        let chan = instance(4, 2, 16, 0.0);
        let alloc = strongest_baseline(&chan, 1.0, 1.0).unwrap();
        for i in 0..4 {
            assert!((alloc.power(i) - 1.0).abs() <= 1e-12);
        }
        let chan1 = instance(1, 1, 17, 0.0);
        let alloc1 = strongest_baseline(&chan1, 1.0, 0.01).unwrap();
        assert!((alloc1.power(0) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn restarts_dominate_single_run() {
        let chan = instance(5, 1, 18, 10.0);
        let single = wmmse_solve(&chan, 1.0, 30, None, &mut ChaCha8Rng::seed_from_u64(19)).unwrap();
        let best = best_of_restarts(&chan, 1.0, 10, 30, &mut ChaCha8Rng::seed_from_u64(19)).unwrap();
        assert!(best.final_objective() >= single.final_objective() - 1e-12);
        let one = best_of_restarts(&chan, 1.0, 1, 30, &mut ChaCha8Rng::seed_from_u64(19)).unwrap();
        assert!((one.final_objective() - single.final_objective()).abs() <= 1e-12);
    }
}
