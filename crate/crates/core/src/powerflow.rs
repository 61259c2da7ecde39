//! Newton-Raphson AC power flow and operational feasibility checking.
//!
//! Standard polar-form Newton on the pi-model bus admittance matrix:
//! PQ buses solve (P, Q) mismatches, PV buses solve P with the magnitude
//! pinned to the generator setpoint, and the reference bus is pinned at
//! `va = 0, vm = vg`. Convergence is `max |mismatch| < 1e-8` p.u. from a
//! flat start, capped at 50 iterations.
//!
//! Branch flows for feasibility and conservation checks are computed
//! per-branch from the pi model, independently of the Ybus/Jacobian path.

use num_complex::Complex64;
use thiserror::Error;

use crate::case::{BusType, CaseError, GridCase};

/// Convergence tolerance on the power mismatch, p.u.
pub const PF_TOLERANCE: f64 = 1e-8;
/// Iteration cap for the Newton loop.
pub const PF_MAX_ITER: usize = 50;

/// Solved voltage state: angles in radians, magnitudes in p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct BusState {
    pub va: Vec<f64>,
    pub vm: Vec<f64>,
}

impl BusState {
    pub fn flat(n: usize) -> Self {
        BusState { va: vec![0.0; n], vm: vec![1.0; n] }
    }

    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.vm[i], self.va[i])
    }
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:.3e})")]
    NonConvergence { iterations: usize, max_mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration} (islanded network or degenerate case)")]
    SingularJacobian { iteration: usize },
    #[error("no in-service generator at the reference bus")]
    NoSlackGenerator,
    #[error("init state has {got} buses, case has {expected}")]
    InitSizeMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Case(#[from] CaseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PfBusKind {
    Slack,
    Pv,
    Pq,
}

/// Internal network view with contiguous bus indices.
struct PfNetwork {
    n: usize,
    ybus: Vec<Complex64>,
    s_spec: Vec<Complex64>,
    kind: Vec<PfBusKind>,
    /// Voltage setpoint for slack/PV buses.
    vset: Vec<f64>,
}

impl PfNetwork {
    fn y(&self, i: usize, j: usize) -> Complex64 {
        self.ybus[i * self.n + j]
    }
}

fn build_network(case: &GridCase) -> Result<PfNetwork, PowerFlowError> {
    case.validate()?;
    let index = case.bus_index();
    let n = case.buses.len();
    let sb = case.base_mva;

    let mut ybus = vec![Complex64::new(0.0, 0.0); n * n];
    for br in case.branches.iter().filter(|b| b.status) {
        let f = index[&br.from];
        let t = index[&br.to];
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b / 2.0);
        let tap = if br.tap == 0.0 { 1.0 } else { br.tap };
        let shift = crate::case::deg_to_rad(br.shift);
        let ratio = Complex64::from_polar(tap, shift);
        ybus[f * n + f] += (ys + bc) / (tap * tap);
        ybus[f * n + t] += -ys / ratio.conj();
        ybus[t * n + f] += -ys / ratio;
        ybus[t * n + t] += ys + bc;
    }
    for sh in &case.shunts {
        let i = index[&sh.bus];
        ybus[i * n + i] += Complex64::new(sh.gs / sb, sh.bs / sb);
    }

    let mut s_spec = vec![Complex64::new(0.0, 0.0); n];
    let mut has_gen = vec![false; n];
    let mut vset = vec![1.0; n];
    for g in case.generators.iter().filter(|g| g.status) {
        let i = index[&g.bus];
        s_spec[i] += Complex64::new(g.pg / sb, g.qg / sb);
        if !has_gen[i] {
            vset[i] = g.vg;
            has_gen[i] = true;
        }
    }
    for l in &case.loads {
        let i = index[&l.bus];
        s_spec[i] -= Complex64::new(l.pd / sb, l.qd / sb);
    }

    let mut kind = vec![PfBusKind::Pq; n];
    for (i, b) in case.buses.iter().enumerate() {
        kind[i] = match b.bus_type {
            BusType::Ref => {
                if !has_gen[i] {
                    return Err(PowerFlowError::NoSlackGenerator);
                }
                PfBusKind::Slack
            }
            // A PV bus with no in-service generator degrades to PQ.
            BusType::Pv if has_gen[i] => PfBusKind::Pv,
            _ => PfBusKind::Pq,
        };
    }

    Ok(PfNetwork { n, ybus, s_spec, kind, vset })
}

fn calc_injections(net: &PfNetwork, va: &[f64], vm: &[f64]) -> Vec<Complex64> {
    let n = net.n;
    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += net.y(i, j) * v[j];
        }
        s[i] = v[i] * acc.conj();
    }
    s
}

/// Solves the case by Newton-Raphson; returns the converged state and the
/// iteration count.
pub fn solve_power_flow_iter(
    case: &GridCase,
    init: Option<&BusState>,
) -> Result<(BusState, usize), PowerFlowError> {
    let net = build_network(case)?;
    let n = net.n;

    let mut va = vec![0.0f64; n];
    let mut vm = vec![1.0f64; n];
    if let Some(s) = init {
        if s.va.len() != n || s.vm.len() != n {
            return Err(PowerFlowError::InitSizeMismatch { got: s.va.len(), expected: n });
        }
        va.copy_from_slice(&s.va);
        vm.copy_from_slice(&s.vm);
    }
    for i in 0..n {
        match net.kind[i] {
            PfBusKind::Slack => {
                va[i] = 0.0;
                vm[i] = net.vset[i];
            }
            PfBusKind::Pv => vm[i] = net.vset[i],
            PfBusKind::Pq => {}
        }
    }

    // Unknown ordering: angles at non-slack buses, then magnitudes at PQ buses.
    let ang_idx: Vec<usize> = (0..n).filter(|&i| net.kind[i] != PfBusKind::Slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| net.kind[i] == PfBusKind::Pq).collect();
    let na = ang_idx.len();
    let nm = mag_idx.len();
    let m = na + nm;

    let mismatch = |va: &[f64], vm: &[f64]| -> (Vec<f64>, f64) {
        let s = calc_injections(&net, va, vm);
        let mut f = vec![0.0f64; m];
        let mut worst = 0.0f64;
        for (k, &i) in ang_idx.iter().enumerate() {
            f[k] = s[i].re - net.s_spec[i].re;
            worst = worst.max(f[k].abs());
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            f[na + k] = s[i].im - net.s_spec[i].im;
            worst = worst.max(f[na + k].abs());
        }
        (f, worst)
    };

    for iter in 0..=PF_MAX_ITER {
        let (f, worst) = mismatch(&va, &vm);
        if worst < PF_TOLERANCE {
            return Ok((BusState { va, vm }, iter));
        }
        if iter == PF_MAX_ITER {
            return Err(PowerFlowError::NonConvergence { iterations: iter, max_mismatch: worst });
        }

        let s = calc_injections(&net, &va, &vm);
        let mut jac = vec![0.0f64; m * m];
        for (row, &i) in ang_idx.iter().enumerate() {
            for (col, &j) in ang_idx.iter().enumerate() {
                jac[row * m + col] = dp_dtheta(&net, &s, &va, &vm, i, j);
            }
            for (col, &j) in mag_idx.iter().enumerate() {
                jac[row * m + na + col] = dp_dvm(&net, &s, &va, &vm, i, j);
            }
        }
        for (row, &i) in mag_idx.iter().enumerate() {
            for (col, &j) in ang_idx.iter().enumerate() {
                jac[(na + row) * m + col] = dq_dtheta(&net, &s, &va, &vm, i, j);
            }
            for (col, &j) in mag_idx.iter().enumerate() {
                jac[(na + row) * m + na + col] = dq_dvm(&net, &s, &va, &vm, i, j);
            }
        }

        let dx = lu_solve(&mut jac, &f, m)
            .ok_or(PowerFlowError::SingularJacobian { iteration: iter })?;
        for (k, &i) in ang_idx.iter().enumerate() {
            va[i] -= dx[k];
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            vm[i] -= dx[na + k];
        }
    }
    unreachable!("loop returns or errors")
}

/// Convenience wrapper returning only the state.
pub fn solve_power_flow(case: &GridCase, init: Option<&BusState>) -> Result<BusState, PowerFlowError> {
    solve_power_flow_iter(case, init).map(|(s, _)| s)
}

fn dp_dtheta(net: &PfNetwork, s: &[Complex64], va: &[f64], vm: &[f64], i: usize, j: usize) -> f64 {
    let y = net.y(i, j);
    if i == j {
        -s[i].im - y.im * vm[i] * vm[i]
    } else {
        let t = va[i] - va[j];
        vm[i] * vm[j] * (y.re * t.sin() - y.im * t.cos())
    }
}

fn dp_dvm(net: &PfNetwork, s: &[Complex64], va: &[f64], vm: &[f64], i: usize, j: usize) -> f64 {
    let y = net.y(i, j);
    if i == j {
        s[i].re / vm[i] + y.re * vm[i]
    } else {
        let t = va[i] - va[j];
        vm[i] * (y.re * t.cos() + y.im * t.sin())
    }
}

fn dq_dtheta(net: &PfNetwork, s: &[Complex64], va: &[f64], vm: &[f64], i: usize, j: usize) -> f64 {
    let y = net.y(i, j);
    if i == j {
        s[i].re - y.re * vm[i] * vm[i]
    } else {
        let t = va[i] - va[j];
        -vm[i] * vm[j] * (y.re * t.cos() + y.im * t.sin())
    }
}

fn dq_dvm(net: &PfNetwork, s: &[Complex64], va: &[f64], vm: &[f64], i: usize, j: usize) -> f64 {
    let y = net.y(i, j);
    if i == j {
        s[i].im / vm[i] - y.im * vm[i]
    } else {
        let t = va[i] - va[j];
        vm[i] * (y.re * t.sin() - y.im * t.cos())
    }
}

/// Dense LU with partial pivoting; returns `None` on a (near-)zero pivot.
fn lu_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut x: Vec<f64> = b.to_vec();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut best = k;
        let mut best_val = a[piv[k] * n + k].abs();
        for r in k + 1..n {
            let v = a[piv[r] * n + k].abs();
            if v > best_val {
                best = r;
                best_val = v;
            }
        }
        if best_val < 1e-12 {
            return None;
        }
        piv.swap(k, best);
        let pk = piv[k];
        for r in k + 1..n {
            let pr = piv[r];
            let factor = a[pr * n + k] / a[pk * n + k];
            a[pr * n + k] = factor;
            for c in k + 1..n {
                a[pr * n + c] -= factor * a[pk * n + c];
            }
            x[pr] -= factor * x[pk];
        }
    }
    let mut out = vec![0.0f64; n];
    for k in (0..n).rev() {
        let pk = piv[k];
        let mut acc = x[pk];
        for c in k + 1..n {
            acc -= a[pk * n + c] * out[c];
        }
        out[k] = acc / a[pk * n + k];
    }
    Some(out)
}

/// Per-branch pi-model flows at both ends, p.u. Indexing follows
/// `case.branches`; out-of-service branches yield zero flow.
pub fn branch_flows(case: &GridCase, state: &BusState) -> Vec<(Complex64, Complex64)> {
    let index = case.bus_index();
    case.branches
        .iter()
        .map(|br| {
            if !br.status {
                return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            }
            let f = index[&br.from];
            let t = index[&br.to];
            let vf = state.voltage(f);
            let vt = state.voltage(t);
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let bc = Complex64::new(0.0, br.b / 2.0);
            let tap = if br.tap == 0.0 { 1.0 } else { br.tap };
            let ratio = Complex64::from_polar(tap, crate::case::deg_to_rad(br.shift));
            let yff = (ys + bc) / (tap * tap);
            let yft = -ys / ratio.conj();
            let ytf = -ys / ratio;
            let ytt = ys + bc;
            let s_f = vf * (yff * vf + yft * vt).conj();
            let s_t = vt * (ytf * vf + ytt * vt).conj();
            (s_f, s_t)
        })
        .collect()
}

/// Maximum controlled power-balance residual (P at non-slack buses, Q at PQ
/// buses), p.u., computed from per-branch pi-model flows rather than the
/// solver's Ybus path.
pub fn power_balance_residual(case: &GridCase, state: &BusState) -> f64 {
    let index = case.bus_index();
    let n = case.buses.len();
    let sb = case.base_mva;
    let flows = branch_flows(case, state);

    let mut calc = vec![Complex64::new(0.0, 0.0); n];
    for (br, (s_f, s_t)) in case.branches.iter().zip(&flows) {
        if !br.status {
            continue;
        }
        calc[index[&br.from]] += s_f;
        calc[index[&br.to]] += s_t;
    }
    for sh in &case.shunts {
        // Power absorbed by the shunt: S = |V|^2 * conj(y), y = (gs + j bs)/sb.
        let i = index[&sh.bus];
        let vm2 = state.vm[i] * state.vm[i];
        calc[i] += vm2 * Complex64::new(sh.gs / sb, sh.bs / sb).conj();
    }

    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let mut has_gen = vec![false; n];
    for g in case.generators.iter().filter(|g| g.status) {
        let i = index[&g.bus];
        spec[i] += Complex64::new(g.pg / sb, g.qg / sb);
        has_gen[i] = true;
    }
    for l in &case.loads {
        spec[index[&l.bus]] -= Complex64::new(l.pd / sb, l.qd / sb);
    }

    let mut worst = 0.0f64;
    for (i, b) in case.buses.iter().enumerate() {
        let r = spec[i] - calc[i];
        match b.bus_type {
            BusType::Ref => {}
            BusType::Pv if has_gen[i] => worst = worst.max(r.re.abs()),
            _ => worst = worst.max(r.re.abs().max(r.im.abs())),
        }
    }
    worst
}

/// Kinds of operational-limit violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Voltage,
    Angle,
    Thermal,
    Balance,
}

#[derive(Debug, Clone)]
pub struct LimitViolation {
    pub kind: ViolationKind,
    /// Bus index for voltage/balance, branch index for angle/thermal.
    pub element: usize,
    /// Exceedance beyond the (tolerance-widened) bound.
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<LimitViolation>,
}

/// Engineering tolerances for [`check_feasibility`]; voltage and angle are
/// absolute widenings, thermal and reactive scale the bound.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityTolerances {
    pub voltage: f64,
    pub angle: f64,
    pub thermal: f64,
    pub reactive: f64,
}

impl Default for FeasibilityTolerances {
    fn default() -> Self {
        FeasibilityTolerances { voltage: 1e-4, angle: 1e-4, thermal: 1e-4, reactive: 1e-4 }
    }
}

/// Flags voltage-bound, angle-limit, thermal, and generator reactive-range
/// violations of a solved state.
pub fn check_feasibility(
    case: &GridCase,
    state: &BusState,
    tol: FeasibilityTolerances,
) -> FeasibilityReport {
    let index = case.bus_index();
    let sb = case.base_mva;
    let mut violations = Vec::new();

    for (i, b) in case.buses.iter().enumerate() {
        let vm = state.vm[i];
        if vm > b.vmax + tol.voltage {
            violations.push(LimitViolation { kind: ViolationKind::Voltage, element: i, magnitude: vm - b.vmax });
        } else if vm < b.vmin - tol.voltage {
            violations.push(LimitViolation { kind: ViolationKind::Voltage, element: i, magnitude: b.vmin - vm });
        }
    }

    let flows = branch_flows(case, state);
    for (bi, br) in case.branches.iter().enumerate() {
        if !br.status {
            continue;
        }
        let f = index[&br.from];
        let t = index[&br.to];
        // angmin = angmax = 0 marks an unconstrained branch.
        if br.angmin != 0.0 || br.angmax != 0.0 {
            let lo = crate::case::deg_to_rad(br.angmin);
            let hi = crate::case::deg_to_rad(br.angmax);
            let d = state.va[f] - state.va[t];
            if d > hi + tol.angle {
                violations.push(LimitViolation { kind: ViolationKind::Angle, element: bi, magnitude: d - hi });
            } else if d < lo - tol.angle {
                violations.push(LimitViolation { kind: ViolationKind::Angle, element: bi, magnitude: lo - d });
            }
        }
        // rate_a = 0 means unlimited.
        if br.rate_a > 0.0 {
            let rate = br.rate_a / sb;
            let s = flows[bi].0.norm().max(flows[bi].1.norm());
            if s > rate * (1.0 + tol.thermal) {
                violations.push(LimitViolation { kind: ViolationKind::Thermal, element: bi, magnitude: s - rate });
            }
        }
    }

    // Implied reactive output of slack/PV generation vs aggregate Q range.
    let s_calc = {
        let net = match build_network(case) {
            Ok(net) => net,
            Err(_) => {
                return FeasibilityReport { feasible: violations.is_empty(), violations };
            }
        };
        calc_injections(&net, &state.va, &state.vm)
    };
    for (i, b) in case.buses.iter().enumerate() {
        if b.bus_type == BusType::Pq {
            continue;
        }
        let gens: Vec<_> = case
            .generators
            .iter()
            .filter(|g| g.status && index[&g.bus] == i)
            .collect();
        if gens.is_empty() {
            continue;
        }
        let qd: f64 = case.loads.iter().filter(|l| index[&l.bus] == i).map(|l| l.qd / sb).sum();
        let shunt_q: f64 = case
            .shunts
            .iter()
            .filter(|s| index[&s.bus] == i)
            .map(|s| s.bs / sb * state.vm[i] * state.vm[i])
            .sum();
        let q_gen = s_calc[i].im + qd - shunt_q;
        let qmin: f64 = gens.iter().map(|g| g.qmin / sb).sum();
        let qmax: f64 = gens.iter().map(|g| g.qmax / sb).sum();
        let widen = |b: f64| tol.reactive * b.abs().max(1.0);
        if q_gen > qmax + widen(qmax) {
            violations.push(LimitViolation { kind: ViolationKind::Balance, element: i, magnitude: q_gen - qmax });
        } else if q_gen < qmin - widen(qmin) {
            violations.push(LimitViolation { kind: ViolationKind::Balance, element: i, magnitude: qmin - q_gen });
        }
    }

    FeasibilityReport { feasible: violations.is_empty(), violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{Branch, Bus, Generator, Load};
    use crate::cases::CASE14;
    use crate::matpower::parse_matpower_case;

    /// 2-bus fixture: slack with vg = 1.0, lossless line x = 0.1 p.u.,
    /// load 0.5 + j0 p.u.
    pub(crate) fn two_bus_case() -> GridCase {
        GridCase {
            name: "two_bus".into(),
            base_mva: 100.0,
            buses: vec![
                Bus { id: 1, bus_type: BusType::Ref, base_kv: 100.0, vmin: 0.9, vmax: 1.1 },
                Bus { id: 2, bus_type: BusType::Pq, base_kv: 100.0, vmin: 0.9, vmax: 1.1 },
            ],
            generators: vec![Generator {
                bus: 1,
                pg: 50.0,
                qg: 0.0,
                qmax: 100.0,
                qmin: -100.0,
                vg: 1.0,
                mbase: 100.0,
                status: true,
                pmax: 100.0,
                pmin: 0.0,
                cost: [0.0, 10.0, 0.0],
            }],
            loads: vec![Load { bus: 2, pd: 50.0, qd: 0.0 }],
            shunts: vec![],
            branches: vec![Branch {
                from: 1,
                to: 2,
                r: 0.0,
                x: 0.1,
                b: 0.0,
                rate_a: 0.0,
                rate_b: 0.0,
                rate_c: 0.0,
                tap: 0.0,
                shift: 0.0,
                status: true,
                angmin: -360.0,
                angmax: 360.0,
            }],
        }
    }

    /// Closed-form solution of the two-bus fixture, independent of the
    /// Newton path: with V1 = 1, x = 0.1, S2 = -0.5 + j0,
    /// writing V2 = a + jb gives b = -P2*x = -0.05 and a^2 - a + b^2 = 0.
    fn two_bus_analytic() -> (f64, f64) {
        let b: f64 = -0.05;
        let a = (1.0 + (1.0 - 4.0 * b * b).sqrt()) / 2.0;
        (b.atan2(a), (a * a + b * b).sqrt())
    }

    #[test]
    fn two_bus_matches_analytic_solution() {
        let case = two_bus_case();
        let state = solve_power_flow(&case, None).unwrap();
        let (va2, vm2) = two_bus_analytic();
        assert!(state.va[1] < 0.0, "load-bus angle should be negative");
        assert!((state.va[1] - va2).abs() < 1e-8, "va {} vs {}", state.va[1], va2);
        assert!((state.vm[1] - vm2).abs() < 1e-8, "vm {} vs {}", state.vm[1], vm2);
        assert_eq!(state.va[0], 0.0);
        assert!(power_balance_residual(&case, &state) < PF_TOLERANCE);
    }

    #[test]
    fn lossless_line_conserves_active_power() {
        let case = two_bus_case();
        let state = solve_power_flow(&case, None).unwrap();
        let flows = branch_flows(&case, &state);
        assert!((flows[0].0.re + flows[0].1.re).abs() < 1e-10);
    }

    #[test]
    fn zero_load_flat_solution_in_two_iterations() {
        let mut case = two_bus_case();
        case.loads.clear();
        case.generators[0].pg = 0.0;
        let (state, iters) = solve_power_flow_iter(&case, None).unwrap();
        assert!(iters <= 2, "took {iters} iterations");
        assert!(state.va[1].abs() < 1e-10);
        assert!((state.vm[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn islanded_case_fails() {
        let mut case = two_bus_case();
        case.branches[0].status = false;
        match solve_power_flow(&case, None) {
            Err(PowerFlowError::SingularJacobian { .. }) | Err(PowerFlowError::NonConvergence { .. }) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn case14_converges_near_published_state() {
        let case = parse_matpower_case(CASE14).unwrap();
        let (state, iters) = solve_power_flow_iter(&case, None).unwrap();
        assert!(iters <= 10);
        assert!(power_balance_residual(&case, &state) < PF_TOLERANCE);
        // The bundled file records the solved voltages; dispatch-based power
        // flow should land close to them.
        assert!((state.vm[0] - 1.06).abs() < 1e-6);
        assert!((state.vm[3] - 1.019).abs() < 5e-3);
        assert!((crate::case::deg_to_rad(-12.72) - state.va[2]).abs() < 5e-3);
    }

    #[test]
    fn case30_converges() {
        let case = parse_matpower_case(crate::cases::CASE30).unwrap();
        let (state, _) = solve_power_flow_iter(&case, None).unwrap();
        assert!(power_balance_residual(&case, &state) < PF_TOLERANCE);
        for vm in &state.vm {
            assert!(*vm > 0.8 && *vm < 1.2);
        }
    }

    #[test]
    fn feasible_two_bus_has_empty_report() {
        let case = two_bus_case();
        let state = solve_power_flow(&case, None).unwrap();
        let report = check_feasibility(&case, &state, FeasibilityTolerances::default());
        assert!(report.feasible, "{:?}", report.violations);
    }

    #[test]
    fn lowered_vmax_triggers_voltage_violation() {
        let mut case = two_bus_case();
        let state = solve_power_flow(&case, None).unwrap();
        case.buses[1].vmax = state.vm[1] - 0.01;
        let report = check_feasibility(&case, &state, FeasibilityTolerances::default());
        assert!(!report.feasible);
        let v: Vec<_> = report.violations.iter().filter(|v| v.kind == ViolationKind::Voltage).collect();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].element, 1);
    }

    #[test]
    fn lowered_rate_triggers_thermal_violation() {
        let mut case = two_bus_case();
        let state = solve_power_flow(&case, None).unwrap();
        let flows = branch_flows(&case, &state);
        let s = flows[0].0.norm().max(flows[0].1.norm());
        case.branches[0].rate_a = s * case.base_mva * 0.9;
        let report = check_feasibility(&case, &state, FeasibilityTolerances::default());
        let v: Vec<_> = report.violations.iter().filter(|v| v.kind == ViolationKind::Thermal).collect();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].element, 0);
    }
}
