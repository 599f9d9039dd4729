//! Post-processing checks over trajectories: entropy–dissipation balance,
//! exponential-rate fits, a high-accuracy ODE reference for spatially
//! homogeneous runs, the cumulative gradient bound, the extinction
//! instability probe, and refinement tables.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};
use crate::model::{fitness, partial_extinction_state, ExtinctionPattern, ProblemData};
use crate::solver::{run_observed, SolverConfig, Trajectory};

/// Default EDI tolerance scale.
pub const DEFAULT_EDI_TOL_SCALE: f64 = 10.0;

/// Fraction of the run discarded before fitting a decay rate.
pub const DEFAULT_TRANSIENT_FRACTION: f64 = 0.2;

/// Entropy below `ENTROPY_FLOOR × (1 + max E)` counts as converged to roundoff.
pub const ENTROPY_FLOOR: f64 = 1e-26;

/// Tolerance of the reference ODE integrator.
pub const ORACLE_RTOL: f64 = 1e-10;

/// Allowed growth of the late slope of the cumulative gradient integral.
const GRAD_SLOPE_GROWTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flag {
    pub property: String,
    pub time: Option<f64>,
    pub detail: String,
}

impl Flag {
    pub fn new(property: impl Into<String>, time: Option<f64>, detail: impl Into<String>) -> Self {
        Flag {
            property: property.into(),
            time,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdiInterval {
    pub t0: f64,
    pub t1: f64,
    /// `E(t₀) − E(t₁) − ∫D`.
    pub residual: f64,
    /// Lower bound the residual must respect (a nonpositive number).
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdiAudit {
    pub intervals: Vec<EdiInterval>,
    pub passed: bool,
    pub max_abs_residual: f64,
}

impl EdiAudit {
    pub fn flags(&self) -> Vec<Flag> {
        self.intervals
            .iter()
            .filter(|i| !i.passed)
            .map(|i| {
                Flag::new(
                    "entropy-dissipation inequality",
                    Some(i.t0),
                    format!(
                        "residual {:e} below {:e} on [{}, {}]",
                        i.residual, i.bound, i.t0, i.t1
                    ),
                )
            })
            .collect()
    }
}

/// Per-interval residuals `r = E(t₀) − E(t₁) − ∫D` (trapezoid in time);
/// an interval passes iff `r ≥ −tol_scale·(Δt + h²)·(1 + E(t₀))`.
pub fn verify_edi(trajectory: &Trajectory, tol_scale: f64) -> Result<EdiAudit> {
    let snaps = trajectory.snapshots();
    if snaps.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            found: snaps.len(),
        });
    }
    let h2 = trajectory.h_max().powi(2);
    let intervals: Vec<EdiInterval> = snaps
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dt = b.time - a.time;
            let action = 0.5 * dt * (a.values.dissipation + b.values.dissipation);
            let residual = a.values.entropy - b.values.entropy - action;
            let bound = -tol_scale * (dt + h2) * (1.0 + a.values.entropy);
            EdiInterval {
                t0: a.time,
                t1: b.time,
                residual,
                bound,
                passed: residual >= bound,
            }
        })
        .collect();
    Ok(EdiAudit {
        passed: intervals.iter().all(|i| i.passed),
        max_abs_residual: intervals.iter().map(|i| i.residual.abs()).fold(0.0, f64::max),
        intervals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FitWindow {
    /// Drop this fraction of the run from the start.
    DiscardFraction(f64),
    /// Explicit time range.
    Range(f64, f64),
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::DiscardFraction(DEFAULT_TRANSIENT_FRACTION)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub r_squared: f64,
    pub window: [f64; 2],
    pub samples: usize,
}

/// Least-squares fit of `log E(t) ≈ c − γt` on the window.
pub fn fit_decay_rate(trajectory: &Trajectory, window: FitWindow) -> Result<DecayFit> {
    fit_log_linear(&trajectory.times(), &trajectory.entropies(), window)
}

/// Fits `log values` against `times` on the window; `γ = −slope`.
pub fn fit_log_linear(times: &[f64], values: &[f64], window: FitWindow) -> Result<DecayFit> {
    let (t_first, t_last) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::TooFewSnapshots { needed: 2, found: 0 }),
    };
    let (lo, hi) = match window {
        FitWindow::DiscardFraction(frac) => (t_first + frac * (t_last - t_first), t_last),
        FitWindow::Range(a, b) => (a, b),
    };
    let max_e = values.iter().copied().fold(0.0, f64::max);
    let floor = ENTROPY_FLOOR * (1.0 + max_e);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &e) in times.iter().zip(values) {
        if t < lo - 1e-12 * t.abs().max(1.0) || t > hi + 1e-12 * t.abs().max(1.0) {
            continue;
        }
        if e <= floor {
            return Err(Error::EntropyFloor { time: t });
        }
        xs.push(t);
        ys.push(e.ln());
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            found: xs.len(),
        });
    }
    let (slope, r_squared) = least_squares(&xs, &ys);
    Ok(DecayFit {
        gamma: -slope,
        r_squared,
        window: [lo, hi],
        samples: xs.len(),
    })
}

/// Slope and coefficient of determination of a straight-line fit. A constant
/// series is a perfect fit.
fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, 1.0);
    }
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (my + slope * (x - mx))).powi(2))
        .sum();
    let r2 = if syy <= f64::MIN_POSITIVE { 1.0 } else { 1.0 - ss_res / syy };
    (slope, r2)
}

/// Reference solution of `duᵢ/dt = uᵢ(mᵢ − (Au)ᵢ)` for spatially constant data,
/// by adaptive Dormand–Prince 5(4).
pub fn ode_oracle(data: &ProblemData, u0: &[f64], t_end: f64, rtol: f64) -> Result<Vec<f64>> {
    if !data.is_spatially_constant() {
        return Err(Error::Config("ODE oracle needs spatially constant A and m".into()));
    }
    let n = data.n_species();
    if u0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "ODE initial value",
            expected: n,
            found: u0.len(),
        });
    }
    let a = data.a_at(0).to_vec();
    let m: Vec<f64> = (0..n).map(|i| data.m_at(i, 0)).collect();
    let rhs = |y: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut f = m[i];
            for j in 0..n {
                f -= a[i * n + j] * y[j];
            }
            out[i] = y[i] * f;
        }
    };
    dopri5(rhs, u0, t_end, rtol, rtol * 1e-2)
}

/// Dormand–Prince 5(4) with FSAL and standard step-size control.
fn dopri5<F>(f: F, y0: &[f64], t_end: f64, rtol: f64, atol: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    // fifth-order weights are A[6]; difference to the embedded fourth order
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let _ = C;
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut t = 0.0;
    let mut h = (1e-3 * t_end).min(1e-2);
    f(&y, &mut k[0]);
    let mut steps = 0usize;
    while t < t_end {
        if steps > 10_000_000 {
            return Err(Error::Ode {
                time: t,
                reason: "step limit exceeded".into(),
            });
        }
        steps += 1;
        if t + h > t_end {
            h = t_end - t;
        }
        #[allow(clippy::needless_range_loop)]
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(&tmp, &mut tail[0]);
        }
        // stage 7 was evaluated at the fifth-order solution
        ynew.copy_from_slice(&tmp);
        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (s, ks) in k.iter().enumerate() {
                e += E[s] * ks[i];
            }
            let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
            err += (h * e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite() || v.abs() > 1e100) {
            if h < 1e-14 * t_end.max(1.0) {
                return Err(Error::Ode {
                    time: t,
                    reason: "solution blew up".into(),
                });
            }
            h *= 0.1;
            continue;
        }
        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&ynew);
            let last = k[6].clone();
            k[0] = last;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * t_end.max(1.0) && t < t_end {
            return Err(Error::Ode {
                time: t,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradAudit {
    /// `∫₀ᵀ∫|∇u|²`.
    pub cumulative: f64,
    /// `sup_t cumulative(t)/t`.
    pub c_fit: f64,
    /// Least-squares slope of the cumulative integral over the second half.
    pub late_slope: f64,
    /// Slopes over the third and fourth quarters of the run.
    pub quarter_slopes: Option<[f64; 2]>,
    pub passed: bool,
}

/// Cumulative gradient integral and a super-linear-growth test on the second
/// half of the run.
pub fn grad_estimate_audit(trajectory: &Trajectory) -> Result<GradAudit> {
    let snaps = trajectory.snapshots();
    if snaps.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            found: snaps.len(),
        });
    }
    let times = trajectory.times();
    let g: Vec<f64> = snaps.iter().map(|s| s.values.grad_u_l2).collect();
    let mut cum = vec![0.0; times.len()];
    for k in 1..times.len() {
        cum[k] = cum[k - 1] + 0.5 * (times[k] - times[k - 1]) * (g[k] + g[k - 1]);
    }
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let span = t_end - t0;
    let c_fit = times
        .iter()
        .zip(&cum)
        .filter(|(t, _)| **t > t0)
        .map(|(t, c)| c / (t - t0))
        .fold(0.0, f64::max);

    let slope_on = |a: f64, b: f64| -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = times
            .iter()
            .zip(&cum)
            .filter(|(t, _)| **t >= a && **t <= b)
            .map(|(t, c)| (*t, *c))
            .unzip();
        (xs.len() >= 2).then(|| least_squares(&xs, &ys).0)
    };
    let mid = t0 + 0.5 * span;
    let q3 = t0 + 0.75 * span;
    let late_slope = slope_on(mid, t_end).unwrap_or(0.0);
    let quarter_slopes = match (slope_on(mid, q3), slope_on(q3, t_end)) {
        (Some(a), Some(b)) => Some([a, b]),
        _ => None,
    };
    let passed = match quarter_slopes {
        Some([s3, s4]) => s4 <= s3 * (1.0 + GRAD_SLOPE_GROWTH) + 1e-12 * (1.0 + c_fit),
        None => true,
    };
    Ok(GradAudit {
        cumulative: *cum.last().unwrap(),
        c_fit,
        late_slope,
        quarter_slopes,
        passed,
    })
}

/// Largest defined Beckner ratio along a trajectory.
pub fn beckner_sup(trajectory: &Trajectory) -> Option<f64> {
    trajectory
        .snapshots()
        .iter()
        .filter_map(|s| s.values.beckner_ratio())
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub pattern: String,
    pub eta: f64,
    pub window: f64,
    /// Smallest fitness of a reintroduced species over all cells at `t = 0`.
    pub min_reintroduced_fitness: f64,
    pub fitness_positive: bool,
    /// Masses of the reintroduced species at every step (outer: species).
    pub masses: Vec<Vec<f64>>,
    pub mass_increasing: bool,
}

/// Reintroduces a density `eta` of every extinct species on top of the
/// extinction state and watches the first `window` time units.
pub fn extinction_instability_probe(
    data: &ProblemData,
    grid: &Grid,
    pattern: &ExtinctionPattern,
    eta: f64,
    window: f64,
) -> Result<ProbeReport> {
    let mut u0 = partial_extinction_state(data, pattern)?;
    let extinct = pattern.extinct();
    for &i in &extinct {
        u0.component_mut(i).fill(eta);
    }
    let f = fitness(data, &u0)?;
    let min_fit = extinct
        .iter()
        .flat_map(|&i| f.component(i).iter().copied())
        .fold(f64::INFINITY, f64::min);

    let mut config = SolverConfig::new(window);
    config.keep_states = false;
    config.snapshot_stride = usize::MAX;
    let mut masses: Vec<Vec<f64>> = extinct
        .iter()
        .map(|&i| vec![grid.integrate_component(u0.component(i))])
        .collect();
    run_observed(data, grid, &u0, &config, |e| {
        for (k, &i) in extinct.iter().enumerate() {
            masses[k].push(grid.integrate_component(e.after.component(i)));
        }
    })?;
    let mass_increasing = !extinct.is_empty()
        && masses
            .iter()
            .all(|m| m.windows(2).all(|w| w[1] > w[0]));
    Ok(ProbeReport {
        pattern: pattern.to_string(),
        eta,
        window,
        min_reintroduced_fitness: min_fit,
        fitness_positive: min_fit > 0.0,
        masses,
        mass_increasing,
    })
}

/// One level of a refinement sequence: the parameter value and the state at
/// the common final time.
#[derive(Debug, Clone)]
pub struct RefinementLevel {
    pub parameter: f64,
    pub grid: Grid,
    pub state: CellField,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub parameter: f64,
    /// L² distance to the previous level.
    pub diff_to_previous: Option<f64>,
    /// `log(d_{k-1}/d_k) / log(p_{k-1}/p_k)` for geometric sequences.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementTable {
    pub rows: Vec<RefinementRow>,
    /// Successive differences strictly shrink (or vanish identically).
    pub monotone: bool,
    pub flags: Vec<Flag>,
}

/// Restriction of a fine field to a coarse grid by block averaging; grids
/// must cover the same domain with integer refinement ratios.
pub fn restrict(fine_grid: &Grid, fine: &CellField, coarse_grid: &Grid) -> Result<CellField> {
    let [fx, fy] = fine_grid.extents();
    let [cx, cy] = coarse_grid.extents();
    let same_domain = fine_grid
        .lengths()
        .iter()
        .zip(coarse_grid.lengths())
        .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
    if fine_grid.dim() != coarse_grid.dim() || !same_domain || fx % cx != 0 || fy % cy != 0 {
        return Err(Error::Config(format!(
            "cannot restrict a {fx}×{fy} grid onto {cx}×{cy}"
        )));
    }
    let (rx, ry) = (fx / cx, fy / cy);
    let weight = 1.0 / (rx * ry) as f64;
    Ok(CellField::from_fn(fine.n_comp(), coarse_grid.n_cells(), |i, c| {
        let (ix, iy) = (c % cx, c / cx);
        let mut s = 0.0;
        for by in 0..ry {
            for bx in 0..rx {
                s += fine.get(i, (iy * ry + by) * fx + ix * rx + bx);
            }
        }
        s * weight
    }))
}

/// `‖a − b‖_{L²}` summed over components, evaluated on the coarser grid.
pub fn l2_distance(grid_a: &Grid, a: &CellField, grid_b: &Grid, b: &CellField) -> Result<f64> {
    let (cg, ca, cb) = if grid_a.n_cells() <= grid_b.n_cells() {
        (grid_a, a.clone(), restrict(grid_b, b, grid_a)?)
    } else {
        (grid_b, restrict(grid_a, a, grid_b)?, b.clone())
    };
    if ca.n_comp() != cb.n_comp() {
        return Err(Error::DimensionMismatch {
            what: "refinement components",
            expected: ca.n_comp(),
            found: cb.n_comp(),
        });
    }
    let sq: Vec<f64> = ca
        .as_slice()
        .iter()
        .zip(cb.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .collect();
    Ok((cg.cell_volume() * crate::par::pairwise_sum(&sq)).sqrt())
}

/// Successive L² differences and observed orders across at least three levels.
pub fn refinement_study(levels: &[RefinementLevel]) -> Result<RefinementTable> {
    if levels.len() < 3 {
        return Err(Error::TooFewSnapshots {
            needed: 3,
            found: levels.len(),
        });
    }
    let mut rows = vec![RefinementRow {
        parameter: levels[0].parameter,
        diff_to_previous: None,
        observed_order: None,
    }];
    for k in 1..levels.len() {
        let d = l2_distance(&levels[k - 1].grid, &levels[k - 1].state, &levels[k].grid, &levels[k].state)?;
        rows.push(RefinementRow {
            parameter: levels[k].parameter,
            diff_to_previous: Some(d),
            observed_order: None,
        });
    }
    for k in 2..rows.len() {
        let (d0, d1) = (rows[k - 1].diff_to_previous.unwrap(), rows[k].diff_to_previous.unwrap());
        let ratio = levels[k - 1].parameter / levels[k].parameter;
        if d0 > 0.0 && d1 > 0.0 && ratio.is_finite() && ratio > 0.0 && ratio != 1.0 {
            rows[k].observed_order = Some((d0 / d1).ln() / ratio.ln().abs());
        }
    }
    let mut flags = Vec::new();
    for k in 2..rows.len() {
        let (d0, d1) = (rows[k - 1].diff_to_previous.unwrap(), rows[k].diff_to_previous.unwrap());
        let shrinking = d1 < d0 || (d0 == 0.0 && d1 == 0.0);
        if !shrinking {
            flags.push(Flag::new(
                "refinement monotonicity",
                None,
                format!(
                    "difference {d1:e} at parameter {} does not shrink from {d0:e}",
                    levels[k].parameter
                ),
            ));
        }
    }
    Ok(RefinementTable {
        monotone: flags.is_empty(),
        rows,
        flags,
    })
}

/// Collected diagnostics for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub edi_residuals: Vec<EdiInterval>,
    pub gamma_fit: Option<DecayFit>,
    pub oracle_error: Option<f64>,
    pub beckner_sup: Option<f64>,
    pub grad_bound: Option<GradAudit>,
    pub flags: Vec<Flag>,
}

impl DiagnosticsReport {
    pub fn flag(&mut self, flag: Flag) {
        self.flags.push(flag);
    }

    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        if !self.edi_residuals.is_empty() {
            let worst = self
                .edi_residuals
                .iter()
                .map(|i| i.residual)
                .fold(f64::INFINITY, f64::min);
            let failed = self.edi_residuals.iter().filter(|i| !i.passed).count();
            s.push_str(&format!(
                "EDI: {} intervals, most negative residual {worst:e}, {failed} failed\n",
                self.edi_residuals.len()
            ));
        }
        if let Some(g) = &self.gamma_fit {
            s.push_str(&format!(
                "decay: gamma = {:.6} (R^2 = {:.6}) on [{}, {}]\n",
                g.gamma, g.r_squared, g.window[0], g.window[1]
            ));
        }
        if let Some(e) = self.oracle_error {
            s.push_str(&format!("ODE oracle relative error: {e:e}\n"));
        }
        if let Some(b) = self.beckner_sup {
            s.push_str(&format!("Beckner ratio sup: {b:.6}\n"));
        }
        if let Some(g) = &self.grad_bound {
            s.push_str(&format!(
                "gradient bound: cumulative {:.6e}, C_fit {:.6e}, late slope {:.6e}, {}\n",
                g.cumulative,
                g.c_fit,
                g.late_slope,
                if g.passed { "ok" } else { "super-linear" }
            ));
        }
        if self.flags.is_empty() {
            s.push_str("all checks passed\n");
        } else {
            for f in &self.flags {
                match f.time {
                    Some(t) => s.push_str(&format!("FLAG {} at t = {t}: {}\n", f.property, f.detail)),
                    None => s.push_str(&format!("FLAG {}: {}\n", f.property, f.detail)),
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{trapezoid, FunctionalValues};
    use crate::solver::{run, Snapshot, TimeStep};
    use approx::assert_relative_eq;

    fn values(entropy: f64, dissipation: f64, grad: f64) -> FunctionalValues {
        FunctionalValues {
            entropy,
            dissipation,
            masses: vec![1.0],
            boltzmann: vec![0.0],
            fitness_l2: dissipation,
            grad_u_l2: grad,
        }
    }

    fn synthetic(times: &[f64], e: impl Fn(f64) -> f64, d: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> Trajectory {
        let snaps = times
            .iter()
            .enumerate()
            .map(|(k, &t)| Snapshot {
                step: k,
                time: t,
                dt: if k == 0 { 0.0 } else { t - times[k - 1] },
                values: values(e(t), d(t), g(t)),
                state: None,
            })
            .collect();
        Trajectory::from_snapshots(snaps, 1, 0.01).unwrap()
    }

    fn grid_times(n: usize, t_end: f64) -> Vec<f64> {
        (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn edi_on_stationary_trajectory() {
        let t = grid_times(11, 1.0);
        let traj = synthetic(&t, |_| 0.0, |_| 0.0, |_| 0.0);
        let audit = verify_edi(&traj, 10.0).unwrap();
        assert!(audit.passed);
        assert!(audit.intervals.iter().all(|i| i.residual == 0.0));
    }

    #[test]
    fn edi_detects_inflated_dissipation() {
        let t = grid_times(11, 1.0);
        // exact pair E = e^{-t}, D = e^{-t}, then inflate D on (0.5, 0.6]
        let traj = synthetic(&t, |s| (-s).exp(), |s| if s > 0.55 && s < 0.65 { 50.0 } else { (-s).exp() }, |_| 0.0);
        let audit = verify_edi(&traj, 10.0).unwrap();
        assert!(!audit.passed);
        let flags = audit.flags();
        assert_eq!(flags.len(), 2);
        assert_relative_eq!(flags[0].time.unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn edi_residual_matches_logistic_closed_form() {
        // N=1, A=1, m=1: E = ½∫(1−u)², D = ∫u(1−u)²; quadrature error halves with dt
        let g = Grid::new_1d(4, 1.0).unwrap();
        let d = ProblemData::constant(&[vec![1.0]], &[1.0], 4).unwrap();
        let u0 = CellField::uniform(&[0.2], 4);
        let mut res = Vec::new();
        for dt in [0.01, 0.005] {
            let mut cfg = SolverConfig::new(1.0);
            cfg.dt = TimeStep::Fixed(dt);
            let traj = run(&d, &g, &u0, &cfg).unwrap();
            let audit = verify_edi(&traj, 10.0).unwrap();
            assert!(audit.passed);
            // total residual against the exact logistic energy balance
            let u = |t: f64| 0.2 * t.exp() / (1.0 - 0.2 + 0.2 * t.exp());
            let e = |t: f64| 0.5 * (1.0 - u(t)).powi(2);
            let total: f64 = audit.intervals.iter().map(|i| i.residual).sum();
            let exact_drop = e(0.0) - e(1.0);
            let ds: Vec<f64> = traj.snapshots().iter().map(|s| s.values.dissipation).collect();
            let action = trapezoid(&traj.times(), &ds);
            assert_relative_eq!(total, traj.first().values.entropy - traj.last().values.entropy - action, epsilon = 1e-12);
            assert!((traj.first().values.entropy - exact_drop - e(1.0)).abs() < 1e-12);
            res.push(audit.max_abs_residual);
        }
        let order = (res[0] / res[1]).log2();
        assert!(order > 0.9, "{res:?}");
    }

    #[test]
    fn decay_fit_on_exact_exponential() {
        let t = grid_times(50, 5.0);
        let e: Vec<f64> = t.iter().map(|s| (-2.0 * s).exp()).collect();
        let fit = fit_log_linear(&t, &e, FitWindow::Range(0.0, 5.0)).unwrap();
        assert!((fit.gamma - 2.0).abs() <= 1e-12);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert_eq!(fit.samples, 50);

        let c = vec![0.3; 50];
        let fit = fit_log_linear(&t, &c, FitWindow::default()).unwrap();
        assert_eq!(fit.gamma, 0.0);
    }

    #[test]
    fn decay_fit_rejects_floor() {
        let t = grid_times(10, 1.0);
        let mut e: Vec<f64> = t.iter().map(|s| (-s).exp()).collect();
        e[7] = 0.0;
        assert!(matches!(
            fit_log_linear(&t, &e, FitWindow::default()),
            Err(Error::EntropyFloor { time }) if (time - t[7]).abs() < 1e-15
        ));
    }

    #[test]
    fn ode_oracle_cases() {
        let d = ProblemData::constant(&[vec![1.0]], &[1.0], 2).unwrap();
        let u = ode_oracle(&d, &[0.5], 1.0, ORACLE_RTOL).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(u[0], e / (1.0 + e), max_relative = 1e-9);

        let d2 = ProblemData::constant(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0], 2).unwrap();
        assert_eq!(ode_oracle(&d2, &[1.0, 1.0], 3.0, ORACLE_RTOL).unwrap(), vec![1.0, 1.0]);
        assert_eq!(ode_oracle(&d2, &[0.0, 0.0], 3.0, ORACLE_RTOL).unwrap(), vec![0.0, 0.0]);
        assert!(ode_oracle(&d2, &[1.0], 1.0, ORACLE_RTOL).is_err());
    }

    #[test]
    fn ode_oracle_converges_to_coexistence() {
        let d = ProblemData::constant(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0], 2).unwrap();
        let u = ode_oracle(&d, &[0.5, 2.0], 40.0, ORACLE_RTOL).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-8 && (u[1] - 1.0).abs() < 1e-8, "{u:?}");
    }

    #[test]
    fn grad_audit_cases() {
        let t = grid_times(41, 4.0);
        let zero = synthetic(&t, |_| 1.0, |_| 0.0, |_| 0.0);
        let a = grad_estimate_audit(&zero).unwrap();
        assert_eq!(a.cumulative, 0.0);
        assert!(a.passed);

        let flat = synthetic(&t, |_| 1.0, |_| 0.0, |_| 2.5);
        let a = grad_estimate_audit(&flat).unwrap();
        assert_relative_eq!(a.cumulative, 10.0, epsilon = 1e-12);
        assert_relative_eq!(a.c_fit, 2.5, epsilon = 1e-12);
        assert!(a.passed);

        let growing = synthetic(&t, |_| 1.0, |_| 0.0, |s| s * s);
        assert!(!grad_estimate_audit(&growing).unwrap().passed);
    }

    #[test]
    fn refinement_identical_levels() {
        let g = Grid::new_1d(8, 1.0).unwrap();
        let s = CellField::uniform(&[1.0, 2.0], 8);
        let levels: Vec<RefinementLevel> = (0..3)
            .map(|k| RefinementLevel {
                parameter: 1.0 / (1 << k) as f64,
                grid: g.clone(),
                state: s.clone(),
            })
            .collect();
        let table = refinement_study(&levels).unwrap();
        assert!(table.rows.iter().skip(1).all(|r| r.diff_to_previous == Some(0.0)));
        assert!(table.monotone);
        assert!(refinement_study(&levels[..2]).is_err());
    }

    #[test]
    fn refinement_orders_and_restriction() {
        // synthetic first-order error: state = exact + parameter
        let g = Grid::new_1d(8, 1.0).unwrap();
        let levels: Vec<RefinementLevel> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&p| RefinementLevel {
                parameter: p,
                grid: g.clone(),
                state: CellField::uniform(&[1.0 + p], 8),
            })
            .collect();
        let t = refinement_study(&levels).unwrap();
        for r in &t.rows[2..] {
            assert_relative_eq!(r.observed_order.unwrap(), 1.0, epsilon = 1e-9);
        }
        assert!(t.monotone);

        let fine = Grid::new_1d(16, 1.0).unwrap();
        let f = CellField::from_fn(1, 16, |_, c| c as f64);
        let r = restrict(&fine, &f, &g).unwrap();
        assert_eq!(r.component(0)[0], 0.5);
        assert_eq!(r.component(0)[7], 14.5);
        assert!(restrict(&Grid::new_1d(12, 1.0).unwrap(), &CellField::zeros(1, 12), &g).is_err());

        let mut bad = levels.clone();
        bad[3].state = CellField::uniform(&[5.0], 8);
        let t = refinement_study(&bad).unwrap();
        assert!(!t.monotone);
        assert_eq!(t.flags.len(), 1);
    }

    #[test]
    fn probe_on_two_species_instance() {
        let g = Grid::new_1d(16, 1.0).unwrap();
        let d = ProblemData::constant(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0], 16).unwrap();
        let p = ExtinctionPattern::new(2, &[0]).unwrap();
        let r = extinction_instability_probe(&d, &g, &p, 1e-3, 0.5).unwrap();
        assert_relative_eq!(r.min_reintroduced_fitness, 1.5 - 2e-3, epsilon = 1e-12);
        assert!(r.fitness_positive && r.mass_increasing);

        let r0 = extinction_instability_probe(&d, &g, &p, 0.0, 0.5).unwrap();
        assert!(!r0.mass_increasing);
        assert!(r0.masses[0].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn report_json_keys() {
        let mut r = DiagnosticsReport::default();
        r.flag(Flag::new("decay", Some(1.0), "gamma <= 0"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["edi_residuals", "gamma_fit", "oracle_error", "beckner_sup", "grad_bound", "flags"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(!r.passed());
        assert!(r.summary().contains("FLAG decay at t = 1"));
    }
}
