//! Explicit upwind finite-volume time stepping for
//! `∂ₜuᵢ = −div(ũᵢ∇fᵢ) + ũᵢfᵢ + δΔuᵢ`, `f = m − Au`, `ũᵢ = min(uᵢ, M)`.
//!
//! Advective fluxes use donor-cell densities so the update stays nonnegative
//! under [`stability_bound`]. The optional Patankar treatment moves the
//! destruction part of the reaction to the new time level.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::functionals::{self, FunctionalValues};
use crate::grid::{CellField, Grid};
use crate::io::hash_f64s;
use crate::model::{MatrixField, ProblemData};
use crate::par;

pub const DEFAULT_CFL_SAFETY: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeStep {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionScheme {
    Explicit,
    Patankar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub dt: TimeStep,
    pub t_end: f64,
    pub cfl_safety: f64,
    /// Coefficient of the linear diffusion regularization.
    pub delta: f64,
    /// Truncation level for the advective and reaction weights.
    #[serde(serialize_with = "serialize_maybe_inf")]
    pub truncation_m: f64,
    pub reaction_scheme: ReactionScheme,
    /// Record every `snapshot_stride` steps.
    pub snapshot_stride: usize,
    /// Also record at the first step reaching each multiple of this time.
    pub snapshot_interval: Option<f64>,
    /// Keep full fields at every snapshot (first and last are always kept).
    pub keep_states: bool,
}

fn serialize_maybe_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

impl SolverConfig {
    pub fn new(t_end: f64) -> Self {
        SolverConfig {
            dt: TimeStep::Auto,
            t_end,
            cfl_safety: DEFAULT_CFL_SAFETY,
            delta: 0.0,
            truncation_m: f64::INFINITY,
            reaction_scheme: ReactionScheme::Explicit,
            snapshot_stride: 1,
            snapshot_interval: None,
            keep_states: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad(format!("delta must be nonnegative, got {}", self.delta));
        }
        if !(self.truncation_m > 0.0) || self.truncation_m.is_nan() {
            return bad(format!("truncation M must be positive, got {}", self.truncation_m));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1".into());
        }
        if let Some(iv) = self.snapshot_interval {
            if !(iv.is_finite() && iv > 0.0) {
                return bad(format!("snapshot_interval must be positive, got {iv}"));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let dt = match self.dt {
            TimeStep::Auto => -1.0,
            TimeStep::Fixed(v) => v,
        };
        let scheme = match self.reaction_scheme {
            ReactionScheme::Explicit => 0.0,
            ReactionScheme::Patankar => 1.0,
        };
        let nums = [
            dt,
            self.t_end,
            self.cfl_safety,
            self.delta,
            self.truncation_m,
            scheme,
            self.snapshot_stride as f64,
            self.snapshot_interval.unwrap_or(-1.0),
        ];
        hash_f64s([&nums[..]])
    }
}

/// Rate bounds entering the time-step restrictions; each is a per-unit-time
/// rate, so a step is admissible when `dt × rate` is small.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRates {
    /// `max |∇fᵢ|/h × faces per cell`: upwind outflow.
    pub advection: f64,
    /// `max (fᵢ)₋`: explicit reaction loss.
    pub reaction_loss: f64,
    /// `2δ Σ 1/h²`.
    pub diffusion: f64,
    /// `2 ρ Σ 1/h²` with `ρ` a bound on the spectral radius of `diag(ũ)A`:
    /// the implicit nonlinear diffusion carried by `ũ∇f`.
    pub cross_diffusion: f64,
    /// Gershgorin bound of the reaction Jacobian `diag(f) − diag(ũ)A`.
    pub reaction_jacobian: f64,
}

impl StepRates {
    /// Sum entering the positivity bound.
    pub fn positivity(&self) -> f64 {
        self.advection + self.reaction_loss + self.diffusion
    }

    /// Positivity rate of a given scheme (Patankar needs no reaction term).
    pub fn positivity_for(&self, scheme: ReactionScheme) -> f64 {
        match scheme {
            ReactionScheme::Explicit => self.positivity(),
            ReactionScheme::Patankar => self.advection + self.diffusion,
        }
    }

    /// Rate of the linearized explicit update.
    pub fn linear(&self) -> f64 {
        self.cross_diffusion + self.diffusion + self.reaction_jacobian
    }
}

/// Result of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: CellField,
    pub dt: f64,
    /// `∫` of the reaction rate actually applied, per species.
    pub reaction_integral: Vec<f64>,
}

/// Reusable buffers for stepping one trajectory.
pub struct Stepper<'a> {
    data: &'a ProblemData,
    grid: &'a Grid,
    config: &'a SolverConfig,
    f: Vec<f64>,
    grad: Vec<f64>,
    flux: Vec<f64>,
    div: Vec<f64>,
    lap: Vec<f64>,
    lap_grad: Vec<f64>,
    trunc: Vec<f64>,
    sqrt_trunc: Vec<f64>,
    /// `Σⱼ|aᵢⱼ|√ũⱼ` per species and cell, for constant `A`.
    sym: Vec<f64>,
    prepared: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(data: &'a ProblemData, grid: &'a Grid, config: &'a SolverConfig) -> Result<Self> {
        config.validate()?;
        if data.n_cells() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "problem data vs grid",
                expected: grid.n_cells(),
                found: data.n_cells(),
            });
        }
        let n = data.n_species();
        let nc = grid.n_cells();
        let nf = grid.n_faces();
        Ok(Stepper {
            data,
            grid,
            config,
            f: vec![0.0; n * nc],
            grad: vec![0.0; n * nf],
            flux: vec![0.0; nf],
            div: vec![0.0; nc],
            lap: vec![0.0; nc],
            lap_grad: vec![0.0; nf],
            trunc: vec![0.0; nc],
            sqrt_trunc: vec![0.0; n * nc],
            sym: vec![0.0; n * nc],
            prepared: false,
        })
    }

    fn check_input(&self, u: &CellField) -> Result<()> {
        self.data.check_state(u, "state vs problem data")?;
        for i in 0..u.n_comp() {
            if let Some(c) = u.component(i).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { species: i, cell: c });
            }
        }
        match u.first_negative() {
            Some((species, cell, value)) => Err(Error::NegativeDensity {
                species,
                cell,
                value,
            }),
            None => Ok(()),
        }
    }

    /// Evaluates fitness and face gradients for `u`.
    pub fn prepare(&mut self, u: &CellField) -> Result<()> {
        self.check_input(u)?;
        self.data.fitness_into(u.as_slice(), &mut self.f);
        let nc = self.grid.n_cells();
        let nf = self.grid.n_faces();
        for i in 0..self.data.n_species() {
            self.grid
                .gradient_into(&self.f[i * nc..(i + 1) * nc], &mut self.grad[i * nf..(i + 1) * nf]);
        }
        let m_cap = self.config.truncation_m;
        for (s, &v) in self.sqrt_trunc.iter_mut().zip(u.as_slice()) {
            *s = v.min(m_cap).sqrt();
        }
        if let MatrixField::Uniform(a) = self.data.a() {
            let n = self.data.n_species();
            self.sym.fill(0.0);
            for i in 0..n {
                let row = &mut self.sym[i * nc..(i + 1) * nc];
                for j in 0..n {
                    let w = a[i * n + j].abs();
                    for (s, &q) in row.iter_mut().zip(&self.sqrt_trunc[j * nc..(j + 1) * nc]) {
                        *s += w * q;
                    }
                }
            }
        }
        self.prepared = true;
        Ok(())
    }

    /// Rate bounds at the prepared state.
    pub fn rates(&self) -> StepRates {
        debug_assert!(self.prepared);
        let grid = self.grid;
        let exec = grid.exec();
        let n = self.data.n_species();
        let nc = grid.n_cells();
        let nf = grid.n_faces();
        let inv_h2 = grid.inv_h2_sum();

        let nxf = grid.n_x_faces();
        let [hx, hy] = grid.spacing();
        let abs_max = |s: &[f64]| par::max_indexed(exec, s.len(), |k| s[k].abs()).max(0.0);
        let mut max_vel: f64 = 0.0;
        for i in 0..n {
            let g = &self.grad[i * nf..(i + 1) * nf];
            max_vel = max_vel.max(abs_max(&g[..nxf]) / hx);
            if nf > nxf {
                max_vel = max_vel.max(abs_max(&g[nxf..]) / hy);
            }
        }
        let loss = par::max_indexed(exec, n * nc, |k| (-self.f[k]).max(0.0)).max(0.0);

        // ρ bounds the spectral radius of diag(√ũ) A diag(√ũ) by row sums
        let data = self.data;
        let sq = &self.sqrt_trunc;
        let (cross, jac) = match data.a() {
            MatrixField::Uniform(a) => {
                let rho = par::max_indexed(exec, n * nc, |k| sq[k] * self.sym[k]);
                let mut jac = f64::NEG_INFINITY;
                for i in 0..n {
                    let row: f64 = (0..n).map(|j| a[i * n + j].abs()).sum();
                    let (si, fi) = (&sq[i * nc..(i + 1) * nc], &self.f[i * nc..(i + 1) * nc]);
                    jac = jac.max(par::max_indexed(exec, nc, |c| fi[c].abs() + si[c] * si[c] * row));
                }
                (rho, jac)
            }
            MatrixField::PerCell(_) => par::max2_indexed(exec, nc, |c| {
                let a = data.a_at(c);
                let mut rho = 0.0f64;
                let mut jac = 0.0f64;
                for i in 0..n {
                    let si = sq[i * nc + c];
                    let mut sym = 0.0;
                    let mut row = 0.0;
                    for j in 0..n {
                        let aij = a[i * n + j].abs();
                        sym += sq[j * nc + c] * aij;
                        row += aij;
                    }
                    rho = rho.max(si * sym);
                    jac = jac.max(self.f[i * nc + c].abs() + si * si * row);
                }
                (rho, jac)
            }),
        };
        let (cross, jac) = (cross.max(0.0), jac.max(0.0));
        StepRates {
            advection: max_vel * grid.faces_per_cell() as f64,
            reaction_loss: loss,
            diffusion: 2.0 * self.config.delta * inv_h2,
            cross_diffusion: 2.0 * cross * inv_h2,
            reaction_jacobian: jac,
        }
    }

    /// Largest step for the prepared state: positivity and linear stability,
    /// both scaled by `cfl_safety`. Infinite only when every rate vanishes.
    pub fn auto_dt(&self) -> f64 {
        let r = self.rates();
        let s = self.config.cfl_safety;
        let pos = r.positivity();
        let lin = r.linear();
        let a = if pos > 0.0 { s / pos } else { f64::INFINITY };
        let b = if lin > 0.0 { s / lin } else { f64::INFINITY };
        a.min(b)
    }

    /// Advances the prepared state by `dt`.
    pub fn advance(&mut self, u: &CellField, dt: f64) -> Result<StepReport> {
        if !self.prepared {
            self.prepare(u)?;
        }
        self.prepared = false;
        let grid = self.grid;
        let n = self.data.n_species();
        let nc = grid.n_cells();
        let nf = grid.n_faces();
        let m_cap = self.config.truncation_m;
        let delta = self.config.delta;
        let patankar = self.config.reaction_scheme == ReactionScheme::Patankar;
        let mut out = CellField::zeros(n, nc);
        let mut reaction_integral = Vec::with_capacity(n);
        let mut reaction = vec![0.0; nc];

        for i in 0..n {
            let ui = u.component(i);
            let fi = &self.f[i * nc..(i + 1) * nc];
            for (t, &v) in self.trunc.iter_mut().zip(ui) {
                *t = v.min(m_cap);
            }
            grid.upwind_into(&self.trunc, &self.grad[i * nf..(i + 1) * nf], &mut self.flux);
            grid.divergence_into(&self.flux, &mut self.div);
            if delta > 0.0 {
                grid.gradient_into(ui, &mut self.lap_grad);
                grid.divergence_into(&self.lap_grad, &mut self.lap);
            }
            let next = out.component_mut(i);
            for c in 0..nc {
                let ut = self.trunc[c];
                let diffusion = if delta > 0.0 { delta * self.lap[c] } else { 0.0 };
                let (value, rate) = if patankar {
                    let gain = ut * fi[c].max(0.0);
                    let loss_rate = (-fi[c]).max(0.0);
                    let ratio = if ui[c] > 0.0 { ut / ui[c] } else { 1.0 };
                    let numer = ui[c] + dt * (-self.div[c] + gain + diffusion);
                    let value = numer / (1.0 + dt * loss_rate * ratio);
                    (value, gain - loss_rate * ratio * value)
                } else {
                    let rate = ut * fi[c];
                    (ui[c] + dt * (-self.div[c] + rate + diffusion), rate)
                };
                if !value.is_finite() {
                    return Err(Error::NonFinite { species: i, cell: c });
                }
                next[c] = value;
                reaction[c] = rate;
            }
            reaction_integral.push(grid.integrate_component(&reaction));
        }
        Ok(StepReport {
            state: out,
            dt,
            reaction_integral,
        })
    }

    /// True when every term of the discrete right-hand side vanishes at the
    /// prepared state, so any step size reproduces `u` exactly.
    fn is_stationary(&mut self, u: &CellField) -> bool {
        let grid = self.grid;
        let nc = grid.n_cells();
        let nf = grid.n_faces();
        let m_cap = self.config.truncation_m;
        if u.as_slice().iter().zip(&self.f).any(|(&v, &f)| v.min(m_cap) * f != 0.0) {
            return false;
        }
        for i in 0..self.data.n_species() {
            let ui = u.component(i);
            if self.config.delta > 0.0 && ui.iter().any(|&v| v != ui[0]) {
                return false;
            }
            for (t, &v) in self.trunc.iter_mut().zip(ui) {
                *t = v.min(m_cap);
            }
            grid.upwind_into(&self.trunc, &self.grad[i * nf..(i + 1) * nf], &mut self.flux);
            grid.divergence_into(&self.flux, &mut self.div);
            if self.div[..nc].iter().any(|&d| d != 0.0) {
                return false;
            }
        }
        true
    }

    /// Chooses `dt` per the config (capped at `max_dt`) and advances. In auto
    /// mode an exactly stationary state is advanced by `max_dt` in one step.
    pub fn step_capped(&mut self, u: &CellField, max_dt: f64) -> Result<StepReport> {
        self.prepare(u)?;
        let dt = match self.config.dt {
            TimeStep::Auto => {
                if self.is_stationary(u) {
                    max_dt
                } else {
                    self.auto_dt()
                }
            }
            TimeStep::Fixed(dt) => {
                let rate = self.rates().positivity_for(self.config.reaction_scheme);
                if dt * rate > 1.0 {
                    return Err(Error::StepTooLarge {
                        dt,
                        dt_max: 1.0 / rate,
                    });
                }
                dt
            }
        };
        let dt = dt.min(max_dt);
        if dt.is_infinite() {
            self.prepared = false;
            return Ok(StepReport {
                state: u.clone(),
                dt,
                reaction_integral: vec![0.0; u.n_comp()],
            });
        }
        self.advance(u, dt)
    }
}

/// One step of the scheme with the configured time step.
pub fn step(data: &ProblemData, grid: &Grid, u: &CellField, config: &SolverConfig) -> Result<CellField> {
    let mut s = Stepper::new(data, grid, config)?;
    Ok(s.step_capped(u, f64::INFINITY)?.state)
}

/// Positivity bound of the explicit scheme:
/// `cfl_safety / (max|∇fᵢ|/h·faces per cell + max(fᵢ)₋ + 2δΣ1/h²)`.
pub fn stability_bound(data: &ProblemData, grid: &Grid, u: &CellField, config: &SolverConfig) -> Result<f64> {
    let mut s = Stepper::new(data, grid, config)?;
    s.prepare(u)?;
    let rate = s.rates().positivity();
    Ok(if rate > 0.0 {
        config.cfl_safety / rate
    } else {
        f64::INFINITY
    })
}

/// Time step used by `run` in auto mode: the positivity bound further capped
/// by linear stability of the explicit update.
pub fn admissible_dt(data: &ProblemData, grid: &Grid, u: &CellField, config: &SolverConfig) -> Result<f64> {
    let mut s = Stepper::new(data, grid, config)?;
    s.prepare(u)?;
    Ok(s.auto_dt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    /// Size of the step that produced this snapshot (0 for the initial one).
    pub dt: f64,
    pub values: FunctionalValues,
    #[serde(skip)]
    pub state: Option<CellField>,
}

/// Time-stamped snapshots of a run with their functionals.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    snapshots: Vec<Snapshot>,
    n_species: usize,
    h_max: f64,
    steps: usize,
    data_fingerprint: String,
    config_fingerprint: String,
}

impl Trajectory {
    /// Assembles a trajectory from prepared snapshots (used for synthetic
    /// diagnostics input). Times must be strictly increasing.
    pub fn from_snapshots(snapshots: Vec<Snapshot>, n_species: usize, h_max: f64) -> Result<Self> {
        if snapshots.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Config("snapshot times must be strictly increasing".into()));
        }
        for s in &snapshots {
            if let Some(st) = &s.state {
                if let Some((species, cell, value)) = st.first_negative() {
                    return Err(Error::NegativeDensity {
                        species,
                        cell,
                        value,
                    });
                }
            }
        }
        let steps = snapshots.last().map_or(0, |s| s.step);
        Ok(Trajectory {
            snapshots,
            n_species,
            h_max,
            steps,
            data_fingerprint: String::new(),
            config_fingerprint: String::new(),
        })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    /// Largest grid spacing of the run.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn data_fingerprint(&self) -> &str {
        &self.data_fingerprint
    }

    pub fn config_fingerprint(&self) -> &str {
        &self.config_fingerprint
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.values.entropy).collect()
    }

    pub fn first(&self) -> &Snapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory is never empty")
    }

    pub fn final_state(&self) -> &CellField {
        self.last().state.as_ref().expect("final state is always kept")
    }
}

/// Data handed to a [`run_observed`] callback after every step.
pub struct StepEvent<'e> {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub before: &'e CellField,
    pub after: &'e CellField,
    pub reaction_integral: &'e [f64],
}

/// Integrates from `u0` to `t_end`.
pub fn run(data: &ProblemData, grid: &Grid, u0: &CellField, config: &SolverConfig) -> Result<Trajectory> {
    run_observed(data, grid, u0, config, |_| {})
}

/// Like [`run`], calling `observer` after every step.
pub fn run_observed<F>(
    data: &ProblemData,
    grid: &Grid,
    u0: &CellField,
    config: &SolverConfig,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&StepEvent<'_>),
{
    let wrap = |time: f64| move |e: Error| Error::Solver {
        time,
        source: Box::new(e),
    };
    let mut stepper = Stepper::new(data, grid, config)?;
    let t_end = config.t_end;
    let mut u = u0.clone();
    let mut t = 0.0;
    let mut step = 0usize;
    let mut snapshots = vec![Snapshot {
        step: 0,
        time: 0.0,
        dt: 0.0,
        values: functionals::evaluate(data, grid, &u).map_err(wrap(0.0))?,
        state: Some(u.clone()),
    }];
    let mut next_mark = config.snapshot_interval;
    // stop once the remainder is below roundoff of t_end
    let eps = 8.0 * f64::EPSILON * t_end;

    while t_end - t > eps {
        let remaining = t_end - t;
        let report = stepper.step_capped(&u, remaining).map_err(wrap(t))?;
        let dt = report.dt;
        step += 1;
        let last = remaining - dt <= eps;
        t = if last { t_end } else { t + dt };
        observer(&StepEvent {
            step,
            time: t,
            dt,
            before: &u,
            after: &report.state,
            reaction_integral: &report.reaction_integral,
        });
        u = report.state;

        let mut record = last || step.is_multiple_of(config.snapshot_stride);
        if let (Some(mark), Some(iv)) = (next_mark, config.snapshot_interval) {
            if t >= mark * (1.0 - 1e-12) {
                record = true;
                let mut m = mark;
                while m <= t * (1.0 + 1e-12) {
                    m += iv;
                }
                next_mark = Some(m);
            }
        }
        if record {
            snapshots.push(Snapshot {
                step,
                time: t,
                dt,
                values: functionals::evaluate(data, grid, &u).map_err(wrap(t))?,
                state: (config.keep_states || last).then(|| u.clone()),
            });
        }
    }

    Ok(Trajectory {
        snapshots,
        n_species: data.n_species(),
        h_max: grid.max_spacing(),
        steps: step,
        data_fingerprint: data.fingerprint(),
        config_fingerprint: config.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{partial_extinction_state, ExtinctionPattern, MatrixField, VectorField};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(cells: usize) -> (ProblemData, Grid) {
        let g = Grid::new_1d(cells, 1.0).unwrap();
        let d = ProblemData::constant(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0], cells).unwrap();
        (d, g)
    }

    fn heterogeneous(cells: usize) -> (ProblemData, Grid) {
        let g = Grid::new_1d(cells, 1.0).unwrap();
        let tau = std::f64::consts::TAU;
        let m = CellField::from_fn(2, cells, |i, c| {
            let x = g.cell_center(c)[0];
            if i == 0 {
                3.0 + (tau * x).sin()
            } else {
                3.0 + (tau * x).cos()
            }
        });
        let d = ProblemData::new(
            2,
            cells,
            MatrixField::uniform(&[vec![2.0, 1.0], vec![1.0, 2.0]]),
            VectorField::PerCell(m),
        )
        .unwrap();
        (d, g)
    }

    #[test]
    fn steady_states_are_fixed_points() {
        let (d, g) = pair(16);
        for scheme in [ReactionScheme::Explicit, ReactionScheme::Patankar] {
            let mut cfg = SolverConfig::new(1.0);
            cfg.reaction_scheme = scheme;
            cfg.dt = TimeStep::Fixed(0.01);
            assert_eq!(&step(&d, &g, d.u_inf(), &cfg).unwrap(), d.u_inf());
            let p = ExtinctionPattern::new(2, &[1]).unwrap();
            let ui = partial_extinction_state(&d, &p).unwrap();
            assert_eq!(step(&d, &g, &ui, &cfg).unwrap(), ui);
        }
    }

    #[test]
    fn logistic_euler_step() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let d = ProblemData::constant(&[vec![1.0]], &[1.0], 4).unwrap();
        let mut cfg = SolverConfig::new(1.0);
        cfg.dt = TimeStep::Fixed(0.1);
        let u = step(&d, &g, &CellField::uniform(&[0.5], 4), &cfg).unwrap();
        for &v in u.component(0) {
            assert_relative_eq!(v, 0.525, epsilon = 1e-15);
        }
    }

    #[test]
    fn homogeneous_step_matches_ode_euler_and_patankar() {
        let (d, g) = pair(5);
        let u0 = [0.5, 2.0];
        let f = [3.0 - 2.0 * u0[0] - u0[1], 3.0 - u0[0] - 2.0 * u0[1]];
        let dt = 0.01;
        let mut cfg = SolverConfig::new(1.0);
        cfg.dt = TimeStep::Fixed(dt);
        let u = step(&d, &g, &CellField::uniform(&u0, 5), &cfg).unwrap();
        for i in 0..2 {
            assert_relative_eq!(u.get(i, 3), u0[i] + dt * u0[i] * f[i], epsilon = 1e-15);
        }
        cfg.reaction_scheme = ReactionScheme::Patankar;
        let u = step(&d, &g, &CellField::uniform(&u0, 5), &cfg).unwrap();
        for i in 0..2 {
            let expect = if f[i] >= 0.0 {
                u0[i] * (1.0 + dt * f[i])
            } else {
                u0[i] / (1.0 - dt * f[i])
            };
            assert_relative_eq!(u.get(i, 3), expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn stability_bound_instances() {
        let (d, g) = pair(10);
        let cfg = SolverConfig::new(1.0);
        assert_eq!(stability_bound(&d, &g, d.u_inf(), &cfg).unwrap(), f64::INFINITY);

        let mut cfg = SolverConfig::new(1.0);
        cfg.delta = 0.3;
        let h = 0.1;
        assert_relative_eq!(
            stability_bound(&d, &g, d.u_inf(), &cfg).unwrap(),
            0.45 * h * h / (2.0 * 0.3),
            max_relative = 1e-14
        );
        // linear stability keeps the auto step finite at u∞
        assert!(admissible_dt(&d, &g, d.u_inf(), &SolverConfig::new(1.0)).unwrap().is_finite());
    }

    #[test]
    fn positivity_bound_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let (d, g) = heterogeneous(16);
            let u = CellField::from_fn(2, 16, |_, _| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(0.0..4.0)
                }
            });
            let mut cfg = SolverConfig::new(1.0);
            cfg.delta = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.05) } else { 0.0 };
            let dt = stability_bound(&d, &g, &u, &cfg).unwrap();
            cfg.dt = TimeStep::Fixed(dt);
            let next = step(&d, &g, &u, &cfg).unwrap();
            assert!(next.min_value() >= 0.0);
        }
    }

    #[test]
    fn fixed_dt_above_bound_is_rejected() {
        let (d, g) = heterogeneous(32);
        let u = CellField::uniform(&[0.5, 0.5], 32);
        let mut cfg = SolverConfig::new(1.0);
        cfg.dt = TimeStep::Fixed(1.0);
        let err = step(&d, &g, &u, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
    }

    #[test]
    fn rejects_negative_or_nonfinite_input() {
        let (d, g) = pair(4);
        let cfg = SolverConfig::new(1.0);
        let mut u = CellField::uniform(&[1.0, 1.0], 4);
        u.set(1, 2, -1e-9);
        assert!(matches!(step(&d, &g, &u, &cfg), Err(Error::NegativeDensity { .. })));
        u.set(1, 2, f64::NAN);
        assert!(matches!(step(&d, &g, &u, &cfg), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SolverConfig::new(1.0);
        cfg.cfl_safety = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(1.0);
        cfg.truncation_m = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(-1.0);
        cfg.snapshot_stride = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_records_snapshots_and_hits_t_end() {
        let (d, g) = heterogeneous(16);
        let mut cfg = SolverConfig::new(0.05);
        cfg.snapshot_stride = 50;
        cfg.keep_states = false;
        let traj = run(&d, &g, &CellField::uniform(&[0.5, 0.5], 16), &cfg).unwrap();
        assert_eq!(traj.last().time, 0.05);
        assert!(traj.snapshots().len() >= 2);
        assert!(traj.first().state.is_some() && traj.last().state.is_some());
        let steps = traj.steps();
        assert_eq!(traj.snapshots().len(), 1 + steps / 50 + usize::from(steps % 50 != 0));
        let t = traj.times();
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn snapshot_interval_marks() {
        let (d, g) = pair(8);
        let mut cfg = SolverConfig::new(1.0);
        cfg.dt = TimeStep::Fixed(0.01);
        cfg.snapshot_stride = 1000;
        cfg.snapshot_interval = Some(0.25);
        let traj = run(&d, &g, &CellField::uniform(&[0.5, 0.5], 8), &cfg).unwrap();
        let t = traj.times();
        assert_eq!(t.len(), 5);
        for (k, &tk) in t.iter().enumerate() {
            assert!((tk - 0.25 * k as f64).abs() < 1e-9, "{t:?}");
        }
    }

    #[test]
    fn mass_identity_and_truncation_neutrality() {
        let (d, g) = heterogeneous(32);
        let u0 = CellField::uniform(&[0.5, 0.5], 32);
        for scheme in [ReactionScheme::Explicit, ReactionScheme::Patankar] {
            let mut cfg = SolverConfig::new(0.02);
            cfg.reaction_scheme = scheme;
            cfg.delta = 1e-3;
            let mut worst = 0.0f64;
            let traj = run_observed(&d, &g, &u0, &cfg, |e| {
                for i in 0..2 {
                    let before = g.integrate_component(e.before.component(i));
                    let after = g.integrate_component(e.after.component(i));
                    let scale = before.max(after) + e.dt * e.reaction_integral[i].abs();
                    worst = worst.max(((after - before) - e.dt * e.reaction_integral[i]).abs() / scale);
                }
            })
            .unwrap();
            assert!(worst <= 1e-12, "{worst}");

            let max_u = traj.final_state().max_value().max(u0.max_value());
            let mut capped = cfg.clone();
            capped.truncation_m = 1e3 * max_u;
            let t2 = run(&d, &g, &u0, &capped).unwrap();
            assert_eq!(t2.final_state(), traj.final_state());
        }
    }

    #[test]
    fn errors_carry_failure_time() {
        let (d, g) = heterogeneous(32);
        let mut cfg = SolverConfig::new(1.0);
        cfg.dt = TimeStep::Fixed(0.5);
        let err = run(&d, &g, &CellField::uniform(&[0.5, 0.5], 32), &cfg).unwrap_err();
        assert!(matches!(err, Error::Solver { time, .. } if time == 0.0));
    }

    #[test]
    fn stationary_state_advances_in_one_step() {
        let (d, g) = pair(32);
        let u_inf = d.u_inf().clone();
        let mut cfg = SolverConfig::new(10.0);
        cfg.delta = 1e-2;
        let traj = run(&d, &g, &u_inf, &cfg).unwrap();
        assert_eq!(traj.steps(), 1);
        assert_eq!(traj.final_state(), &u_inf);

        let mut u = u_inf.clone();
        u.set(0, 5, 1.0 + 1e-9);
        cfg.t_end = 1e-3;
        assert!(run(&d, &g, &u, &cfg).unwrap().steps() > 1);
    }
}
