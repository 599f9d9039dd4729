//! Entropy, dissipation, Boltzmann entropy, the Poincaré–Beckner ratio, and
//! the dissipation action along a trajectory.
//!
//! Face quadratures use the same weights as [`Grid::integrate_faces`]: each
//! interior face carries one cell volume, which makes the discrete dissipation
//! the exact summation-by-parts partner of the cell-centered fitness.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid};
use crate::io::fmt17;
use crate::model::{fitness, ProblemData};
use crate::par;
use crate::solver::Trajectory;

/// Required relative agreement between the three entropy forms.
pub const ENTROPY_AGREEMENT_TOL: f64 = 1e-9;

/// Absolute guard for the entropy agreement, relative to the magnitude of the
/// terms that cancel inside `f = m − A u`.
const ENTROPY_ROUNDOFF_GUARD: f64 = 1e-12;

/// Scale factor of the 0/0 guard in [`beckner_ratio`].
pub const RATIO_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalValues {
    pub entropy: f64,
    pub dissipation: f64,
    pub masses: Vec<f64>,
    pub boltzmann: Vec<f64>,
    pub fitness_l2: f64,
    pub grad_u_l2: f64,
}

impl FunctionalValues {
    /// `∫Σ|fᵢ|² / D`, or `None` when `D` is below the scale-aware floor.
    pub fn beckner_ratio(&self) -> Option<f64> {
        ratio_or_undefined(self.fitness_l2, self.dissipation)
    }

    pub fn csv_header(n_species: usize) -> String {
        let mut h = String::from("t,E,D");
        for i in 1..=n_species {
            h.push_str(&format!(",mass_{i}"));
        }
        for i in 1..=n_species {
            h.push_str(&format!(",H_{i}"));
        }
        h.push_str(",fitness_l2,grad_u_l2");
        h
    }

    pub fn csv_row(&self, t: f64) -> String {
        let mut cols = vec![fmt17(t), fmt17(self.entropy), fmt17(self.dissipation)];
        cols.extend(self.masses.iter().map(|&v| fmt17(v)));
        cols.extend(self.boltzmann.iter().map(|&v| fmt17(v)));
        cols.push(fmt17(self.fitness_l2));
        cols.push(fmt17(self.grad_u_l2));
        cols.join(",")
    }
}

fn ratio_or_undefined(fitness_l2: f64, dissipation: f64) -> Option<f64> {
    let floor = RATIO_FLOOR * (1.0 + fitness_l2);
    (dissipation > floor).then(|| fitness_l2 / dissipation)
}

/// The three algebraically equal entropy expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyForms {
    /// `½∫A(u−u∞)·(u−u∞)`
    pub quadratic: f64,
    /// `½∫A⁻¹f·f`
    pub fitness: f64,
    /// `½∫(u∞−u)·f`
    pub mixed: f64,
    /// Magnitude of the cancelling terms, used for the roundoff guard.
    pub scale: f64,
}

impl EntropyForms {
    pub fn agree(&self) -> bool {
        let big = self.quadratic.abs().max(self.fitness.abs()).max(self.mixed.abs());
        let tol = ENTROPY_AGREEMENT_TOL * big + ENTROPY_ROUNDOFF_GUARD * self.scale;
        (self.quadratic - self.fitness).abs() <= tol
            && (self.quadratic - self.mixed).abs() <= tol
            && (self.fitness - self.mixed).abs() <= tol
    }
}

pub fn entropy_forms(data: &ProblemData, grid: &Grid, u: &CellField) -> Result<EntropyForms> {
    let f = fitness(data, u)?;
    Ok(forms_with_fitness(data, grid, u, &f))
}

fn forms_with_fitness(data: &ProblemData, grid: &Grid, u: &CellField, f: &CellField) -> EntropyForms {
    let n = data.n_species();
    let nc = grid.n_cells();
    let uinf = data.u_inf();
    let exec = grid.exec();
    let vol = grid.cell_volume();
    let quadratic = par::sum_indexed(exec, nc, |c| {
        let a = data.a_at(c);
        let mut s = 0.0;
        for i in 0..n {
            let di = u.get(i, c) - uinf.get(i, c);
            for j in 0..n {
                s += a[i * n + j] * di * (u.get(j, c) - uinf.get(j, c));
            }
        }
        s
    });
    let fit = par::sum_indexed(exec, nc, |c| {
        let b = data.a_inv_at(c);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += b[i * n + j] * f.get(i, c) * f.get(j, c);
            }
        }
        s
    });
    let mixed = par::sum_indexed(exec, nc, |c| {
        (0..n)
            .map(|i| (uinf.get(i, c) - u.get(i, c)) * f.get(i, c))
            .sum::<f64>()
    });
    let scale = par::sum_indexed(exec, nc, |c| {
        let a = data.a_at(c);
        (0..n)
            .map(|i| {
                let au: f64 = (0..n).map(|j| (a[i * n + j] * u.get(j, c)).abs()).sum();
                (u.get(i, c).abs() + uinf.get(i, c).abs()) * (data.m_at(i, c).abs() + au)
            })
            .sum::<f64>()
    });
    EntropyForms {
        quadratic: 0.5 * vol * quadratic,
        fitness: 0.5 * vol * fit,
        mixed: 0.5 * vol * mixed,
        scale: 0.5 * vol * scale,
    }
}

/// `E(u) = ½∫A(u−u∞)·(u−u∞)`, cross-checked against the two other forms.
pub fn entropy(data: &ProblemData, grid: &Grid, u: &CellField) -> Result<f64> {
    let forms = entropy_forms(data, grid, u)?;
    checked_entropy(forms)
}

fn checked_entropy(forms: EntropyForms) -> Result<f64> {
    if !forms.agree() {
        return Err(Error::InconsistentEntropy {
            quadratic: forms.quadratic,
            fitness: forms.fitness,
            mixed: forms.mixed,
        });
    }
    Ok(forms.quadratic)
}

fn check_nonnegative(u: &CellField) -> Result<()> {
    match u.first_negative() {
        Some((species, cell, value)) => Err(Error::NegativeDensity {
            species,
            cell,
            value,
        }),
        None => Ok(()),
    }
}

fn dissipation_with_fitness(grid: &Grid, u: &CellField, f: &CellField) -> f64 {
    let exec = grid.exec();
    let mut total = 0.0;
    for i in 0..u.n_comp() {
        let ui = u.component(i);
        let fi = f.component(i);
        let faces = par::sum_indexed(exec, grid.n_faces(), |k| {
            let (l, r, h) = grid.face_cells(k);
            let g = (fi[r] - fi[l]) / h;
            0.5 * (ui[l] + ui[r]) * g * g
        });
        let cells = par::sum_indexed(exec, grid.n_cells(), |c| ui[c] * fi[c] * fi[c]);
        total += faces + cells;
    }
    grid.cell_volume() * total
}

/// `D(u) = Σᵢ∫uᵢ(|∇fᵢ|² + fᵢ²)` with arithmetic-mean face densities.
pub fn dissipation(data: &ProblemData, grid: &Grid, u: &CellField) -> Result<f64> {
    check_nonnegative(u)?;
    let f = fitness(data, u)?;
    Ok(dissipation_with_fitness(grid, u, &f))
}

/// `ℋ(uᵢ) = ∫(uᵢ log uᵢ − uᵢ + 1)` per species, with `0 log 0 = 0`.
pub fn boltzmann(grid: &Grid, u: &CellField) -> Result<Vec<f64>> {
    if u.n_cells() != grid.n_cells() {
        return Err(Error::DimensionMismatch {
            what: "state vs grid",
            expected: grid.n_cells(),
            found: u.n_cells(),
        });
    }
    check_nonnegative(u)?;
    Ok((0..u.n_comp())
        .map(|i| {
            let ui = u.component(i);
            grid.cell_volume()
                * par::sum_indexed(grid.exec(), ui.len(), |c| {
                    let v = ui[c];
                    if v == 0.0 {
                        1.0
                    } else {
                        v * v.ln() - v + 1.0
                    }
                })
        })
        .collect())
}

/// `∫Σ|fᵢ|² / D(u)`, or `None` when `D` is at the 0/0 floor.
pub fn beckner_ratio(data: &ProblemData, grid: &Grid, u: &CellField) -> Result<Option<f64>> {
    check_nonnegative(u)?;
    let f = fitness(data, u)?;
    let fl2 = fitness_l2(grid, &f);
    Ok(ratio_or_undefined(fl2, dissipation_with_fitness(grid, u, &f)))
}

fn fitness_l2(grid: &Grid, f: &CellField) -> f64 {
    grid.cell_volume() * par::sum_indexed(grid.exec(), f.as_slice().len(), |k| f.as_slice()[k].powi(2))
}

fn grad_l2(grid: &Grid, u: &CellField) -> f64 {
    let mut total = 0.0;
    for i in 0..u.n_comp() {
        let ui = u.component(i);
        total += par::sum_indexed(grid.exec(), grid.n_faces(), |k| {
            let (l, r, h) = grid.face_cells(k);
            let g = (ui[r] - ui[l]) / h;
            g * g
        });
    }
    grid.cell_volume() * total
}

/// All per-snapshot functionals from a single fitness evaluation.
pub fn evaluate(data: &ProblemData, grid: &Grid, u: &CellField) -> Result<FunctionalValues> {
    check_nonnegative(u)?;
    let f = fitness(data, u)?;
    let entropy = checked_entropy(forms_with_fitness(data, grid, u, &f))?;
    Ok(FunctionalValues {
        entropy,
        dissipation: dissipation_with_fitness(grid, u, &f),
        masses: (0..u.n_comp())
            .map(|i| grid.integrate_component(u.component(i)))
            .collect(),
        boltzmann: boltzmann(grid, u)?,
        fitness_l2: fitness_l2(grid, &f),
        grad_u_l2: grad_l2(grid, u),
    })
}

/// Composite trapezoid rule.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Time integral of the recorded dissipation along a trajectory.
pub fn trajectory_action(trajectory: &Trajectory) -> Result<f64> {
    let snaps = trajectory.snapshots();
    if snaps.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            found: snaps.len(),
        });
    }
    let times: Vec<f64> = snaps.iter().map(|s| s.time).collect();
    let d: Vec<f64> = snaps.iter().map(|s| s.values.dissipation).collect();
    Ok(trapezoid(&times, &d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{partial_extinction_state, ExtinctionPattern};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(cells: usize) -> (ProblemData, Grid) {
        let g = Grid::new_1d(cells, 1.0).unwrap();
        (ProblemData::constant(&[vec![2.0]], &[3.0], cells).unwrap(), g)
    }

    fn pair(cells: usize) -> (ProblemData, Grid) {
        let g = Grid::new_1d(cells, 1.0).unwrap();
        let d = ProblemData::constant(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[3.0, 3.0], cells).unwrap();
        (d, g)
    }

    #[test]
    fn entropy_instances() {
        let (d, g) = pair(8);
        assert_eq!(entropy(&d, &g, d.u_inf()).unwrap(), 0.0);

        let (d1, g1) = scalar(8);
        let e = entropy(&d1, &g1, &CellField::zeros(1, 8)).unwrap();
        assert_relative_eq!(e, 2.25, epsilon = 1e-13);

        let forms = entropy_forms(&d, &g, &CellField::uniform(&[0.0, 1.5], 8)).unwrap();
        for v in [forms.quadratic, forms.fitness, forms.mixed] {
            assert_relative_eq!(v, 0.75, epsilon = 1e-13);
        }
    }

    #[test]
    fn dissipation_instances() {
        let (d, g) = pair(8);
        assert_eq!(dissipation(&d, &g, d.u_inf()).unwrap(), 0.0);

        let (d1, g1) = scalar(8);
        let v = dissipation(&d1, &g1, &CellField::uniform(&[1.0], 8)).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-14);

        // species 1 extinct: only species 2 contributes, and f₂ = 3 − 2u₂ = 0
        let u = CellField::uniform(&[0.0, 1.5], 8);
        assert_eq!(dissipation(&d, &g, &u).unwrap(), 0.0);

        let bad = CellField::uniform(&[-0.1, 1.0], 8);
        assert!(matches!(dissipation(&d, &g, &bad), Err(Error::NegativeDensity { .. })));
    }

    #[test]
    fn boltzmann_instances() {
        let g = Grid::new_1d(10, 1.0).unwrap();
        let u = CellField::uniform(&[1.0, 0.0, std::f64::consts::E], 10);
        let h = boltzmann(&g, &u).unwrap();
        assert_relative_eq!(h[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(h[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(h[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn beckner_instances() {
        let (d, g) = pair(8);
        assert_eq!(beckner_ratio(&d, &g, d.u_inf()).unwrap(), None);

        let (d1, g1) = scalar(8);
        let r = beckner_ratio(&d1, &g1, &CellField::uniform(&[2.0], 8)).unwrap().unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-14);

        // near the {1}-extinction state the ratio blows up like 1/eta
        let p = ExtinctionPattern::new(2, &[0]).unwrap();
        let mut u = partial_extinction_state(&d, &p).unwrap();
        u.component_mut(0).fill(1e-3);
        let r = beckner_ratio(&d, &g, &u).unwrap().unwrap();
        assert!(r > 100.0, "{r}");
    }

    #[test]
    fn trapezoid_rule() {
        assert_eq!(trapezoid(&[0.0, 2.0], &[1.0, 1.0]), 2.0);
        assert_eq!(trapezoid(&[0.0, 1.0, 3.0], &[0.0, 1.0, 1.0]), 2.5);
        assert_eq!(trapezoid(&[1.0], &[4.0]), 0.0);
    }

    #[test]
    fn csv_row_layout() {
        let v = FunctionalValues {
            entropy: 1.0,
            dissipation: 2.0,
            masses: vec![3.0, 4.0],
            boltzmann: vec![5.0, 6.0],
            fitness_l2: 7.0,
            grad_u_l2: 8.0,
        };
        assert_eq!(
            FunctionalValues::csv_header(2),
            "t,E,D,mass_1,mass_2,H_1,H_2,fitness_l2,grad_u_l2"
        );
        let row = v.csv_row(0.5);
        let parsed: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    fn random_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        // A = LLᵀ + I for a random lower-triangular 3×3 L; m, u random
        (
            prop::collection::vec(-1.0f64..1.0, 6),
            prop::collection::vec(0.5f64..4.0, 3),
            prop::collection::vec(0.0f64..3.0, 3 * 12),
        )
    }

    fn spd_from(l: &[f64]) -> Vec<Vec<f64>> {
        let lm = [[l[0], 0.0, 0.0], [l[1], l[2], 0.0], [l[3], l[4], l[5]]];
        let mut a = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..3 {
                    s += lm[i][k] * lm[j][k];
                }
                a[i][j] = s;
            }
        }
        // exact symmetry as stored
        for i in 0..3 {
            for j in 0..i {
                a[i][j] = a[j][i];
            }
        }
        a
    }

    proptest! {
        #[test]
        fn entropy_forms_agree_and_bound_l2((l, m, uv) in random_instance()) {
            let g = Grid::new_1d(12, 1.0).unwrap();
            let a = spd_from(&l);
            let d = ProblemData::constant(&a, &m, 12).unwrap();
            let u = CellField::from_values(3, 12, uv).unwrap();
            let forms = entropy_forms(&d, &g, &u).unwrap();
            prop_assert!(forms.agree(), "{forms:?}");
            let (lambda, _) = d.ellipticity();
            let l2: f64 = (0..3).map(|i| {
                let diff: Vec<f64> = u.component(i).iter().zip(d.u_inf().component(i)).map(|(a, b)| (a - b).powi(2)).collect();
                g.integrate_component(&diff)
            }).sum();
            prop_assert!(forms.quadratic >= 0.5 * lambda * l2 * (1.0 - 1e-12));
        }

        #[test]
        fn dissipation_nonnegative((l, m, uv) in random_instance()) {
            let g = Grid::new_1d(12, 1.0).unwrap();
            let d = ProblemData::constant(&spd_from(&l), &m, 12).unwrap();
            let u = CellField::from_values(3, 12, uv).unwrap();
            let v = evaluate(&d, &g, &u).unwrap();
            prop_assert!(v.dissipation >= 0.0);
            prop_assert!(v.boltzmann.iter().all(|&h| h >= 0.0));
            prop_assert!(v.entropy >= 0.0);
        }
    }

    #[test]
    fn dissipation_zero_iff_integrand_zero() {
        // u₁ supported where f₁ = 0, u₂ ≡ 0: integrand vanishes everywhere
        let g = Grid::new_1d(6, 1.0).unwrap();
        let d = ProblemData::constant(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 2.0], 6).unwrap();
        let u = CellField::uniform(&[1.0, 0.0], 6);
        assert_eq!(dissipation(&d, &g, &u).unwrap(), 0.0);
        // perturb one cell: f₁ ≠ 0 there, and gradients appear
        let mut u2 = u.clone();
        u2.set(0, 3, 1.2);
        assert!(dissipation(&d, &g, &u2).unwrap() > 0.0);
    }
}
