//! Problem data `(A, m)`, fitness, the ideal free distribution, partial
//! extinction steady states, the bordered-determinant structural condition,
//! and the critical entropy.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals;
use crate::grid::{CellField, Grid};
use crate::io::hash_f64s;
use crate::par;

pub const DEFAULT_KAPPA_TOL: f64 = 1e-10;
pub const DEFAULT_PATTERN_CAP: usize = 20;
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// An N×N matrix per cell, stored row-major; either one shared matrix or one
/// per cell.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixField {
    Uniform(Vec<f64>),
    PerCell(Vec<f64>),
}

impl MatrixField {
    pub fn uniform(rows: &[Vec<f64>]) -> Self {
        MatrixField::Uniform(rows.iter().flatten().copied().collect())
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize) -> &[f64] {
        match self {
            MatrixField::Uniform(a) => a,
            MatrixField::PerCell(a) => &a[c * n * n..(c + 1) * n * n],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, MatrixField::Uniform(_))
    }

    fn raw(&self) -> &[f64] {
        match self {
            MatrixField::Uniform(a) | MatrixField::PerCell(a) => a,
        }
    }
}

/// An N-vector per cell; either one shared vector or a component-major field.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorField {
    Uniform(Vec<f64>),
    PerCell(CellField),
}

impl VectorField {
    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        match self {
            VectorField::Uniform(v) => v[i],
            VectorField::PerCell(f) => f.get(i, c),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, VectorField::Uniform(_))
    }

    fn raw(&self) -> &[f64] {
        match self {
            VectorField::Uniform(v) => v,
            VectorField::PerCell(f) => f.as_slice(),
        }
    }
}

/// Interaction matrix field `A(x)`, resource field `m(x)`, and derived data.
#[derive(Debug, Clone)]
pub struct ProblemData {
    n_species: usize,
    n_cells: usize,
    a: MatrixField,
    m: VectorField,
    kappa_tol: f64,
    pattern_cap: usize,
    condition_cap: f64,
    a_inv: MatrixField,
    u_inf: CellField,
    lambda_min: f64,
    lambda_max: f64,
}

impl ProblemData {
    /// Validates `(A, m)` on `n_cells` cells and solves for the ideal free
    /// distribution.
    pub fn new(n_species: usize, n_cells: usize, a: MatrixField, m: VectorField) -> Result<Self> {
        Self::with_condition_cap(n_species, n_cells, a, m, DEFAULT_CONDITION_CAP)
    }

    pub fn with_condition_cap(
        n_species: usize,
        n_cells: usize,
        a: MatrixField,
        m: VectorField,
        condition_cap: f64,
    ) -> Result<Self> {
        let n = n_species;
        if n == 0 {
            return Err(Error::InvalidData("species count must be positive".into()));
        }
        let (expected_a, what) = match &a {
            MatrixField::Uniform(_) => (n * n, "interaction matrix entries"),
            MatrixField::PerCell(_) => (n * n * n_cells, "per-cell interaction matrix entries"),
        };
        if a.raw().len() != expected_a {
            return Err(Error::DimensionMismatch {
                what,
                expected: expected_a,
                found: a.raw().len(),
            });
        }
        match &m {
            VectorField::Uniform(v) if v.len() != n => {
                return Err(Error::DimensionMismatch {
                    what: "resource vector",
                    expected: n,
                    found: v.len(),
                })
            }
            VectorField::PerCell(f) => f.check_shape(n, n_cells, "resource field")?,
            _ => {}
        }
        if a.raw().iter().chain(m.raw()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("A and m must be finite".into()));
        }

        let a_cells = if a.is_uniform() { 1 } else { n_cells };
        let mut lambda_min = f64::INFINITY;
        let mut lambda_max = f64::NEG_INFINITY;
        let mut inv = Vec::with_capacity(a.raw().len());
        for c in 0..a_cells {
            let block = a.at(n, c);
            for i in 0..n {
                for j in (i + 1)..n {
                    if block[i * n + j] != block[j * n + i] {
                        return Err(Error::InvalidData(format!(
                            "A is not symmetric at cell {c}: a[{}][{}] = {} but a[{}][{}] = {}",
                            i + 1,
                            j + 1,
                            block[i * n + j],
                            j + 1,
                            i + 1,
                            block[j * n + i]
                        )));
                    }
                }
            }
            let mat = DMatrix::from_row_slice(n, n, block);
            let eig = mat.clone().symmetric_eigen();
            let lo = eig.eigenvalues.min();
            let hi = eig.eigenvalues.max();
            if lo <= 0.0 {
                return Err(Error::InvalidData(format!(
                    "A is not positive definite at cell {c} (smallest eigenvalue {lo:e})"
                )));
            }
            if hi / lo > condition_cap {
                return Err(Error::SingularMatrix {
                    cell: c,
                    condition: hi / lo,
                });
            }
            lambda_min = lambda_min.min(lo);
            lambda_max = lambda_max.max(hi);
            let chol = mat.cholesky().ok_or(Error::SingularMatrix {
                cell: c,
                condition: hi / lo,
            })?;
            let ainv = chol.inverse();
            for i in 0..n {
                for j in 0..n {
                    inv.push(ainv[(i, j)]);
                }
            }
        }
        let a_inv = if a.is_uniform() {
            MatrixField::Uniform(inv)
        } else {
            MatrixField::PerCell(inv)
        };

        let mut data = ProblemData {
            n_species: n,
            n_cells,
            a,
            m,
            kappa_tol: DEFAULT_KAPPA_TOL,
            pattern_cap: DEFAULT_PATTERN_CAP,
            condition_cap,
            a_inv,
            u_inf: CellField::zeros(n, n_cells),
            lambda_min,
            lambda_max,
        };
        data.u_inf = ideal_free_distribution(&data)?;
        Ok(data)
    }

    /// Constant `A` and `m` on `n_cells` cells.
    pub fn constant(a: &[Vec<f64>], m: &[f64], n_cells: usize) -> Result<Self> {
        let n = m.len();
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "interaction matrix rows",
                expected: n,
                found: a.len(),
            });
        }
        Self::new(n, n_cells, MatrixField::uniform(a), VectorField::Uniform(m.to_vec()))
    }

    pub fn with_kappa_tol(mut self, kappa_tol: f64) -> Self {
        self.kappa_tol = kappa_tol;
        self
    }

    pub fn with_pattern_cap(mut self, cap: usize) -> Self {
        self.pattern_cap = cap;
        self
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn kappa_tol(&self) -> f64 {
        self.kappa_tol
    }

    pub fn pattern_cap(&self) -> usize {
        self.pattern_cap
    }

    pub fn condition_cap(&self) -> f64 {
        self.condition_cap
    }

    pub fn a(&self) -> &MatrixField {
        &self.a
    }

    pub fn m(&self) -> &VectorField {
        &self.m
    }

    /// Row-major `A` at cell `c`.
    #[inline]
    pub fn a_at(&self, c: usize) -> &[f64] {
        self.a.at(self.n_species, c)
    }

    #[inline]
    pub fn a_inv_at(&self, c: usize) -> &[f64] {
        self.a_inv.at(self.n_species, c)
    }

    #[inline]
    pub fn m_at(&self, i: usize, c: usize) -> f64 {
        self.m.get(i, c)
    }

    /// `(λ_A, Λ_A)`: extreme eigenvalues of `A` over all cells.
    pub fn ellipticity(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    pub fn u_inf(&self) -> &CellField {
        &self.u_inf
    }

    /// True when both `A` and `m` are x-independent.
    pub fn is_spatially_constant(&self) -> bool {
        self.a.is_uniform() && self.m.is_uniform()
    }

    /// Max over cells and rows of Σⱼ|aᵢⱼ|.
    pub fn max_row_abs_sum(&self) -> f64 {
        let n = self.n_species;
        let cells = if self.a.is_uniform() { 1 } else { self.n_cells };
        let mut best = 0.0f64;
        for c in 0..cells {
            let a = self.a_at(c);
            for i in 0..n {
                best = best.max(a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum());
            }
        }
        best
    }

    /// Content hash over the data by bit pattern.
    pub fn fingerprint(&self) -> String {
        let header = [self.n_species as f64, self.n_cells as f64, self.kappa_tol];
        hash_f64s([&header[..], self.a.raw(), self.m.raw()])
    }

    pub(crate) fn check_state(&self, u: &CellField, what: &'static str) -> Result<()> {
        u.check_shape(self.n_species, self.n_cells, what)
    }

    /// `f = m − A u` for component-major `u` into component-major `out`.
    pub fn fitness_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n_species;
        let nc = self.n_cells;
        match (&self.a, &self.m) {
            (MatrixField::Uniform(a), m) => {
                for i in 0..n {
                    let row = &mut out[i * nc..(i + 1) * nc];
                    match m {
                        VectorField::Uniform(mv) => row.fill(mv[i]),
                        VectorField::PerCell(mf) => row.copy_from_slice(mf.component(i)),
                    }
                    for j in 0..n {
                        let aij = a[i * n + j];
                        if aij == 0.0 {
                            continue;
                        }
                        let uj = &u[j * nc..(j + 1) * nc];
                        for (o, &x) in row.iter_mut().zip(uj) {
                            *o -= aij * x;
                        }
                    }
                }
            }
            (MatrixField::PerCell(_), _) => {
                for c in 0..nc {
                    let a = self.a_at(c);
                    for i in 0..n {
                        let mut f = self.m_at(i, c);
                        for j in 0..n {
                            f -= a[i * n + j] * u[j * nc + c];
                        }
                        out[i * nc + c] = f;
                    }
                }
            }
        }
    }
}

/// `f = m − A u` cellwise.
pub fn fitness(data: &ProblemData, u: &CellField) -> Result<CellField> {
    data.check_state(u, "state vs problem data")?;
    let mut out = CellField::zeros(data.n_species, data.n_cells);
    data.fitness_into(u.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// `u∞ = A⁻¹ m` cellwise.
pub fn ideal_free_distribution(data: &ProblemData) -> Result<CellField> {
    partial_extinction_state_unchecked(data, &ExtinctionPattern::none(data.n_species))
}

/// The extinct set `I` of a partial extinction steady state (0-based species
/// indices internally, 1-based when displayed).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ExtinctionPattern {
    extinct: Vec<bool>,
}

impl ExtinctionPattern {
    pub fn none(n: usize) -> Self {
        ExtinctionPattern {
            extinct: vec![false; n],
        }
    }

    pub fn all(n: usize) -> Self {
        ExtinctionPattern {
            extinct: vec![true; n],
        }
    }

    /// Pattern with the given 0-based species extinct.
    pub fn new(n: usize, extinct: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &i in extinct {
            if i >= n {
                return Err(Error::InvalidData(format!(
                    "extinct species {} out of range 1..={n}",
                    i + 1
                )));
            }
            mask[i] = true;
        }
        Ok(ExtinctionPattern { extinct: mask })
    }

    /// Parses `{1,2}` or `1,2` (1-based) for `n` species; `{}` is empty.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let inner = text.trim();
        let inner = inner
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .unwrap_or(inner)
            .trim();
        let mut idx = Vec::new();
        if !inner.is_empty() {
            for tok in inner.split(',') {
                let k: usize = tok.trim().parse().map_err(|_| {
                    Error::InvalidData(format!("bad species index {tok:?} in pattern {text:?}"))
                })?;
                if k == 0 {
                    return Err(Error::InvalidData(format!(
                        "species indices are 1-based, got 0 in {text:?}"
                    )));
                }
                idx.push(k - 1);
            }
        }
        Self::new(n, &idx)
    }

    pub fn n_species(&self) -> usize {
        self.extinct.len()
    }

    pub fn is_extinct(&self, i: usize) -> bool {
        self.extinct[i]
    }

    pub fn extinct(&self) -> Vec<usize> {
        (0..self.extinct.len()).filter(|&i| self.extinct[i]).collect()
    }

    pub fn survivors(&self) -> Vec<usize> {
        (0..self.extinct.len()).filter(|&i| !self.extinct[i]).collect()
    }

    pub fn cardinality(&self) -> usize {
        self.extinct.iter().filter(|&&e| e).count()
    }
}

impl fmt::Display for ExtinctionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.extinct().iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Lexicographic `r`-combinations of `0..n`.
pub(crate) fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    if r > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.clone());
        let mut k = r;
        while k > 0 && idx[k - 1] == n - r + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return out;
        }
        idx[k - 1] += 1;
        for t in k..r {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// All subsets of `0..n`, by increasing cardinality, lexicographic within.
pub(crate) fn subsets_in_order(n: usize) -> Vec<Vec<usize>> {
    (0..=n).flat_map(|r| combinations(n, r)).collect()
}

/// Solves the restricted system without checking survivor signs.
pub fn partial_extinction_state_unchecked(
    data: &ProblemData,
    pattern: &ExtinctionPattern,
) -> Result<CellField> {
    let n = data.n_species;
    if pattern.n_species() != n {
        return Err(Error::DimensionMismatch {
            what: "extinction pattern",
            expected: n,
            found: pattern.n_species(),
        });
    }
    let nc = data.n_cells;
    let surv = pattern.survivors();
    let mut out = CellField::zeros(n, nc);
    if surv.is_empty() {
        return Ok(out);
    }
    let k = surv.len();
    let constant = data.is_spatially_constant();
    let mut cached: Option<DVector<f64>> = None;
    let mut chol_cache = None;
    for c in 0..nc {
        let sol = if constant && cached.is_some() {
            cached.clone().unwrap()
        } else {
            let rhs = DVector::from_iterator(k, surv.iter().map(|&j| data.m_at(j, c)));
            if !data.a.is_uniform() || chol_cache.is_none() {
                let a = data.a_at(c);
                let sub = DMatrix::from_fn(k, k, |r, s| a[surv[r] * n + surv[s]]);
                let chol = sub.clone().cholesky().ok_or(Error::SingularMatrix {
                    cell: c,
                    condition: f64::INFINITY,
                })?;
                chol_cache = Some((sub, chol));
            }
            let (sub, chol) = chol_cache.as_ref().unwrap();
            let mut sol = chol.solve(&rhs);
            // one refinement pass; recovers exact rational solutions in simple cases
            let resid = &rhs - sub * &sol;
            sol += chol.solve(&resid);
            if constant {
                cached = Some(sol.clone());
            }
            sol
        };
        for (r, &j) in surv.iter().enumerate() {
            out.set(j, c, sol[r]);
        }
    }
    if !out.is_finite() {
        return Err(Error::SingularMatrix {
            cell: 0,
            condition: f64::INFINITY,
        });
    }
    Ok(out)
}

/// Steady state with `uᵢ = 0` on the extinct set and `fⱼ = 0` on survivors.
/// A negative survivor component is reported as a structural violation.
pub fn partial_extinction_state(data: &ProblemData, pattern: &ExtinctionPattern) -> Result<CellField> {
    let u = partial_extinction_state_unchecked(data, pattern)?;
    if let Some((species, cell, value)) = u.first_negative() {
        return Err(Error::StructuralViolation {
            pattern: pattern.to_string(),
            species: species + 1,
            cell,
            value,
        });
    }
    Ok(u)
}

/// Location of the smallest bordered determinant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Am4Witness {
    /// Ordered subset `I`, 1-based.
    pub subset: Vec<usize>,
    /// Bordering species `j ∉ I`, 1-based.
    pub species: usize,
    pub cell: usize,
    pub determinant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Am4Report {
    pub min_determinant: f64,
    pub worst: Option<Am4Witness>,
    pub kappa_tol: f64,
    pub holds: bool,
    pub evaluated: usize,
}

/// Bordered matrix `[[A_{I,I}, m_I], [A_{j,I}, m_j]]` at one cell, row-major.
pub fn bordered_matrix(data: &ProblemData, subset: &[usize], j: usize, c: usize) -> Vec<f64> {
    let n = data.n_species;
    let r = subset.len();
    let a = data.a_at(c);
    let dim = r + 1;
    let mut out = vec![0.0; dim * dim];
    let rows = subset.iter().copied().chain(std::iter::once(j));
    for (p, row) in rows.enumerate() {
        for (q, &col) in subset.iter().enumerate() {
            out[p * dim + q] = a[row * n + col];
        }
        out[p * dim + r] = data.m_at(row, c);
    }
    out
}

/// Evaluates every bordered determinant over subsets `I`, bordering species
/// `j ∉ I`, and cells; the condition holds iff the minimum is at least
/// `kappa_tol`.
pub fn check_am4(data: &ProblemData) -> Am4Report {
    let n = data.n_species;
    let cells = if data.is_spatially_constant() { 1 } else { data.n_cells };
    let subsets: Vec<Vec<usize>> = subsets_in_order(n).into_iter().filter(|s| s.len() < n).collect();

    // per-subset minimum with first-occurrence tie-break, then an ordered fold
    let per_subset = par::map_ordered(&subsets, |subset| {
        let mut best: Option<Am4Witness> = None;
        let mut count = 0usize;
        for j in (0..n).filter(|j| !subset.contains(j)) {
            for c in 0..cells {
                let dim = subset.len() + 1;
                let m = DMatrix::from_row_slice(dim, dim, &bordered_matrix(data, subset, j, c));
                let det = m.determinant();
                count += 1;
                if best.as_ref().is_none_or(|b| det < b.determinant) {
                    best = Some(Am4Witness {
                        subset: subset.iter().map(|i| i + 1).collect(),
                        species: j + 1,
                        cell: c,
                        determinant: det,
                    });
                }
            }
        }
        (best, count)
    });

    let mut worst: Option<Am4Witness> = None;
    let mut evaluated = 0;
    for (best, count) in per_subset {
        evaluated += count;
        if let Some(b) = best {
            if worst.as_ref().is_none_or(|w| b.determinant < w.determinant) {
                worst = Some(b);
            }
        }
    }
    let min_determinant = worst.as_ref().map_or(f64::INFINITY, |w| w.determinant);
    Am4Report {
        min_determinant,
        holds: min_determinant >= data.kappa_tol && data.kappa_tol > 0.0,
        kappa_tol: data.kappa_tol,
        worst,
        evaluated,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternEntropy {
    pub pattern: String,
    pub entropy: f64,
    /// Smallest survivor component; negative means the state is not admissible.
    pub min_survivor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalEntropy {
    pub value: f64,
    #[serde(serialize_with = "serialize_display")]
    pub argmin: ExtinctionPattern,
    pub candidates: Vec<PatternEntropy>,
    /// False when some extinction state has a negative survivor component.
    pub all_admissible: bool,
}

fn serialize_display<S: serde::Serializer, T: fmt::Display>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Minimum entropy over the nonempty extinction patterns.
pub fn critical_entropy(data: &ProblemData, grid: &Grid) -> Result<CriticalEntropy> {
    let n = data.n_species;
    if n > data.pattern_cap {
        return Err(Error::TooManySpecies {
            n,
            cap: data.pattern_cap,
        });
    }
    let patterns: Vec<ExtinctionPattern> = subsets_in_order(n)
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| ExtinctionPattern::new(n, &s))
        .collect::<Result<_>>()?;
    let evaluated = par::map_ordered(&patterns, |p| -> Result<PatternEntropy> {
        let u = partial_extinction_state_unchecked(data, p)?;
        let entropy = functionals::entropy(data, grid, &u)?;
        let min_survivor = p
            .survivors()
            .iter()
            .map(|&j| u.component(j).iter().copied().fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        Ok(PatternEntropy {
            pattern: p.to_string(),
            entropy,
            min_survivor,
        })
    });
    let candidates: Vec<PatternEntropy> = evaluated.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (k, c) in candidates.iter().enumerate() {
        if c.entropy < candidates[best].entropy {
            best = k;
        }
    }
    Ok(CriticalEntropy {
        value: candidates[best].entropy,
        argmin: patterns[best].clone(),
        all_admissible: candidates.iter().all(|c| c.min_survivor >= 0.0),
        candidates,
    })
}
