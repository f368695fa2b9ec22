//! Sampled functions on triadic-dyadic grids, local averages and maximal functions.
//!
//! A grid of level `m` has step `h = 2^{-m}/3`; cell `g` is `[g h, (g+1) h)`.
//! Functions are piecewise constant on cells, with the cell value taken at the
//! midpoint, so integrals over arbitrary rational intervals are exact sums.

use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{chi_weight, to_f64, Exponent, Interval, Rat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub level: u32,
    pub start: i64,
    pub len: usize,
}

impl GridSpec {
    pub fn new(level: u32, start: i64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell".into()));
        }
        if level > 40 {
            return Err(Error::InvalidArgument(format!("grid level {level} too fine")));
        }
        Ok(GridSpec { level, start, len })
    }

    /// Smallest grid of the given level covering `interval`.
    pub fn covering(interval: &Interval, level: u32) -> Self {
        let probe = GridSpec {
            level,
            start: 0,
            len: 1,
        };
        let lo = probe.position(interval.left()).floor().to_integer();
        let hi = probe.position(interval.right()).ceil().to_integer();
        GridSpec {
            level,
            start: lo,
            len: (hi - lo).max(1) as usize,
        }
    }

    pub fn cells_per_unit(&self) -> i64 {
        3i64 << self.level
    }

    pub fn step(&self) -> Rat {
        Rat::new(1, self.cells_per_unit())
    }

    pub fn step_f64(&self) -> f64 {
        1.0 / self.cells_per_unit() as f64
    }

    pub fn end(&self) -> i64 {
        self.start + self.len as i64
    }

    pub fn domain(&self) -> Interval {
        Interval::new(
            Rat::from_integer(self.start) * self.step(),
            Rat::from_integer(self.len as i64) * self.step(),
        )
        .expect("nonempty grid")
    }

    /// `x / h`, exact.
    pub fn position(&self, x: Rat) -> Rat {
        x * Rat::from_integer(self.cells_per_unit())
    }

    pub fn cell_of(&self, x: Rat) -> i64 {
        self.position(x).floor().to_integer()
    }

    pub fn cell_of_f64(&self, x: f64) -> i64 {
        (x * self.cells_per_unit() as f64).floor() as i64
    }

    pub fn midpoint(&self, g: i64) -> f64 {
        (g as f64 + 0.5) * self.step_f64()
    }

    pub fn local_midpoint(&self, i: usize) -> f64 {
        self.midpoint(self.start + i as i64)
    }

    pub fn cell_interval(&self, g: i64) -> Interval {
        Interval::new(Rat::from_integer(g) * self.step(), self.step()).expect("positive step")
    }

    pub fn local(&self, g: i64) -> Option<usize> {
        if g >= self.start && g < self.end() {
            Some((g - self.start) as usize)
        } else {
            None
        }
    }

    /// Whether the endpoints of `i` are grid nodes.
    pub fn is_aligned(&self, i: &Interval) -> bool {
        self.position(i.left()).is_integer() && self.position(i.right()).is_integer()
    }

    /// The same domain at `extra` further levels of refinement.
    pub fn refined(&self, extra: u32) -> Self {
        GridSpec {
            level: self.level + extra,
            start: self.start << extra,
            len: self.len << extra,
        }
    }

    pub fn hull(&self, other: &GridSpec) -> Result<Self> {
        if self.level != other.level {
            return Err(Error::InvalidArgument(format!(
                "grid levels differ: {} vs {}",
                self.level, other.level
            )));
        }
        let start = self.start.min(other.start);
        let end = self.end().max(other.end());
        Ok(GridSpec {
            level: self.level,
            start,
            len: (end - start) as usize,
        })
    }

    pub fn padded(&self, cells: usize) -> Self {
        GridSpec {
            level: self.level,
            start: self.start - cells as i64,
            len: self.len + 2 * cells,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl SampledFunction {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples, got {}",
                grid.len,
                values.len()
            )));
        }
        Ok(SampledFunction { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        SampledFunction {
            grid,
            values: vec![Complex64::zero(); grid.len],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> Complex64) -> Self {
        let values = (0..grid.len).map(|i| f(grid.local_midpoint(i))).collect();
        SampledFunction { grid, values }
    }

    pub fn from_real_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        SampledFunction::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn at_cell(&self, g: i64) -> Complex64 {
        self.grid
            .local(g)
            .map(|i| self.values[i])
            .unwrap_or_else(Complex64::zero)
    }

    /// Value at `x`, zero outside the grid domain.
    pub fn eval(&self, x: f64) -> Complex64 {
        self.at_cell(self.grid.cell_of_f64(x))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// Global cell range `[first, last + 1)` of the nonzero samples.
    pub fn support_cells(&self) -> Option<(i64, i64)> {
        let first = self.values.iter().position(|v| !v.is_zero())?;
        let last = self.values.iter().rposition(|v| !v.is_zero())?;
        Some((
            self.grid.start + first as i64,
            self.grid.start + last as i64 + 1,
        ))
    }

    pub fn support_hull(&self) -> Option<Interval> {
        let (a, b) = self.support_cells()?;
        let h = self.grid.step();
        Some(Interval::new(Rat::from_integer(a) * h, Rat::from_integer(b - a) * h).unwrap())
    }

    /// Copy onto another grid of the same level; samples outside it are dropped.
    pub fn embed(&self, grid: GridSpec) -> Result<Self> {
        if grid.level != self.grid.level {
            return Err(Error::InvalidArgument(format!(
                "cannot embed level {} samples into level {}",
                self.grid.level, grid.level
            )));
        }
        let values = (0..grid.len)
            .map(|i| self.at_cell(grid.start + i as i64))
            .collect();
        Ok(SampledFunction { grid, values })
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        SampledFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn abs(&self) -> Self {
        self.map(|v| Complex64::new(v.norm(), 0.0))
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        let grid = self.grid.hull(&other.grid)?;
        let values = (0..grid.len)
            .map(|i| {
                let g = grid.start + i as i64;
                f(self.at_cell(g), other.at_cell(g))
            })
            .collect();
        Ok(SampledFunction { grid, values })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Multiply by `e^{2πiθx}`.
    pub fn modulate(&self, theta: f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let x = self.grid.local_midpoint(i);
                v * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * theta * x)
            })
            .collect();
        SampledFunction {
            grid: self.grid,
            values,
        }
    }

    /// Translate by `cells` grid steps.
    pub fn translate(&self, cells: i64) -> Self {
        let mut grid = self.grid;
        grid.start += cells;
        SampledFunction {
            grid,
            values: self.values.clone(),
        }
    }

    /// Restrict to the cells whose midpoints lie in `i`.
    pub fn restrict(&self, i: &Interval) -> Self {
        let (lo, hi) = midpoint_cells(&self.grid, i);
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let g = self.grid.start + k as i64;
                if g >= lo && g < hi {
                    v
                } else {
                    Complex64::zero()
                }
            })
            .collect();
        SampledFunction {
            grid: self.grid,
            values,
        }
    }

    pub fn integral(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() * self.grid.step_f64()
    }

    pub fn lp_norm(&self, p: Exponent) -> f64 {
        match p {
            Exponent::Infinite(_) => self.values.iter().map(|v| v.norm()).fold(0.0, f64::max),
            Exponent::Finite(_) => {
                let p = p.to_f64();
                let s: f64 = self.values.iter().map(|v| v.norm().powf(p)).sum();
                (s * self.grid.step_f64()).powf(1.0 / p)
            }
        }
    }

    pub fn sup(&self) -> f64 {
        self.lp_norm(Exponent::INFINITY)
    }
}

/// Global cells `[lo, hi)` whose midpoints lie in `i`.
pub fn midpoint_cells(grid: &GridSpec, i: &Interval) -> (i64, i64) {
    let half = Rat::new(1, 2);
    let lo = (grid.position(i.left()) - half).ceil().to_integer();
    let hi = (grid.position(i.right()) - half).ceil().to_integer();
    (lo, hi.max(lo))
}

/// Prefix sums of `|f|^p`, for exact integrals over arbitrary rational intervals.
///
/// The sums are carried as unevaluated pairs `hi + lo` so that differences
/// over near-empty ranges keep their leading digits.
#[derive(Clone, Debug)]
pub struct PowerPrefix {
    grid: GridSpec,
    powers: Vec<f64>,
    prefix: Vec<(f64, f64)>,
}

/// Error-free `a + b = s + e`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl PowerPrefix {
    pub fn new(f: &SampledFunction, p: f64) -> Self {
        let powers: Vec<f64> = f.values.iter().map(|v| v.norm().powf(p)).collect();
        PowerPrefix::from_powers(f.grid, powers)
    }

    pub fn from_powers(grid: GridSpec, powers: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(powers.len() + 1);
        prefix.push((0.0, 0.0));
        let (mut hi, mut lo) = (0.0, 0.0);
        for &v in &powers {
            let (s, e) = two_sum(hi, v);
            let (s, e) = two_sum(s, e + lo);
            hi = s;
            lo = e;
            prefix.push((hi, lo));
        }
        PowerPrefix {
            grid,
            powers,
            prefix,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `Σ_{a <= g < b} |f_g|^p` over global cells, zero outside the grid.
    pub fn cell_sum(&self, a: i64, b: i64) -> f64 {
        let clamp = |g: i64| (g - self.grid.start).clamp(0, self.grid.len as i64) as usize;
        let (a, b) = (clamp(a), clamp(b));
        if b <= a {
            return 0.0;
        }
        let ((hb, lb), (ha, la)) = (self.prefix[b], self.prefix[a]);
        let (s, e) = two_sum(hb, -ha);
        let d = s + (e + (lb - la));
        // Below this the pair difference is noise too.
        if d < 1e-24 * self.prefix[self.powers.len()].0 && b - a <= 64 {
            self.powers[a..b].iter().sum()
        } else {
            d
        }
    }

    /// Local cells `g` on which some grid-aligned `[a, b) ∋ g` has mean power
    /// above `t`, i.e. `(M_p f)^p > t` in full mode. With `T_k = S_k - t k` this
    /// holds iff `max_{b > g} T_b > min_{a <= g} T_a`, so one pass suffices.
    pub fn superlevel_cells(&self, t: f64) -> Vec<bool> {
        let n = self.powers.len();
        let shifted: Vec<f64> = self
            .prefix
            .iter()
            .enumerate()
            .map(|(k, &(hi, lo))| (hi - t * k as f64) + lo)
            .collect();
        let mut suffix_max = vec![f64::NEG_INFINITY; n + 1];
        for k in (0..n).rev() {
            suffix_max[k] = suffix_max[k + 1].max(shifted[k + 1]);
        }
        let mut prefix_min = f64::INFINITY;
        (0..n)
            .map(|g| {
                prefix_min = prefix_min.min(shifted[g]);
                suffix_max[g] > prefix_min
            })
            .collect()
    }

    fn power_at(&self, g: i64) -> f64 {
        self.grid.local(g).map(|i| self.powers[i]).unwrap_or(0.0)
    }

    /// `∫_I |f|^p`, exact for the piecewise-constant interpretation.
    pub fn integral(&self, i: &Interval) -> f64 {
        let a = self.grid.position(i.left());
        let b = self.grid.position(i.right());
        let (ga, gb) = (a.floor().to_integer(), b.floor().to_integer());
        let fa = to_f64(a - Rat::from_integer(ga));
        let fb = to_f64(b - Rat::from_integer(gb));
        let cells = if ga == gb {
            self.power_at(ga) * (fb - fa)
        } else {
            self.power_at(ga) * (1.0 - fa) + self.cell_sum(ga + 1, gb) + self.power_at(gb) * fb
        };
        cells * self.grid.step_f64()
    }

    pub fn average(&self, i: &Interval) -> f64 {
        self.integral(i) / i.length_f64()
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "averaging exponent must be a finite p >= 1, got {p}"
        )));
    }
    Ok(())
}

/// `⟨f⟩_{I,p} = (|I|^{-1} ∫_I |f|^p)^{1/p}`.
pub fn local_average(f: &SampledFunction, i: &Interval, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(PowerPrefix::new(f, p).average(i).max(0.0).powf(1.0 / p))
}

/// `(|I|^{-1} ∫ |f|^p χ_I^N)^{1/p}`, or `sup |f| χ_I^N` for `p = ∞`.
pub fn weighted_local_norm(f: &SampledFunction, i: &Interval, n: u32, p: Exponent) -> f64 {
    let grid = f.grid;
    let h = grid.step_f64();
    match p {
        Exponent::Infinite(_) => {
            let c = i.center_f64();
            f.values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    // Closest point of the cell to the center.
                    let left = (grid.start + k as i64) as f64 * h;
                    let x = c.clamp(left, left + h);
                    v.norm() * chi_weight(i, n, x)
                })
                .fold(0.0, f64::max)
        }
        Exponent::Finite(_) => {
            let p = p.to_f64();
            let s: f64 = f
                .values
                .iter()
                .enumerate()
                .map(|(k, v)| v.norm().powf(p) * chi_weight(i, n, grid.local_midpoint(k)))
                .sum();
            (s * h / i.length_f64()).powf(1.0 / p)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximalMode {
    /// Every interval with grid-aligned endpoints.
    Full,
    /// Intervals of the three shifted dyadic grids at scales of at least three cells.
    ThreeGrid,
}

/// `M_p f` evaluated on every cell of the grid of `f`.
#[derive(Clone, Debug)]
pub struct MaximalProfile {
    prefix: PowerPrefix,
    p: f64,
    mode: MaximalMode,
    support: Option<(i64, i64)>,
    /// `(M_p f)^p` per local cell.
    powered: Vec<f64>,
}

impl MaximalProfile {
    pub fn new(f: &SampledFunction, p: f64, mode: MaximalMode) -> Result<Self> {
        check_p(p)?;
        let prefix = PowerPrefix::new(f, p);
        let support = f.support_cells();
        let mut profile = MaximalProfile {
            prefix,
            p,
            mode,
            support,
            powered: Vec::new(),
        };
        profile.powered = match mode {
            MaximalMode::Full => profile.full_profile(),
            MaximalMode::ThreeGrid => {
                let grid = f.grid;
                (0..grid.len)
                    .into_par_iter()
                    .map(|i| profile.three_grid_at(grid.start + i as i64))
                    .collect()
            }
        };
        Ok(profile)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mode(&self) -> MaximalMode {
        self.mode
    }

    pub fn grid(&self) -> &GridSpec {
        &self.prefix.grid
    }

    fn avg_cells(&self, a: i64, b: i64) -> f64 {
        self.prefix.cell_sum(a, b) / (b - a) as f64
    }

    fn full_profile(&self) -> Vec<f64> {
        let grid = self.prefix.grid;
        let mut out: Vec<f64> = (0..grid.len)
            .into_par_iter()
            .map(|i| {
                let g = grid.start + i as i64;
                match self.support {
                    Some((lo, hi)) if g >= lo && g < hi => 0.0,
                    _ => self.full_outside(g),
                }
            })
            .collect();
        let Some((lo, hi)) = self.support else {
            return out;
        };
        // Inside the hull: M(g) = max over lo <= a <= g < b <= hi.
        let inner = (lo..hi)
            .into_par_iter()
            .fold(
                || vec![0.0f64; (hi - lo) as usize],
                |mut acc, a| {
                    let mut best = 0.0f64;
                    let mut b = hi;
                    while b > a {
                        best = best.max(self.avg_cells(a, b));
                        // best = max over b' >= b, valid for every g in [a, b).
                        let g = b - 1;
                        let slot = &mut acc[(g - lo) as usize];
                        *slot = slot.max(best);
                        b -= 1;
                    }
                    acc
                },
            )
            .reduce(
                || vec![0.0f64; (hi - lo) as usize],
                |mut x, y| {
                    for (a, b) in x.iter_mut().zip(y) {
                        *a = a.max(b);
                    }
                    x
                },
            );
        for (k, v) in inner.into_iter().enumerate() {
            if let Some(i) = grid.local(lo + k as i64) {
                out[i] = v;
            }
        }
        out
    }

    /// Exact full-mode value at a cell outside the support hull.
    fn full_outside(&self, g: i64) -> f64 {
        match self.support {
            None => 0.0,
            Some((lo, hi)) if g < lo => (lo + 1..=hi)
                .map(|b| self.avg_cells(g, b))
                .fold(0.0, f64::max),
            Some((lo, hi)) if g >= hi => (lo..hi)
                .map(|a| self.avg_cells(a, g + 1))
                .fold(0.0, f64::max),
            Some(_) => self.full_inside_slow(g),
        }
    }

    fn full_inside_slow(&self, g: i64) -> f64 {
        let (lo, hi) = self.support.expect("nonempty support");
        let mut best = 0.0f64;
        for a in lo..=g {
            for b in g + 1..=hi {
                best = best.max(self.avg_cells(a, b));
            }
        }
        best
    }

    fn three_grid_at(&self, g: i64) -> f64 {
        let Some((lo, hi)) = self.support else {
            return 0.0;
        };
        let reach = (hi - lo).max(1) + (g - lo).abs().max((g - hi).abs());
        let mut best = 0.0f64;
        let mut s: i64 = 1;
        // Scale exponent k of the current grid length 3s cells = 2^k.
        let mut k = -(self.prefix.grid.level as i64);
        loop {
            let sign = if k.rem_euclid(2) == 0 { 1 } else { -1 };
            for j in 0..3i64 {
                let n = (g - sign * j * s).div_euclid(3 * s);
                let a = (3 * n + sign * j) * s;
                best = best.max(self.avg_cells(a, a + 3 * s));
            }
            if 3 * s > 64 * reach {
                break;
            }
            s *= 2;
            k += 1;
        }
        best
    }

    /// `(M_p f)^p` at global cell `g`, computed on demand outside the grid.
    fn powered_at(&self, g: i64) -> f64 {
        if let Some(i) = self.prefix.grid.local(g) {
            return self.powered[i];
        }
        match self.mode {
            MaximalMode::Full => self.full_outside(g),
            MaximalMode::ThreeGrid => self.three_grid_at(g),
        }
    }

    pub fn at_cell(&self, g: i64) -> f64 {
        self.powered_at(g).max(0.0).powf(1.0 / self.p)
    }

    /// `M_p f(x)`, with intervals taken closed so that grid nodes see both neighbours.
    pub fn at(&self, x: Rat) -> f64 {
        let u = self.prefix.grid.position(x);
        let g = u.floor().to_integer();
        if u.is_integer() {
            self.at_cell(g - 1).max(self.at_cell(g))
        } else {
            self.at_cell(g)
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.powered.iter().map(|v| v.max(0.0).powf(1.0 / self.p)).collect()
    }

    /// Whether `M_p f > threshold` on every cell of the global range `[a, b)`.
    pub fn exceeds_on(&self, a: i64, b: i64, threshold: f64) -> bool {
        let t = threshold.powf(self.p);
        (a..b).all(|g| self.powered_at(g) > t)
    }

    /// Minimum of `M_p f` over the cells with midpoint in `3I`.
    pub fn inf_on_triple(&self, i: &Interval) -> f64 {
        let t = i.triple();
        let grid = &self.prefix.grid;
        let (mut lo, mut hi) = midpoint_cells(grid, &t);
        if hi <= lo {
            lo = grid.cell_of(t.center());
            hi = lo + 1;
        }
        let mut best = f64::INFINITY;
        let inside_lo = lo.max(grid.start);
        let inside_hi = hi.min(grid.end());
        for g in inside_lo..inside_hi {
            best = best.min(self.powered[(g - grid.start) as usize]);
        }
        // Off the grid, the full-mode profile decreases away from the support,
        // so only the extreme cells matter; the three-grid profile is scanned.
        let outside: Vec<i64> = match self.mode {
            MaximalMode::Full => vec![lo, hi - 1],
            MaximalMode::ThreeGrid => (lo..inside_lo.max(lo))
                .chain(inside_hi.min(hi).max(inside_lo)..hi)
                .collect(),
        };
        for g in outside {
            if grid.local(g).is_none() {
                best = best.min(self.powered_at(g));
            }
        }
        best.max(0.0).powf(1.0 / self.p)
    }
}

pub fn maximal_function(f: &SampledFunction, p: f64, x: Rat, mode: MaximalMode) -> Result<f64> {
    Ok(MaximalProfile::new(f, p, mode)?.at(x))
}

/// `inf_{x ∈ 3I} M_p f(x)` over grid cells of `3I`.
pub fn inf_maximal_on(f: &SampledFunction, p: f64, i: &Interval) -> Result<f64> {
    Ok(MaximalProfile::new(f, p, MaximalMode::Full)?.inf_on_triple(i))
}

/// `sup_{Q ∋ x} (⟨|f|^p w⟩_Q / ⟨w⟩_Q)^{1/p}` over the standard dyadic grid,
/// scales of at least three cells. Intervals with `⟨w⟩_Q = 0` are skipped.
pub fn dyadic_weighted_maximal(
    f: &SampledFunction,
    w: &SampledFunction,
    p: f64,
    x: Rat,
) -> Result<f64> {
    check_p(p)?;
    let grid = f.grid.hull(&w.grid)?;
    let fw: Vec<f64> = (0..grid.len)
        .map(|i| {
            let g = grid.start + i as i64;
            f.at_cell(g).norm().powf(p) * w.at_cell(g).re
        })
        .collect();
    let ww: Vec<f64> = (0..grid.len)
        .map(|i| w.at_cell(grid.start + i as i64).re)
        .collect();
    let num = PowerPrefix::from_powers(grid, fw);
    let den = PowerPrefix::from_powers(grid, ww);
    let g = grid.cell_of(x);
    let mut best = 0.0f64;
    let mut s: i64 = 1;
    loop {
        let n = g.div_euclid(3 * s);
        let a = 3 * n * s;
        let b = a + 3 * s;
        let d = den.cell_sum(a, b);
        if d > 0.0 {
            best = best.max(num.cell_sum(a, b) / d);
        }
        if a <= grid.start && b >= grid.end() {
            break;
        }
        s *= 2;
    }
    Ok(best.powf(1.0 / p))
}

/// Finitely many functions on a common grid, normed pointwise in `ℓ^r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorSignal {
    components: Vec<SampledFunction>,
    r: Exponent,
}

fn lr_norm(values: impl Iterator<Item = f64>, r: Exponent) -> f64 {
    match r {
        Exponent::Infinite(_) => values.fold(0.0, f64::max),
        Exponent::Finite(_) => {
            let r = r.to_f64();
            values.map(|v| v.powf(r)).sum::<f64>().powf(1.0 / r)
        }
    }
}

impl VectorSignal {
    pub fn new(components: Vec<SampledFunction>, r: Exponent) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("vector signal needs a component".into()))?;
        if components.iter().any(|c| c.grid != first.grid) {
            return Err(Error::InvalidArgument(
                "vector signal components must share a grid".into(),
            ));
        }
        if r <= Exponent::int(1) {
            return Err(Error::InvalidArgument(format!("r must exceed 1, got {r}")));
        }
        Ok(VectorSignal { components, r })
    }

    pub fn components(&self) -> &[SampledFunction] {
        &self.components
    }

    pub fn r(&self) -> Exponent {
        self.r
    }

    pub fn grid(&self) -> &GridSpec {
        &self.components[0].grid
    }

    /// `|F(x)|_{ℓ^r}` on local cell `i`.
    pub fn pointwise_norm(&self, i: usize) -> f64 {
        lr_norm(self.components.iter().map(|c| c.values[i].norm()), self.r)
    }

    /// `‖F‖_{L^q(ℓ^r)}` over the grid.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let h = self.grid().step_f64();
        let s: f64 = (0..self.grid().len)
            .map(|i| self.pointwise_norm(i).powf(q))
            .sum();
        (s * h).powf(1.0 / q)
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorSignal {
            components: self
                .components
                .iter()
                .map(|f| f.scale(Complex64::new(c, 0.0)))
                .collect(),
            r: self.r,
        }
    }
}

pub fn vector_pointwise_norm(f: &VectorSignal, x: Rat) -> f64 {
    match f.grid().local(f.grid().cell_of(x)) {
        Some(i) => f.pointwise_norm(i),
        None => 0.0,
    }
}

/// `|{M_p f_k}|_{ℓ^r}` per local cell.
pub fn vector_maximal(f: &VectorSignal, p: f64) -> Result<Vec<f64>> {
    let profiles = f
        .components
        .iter()
        .map(|c| MaximalProfile::new(c, p, MaximalMode::Full).map(|m| m.values()))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..f.grid().len)
        .map(|i| lr_norm(profiles.iter().map(|m| m[i]), f.r))
        .collect())
}

/// `‖{M_p f_k}‖_{L^q(ℓ^r)} / ‖{f_k}‖_{L^q(ℓ^r)}`, both measured on the grid domain.
pub fn fefferman_stein_ratio(f: &VectorSignal, p: f64, q: f64) -> Result<f64> {
    check_p(p)?;
    let r = f.r.to_f64();
    if !(q.is_finite() && p < q && p < r) {
        return Err(Error::Precondition(format!(
            "need 1 <= p < min(q, r) with q finite, got p={p}, q={q}, r={r}"
        )));
    }
    let den = f.lq_norm(q);
    if den == 0.0 {
        return Err(Error::Undefined("Fefferman-Stein ratio of the zero signal".into()));
    }
    let h = f.grid().step_f64();
    let num: f64 = vector_maximal(f, p)?.iter().map(|v| v.powf(q)).sum::<f64>() * h;
    Ok(num.powf(1.0 / q) / den)
}

fn bump_profile(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

/// Named function presets addressable from configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionPreset {
    Zero,
    /// `1_{[a, b)}`.
    Indicator { a: f64, b: f64 },
    /// `e^{-π((x - c)/w)^2}`, truncated to the grid.
    Gaussian { center: f64, width: f64 },
    /// `exp(-1/(1 - u^2))` with `u = (x - c)/w`, unit peak at `c` scaled by `e`.
    Bump { center: f64, width: f64 },
    /// Bump times `e^{iπ slope (x - c)^2}`.
    Chirp { center: f64, width: f64, slope: f64 },
    /// `height · 1_{[c - w/2, c + w/2)}`.
    Spike { center: f64, width: f64, height: f64 },
    /// Random trigonometric polynomial of the given degree under a bump.
    RandomTrig {
        seed: u64,
        degree: u32,
        #[serde(default = "default_center")]
        center: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    Scaled { factor: f64, inner: Box<FunctionPreset> },
    Sum { terms: Vec<FunctionPreset> },
}

fn default_center() -> f64 {
    0.5
}

fn default_width() -> f64 {
    0.5
}

impl FunctionPreset {
    pub const NAMES: [&'static str; 9] = [
        "zero",
        "indicator",
        "gaussian",
        "bump",
        "chirp",
        "spike",
        "random_trig",
        "scaled",
        "sum",
    ];

    pub fn eval(&self, x: f64) -> Complex64 {
        let real = |v: f64| Complex64::new(v, 0.0);
        match self {
            FunctionPreset::Zero => Complex64::zero(),
            FunctionPreset::Indicator { a, b } => real(if *a <= x && x < *b { 1.0 } else { 0.0 }),
            FunctionPreset::Gaussian { center, width } => {
                let u = (x - center) / width;
                real((-std::f64::consts::PI * u * u).exp())
            }
            FunctionPreset::Bump { center, width } => {
                real(std::f64::consts::E * bump_profile((x - center) / width))
            }
            FunctionPreset::Chirp {
                center,
                width,
                slope,
            } => {
                let d = x - center;
                Complex64::from_polar(
                    std::f64::consts::E * bump_profile(d / width),
                    std::f64::consts::PI * slope * d * d,
                )
            }
            FunctionPreset::Spike {
                center,
                width,
                height,
            } => real(if center - width / 2.0 <= x && x < center + width / 2.0 {
                *height
            } else {
                0.0
            }),
            FunctionPreset::RandomTrig {
                seed,
                degree,
                center,
                width,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let u = (x - center) / width;
                let envelope = bump_profile(u);
                if envelope == 0.0 {
                    return Complex64::zero();
                }
                let mut s = 0.0;
                for k in 0..=*degree {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    s += a * (std::f64::consts::PI * k as f64 * u + phase).cos();
                }
                real(std::f64::consts::E * envelope * s)
            }
            FunctionPreset::Scaled { factor, inner } => inner.eval(x) * *factor,
            FunctionPreset::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    /// Interval outside which the preset vanishes (or is negligible, for Gaussians).
    pub fn extent(&self) -> Option<(f64, f64)> {
        match self {
            FunctionPreset::Zero => None,
            FunctionPreset::Indicator { a, b } => Some((*a, *b)),
            FunctionPreset::Gaussian { center, width } => {
                Some((center - 6.0 * width, center + 6.0 * width))
            }
            FunctionPreset::Bump { center, width }
            | FunctionPreset::Chirp { center, width, .. }
            | FunctionPreset::RandomTrig { center, width, .. } => {
                Some((center - width, center + width))
            }
            FunctionPreset::Spike { center, width, .. } => {
                Some((center - width / 2.0, center + width / 2.0))
            }
            FunctionPreset::Scaled { inner, .. } => inner.extent(),
            FunctionPreset::Sum { terms } => terms
                .iter()
                .filter_map(|t| t.extent())
                .reduce(|(a, b), (c, d)| (a.min(c), b.max(d))),
        }
    }

    pub fn sample(&self, grid: GridSpec) -> SampledFunction {
        SampledFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Sample on the smallest grid of the given level covering the extent.
    pub fn sample_at_level(&self, level: u32) -> SampledFunction {
        let (a, b) = self.extent().unwrap_or((0.0, 1.0));
        let grid = GridSpec {
            level,
            start: (a * (3u64 << level) as f64).floor() as i64,
            len: 0,
        };
        let end = (b * (3u64 << level) as f64).ceil() as i64;
        let grid = GridSpec {
            len: (end - grid.start).max(1) as usize,
            ..grid
        };
        self.sample(grid)
    }
}

/// Unit-mass random bump sum, used by randomized suites.
pub fn random_bumps(rng: &mut impl Rng, count: usize, lo: f64, hi: f64) -> FunctionPreset {
    let terms = (0..count)
        .map(|_| {
            let width = rng.gen_range(0.05..0.25) * (hi - lo);
            let center = rng.gen_range(lo + width..hi - width);
            let factor = rng.gen_range(0.2..2.0);
            FunctionPreset::Scaled {
                factor,
                inner: Box::new(FunctionPreset::Bump { center, width }),
            }
        })
        .collect();
    FunctionPreset::Sum { terms }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
