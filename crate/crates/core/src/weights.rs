//! Muckenhoupt, reverse Hölder and multilinear weight constants on sampled
//! weights, and the weighted checks built on them.
//!
//! Suprema over intervals run over all intervals whose endpoints are cell
//! boundaries of the weight's grid, so every reported constant is a lower
//! bound for the continuous one.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{to_f64, Exponent, ExponentTuple, HolderTuple, Interval, Rat};
use crate::signal::{GridSpec, PowerPrefix, SampledFunction};
use crate::sparse::{build_sparse, psf_intervals, SparseCollection};

/// A strictly positive sampled function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Weight {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len {
            return Err(Error::InvalidArgument(format!(
                "weight has {} values for {} cells",
                values.len(),
                grid.len
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weight value {} at cell {i} is not positive and finite",
                values[i]
            )));
        }
        Ok(Weight { grid, values })
    }

    /// Samples `v` at cell midpoints.
    pub fn from_fn(grid: GridSpec, v: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.len).map(|i| v(grid.local_midpoint(i))).collect();
        Weight::new(grid, values)
    }

    pub fn from_function(f: &SampledFunction) -> Result<Self> {
        if f.values().iter().any(|v| v.im != 0.0) {
            return Err(Error::InvalidArgument("weight must be real".into()));
        }
        Weight::new(*f.grid(), f.values().iter().map(|v| v.re).collect())
    }

    pub fn constant(grid: GridSpec, c: f64) -> Result<Self> {
        Weight::new(grid, vec![c; grid.len])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn domain(&self) -> Interval {
        self.grid.domain()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `v^s`, which must stay positive and finite.
    pub fn pow(&self, s: f64) -> Result<Self> {
        Weight::new(self.grid, self.values.iter().map(|v| v.powf(s)).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Weight::new(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    pub fn to_function(&self) -> SampledFunction {
        let values = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        SampledFunction::new(self.grid, values).expect("lengths match")
    }

    /// `∫_I v` for a grid-aligned `I`.
    pub fn mass(&self, i: &Interval) -> f64 {
        PowerPrefix::from_powers(self.grid, self.values.clone()).integral(i)
    }

    fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }
}

/// Named weights addressable from configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightPreset {
    Constant {
        value: f64,
    },
    /// `left` below `split`, `right` from `split` on.
    TwoStep {
        left: f64,
        right: f64,
        split: f64,
    },
    /// `|x - center|^exponent`.
    Power {
        exponent: f64,
        center: f64,
    },
    /// `exp(s φ)` with `φ` a random trigonometric polynomial and `s` tuned so
    /// that `[v]_{A_q}` is within 1% of `target`.
    RandomAq {
        seed: u64,
        target: f64,
        q: f64,
    },
}

impl WeightPreset {
    pub const NAMES: [&'static str; 4] = ["constant", "two_step", "power", "random_aq"];

    pub fn sample(&self, grid: GridSpec) -> Result<Weight> {
        match self {
            WeightPreset::Constant { value } => Weight::constant(grid, *value),
            WeightPreset::TwoStep { left, right, split } => {
                Weight::from_fn(grid, |x| if x < *split { *left } else { *right })
            }
            WeightPreset::Power { exponent, center } => {
                Weight::from_fn(grid, |x| (x - center).abs().powf(*exponent))
            }
            WeightPreset::RandomAq { seed, target, q } => random_aq(grid, *seed, *target, *q),
        }
    }
}

fn random_aq(grid: GridSpec, seed: u64, target: f64, q: f64) -> Result<Weight> {
    if !(target >= 1.0 && target.is_finite()) {
        return Err(Error::InvalidArgument(format!("A_q target must be at least 1, got {target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64)> = (1..=6)
        .map(|k| (k as f64, rng.gen_range(-1.0..1.0) / k as f64, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let dom = grid.domain();
    let (a, len) = (dom.left_f64(), dom.length_f64());
    let phi: Vec<f64> = (0..grid.len)
        .map(|i| {
            let u = (grid.local_midpoint(i) - a) / len;
            terms
                .iter()
                .map(|(k, c, ph)| c * (std::f64::consts::TAU * k * u + ph).cos())
                .sum()
        })
        .collect();
    let build = |s: f64| Weight::new(grid, phi.iter().map(|p| (s * p).exp()).collect());
    if target == 1.0 {
        return build(0.0);
    }
    let mut hi = 1.0;
    while aq_constant(&build(hi)?, q)? < target {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Infeasible(format!("A_q target {target} out of reach")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let c = aq_constant(&build(mid)?, q)?;
        if (c / target - 1.0).abs() < 0.01 {
            return build(mid);
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(0.5 * (lo + hi))
}

/// `sup_I Π_k ⟨g_k⟩_I^{e_k}` over grid-aligned intervals `I` for positive
/// sampled `g_k` on a common grid, with a maximizing interval.
pub fn interval_sup(grid: &GridSpec, factors: &[(Vec<f64>, f64)]) -> Result<(f64, Interval)> {
    for (g, _) in factors {
        if g.len() != grid.len {
            return Err(Error::InvalidArgument("factor length differs from the grid".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Undefined("non-finite weight power".into()));
        }
    }
    let prefixes: Vec<(PowerPrefix, f64)> = factors
        .iter()
        .map(|(g, e)| (PowerPrefix::from_powers(*grid, g.clone()), *e))
        .collect();
    let n = grid.len as i64;
    let (best, a, b) = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut best = (f64::NEG_INFINITY, a, a + 1);
            for b in a + 1..=n {
                let cells = (b - a) as f64;
                let v: f64 = prefixes
                    .iter()
                    .map(|(pp, e)| (pp.cell_sum(grid.start + a, grid.start + b) / cells).powf(*e))
                    .product();
                if v > best.0 {
                    best = (v, a, b);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, 1),
            |x, y| if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) { y } else { x },
        );
    let interval = Interval::from_endpoints(
        grid.cell_interval(grid.start + a).left(),
        grid.cell_interval(grid.start + b - 1).right(),
    )?;
    Ok((best, interval))
}

/// `[v]_{A_q} = sup_I ⟨v⟩_I ⟨v^{1/(1-q)}⟩_I^{q-1}`.
pub fn aq_constant(v: &Weight, q: f64) -> Result<f64> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("A_q needs 1 < q < ∞, got {q}")));
    }
    if v.is_constant() {
        return Ok(1.0);
    }
    let dual: Vec<f64> = v.values.iter().map(|x| x.powf(1.0 / (1.0 - q))).collect();
    Ok(interval_sup(&v.grid, &[(v.values.clone(), 1.0), (dual, q - 1.0)])?.0)
}

/// `[v]_{RH_α} = sup_I ⟨v^α⟩_I^{1/α} ⟨v⟩_I^{-1}`.
pub fn rh_constant(v: &Weight, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("RH_α needs 1 < α < ∞, got {alpha}")));
    }
    if v.is_constant() {
        return Ok(1.0);
    }
    let powered: Vec<f64> = v.values.iter().map(|x| x.powf(alpha)).collect();
    Ok(interval_sup(&v.grid, &[(powered, 1.0 / alpha), (v.values.clone(), -1.0)])?.0)
}

fn finite_rat(e: Exponent, what: &str) -> Result<Rat> {
    match e {
        Exponent::Finite(r) => Ok(r),
        Exponent::Infinite(_) => Err(Error::InvalidArgument(format!("{what} must be finite"))),
    }
}

/// Three weights on one grid with `Π_j v_j^{1/q_j} = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub v: [Weight; 3],
    pub q: HolderTuple,
}

/// Pointwise tolerance on `Π_j v_j^{1/q_j} = 1`.
pub const WEIGHT_VECTOR_TOL: f64 = 1e-8;

impl WeightVector {
    pub fn new(v: [Weight; 3], q: HolderTuple) -> Result<Self> {
        let qs = q.to_f64();
        if qs.iter().any(|&x| !(x > 1.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!("weight vector needs 1 < q_j < ∞, got {qs:?}")));
        }
        if v[1].grid != v[0].grid || v[2].grid != v[0].grid {
            return Err(Error::InvalidArgument("weights live on different grids".into()));
        }
        for i in 0..v[0].grid.len {
            let prod: f64 = (0..3).map(|j| v[j].values[i].powf(1.0 / qs[j])).product();
            if (prod - 1.0).abs() > WEIGHT_VECTOR_TOL {
                return Err(Error::Precondition(format!(
                    "Π v_j^(1/q_j) = {prod} at cell {i}"
                )));
            }
        }
        Ok(WeightVector { v, q })
    }

    /// Completes `(v1, v2)` with `v3 = u3^{1 - q3}`, `u3 = Π_{j<3} v_j^{r/q_j}`,
    /// where `1/r = 1/q1 + 1/q2` and `q3 = r'`.
    pub fn complete(v1: Weight, v2: Weight, q1: Exponent, q2: Exponent) -> Result<Self> {
        let (a, b) = (finite_rat(q1, "q1")?, finite_rat(q2, "q2")?);
        let one = Rat::from_integer(1);
        let inv_r = a.recip() + b.recip();
        if inv_r >= one {
            return Err(Error::InvalidArgument(format!("need r > 1, got 1/r = {inv_r}")));
        }
        let q3 = (one - inv_r).recip();
        let q = HolderTuple::new([q1, q2, Exponent::Finite(q3)])?;
        if v2.grid != v1.grid {
            return Err(Error::InvalidArgument("weights live on different grids".into()));
        }
        let r = to_f64(inv_r.recip());
        let (fa, fb, f3) = (to_f64(a), to_f64(b), to_f64(q3));
        let v3: Vec<f64> = v1
            .values
            .iter()
            .zip(&v2.values)
            .map(|(x, y)| (x.powf(r / fa) * y.powf(r / fb)).powf(1.0 - f3))
            .collect();
        let v3 = Weight::new(v1.grid, v3)?;
        WeightVector::new([v1, v2, v3], q)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.v[0].grid
    }

    /// `w_j = v_j^{p_j/(p_j - q_j)}`.
    pub fn dual_weights(&self, p: &ExponentTuple) -> Result<[Weight; 3]> {
        let (ps, qs) = (check_below(p, &self.q)?, self.q.to_f64());
        let w: Vec<Weight> = (0..3)
            .map(|j| self.v[j].pow(ps[j] / (ps[j] - qs[j])))
            .collect::<Result<_>>()
            .map_err(|e| Error::Undefined(format!("dual weight power: {e}")))?;
        Ok([w[0].clone(), w[1].clone(), w[2].clone()])
    }
}

/// `p` as floats, checking `0 < p_j < q_j < ∞`.
fn check_below(p: &ExponentTuple, q: &HolderTuple) -> Result<[f64; 3]> {
    let (ps, qs) = (p.to_f64(), q.to_f64());
    for j in 0..3 {
        if !p.get(j).is_finite() || !(ps[j] > 0.0 && ps[j] < qs[j]) {
            return Err(Error::Precondition(format!(
                "need 0 < p_j < q_j, got p = {p}, q = {:?}",
                qs
            )));
        }
    }
    Ok(ps)
}

/// `[v]_{A^p_q} = sup_I Π_j ⟨v_j^{p_j/(p_j-q_j)}⟩_I^{1/p_j - 1/q_j}`.
pub fn multilinear_apq_constant(vv: &WeightVector, p: &ExponentTuple) -> Result<f64> {
    let w = vv.dual_weights(p)?;
    let (ps, qs) = (p.to_f64(), vv.q.to_f64());
    let factors: Vec<(Vec<f64>, f64)> = (0..3)
        .map(|j| (w[j].values.clone(), 1.0 / ps[j] - 1.0 / qs[j]))
        .collect();
    Ok(interval_sup(vv.grid(), &factors)?.0)
}

/// `KC · Π_j q_j/(q_j - p_j) · 2^{3(Σ 1/p_j - 1) max_j p_j/(q_j - p_j)}`.
pub fn theorem_constant(p: &ExponentTuple, q: &HolderTuple, kc: f64) -> Result<f64> {
    if !p.is_admissible(true) {
        return Err(Error::Precondition(format!("tuple {p} is not open admissible")));
    }
    let mut product = Rat::from_integer(1);
    let mut sum = Rat::from_integer(-1);
    let mut max: Option<Rat> = None;
    for j in 0..3 {
        let (pj, qj) = (finite_rat(p.get(j), "p_j")?, finite_rat(q.get(j), "q_j")?);
        if pj >= qj {
            return Err(Error::Precondition(format!("need p_j < q_j, got {pj} >= {qj}")));
        }
        product *= qj / (qj - pj);
        sum += pj.recip();
        let ratio = pj / (qj - pj);
        max = Some(max.map_or(ratio, |m| m.max(ratio)));
    }
    let exponent = Rat::from_integer(3) * sum * max.expect("three entries");
    Ok(kc * to_f64(product) * 2f64.powf(to_f64(exponent)))
}

/// `max_j q_j/(q_j - p_j)`, the power of `[v]_{A^p_q}` in the weighted bounds.
pub fn weight_power(p: &ExponentTuple, q: &HolderTuple) -> Result<f64> {
    let (ps, qs) = (check_below(p, q)?, q.to_f64());
    Ok((0..3).map(|j| qs[j] / (qs[j] - ps[j])).fold(f64::NEG_INFINITY, f64::max))
}

fn is_standard_dyadic(i: &Interval) -> bool {
    let len = i.length();
    let pow = |n: i64| n > 0 && (n & (n - 1)) == 0;
    pow(*len.numer()) && pow(*len.denom()) && (i.left() / len).is_integer()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MainweightReport {
    pub psf: f64,
    pub mu: f64,
    pub apq: f64,
    pub power: f64,
    pub norms: [f64; 3],
    pub ratio: f64,
}

/// The sparse collection built on the lifted inputs `g_j w_j^{1/p_j}` on the
/// standard grid, with `p` reduced below 2 for the construction.
pub fn weighted_sparse(g: [&SampledFunction; 3], vv: &WeightVector, p: &ExponentTuple) -> Result<SparseCollection> {
    let w = vv.dual_weights(p)?;
    let ps = p.to_f64();
    let lifted = (0..3)
        .map(|j| {
            let g = g[j].embed(*vv.grid())?;
            let vals = g
                .values()
                .iter()
                .zip(w[j].values())
                .map(|(x, wj)| x * wj.powf(1.0 / ps[j]))
                .collect();
            SampledFunction::new(*vv.grid(), vals)
        })
        .collect::<Result<Vec<_>>>()?;
    build_sparse([&lifted[0], &lifted[1], &lifted[2]], &p.reduce_below_two()?, 0)?.collection()
}

/// `PSF^p_S(g_j w_j^{1/p_j}) / (μ_{p,q} [v]_{A^p_q}^{max q_j/(q_j-p_j)} Π_j ‖g_j‖_{L^{q_j}(w_j)})`
/// with `μ_{p,q}` the theorem constant at `KC = 1`. A vanishing form gives
/// ratio `0`; `None` when only the denominator vanishes.
pub fn mainweight_check(
    g: [&SampledFunction; 3],
    vv: &WeightVector,
    p: &ExponentTuple,
    s: &SparseCollection,
) -> Result<Option<MainweightReport>> {
    if let Some(i) = s.intervals.iter().find(|i| !is_standard_dyadic(i)) {
        return Err(Error::Precondition(format!("{i} is not in the standard dyadic grid")));
    }
    if g.iter().any(|gj| gj.grid() != vv.grid()) {
        return Err(Error::InvalidArgument("functions and weights live on different grids".into()));
    }
    let w = vv.dual_weights(p)?;
    let (ps, qs) = (p.to_f64(), vv.q.to_f64());
    let h = vv.grid().step_f64();
    let mut norms = [0.0; 3];
    let mut lifted = Vec::with_capacity(3);
    for j in 0..3 {
        let vals = g[j].values();
        norms[j] = (h * vals
            .iter()
            .zip(&w[j].values)
            .map(|(x, wj)| x.norm().powf(qs[j]) * wj)
            .sum::<f64>())
        .powf(1.0 / qs[j]);
        let scaled = vals
            .iter()
            .zip(&w[j].values)
            .map(|(x, wj)| x * wj.powf(1.0 / ps[j]))
            .collect();
        lifted.push(SampledFunction::new(*vv.grid(), scaled)?);
    }
    let psf = psf_intervals(&s.intervals, p, [&lifted[0], &lifted[1], &lifted[2]])?;
    let mu = theorem_constant(p, &vv.q, 1.0)?;
    let apq = multilinear_apq_constant(vv, p)?;
    let power = weight_power(p, &vv.q)?;
    let denom = mu * apq.powf(power) * norms.iter().product::<f64>();
    if denom == 0.0 && psf > 0.0 {
        return Ok(None);
    }
    Ok(Some(MainweightReport {
        psf,
        mu,
        apq,
        power,
        norms,
        ratio: if psf == 0.0 { 0.0 } else { psf / denom },
    }))
}

/// Largest `ε` tried by the openness search.
pub const EPSILON_MAX: (i64, i64) = (1, 4);
/// Bisection steps of the openness search.
pub const EPSILON_STEPS: u32 = 24;
/// Allowed growth `[v^{2/(1-ε)}]_{A_q} <= budget · [v^2]_{A_q}` in the search.
pub const EPSILON_BUDGET: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AqcorParams {
    pub theta: [Rat; 3],
    pub delta: Rat,
    pub r: [Rat; 3],
}

impl AqcorParams {
    /// `θ_j >= 0` and `Σ θ_j / r_j = 1`.
    pub fn is_valid(&self) -> bool {
        let sum = (0..3).fold(Rat::from_integer(0), |acc, j| acc + self.theta[j] / self.r[j]);
        self.theta.iter().all(|t| *t >= Rat::from_integer(0)) && sum == Rat::from_integer(1)
    }

    /// `1/p_j = 1 - δ θ_j / r_j`.
    pub fn exponents(&self) -> Result<ExponentTuple> {
        let one = Rat::from_integer(1);
        let mut p = [Exponent::int(1); 3];
        for j in 0..3 {
            let inv = one - self.delta * self.theta[j] / self.r[j];
            if inv <= Rat::from_integer(0) {
                return Err(Error::Infeasible(format!("1/p_{} = {inv} is not positive", j + 1)));
            }
            p[j] = Exponent::Finite(inv.recip());
        }
        Ok(ExponentTuple(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AqcorReport {
    pub epsilon: Rat,
    pub params: AqcorParams,
    pub p: ExponentTuple,
    pub q: HolderTuple,
    /// `[v_j^2]_{A_{q_j}}`.
    pub squared: [f64; 2],
    /// `[v_j^{2/(1-ε)}]_{A_{q_j}}`.
    pub opened: [f64; 2],
    pub apq: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Picks `ε` by bisection on `(0, 1/4]`, sets `δ = 1 + ε`, `θ_j = 1/2`, and
/// compares the computed `[v]_{A^p_q}` with `Π_j [v_j^{2/(1-ε)}]_{A_{q_j}}^{(1-ε)/(2q_j)}`.
pub fn aqcor_reduce(v1: &Weight, v2: &Weight, q1: Exponent, q2: Exponent) -> Result<AqcorReport> {
    let vv = WeightVector::complete(v1.clone(), v2.clone(), q1, q2)?;
    let q = vv.q;
    let qs = q.to_f64();
    let vs = [v1, v2];
    let opened = |eps: Rat, j: usize| -> Result<f64> {
        aq_constant(&vs[j].pow(2.0 / (1.0 - to_f64(eps)))?, qs[j])
    };
    let mut squared = [0.0; 2];
    for j in 0..2 {
        squared[j] = aq_constant(&vs[j].pow(2.0)?, qs[j])?;
        if !squared[j].is_finite() {
            return Err(Error::Undefined(format!("[v_{}^2]_A_q is not finite", j + 1)));
        }
    }
    let within = |eps: Rat| -> Result<bool> {
        Ok((0..2).all(|j| opened(eps, j).is_ok_and(|c| c <= EPSILON_BUDGET * squared[j])))
    };
    let hi = Rat::new(EPSILON_MAX.0, EPSILON_MAX.1);
    let epsilon = if within(hi)? {
        hi
    } else {
        let (mut lo, mut hi) = (Rat::from_integer(0), hi);
        for _ in 0..EPSILON_STEPS {
            let mid = (lo + hi) / 2;
            if within(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == Rat::from_integer(0) {
            return Err(Error::Infeasible(format!(
                "no ε in (0, 1/4] keeps [v_j^(2/(1-ε))]_A_q within {EPSILON_BUDGET}x of {squared:?}; smallest tried {hi}"
            )));
        }
        lo
    };
    let one = Rat::from_integer(1);
    let r = q.exponents().map(|e| match e {
        Exponent::Finite(x) => x / (x - one),
        Exponent::Infinite(_) => one,
    });
    let params = AqcorParams {
        theta: [Rat::new(1, 2); 3],
        delta: one + epsilon,
        r,
    };
    let p = params.exponents()?;
    if !p.is_admissible(true) {
        return Err(Error::Infeasible(format!("reduced tuple {p} is not open admissible")));
    }
    let apq = multilinear_apq_constant(&vv, &p)?;
    let eps = to_f64(epsilon);
    let opened = [opened(epsilon, 0)?, opened(epsilon, 1)?];
    let bound: f64 = (0..2)
        .map(|j| opened[j].powf((1.0 - eps) / (2.0 * qs[j])))
        .product();
    Ok(AqcorReport {
        epsilon,
        params,
        p,
        q,
        squared,
        opened,
        apq,
        bound,
        holds: apq <= bound * (1.0 + 1e-12),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `[v^2]_{A_q}`.
    pub square_aq: f64,
    /// `[v]_{A_{(q+1)/2}}`.
    pub half_aq: f64,
    /// `[v]_{RH_2}`.
    pub rh2: f64,
    /// `max([v]_{A_{(q+1)/2}}, [v]_{RH_2})^2 <= [v^2]_{A_q} <= ([v]_{A_{(q+1)/2}} [v]_{RH_2})^2`,
    /// which holds interval by interval and makes the two sides finite together.
    pub consistent: bool,
}

pub fn rh_ap_equivalence_check(v: &Weight, q: f64) -> Result<EquivalenceReport> {
    let square_aq = aq_constant(&v.pow(2.0)?, q)?;
    let half_aq = aq_constant(v, (q + 1.0) / 2.0)?;
    let rh2 = rh_constant(v, 2.0)?;
    let tol = 1e-10;
    let lower = half_aq.max(rh2).powi(2);
    let upper = (half_aq * rh2).powi(2);
    Ok(EquivalenceReport {
        square_aq,
        half_aq,
        rh2,
        consistent: lower <= square_aq * (1.0 + tol) && square_aq <= upper * (1.0 + tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::FunctionPreset;
    use proptest::prelude::*;
    fn unit(level: u32) -> GridSpec {
        GridSpec::covering(&Interval::int(0, 1), level)
    }

    fn sym(level: u32) -> GridSpec {
        GridSpec::covering(&Interval::int(-1, 1), level)
    }

    fn two_step(level: u32) -> Weight {
        WeightPreset::TwoStep { left: 2.0, right: 1.0, split: 0.5 }.sample(unit(level)).unwrap()
    }

    /// `sup_I Π ⟨g_k⟩^{e_k}` by direct summation over every cell range.
    fn brute_sup(factors: &[(Vec<f64>, f64)]) -> f64 {
        let n = factors[0].0.len();
        let mut best = f64::NEG_INFINITY;
        for a in 0..n {
            for b in a + 1..=n {
                let v: f64 = factors
                    .iter()
                    .map(|(g, e)| (g[a..b].iter().sum::<f64>() / (b - a) as f64).powf(*e))
                    .product();
                best = best.max(v);
            }
        }
        best
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn aq_examples() {
        let one = Weight::constant(unit(3), 1.0).unwrap();
        assert_eq!(aq_constant(&one, 2.0).unwrap(), 1.0);
        assert_eq!(aq_constant(&one, 3.5).unwrap(), 1.0);

        let v = two_step(3);
        assert_eq!(aq_constant(&v, 2.0).unwrap(), 9.0 / 8.0);
        let dual: Vec<f64> = v.values().iter().map(|x| 1.0 / x).collect();
        let (best, at) = interval_sup(v.grid(), &[(v.values().to_vec(), 1.0), (dual, 1.0)]).unwrap();
        assert_eq!(best, 9.0 / 8.0);
        assert_eq!(at, Interval::int(0, 1));

        let root = WeightPreset::Power { exponent: 0.5, center: 0.0 }.sample(sym(3)).unwrap();
        let c = aq_constant(&root, 2.0).unwrap();
        let dual: Vec<f64> = root.values().iter().map(|x| 1.0 / x).collect();
        assert!(c.is_finite());
        assert!(close(c, brute_sup(&[(root.values().to_vec(), 1.0), (dual, 1.0)]), 1e-12));
        let finer = aq_constant(&root.pow(1.0).unwrap(), 2.0).unwrap();
        assert_eq!(finer, c);
        let c5 = aq_constant(&WeightPreset::Power { exponent: 0.5, center: 0.0 }.sample(sym(5)).unwrap(), 2.0).unwrap();
        assert!(c5 < 1.2 * c, "{c} -> {c5}");
    }

    #[test]
    fn aq_scaling_exact() {
        let v = WeightPreset::Power { exponent: -0.3, center: 0.1 }.sample(sym(4)).unwrap();
        let c = aq_constant(&v, 2.0).unwrap();
        assert_eq!(aq_constant(&v.scale(2.0).unwrap(), 2.0).unwrap(), c);
        assert_eq!(aq_constant(&v.scale(0.25).unwrap(), 2.0).unwrap(), c);
        let c3 = aq_constant(&v, 3.0).unwrap();
        assert!(close(aq_constant(&v.scale(7.0).unwrap(), 3.0).unwrap(), c3, 1e-12));
    }

    #[test]
    fn rh_examples() {
        let c = Weight::constant(unit(3), 5.0).unwrap();
        assert_eq!(rh_constant(&c, 2.0).unwrap(), 1.0);
        // sqrt(1 + 3t) / (1 + t) peaks at t = 1/3 with value sqrt(9/8)
        let v = two_step(3);
        assert!(close(rh_constant(&v, 2.0).unwrap(), (9.0f64 / 8.0).sqrt(), 1e-14));
        let p = WeightPreset::Power { exponent: 0.7, center: 0.0 }.sample(sym(3)).unwrap();
        let sq: Vec<f64> = p.values().iter().map(|x| x * x).collect();
        let expect = brute_sup(&[(sq, 0.5), (p.values().to_vec(), -1.0)]);
        assert!(close(rh_constant(&p, 2.0).unwrap(), expect, 1e-12));
    }

    #[test]
    fn invalid_exponents() {
        let v = two_step(2);
        assert!(aq_constant(&v, 1.0).is_err());
        assert!(rh_constant(&v, 1.0).is_err());
        assert!(Weight::new(unit(1), vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0]).is_err());
    }

    fn thirds() -> HolderTuple {
        HolderTuple::new([Exponent::int(3); 3]).unwrap()
    }

    #[test]
    fn multilinear_examples() {
        let g = unit(3);
        let ones = || Weight::constant(g, 1.0).unwrap();
        let vv = WeightVector::new([ones(), ones(), ones()], thirds()).unwrap();
        for p in [[2.0, 2.0, 2.0], [1.5, 2.5, 1.2]] {
            assert_eq!(multilinear_apq_constant(&vv, &ExponentTuple::from_f64(p)).unwrap(), 1.0);
        }
        let constants = WeightVector::complete(
            Weight::constant(g, 3.0).unwrap(),
            Weight::constant(g, 0.5).unwrap(),
            Exponent::int(3),
            Exponent::int(3),
        )
        .unwrap();
        let c = multilinear_apq_constant(&constants, &ExponentTuple::from_f64([2.0, 2.0, 2.0])).unwrap();
        assert!(close(c, 1.0, 1e-12));

        let vv = WeightVector::complete(two_step(3), ones(), Exponent::int(3), Exponent::int(3)).unwrap();
        let p = ExponentTuple::from_f64([2.0, 2.0, 2.0]);
        let factors: Vec<(Vec<f64>, f64)> = (0..3)
            .map(|j| (vv.v[j].values().iter().map(|x| x.powf(-2.0)).collect(), 1.0 / 2.0 - 1.0 / 3.0))
            .collect();
        let got = multilinear_apq_constant(&vv, &p).unwrap();
        assert!(close(got, brute_sup(&factors), 1e-12));
        assert!(got > 1.0);

        let bad = ExponentTuple::from_f64([3.0, 2.0, 2.0]);
        assert!(matches!(multilinear_apq_constant(&vv, &bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn weight_vector_relation_checked() {
        let g = unit(2);
        let w = |c| Weight::constant(g, c).unwrap();
        assert!(WeightVector::new([w(2.0), w(1.0), w(1.0)], thirds()).is_err());
        let vv = WeightVector::complete(w(2.0), w(4.0), Exponent::int(4), Exponent::int(2)).unwrap();
        assert_eq!(vv.q.exponents()[2], Exponent::int(4));
    }

    #[test]
    fn theorem_constant_examples() {
        let p = ExponentTuple::from_f64([2.0, 2.0, 2.0]);
        assert_eq!(theorem_constant(&p, &thirds(), 1.0).unwrap(), 216.0);
        assert_eq!(theorem_constant(&p, &thirds(), 2.5).unwrap(), 540.0);

        // p_j -> q_j from below
        let mut last = 0.0;
        for k in 1..7 {
            let pj = 3.0 - (0.5f64).powi(k);
            let q = HolderTuple::new([Exponent::int(2), Exponent::int(6), Exponent::int(3)]).unwrap();
            let p = ExponentTuple::from_f64([1.5, 1.5, pj]);
            let c = theorem_constant(&p, &q, 1.0).unwrap();
            assert!(c > last);
            last = c;
        }
        assert!(last > 1e3);
        assert!(theorem_constant(&ExponentTuple::from_f64([3.0, 2.0, 2.0]), &thirds(), 1.0).is_err());
    }

    #[test]
    fn theorem_constant_closed_form() {
        // products, Σ 1/p_j - 1 and max p_j/(q_j - p_j) worked out by hand
        let q = HolderTuple::new([Exponent::int(4), Exponent::int(4), Exponent::int(2)]).unwrap();
        let cases = [
            ([1.75, 1.75, 1.75], 2048.0 / 81.0, 15.0),
            ([1.25, 2.0, 1.75], 256.0 / 11.0, 18.3),
            ([3.0, 1.5, 1.5], 128.0 / 5.0, 6.0),
        ];
        for (p, product, exponent) in cases {
            let got = theorem_constant(&ExponentTuple::from_f64(p), &q, 1.0).unwrap();
            assert_eq!(got, product * 2f64.powf(exponent), "{p:?}");
        }
    }

    fn suite_functions(level: u32) -> [SampledFunction; 3] {
        let g = unit(level);
        let emb = |f: SampledFunction| f.embed(g).unwrap();
        [
            emb(FunctionPreset::Bump { center: 0.5, width: 0.45 }.sample_at_level(level)),
            emb(FunctionPreset::Gaussian { center: 0.3, width: 0.2 }.sample_at_level(level)),
            emb(FunctionPreset::Indicator { a: 0.25, b: 0.75 }.sample_at_level(level)),
        ]
    }

    fn lifted_sparse(g: &[SampledFunction; 3], vv: &WeightVector, p: &ExponentTuple) -> SparseCollection {
        weighted_sparse([&g[0], &g[1], &g[2]], vv, p).unwrap()
    }

    #[test]
    fn mainweight_examples() {
        let level = 5;
        let g = unit(level);
        let p = ExponentTuple::from_f64([2.0, 2.0, 2.0]);
        let ones = || Weight::constant(g, 1.0).unwrap();
        let vv = WeightVector::new([ones(), ones(), ones()], thirds()).unwrap();
        let f = suite_functions(level);
        let s = lifted_sparse(&f, &vv, &p);

        let zero = SampledFunction::zeros(g);
        let r = mainweight_check([&zero, &zero, &zero], &vv, &p, &s).unwrap().unwrap();
        assert_eq!(r.ratio, 0.0);

        let r = mainweight_check([&f[0], &f[1], &f[2]], &vv, &p, &s).unwrap().unwrap();
        let psf = psf_intervals(&s.intervals, &p, [&f[0], &f[1], &f[2]]).unwrap();
        let norms: f64 = f.iter().map(|x| x.lp_norm(Exponent::int(3))).product();
        assert!(close(r.ratio, psf / (216.0 * norms), 1e-12));
        assert_eq!(r.apq, 1.0);

        let off = SparseCollection {
            intervals: vec![Interval::new(Rat::new(1, 3), Rat::new(1, 2)).unwrap()],
            major_subsets: vec![],
            eta: 0.5,
        };
        assert!(mainweight_check([&f[0], &f[1], &f[2]], &vv, &p, &off).is_err());
    }

    #[test]
    fn mainweight_bounded_across_weights() {
        let level = 5;
        let g = unit(level);
        let p = ExponentTuple::from_f64([2.0, 2.0, 2.0]);
        let f = suite_functions(level);
        let presets = [
            WeightPreset::Constant { value: 2.0 },
            WeightPreset::TwoStep { left: 3.0, right: 1.0, split: 0.5 },
            WeightPreset::Power { exponent: 0.4, center: 0.3 },
            WeightPreset::Power { exponent: -0.3, center: 0.7 },
        ];
        for v1 in &presets {
            let vv = WeightVector::complete(
                v1.sample(g).unwrap(),
                WeightPreset::Power { exponent: 0.2, center: 0.5 }.sample(g).unwrap(),
                Exponent::int(3),
                Exponent::int(3),
            )
            .unwrap();
            let s = lifted_sparse(&f, &vv, &p);
            let r = mainweight_check([&f[0], &f[1], &f[2]], &vv, &p, &s).unwrap().unwrap();
            assert!(r.ratio > 0.0 && r.ratio < 1.0, "{v1:?}: {r:?}");
        }
    }

    #[test]
    fn aqcor_examples() {
        let g = unit(4);
        let one = Weight::constant(g, 1.0).unwrap();
        let r = aqcor_reduce(&one, &one, Exponent::int(3), Exponent::int(3)).unwrap();
        assert_eq!(r.bound, 1.0);
        assert_eq!(r.apq, 1.0);
        assert!(r.holds);
        assert_eq!(r.epsilon, Rat::new(1, 4));
        assert!(r.p.is_admissible(true));
        assert!(r.params.is_valid());
        assert_eq!(r.p.epsilon(), r.epsilon);

        for (a, b) in [(0.2, -0.1), (0.3, 0.25), (-0.2, 0.1)] {
            let v1 = WeightPreset::Power { exponent: a, center: 0.4 }.sample(g).unwrap();
            let v2 = WeightPreset::Power { exponent: b, center: 0.6 }.sample(g).unwrap();
            let r = aqcor_reduce(&v1, &v2, Exponent::int(3), Exponent::ratio(5, 2)).unwrap();
            assert!(r.holds, "{r:?}");
            assert!(r.p.is_admissible(true));
            let (ps, qs) = (r.p.to_f64(), r.q.to_f64());
            assert!((0..3).all(|j| ps[j] < qs[j]));
            assert!((0..2).all(|j| r.opened[j] <= EPSILON_BUDGET * r.squared[j]));
        }
        assert!(aqcor_reduce(&one, &one, Exponent::int(2), Exponent::int(2)).is_err());
    }

    #[test]
    fn aqcor_search_backs_off_near_threshold() {
        // v^2 = |x|^{1.98} sits just below the A_3 threshold, so the full
        // opening ε = 1/4 breaks the budget and bisection settles lower
        let g = sym(6);
        let v = WeightPreset::Power { exponent: 0.99, center: 0.0 }.sample(g).unwrap();
        let one = Weight::constant(g, 1.0).unwrap();
        let r = aqcor_reduce(&v, &one, Exponent::int(3), Exponent::int(3)).unwrap();
        assert!(r.epsilon > Rat::from_integer(0) && r.epsilon < Rat::new(1, 4));
        assert!(r.opened[0] <= EPSILON_BUDGET * r.squared[0]);
        let above = r.epsilon + Rat::new(1, 1 << EPSILON_STEPS) * Rat::new(1, 4) * 2;
        let past = aq_constant(&v.pow(2.0 / (1.0 - to_f64(above))).unwrap(), 3.0).unwrap();
        assert!(past > EPSILON_BUDGET * r.squared[0]);
        assert!(r.holds);
    }

    #[test]
    fn equivalence_examples() {
        let one = Weight::constant(sym(3), 1.0).unwrap();
        let r = rh_ap_equivalence_check(&one, 3.0).unwrap();
        assert_eq!((r.square_aq, r.half_aq, r.rh2), (1.0, 1.0, 1.0));
        assert!(r.consistent);
    }

    #[test]
    fn power_sweep_finiteness() {
        // v = |x|^a with q = 3: v^2 ∈ A_3 exactly when -1 < 2a < 2
        let q = 3.0;
        for a in [-0.75, -0.25, 0.5, 1.5] {
            let at = |level| {
                let v = WeightPreset::Power { exponent: a, center: 0.0 }.sample(sym(level)).unwrap();
                rh_ap_equivalence_check(&v, q).unwrap()
            };
            let (coarse, fine) = (at(3), at(6));
            assert!(coarse.consistent && fine.consistent);
            let grows = |x: f64, y: f64| y > 1.5 * x;
            let inside = -1.0 < 2.0 * a && 2.0 * a < q - 1.0;
            assert_eq!(grows(coarse.square_aq, fine.square_aq), !inside, "a = {a}");
            assert_eq!(
                grows(coarse.half_aq * coarse.rh2, fine.half_aq * fine.rh2),
                !inside,
                "a = {a}"
            );
        }
    }

    #[test]
    fn degenerate_weights_blow_up_together() {
        let mut last = (0.0, 0.0);
        for k in 1..6 {
            let d = 0.1f64.powi(k);
            let v = Weight::from_fn(sym(6), |x| (x.abs() + d).powf(-1.2)).unwrap();
            let r = rh_ap_equivalence_check(&v, 3.0).unwrap();
            assert!(r.consistent);
            let pair = (r.square_aq, r.half_aq * r.rh2);
            assert!(pair.0 > last.0 && pair.1 > last.1);
            last = pair;
        }
        assert!(last.0 > 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn aq_at_least_one_and_scale_free(
            vals in prop::collection::vec(0.05f64..20.0, 24),
            q in 1.2f64..5.0,
            c in 0.1f64..10.0,
        ) {
            let v = Weight::new(unit(3), vals).unwrap();
            let a = aq_constant(&v, q).unwrap();
            prop_assert!(a >= 1.0 - 1e-12);
            prop_assert!(close(aq_constant(&v.scale(c).unwrap(), q).unwrap(), a, 1e-12));
            prop_assert!(rh_constant(&v, 2.0).unwrap() >= 1.0 - 1e-12);
            prop_assert!(rh_ap_equivalence_check(&v, q).unwrap().consistent);
        }

        #[test]
        fn aq_is_one_only_for_constants(c in 0.1f64..10.0, bump in 1e-3f64..1.0, at in 0usize..24) {
            let mut vals = vec![c; 24];
            prop_assert_eq!(aq_constant(&Weight::new(unit(3), vals.clone()).unwrap(), 2.0).unwrap(), 1.0);
            vals[at] *= 1.0 + bump;
            prop_assert!(aq_constant(&Weight::new(unit(3), vals).unwrap(), 2.0).unwrap() > 1.0);
        }

        #[test]
        fn constant_vectors_have_unit_constant(c1 in 0.1f64..10.0, c2 in 0.1f64..10.0, p in 1.2f64..1.9) {
            let g = unit(2);
            let vv = WeightVector::complete(
                Weight::constant(g, c1).unwrap(),
                Weight::constant(g, c2).unwrap(),
                Exponent::int(3),
                Exponent::int(3),
            )
            .unwrap();
            let c = multilinear_apq_constant(&vv, &ExponentTuple::from_f64([p, p, p])).unwrap();
            prop_assert!(close(c, 1.0, 1e-12));
        }
    }
}
