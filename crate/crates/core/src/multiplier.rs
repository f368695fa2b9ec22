//! Multipliers on the plane `Γ = {ξ1 + ξ2 + ξ3 = 0}` and the trilinear forms
//! they define. Points of `Γ` are written `(ξ1, ξ2)` with `ξ3 = -ξ1 - ξ2`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    pow2, to_f64, DyadicInterval, Exponent, ExponentTuple, HolderTuple, Interval, IntervalSet, Rat,
};
use crate::signal::{local_average, vector_maximal, GridSpec, SampledFunction, VectorSignal};

const UNIT_TOL: f64 = 1e-9;

/// Orthonormal frame `(β, γ)` of `Γ`. Multipliers are singular along `β^⊥ ∩ Γ = ℝγ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParametrization {
    pub beta: [f64; 3],
    pub gamma: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(v, v).sqrt();
    (n > UNIT_TOL).then(|| v.map(|x| x / n))
}

impl Default for GammaParametrization {
    fn default() -> Self {
        let a = 1.0 / 2f64.sqrt();
        let b = 1.0 / 6f64.sqrt();
        GammaParametrization {
            beta: [a, -a, 0.0],
            gamma: [b, b, -2.0 * b],
        }
    }
}

impl GammaParametrization {
    pub fn new(beta: [f64; 3], gamma: [f64; 3]) -> Result<Self> {
        let p = GammaParametrization { beta, gamma };
        let ok = dot(beta, [1.0; 3]).abs() < UNIT_TOL
            && dot(gamma, [1.0; 3]).abs() < UNIT_TOL
            && (dot(beta, beta) - 1.0).abs() < UNIT_TOL
            && (dot(gamma, gamma) - 1.0).abs() < UNIT_TOL
            && dot(beta, gamma).abs() < UNIT_TOL;
        if !ok {
            return Err(Error::InvalidArgument(
                "β and γ must be an orthonormal pair in Γ".into(),
            ));
        }
        if p.delta_beta() < UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "degenerate β = {beta:?}: some β_i = β_j"
            )));
        }
        Ok(p)
    }

    /// Normalize `β` and complete it with the unit `γ ∈ Γ` orthogonal to it.
    pub fn from_beta(beta: [f64; 3]) -> Result<Self> {
        let m = (beta[0] + beta[1] + beta[2]) / 3.0;
        let beta = normalize(beta.map(|b| b - m))
            .ok_or_else(|| Error::InvalidArgument("β has no component in Γ".into()))?;
        // β × (1,1,1) lies in Γ and is orthogonal to β
        let gamma = normalize([beta[1] - beta[2], beta[2] - beta[0], beta[0] - beta[1]])
            .ok_or_else(|| Error::InvalidArgument("β is parallel to (1,1,1)".into()))?;
        GammaParametrization::new(beta, gamma)
    }

    /// `Δ_β = min_{i≠j} |β_i - β_j|`.
    pub fn delta_beta(&self) -> f64 {
        let b = self.beta;
        (b[0] - b[1]).abs().min((b[1] - b[2]).abs()).min((b[2] - b[0]).abs())
    }

    pub fn point(&self, s: f64, t: f64) -> [f64; 3] {
        std::array::from_fn(|i| s * self.beta[i] + t * self.gamma[i])
    }

    pub fn coords(&self, xi: [f64; 3]) -> (f64, f64) {
        (dot(xi, self.beta), dot(xi, self.gamma))
    }

    /// Distance from `ξ ∈ Γ` to the singular line.
    pub fn dist_to_singular(&self, xi: [f64; 3]) -> f64 {
        dot(xi, self.beta).abs()
    }
}

/// `ξ3 = -ξ1 - ξ2`.
pub fn on_gamma(xi1: f64, xi2: f64) -> [f64; 3] {
    [xi1, xi2, -xi1 - xi2]
}

const STEP_INNER: f64 = 1.0 / 16.0;
const STEP_OUTER: f64 = 1.0 / 8.0;

fn smooth_transition(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Even smooth cutoff: `1` on `[-1/16, 1/16]`, `0` off `(-1/8, 1/8)`.
pub fn phi_hat(u: f64) -> f64 {
    smooth_transition((STEP_OUTER - u.abs()) / (STEP_OUTER - STEP_INNER))
}

/// Frequency dilation of the two narrow factors in the counterexample.
pub const COUNTEREXAMPLE_DILATION: f64 = 256.0;

/// A multiplier sampled on a rectangular `(ξ1, ξ2)` lattice, bilinear inside, zero outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierTable {
    xi1: Vec<f64>,
    xi2: Vec<f64>,
    values: Vec<Complex64>,
}

#[derive(Deserialize)]
struct TableRow {
    xi1: f64,
    xi2: f64,
    re: f64,
    im: f64,
}

fn sorted_axis(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

impl MultiplierTable {
    pub fn new(xi1: Vec<f64>, xi2: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&xi1) || !increasing(&xi2) {
            return Err(Error::InvalidArgument(
                "table axes need at least two increasing nodes".into(),
            ));
        }
        if values.len() != xi1.len() * xi2.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "table values must be finite and fill the lattice".into(),
            ));
        }
        Ok(MultiplierTable { xi1, xi2, values })
    }

    /// Read `xi1,xi2,re,im` rows covering a full lattice.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize::<TableRow>() {
            rows.push(row.map_err(|e| Error::Config(format!("multiplier table: {e}")))?);
        }
        let xi1 = sorted_axis(rows.iter().map(|r| r.xi1).collect());
        let xi2 = sorted_axis(rows.iter().map(|r| r.xi2).collect());
        let mut values = vec![None; xi1.len() * xi2.len()];
        for r in &rows {
            let i = xi1.binary_search_by(|x| x.total_cmp(&r.xi1)).expect("axis node");
            let j = xi2.binary_search_by(|x| x.total_cmp(&r.xi2)).expect("axis node");
            values[i * xi2.len() + j] = Some(Complex64::new(r.re, r.im));
        }
        let values = values
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Config("multiplier table does not fill its lattice".into()))?;
        MultiplierTable::new(xi1, xi2, values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        MultiplierTable::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("xi1,xi2,re,im\n");
        for (i, a) in self.xi1.iter().enumerate() {
            for (j, b) in self.xi2.iter().enumerate() {
                let v = self.values[i * self.xi2.len() + j];
                out.push_str(&format!("{a},{b},{},{}\n", v.re, v.im));
            }
        }
        out
    }

    fn bracket(axis: &[f64], x: f64) -> Option<(usize, f64)> {
        if x < axis[0] || x > axis[axis.len() - 1] {
            return None;
        }
        let k = axis.partition_point(|&a| a <= x).clamp(1, axis.len() - 1) - 1;
        Some((k, (x - axis[k]) / (axis[k + 1] - axis[k])))
    }

    pub fn eval(&self, xi1: f64, xi2: f64) -> Complex64 {
        let (Some((i, u)), Some((j, v))) = (
            Self::bracket(&self.xi1, xi1),
            Self::bracket(&self.xi2, xi2),
        ) else {
            return Complex64::new(0.0, 0.0);
        };
        let n = self.xi2.len();
        let at = |a: usize, b: usize| self.values[a * n + b];
        at(i, j) * ((1.0 - u) * (1.0 - v))
            + at(i + 1, j) * (u * (1.0 - v))
            + at(i, j + 1) * ((1.0 - u) * v)
            + at(i + 1, j + 1) * (u * v)
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.xi1[0], self.xi1[self.xi1.len() - 1]],
            [self.xi2[0], self.xi2[self.xi2.len() - 1]],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MultiplierKind {
    Identity,
    /// `sign(ξ·β)` with `sign(0) = 0`.
    BhtSign,
    /// `Σ_n σ_n φ̂(2^8(ξ1 - η1^n)) φ̂(2^8(ξ2 - η2^n)) φ̂(ξ3 - η3^n)`, `η^n = nγ + β`.
    Counterexample { signs: Vec<i8> },
    Tabulated { table: MultiplierTable },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSpec {
    pub kind: MultiplierKind,
    pub frame: GammaParametrization,
    /// Per-order constants, filled by [`MultiplierSpec::with_decay`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayConstants>,
}

impl MultiplierSpec {
    pub fn new(kind: MultiplierKind, frame: GammaParametrization) -> Result<Self> {
        if let MultiplierKind::Counterexample { signs } = &kind {
            if signs.is_empty() || signs.iter().any(|s| s.abs() != 1) {
                return Err(Error::InvalidArgument(
                    "counterexample signs must be a nonempty ±1 sequence".into(),
                ));
            }
        }
        Ok(MultiplierSpec {
            kind,
            frame,
            decay: None,
        })
    }

    pub fn identity() -> Self {
        MultiplierSpec::new(MultiplierKind::Identity, GammaParametrization::default())
            .expect("identity")
    }

    pub fn bht_sign(frame: GammaParametrization) -> Self {
        MultiplierSpec::new(MultiplierKind::BhtSign, frame).expect("sign multiplier")
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MultiplierKind::Identity => "identity",
            MultiplierKind::BhtSign => "bht_sign",
            MultiplierKind::Counterexample { .. } => "counterexample",
            MultiplierKind::Tabulated { .. } => "tabulated",
        }
    }

    /// `η^n = nγ + β`.
    pub fn node(&self, n: usize) -> [f64; 3] {
        self.frame.point(1.0, n as f64)
    }

    pub fn eval(&self, xi1: f64, xi2: f64) -> Complex64 {
        let re = |x: f64| Complex64::new(x, 0.0);
        match &self.kind {
            MultiplierKind::Identity => re(1.0),
            MultiplierKind::BhtSign => {
                let s = self.frame.coords(on_gamma(xi1, xi2)).0;
                re(if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                })
            }
            MultiplierKind::Counterexample { signs } => {
                let xi = on_gamma(xi1, xi2);
                // only the bump whose node has the nearest γ-coordinate can be live
                let t = self.frame.coords(xi).1.round();
                let mut total = 0.0;
                for n in [t - 1.0, t, t + 1.0] {
                    if n < 0.0 || n >= signs.len() as f64 {
                        continue;
                    }
                    let eta = self.node(n as usize);
                    let a = phi_hat(COUNTEREXAMPLE_DILATION * (xi[0] - eta[0]));
                    if a == 0.0 {
                        continue;
                    }
                    let b = phi_hat(COUNTEREXAMPLE_DILATION * (xi[1] - eta[1]));
                    total += signs[n as usize] as f64 * a * b * phi_hat(xi[2] - eta[2]);
                }
                re(total)
            }
            MultiplierKind::Tabulated { table } => table.eval(xi1, xi2),
        }
    }

    /// `(ξ1, ξ2)` boxes outside which the multiplier vanishes, `None` if unbounded.
    pub fn support_boxes(&self) -> Option<Vec<([f64; 2], [f64; 2])>> {
        match &self.kind {
            MultiplierKind::Counterexample { signs } => {
                let r = STEP_OUTER / COUNTEREXAMPLE_DILATION;
                Some(
                    (0..signs.len())
                        .map(|n| {
                            let e = self.node(n);
                            ([e[0] - r, e[0] + r], [e[1] - r, e[1] + r])
                        })
                        .collect(),
                )
            }
            MultiplierKind::Tabulated { table } => {
                let (a, b) = table.bounds();
                Some(vec![(a, b)])
            }
            _ => None,
        }
    }
}

fn boxes_disjoint(a: &([f64; 2], [f64; 2]), b: &([f64; 2], [f64; 2])) -> bool {
    a.0[1] <= b.0[0] || b.0[1] <= a.0[0] || a.1[1] <= b.1[0] || b.1[1] <= a.1[0]
}

/// The counterexample multiplier with `M = signs.len()` bumps; the bump supports
/// are checked to be pairwise disjoint.
pub fn counterexample_build(signs: &[i8], frame: GammaParametrization) -> Result<MultiplierSpec> {
    let spec = MultiplierSpec::new(
        MultiplierKind::Counterexample {
            signs: signs.to_vec(),
        },
        frame,
    )?;
    let boxes = spec.support_boxes().expect("compact bumps");
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if !boxes_disjoint(&boxes[i], &boxes[j]) {
                return Err(Error::InvalidArgument(format!(
                    "bumps {i} and {j} overlap for this frame"
                )));
            }
        }
    }
    Ok(spec)
}

/// Uniform random signs.
pub fn random_signs(m: usize, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()
}

/// Sampled `sup dist(ξ, β^⊥)^{|α|} |∂^α m(ξ)|`, derivatives taken along `(β, γ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    /// Largest value over `|α| = k`, index `k`.
    pub per_order: Vec<f64>,
    /// Running maximum of `per_order`.
    pub cumulative: Vec<f64>,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    pub max_order: usize,
    /// Sample points per box side.
    pub points: usize,
    /// Half-width of the sampled box for multipliers without compact support.
    pub radius: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            max_order: 3,
            points: 64,
            radius: 4.0,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Central difference `∂_s^a ∂_t^b m` at `(ξ1, ξ2)`.
fn mixed_difference(m: &MultiplierSpec, at: [f64; 2], a: usize, b: usize, delta: f64) -> Complex64 {
    let es = [m.frame.beta[0], m.frame.beta[1]];
    let et = [m.frame.gamma[0], m.frame.gamma[1]];
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..=a {
        let u = (a as f64 / 2.0 - i as f64) * delta;
        for k in 0..=b {
            let v = (b as f64 / 2.0 - k as f64) * delta;
            let sign = if (i + k) % 2 == 0 { 1.0 } else { -1.0 };
            let w = sign * binomial(a, i) * binomial(b, k);
            acc += m.eval(at[0] + u * es[0] + v * et[0], at[1] + u * es[1] + v * et[1]) * w;
        }
    }
    acc / delta.powi((a + b) as i32)
}

/// Sample the decay constants up to `max_order`. Each box is sampled on a
/// `points × points` midpoint lattice; points within one lattice step of the
/// singular line are skipped.
pub fn decay_constants(m: &MultiplierSpec, opts: &DecayOptions) -> Result<DecayConstants> {
    if opts.points == 0 {
        return Err(Error::InvalidArgument("decay sampling needs points".into()));
    }
    let boxes = match m.support_boxes() {
        Some(b) => b
            .into_iter()
            .map(|(x, y)| {
                let pad = |r: [f64; 2]| {
                    let w = (r[1] - r[0]) * 0.05;
                    [r[0] - w, r[1] + w]
                };
                (pad(x), pad(y))
            })
            .collect(),
        None => vec![([-opts.radius, opts.radius], [-opts.radius, opts.radius])],
    };
    let orders = opts.max_order + 1;
    let mut per_order = vec![0.0f64; orders];
    let mut samples = 0;
    for (bx, by) in boxes {
        let step = ((bx[1] - bx[0]) / opts.points as f64).max((by[1] - by[0]) / opts.points as f64);
        // the stencil stays inside the excluded band
        let delta = step / (2 * orders) as f64;
        for i in 0..opts.points {
            let x = bx[0] + (i as f64 + 0.5) * (bx[1] - bx[0]) / opts.points as f64;
            for j in 0..opts.points {
                let y = by[0] + (j as f64 + 0.5) * (by[1] - by[0]) / opts.points as f64;
                let dist = m.frame.dist_to_singular(on_gamma(x, y));
                if dist < step {
                    continue;
                }
                samples += 1;
                for (k, slot) in per_order.iter_mut().enumerate() {
                    for a in 0..=k {
                        let d = mixed_difference(m, [x, y], a, k - a, delta).norm();
                        *slot = slot.max(dist.powi(k as i32) * d);
                    }
                }
            }
        }
    }
    if samples == 0 {
        return Err(Error::Undefined("every decay sample fell in the excluded band".into()));
    }
    let mut cumulative = per_order.clone();
    for k in 1..orders {
        cumulative[k] = cumulative[k].max(cumulative[k - 1]);
    }
    Ok(DecayConstants {
        per_order,
        cumulative,
        samples,
    })
}

impl MultiplierSpec {
    pub fn with_decay(mut self, opts: &DecayOptions) -> Result<Self> {
        self.decay = Some(decay_constants(&self, opts)?);
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// The FFT period is `pad` times the common grid.
    pub pad: usize,
    /// Nodes per side of each local box for compactly supported multipliers.
    pub box_points: usize,
    /// Spectral energy fraction above 80% of Nyquist that raises the aliasing flag.
    pub alias_threshold: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            pad: 2,
            box_points: 48,
            alias_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMethod {
    /// Full frequency lattice of the padded common grid.
    Fft,
    /// Midpoint rule on each support box with direct transforms.
    LocalBoxes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: Complex64,
    pub method: QuadratureMethod,
    pub nodes: usize,
    pub frequency_step: f64,
    /// Largest high-frequency energy fraction among the inputs.
    pub tail_fraction: f64,
    pub aliasing: bool,
}

/// Smallest grid containing all three inputs. The inputs must share a level.
pub fn common_grid(f: [&SampledFunction; 3]) -> Result<GridSpec> {
    f[0].grid().hull(f[1].grid())?.hull(f[2].grid())
}

/// `f̂(ξ) = h Σ_n f(x_n) e^{-2πi x_n ξ}` at the cell midpoints `x_n`.
pub fn sampled_transform(f: &SampledFunction, xi: f64) -> Complex64 {
    let g = f.grid();
    let h = g.step_f64();
    let x0 = g.local_midpoint(0);
    let w = Complex64::from_polar(1.0, -2.0 * PI * h * xi);
    let mut phase = Complex64::from_polar(1.0, -2.0 * PI * x0 * xi);
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, v) in f.values().iter().enumerate() {
        acc += v * phase;
        phase *= w;
        if n % 256 == 255 {
            // refresh against drift
            let x = g.local_midpoint(n + 1);
            phase = Complex64::from_polar(1.0, -2.0 * PI * x * xi);
        }
    }
    acc * h
}

fn high_frequency_fraction(spectrum: &[Complex64]) -> f64 {
    let n = spectrum.len();
    let cut = 0.8 * n as f64 / 2.0;
    let mut total = 0.0;
    let mut high = 0.0;
    for (k, v) in spectrum.iter().enumerate() {
        let kappa = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
        let e = v.norm_sqr();
        total += e;
        if kappa.abs() > cut {
            high += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// Padded FFT lattice for `Λ_m`: value, high-frequency fraction, frequency step.
fn lattice_sum(
    m: &MultiplierSpec,
    f: [&SampledFunction; 3],
    base: GridSpec,
    pad: usize,
) -> Result<(Complex64, f64, f64)> {
    let grid = GridSpec::new(base.level, base.start, base.len * pad)?;
    let n = grid.len;
    let h = grid.step_f64();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let spectra: Vec<Vec<Complex64>> = f
        .iter()
        .map(|fj| {
            let mut buf = fj.embed(grid).map(|e| e.values().to_vec())?;
            fft.process(&mut buf);
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    let tail = spectra
        .iter()
        .map(|s| high_frequency_fraction(s))
        .fold(0.0, f64::max);
    let centered = |k: usize| if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    let step = 1.0 / (n as f64 * h);
    let (s1, s2, s3) = (&spectra[0], &spectra[1], &spectra[2]);
    let floor = |s: &[Complex64]| s.iter().map(|v| v.norm()).fold(0.0, f64::max) * 1e-17;
    let (z1, z2) = (floor(s1), floor(s2));
    // with the midpoint phases folded out, ξ3 = -ξ1 - ξ2 sits at index -(k1 + k2) mod n
    let rows: Vec<Complex64> = (0..n)
        .into_par_iter()
        .filter(|&k1| s1[k1].norm() > z1)
        .map(|k1| {
            let xi1 = centered(k1) * step;
            let mut row = Complex64::new(0.0, 0.0);
            for (k2, &b) in s2.iter().enumerate() {
                if b.norm() <= z2 {
                    continue;
                }
                let k3 = (2 * n - k1 - k2) % n;
                row += m.eval(xi1, centered(k2) * step) * b * s3[k3];
            }
            row * s1[k1]
        })
        .collect();
    // summed in order so that reports stay bit-reproducible
    let value: Complex64 = rows.iter().sum();
    Ok((value * (h / (n as f64 * n as f64)), tail, step))
}

/// Midpoint rule on each support box, transforms summed directly.
fn box_sum(m: &MultiplierSpec, f: [&SampledFunction; 3], boxes: &[([f64; 2], [f64; 2])], k: usize) -> Complex64 {
    let mut value = Complex64::new(0.0, 0.0);
    for (bx, by) in boxes {
        let d = (bx[1] - bx[0]) / k as f64;
        let ky = ((by[1] - by[0]) / d).ceil() as usize;
        let x1: Vec<f64> = (0..k).map(|a| bx[0] + (a as f64 + 0.5) * d).collect();
        let x2: Vec<f64> = (0..ky).map(|b| by[0] + (b as f64 + 0.5) * d).collect();
        let g1: Vec<Complex64> = x1.iter().map(|&x| sampled_transform(f[0], x)).collect();
        let g2: Vec<Complex64> = x2.iter().map(|&x| sampled_transform(f[1], x)).collect();
        // ξ1 + ξ2 runs over a lattice of spacing d, indexed by a + b
        let g3: Vec<Complex64> = (0..k + ky - 1)
            .map(|s| sampled_transform(f[2], -(x1[0] + x2[0] + s as f64 * d)))
            .collect();
        let mut part = Complex64::new(0.0, 0.0);
        for (a, &u) in x1.iter().enumerate() {
            for (b, &v) in x2.iter().enumerate() {
                part += m.eval(u, v) * g1[a] * g2[b] * g3[a + b];
            }
        }
        value += part * (d * d);
    }
    value
}

/// `Λ_m(f) = ∫_Γ m(ξ) f̂1(ξ1) f̂2(ξ2) f̂3(ξ3) dξ1 dξ2`.
///
/// On the FFT lattice the sum is the exact discrete analogue, so `m ≡ 1`
/// reproduces `h Σ f1 f2 f3` up to rounding. Other lattice multipliers are
/// summed at `pad` and `2 pad` and Richardson-extrapolated, the jump across the
/// singular line making the plain sum second order.
pub fn lambda_m_quadrature(
    m: &MultiplierSpec,
    f: [&SampledFunction; 3],
    opts: &QuadratureOptions,
) -> Result<QuadratureResult> {
    if opts.pad == 0 || opts.box_points == 0 {
        return Err(Error::InvalidArgument("quadrature needs pad, box_points >= 1".into()));
    }
    let base = common_grid(f)?;
    match (&m.kind, m.support_boxes()) {
        (MultiplierKind::Counterexample { .. }, Some(boxes)) => {
            let tail = f
                .iter()
                .map(|fj| {
                    let mut buf = fj.values().to_vec();
                    FftPlanner::<f64>::new().plan_fft_forward(buf.len()).process(&mut buf);
                    high_frequency_fraction(&buf)
                })
                .fold(0.0, f64::max);
            let k = opts.box_points;
            Ok(QuadratureResult {
                value: box_sum(m, f, &boxes, k),
                method: QuadratureMethod::LocalBoxes,
                nodes: boxes.len() * k * k,
                frequency_step: (boxes[0].0[1] - boxes[0].0[0]) / k as f64,
                tail_fraction: tail,
                aliasing: tail > opts.alias_threshold,
            })
        }
        (kind, _) => {
            let (coarse, tail, step) = lattice_sum(m, f, base, opts.pad)?;
            let (value, nodes, step) = if matches!(kind, MultiplierKind::Identity) {
                (coarse, (base.len * opts.pad).pow(2), step)
            } else {
                let (fine, _, fine_step) = lattice_sum(m, f, base, 2 * opts.pad)?;
                ((fine * 4.0 - coarse) / 3.0, (base.len * opts.pad * 2).pow(2), fine_step)
            };
            Ok(QuadratureResult {
                value,
                method: QuadratureMethod::Fft,
                nodes,
                frequency_step: step,
                tail_fraction: tail,
                aliasing: tail > opts.alias_threshold,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFormReport {
    pub terms: Vec<Complex64>,
    /// `Σ_k |Λ_{m_k}(f_{1k}, f_{2k}, f_{3k})|`.
    pub abs_sum: f64,
    pub signed_sum: Complex64,
}

/// The vector-valued form `Σ_k Λ_{m_k}(f_{1k}, f_{2k}, f_{3k})`.
pub fn vector_valued_form(
    ms: &[MultiplierSpec],
    f: [&VectorSignal; 3],
    opts: &QuadratureOptions,
) -> Result<VectorFormReport> {
    let k = ms.len();
    if k == 0 || f.iter().any(|v| v.components().len() != k) {
        return Err(Error::InvalidArgument(format!(
            "need one multiplier per component, got {k} multipliers and {:?} components",
            f.map(|v| v.components().len())
        )));
    }
    let terms = (0..k)
        .map(|i| {
            let c = f.map(|v| &v.components()[i]);
            lambda_m_quadrature(&ms[i], c, opts).map(|r| r.value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VectorFormReport {
        abs_sum: terms.iter().map(|t| t.norm()).sum(),
        signed_sum: terms.iter().sum(),
        terms,
    })
}

/// Density of `H` in a maximal interval of the exceptional family.
pub fn exceptional_density() -> Rat {
    pow2(-5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSets {
    /// Threshold constant after doubling.
    pub c: f64,
    pub doublings: u32,
    pub h: IntervalSet,
    /// Maximal standard dyadic intervals with `|Q ∩ H| >= 2^{-5}|Q|`.
    pub maximal: Vec<DyadicInterval>,
    pub h_tilde: IntervalSet,
    pub f3_prime: IntervalSet,
    /// `|H| / |F3|`, to be at most `2^{-12}`.
    pub h_ratio: f64,
    /// `|H̃| / |F3|`, to be at most `2^{-3}`.
    pub h_tilde_ratio: f64,
}

fn level_set(values: &[f64], grid: &GridSpec, threshold: f64) -> IntervalSet {
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if values[i] > threshold {
            let start = i;
            while i < values.len() && values[i] > threshold {
                i += 1;
            }
            let a = grid.cell_interval(grid.start + start as i64).left();
            let b = grid.cell_interval(grid.start + i as i64 - 1).right();
            pieces.push(Interval::from_endpoints(a, b).expect("nonempty run"));
        } else {
            i += 1;
        }
    }
    pieces
        .iter()
        .fold(IntervalSet::empty(), |acc, p| acc.union(&IntervalSet::from_interval(p)))
}

/// Maximal standard dyadic `Q` with `|Q ∩ set| >= density |Q|`.
pub fn maximal_dense_intervals(set: &IntervalSet, density: Rat) -> Vec<DyadicInterval> {
    if set.is_empty() {
        return Vec::new();
    }
    let shortest = set
        .pieces()
        .iter()
        .map(|(a, b)| *b - *a)
        .min()
        .expect("nonempty");
    let floor_log2 = |r: Rat| {
        let mut k = 0i32;
        while pow2(k) > r {
            k -= 1;
        }
        while pow2(k + 1) <= r {
            k += 1;
        }
        k
    };
    let fine = floor_log2(shortest) - 2;
    // beyond this scale the density is below the threshold
    let coarse = floor_log2(set.measure() / density) + 1;
    let mut chosen: Vec<DyadicInterval> = Vec::new();
    for scale in (fine..=coarse).rev() {
        let len = pow2(scale);
        for &(a, b) in set.pieces() {
            let first = (a / len).floor().to_integer();
            let last = (b / len).ceil().to_integer();
            for offset in first..last {
                let q = DyadicInterval::standard(scale, offset);
                if chosen.iter().any(|c| c.contains(&q)) {
                    continue;
                }
                let i = q.interval();
                if set.overlap_with(&i) >= density * i.length() {
                    chosen.push(q);
                }
            }
        }
    }
    chosen.sort();
    chosen.dedup();
    chosen
}

/// Exceptional sets for the vector-valued argument. `C` doubles until
/// `|H| <= 2^{-12}|F3|` and `|H̃| <= 2^{-3}|F3|`.
pub fn weak_type_sets(
    f1: &VectorSignal,
    f2: &VectorSignal,
    f3_set: &IntervalSet,
    p: &ExponentTuple,
    q: [f64; 2],
    c0: f64,
) -> Result<ExceptionalSets> {
    let f3_measure = to_f64(f3_set.measure());
    if f3_measure == 0.0 {
        return Err(Error::InvalidArgument("F3 must have positive measure".into()));
    }
    if !(c0 > 0.0 && q.iter().all(|&x| x > 1.0)) {
        return Err(Error::InvalidArgument("need C > 0 and q_j > 1".into()));
    }
    let maxima = [
        vector_maximal(f1, p.get(0).to_f64())?,
        vector_maximal(f2, p.get(1).to_f64())?,
    ];
    let grids = [f1.grid(), f2.grid()];
    let mut c = c0;
    for doublings in 0..200 {
        let mut h = IntervalSet::empty();
        for j in 0..2 {
            let threshold = c * f3_measure.powf(-1.0 / q[j]);
            h = h.union(&level_set(&maxima[j], grids[j], threshold));
        }
        let h_ratio = to_f64(h.measure()) / f3_measure;
        if h_ratio <= 2f64.powi(-12) {
            let maximal = maximal_dense_intervals(&h, exceptional_density());
            let h_tilde = maximal.iter().fold(IntervalSet::empty(), |acc, q| {
                let nine = q.interval().dilate(Rat::from_integer(9)).expect("positive factor");
                acc.union(&IntervalSet::from_interval(&nine))
            });
            let h_tilde_ratio = to_f64(h_tilde.measure()) / f3_measure;
            if h_tilde_ratio <= 0.125 {
                return Ok(ExceptionalSets {
                    c,
                    doublings,
                    f3_prime: f3_set.difference(&h_tilde),
                    h,
                    maximal,
                    h_tilde,
                    h_ratio,
                    h_tilde_ratio,
                });
            }
        }
        c *= 2.0;
    }
    Err(Error::Infeasible("exceptional set never became small".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IskReport {
    pub checked: usize,
    /// Intervals that meet `H` heavily, all of which should see no `f3`.
    pub heavy: usize,
    pub violations: Vec<Interval>,
}

/// Every interval with `|I ∩ H| > 2^{-5}|I|` must carry `⟨f3⟩_{I,p3} = 0`.
pub fn isk_check(
    sets: &ExceptionalSets,
    intervals: &[Interval],
    f3: &SampledFunction,
    p3: f64,
) -> Result<IskReport> {
    let mut heavy = 0;
    let mut violations = Vec::new();
    for i in intervals {
        if sets.h.overlap_with(i) > exceptional_density() * i.length() {
            heavy += 1;
            if local_average(f3, i, p3)? > 0.0 {
                violations.push(*i);
            }
        }
    }
    Ok(IskReport {
        checked: intervals.len(),
        heavy,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorRangeReport {
    /// `1/q3 = max{1 - 1/q1 - 1/q2, 0}`.
    pub q3: Exponent,
    /// `Σ_j 1/min{q_j, r_j, 2}`, in range iff below 2.
    pub capped_sum: Rat,
    pub in_range: bool,
    /// Open admissible `p` with `p_j < min{q_j, r_j}`.
    pub witness: Option<ExponentTuple>,
}

/// Range of the vector-valued extension: `L^{q1}(ℓ^{r1}) × L^{q2}(ℓ^{r2})`
/// with the third exponent from Hölder.
pub fn corvv_range(q1: Exponent, q2: Exponent, r: &HolderTuple) -> Result<VectorRangeReport> {
    let one = Rat::from_integer(1);
    for q in [q1, q2] {
        match q {
            Exponent::Finite(x) if x > one => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "need 1 < q_j < ∞, got {q}"
                )))
            }
        }
    }
    let inv3 = (one - q1.reciprocal() - q2.reciprocal()).max(Rat::from_integer(0));
    let q3 = if inv3 == Rat::from_integer(0) {
        Exponent::INFINITY
    } else {
        Exponent::Finite(inv3.recip())
    };
    let two = Exponent::int(2);
    let caps: [Rat; 3] = std::array::from_fn(|j| {
        let q = [q1, q2, q3][j];
        match q.min(r.get(j)).min(two) {
            Exponent::Finite(x) => x,
            Exponent::Infinite(_) => unreachable!("capped at 2"),
        }
    });
    let capped_sum = caps.iter().fold(Rat::from_integer(0), |acc, m| acc + m.recip());
    let in_range = capped_sum < Rat::from_integer(2);
    let mut witness = None;
    if in_range {
        let mut t = Rat::new(1, 2);
        for _ in 0..40 {
            let p = ExponentTuple(caps.map(|m| Exponent::Finite(one + (m - one) * (one - t))));
            if p.is_admissible(true) {
                witness = Some(p);
                break;
            }
            t /= Rat::from_integer(2);
        }
    }
    Ok(VectorRangeReport {
        q3,
        capped_sum,
        in_range,
        witness,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessOptions {
    pub ms: Vec<usize>,
    pub q1: f64,
    pub q2: f64,
    /// Random trials per `M` on top of the Dirichlet trial.
    pub trials: usize,
    pub seed: u64,
    pub decay: DecayOptions,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        SharpnessOptions {
            ms: vec![1, 2, 4, 8, 16],
            q1: 1.2,
            q2: 1.2,
            trials: 8,
            seed: 0,
            decay: DecayOptions {
                max_order: 2,
                points: 32,
                radius: 4.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessPoint {
    pub m: usize,
    /// Best ratio over all trials up to this `M`.
    pub lower_bound: f64,
    /// Best ratio among the trials drawn at this `M`.
    pub fresh_best: f64,
    pub decay: DecayConstants,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub q: [f64; 2],
    pub points: Vec<SharpnessPoint>,
    /// Least-squares slope of `log lower_bound` against `log M`.
    pub fitted_exponent: f64,
    /// The same slope for `fresh_best`.
    pub fresh_exponent: f64,
    /// `1/q1 + 1/q2 - 3/2`.
    pub predicted_exponent: f64,
    pub monotone: bool,
    /// `max/min - 1` of each decay order across `M`.
    pub decay_spread: Vec<f64>,
}

/// `(∫_0^1 |Σ_n c_n e^{2πinθ}|^q dθ)^{1/q}` by the trapezoid rule.
fn torus_norm(coeffs: &[Complex64], q: f64, planner: &mut FftPlanner<f64>) -> f64 {
    let k = (256 * coeffs.len()).max(1024);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    buf[..coeffs.len()].copy_from_slice(coeffs);
    planner.plan_fft_inverse(k).process(&mut buf);
    let mean = buf.iter().map(|v| v.norm().powf(q)).sum::<f64>() / k as f64;
    mean.powf(1.0 / q)
}

/// `‖T(f1, f2)‖_r / (‖f1‖_{q1} ‖f2‖_{q2})` for `f_j = ψ Σ_n c_{jn} e^{2πiη_j^n x}` with a
/// Gaussian `ψ` of width `3·2^12`. The packet spectra sit where the bumps are flat,
/// so `T(f1, f2) = ψ^2 Σ_n σ_n c_{1n} c_{2n} e^{2πi(η_1^n + η_2^n)x}` up to Gaussian
/// tails below `1e-12`; the norms separate into `ψ` integrals times torus norms.
pub fn trial_ratio(
    signs: &[i8],
    a: &[Complex64],
    b: &[Complex64],
    q: [f64; 2],
    planner: &mut FftPlanner<f64>,
) -> f64 {
    let r = 1.0 / (1.0 / q[0] + 1.0 / q[1]);
    let prod: Vec<Complex64> = (0..signs.len())
        .map(|n| a[n] * b[n] * signs[n] as f64)
        .collect();
    // ‖e^{-πk x²/W²}‖_p^p = W / √(kp)
    let gauss = |k: f64, p: f64| (k * p).powf(1.0 / (2.0 * p));
    let num = torus_norm(&prod, r, planner) / gauss(2.0, r);
    let den = torus_norm(a, q[0], planner) / gauss(1.0, q[0]) * torus_norm(b, q[1], planner) / gauss(1.0, q[1]);
    num / den
}

/// Triangular coefficients `min(n + 1, M - n)`, a Fejér-type packet.
fn tent(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|n| Complex64::new((n + 1).min(m - n) as f64, 0.0))
        .collect()
}

/// Lower bounds for `sup_σ ‖T_{m_{σ,M}}‖` over growing `M`, with the decay
/// constants of each multiplier. Each `M` tries Dirichlet and tent packets
/// against random sign sequences. Trials from smaller `M` embed into larger `M`
/// by zero coefficients, so the reported bounds are nondecreasing by
/// construction; `monotone` records whether the fresh trials alone increase.
pub fn sharpness_experiment(frame: GammaParametrization, opts: &SharpnessOptions) -> Result<SharpnessReport> {
    let q = [opts.q1, opts.q2];
    if !(q.iter().all(|&x| x > 1.0 && x.is_finite())) || opts.ms.is_empty() {
        return Err(Error::InvalidArgument("need finite q_j > 1 and some M".into()));
    }
    if frame.gamma[0].abs() < UNIT_TOL || frame.gamma[1].abs() < UNIT_TOL || frame.gamma[2].abs() < UNIT_TOL {
        return Err(Error::InvalidArgument(
            "trial packets need every γ_j nonzero".into(),
        ));
    }
    let mut ms = opts.ms.clone();
    ms.sort_unstable();
    ms.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut planner = FftPlanner::new();
    let largest = *ms.last().expect("nonempty");
    // one sign sequence, truncated, so that trials embed
    let signs = random_signs(largest, opts.seed ^ 0x5eed);
    let mut points = Vec::new();
    let mut best = 0.0f64;
    let mut monotone = true;
    for &m in &ms {
        let s = &signs[..m];
        let packets = [vec![Complex64::new(1.0, 0.0); m], tent(m)];
        let mut fresh = 0.0f64;
        for t in 0..=opts.trials {
            let drawn;
            let sigma = if t == 0 {
                s
            } else {
                drawn = random_signs(m, rng.gen());
                &drawn[..]
            };
            for c in &packets {
                fresh = fresh.max(trial_ratio(sigma, c, c, q, &mut planner));
            }
        }
        if !fresh.is_finite() {
            return Err(Error::Undefined(format!("trial ratio at M = {m} is {fresh}")));
        }
        if let Some(prev) = points.last().map(|p: &SharpnessPoint| p.fresh_best) {
            monotone &= fresh >= prev;
        }
        best = best.max(fresh);
        let decay = decay_constants(&counterexample_build(s, frame)?, &opts.decay)?;
        points.push(SharpnessPoint {
            m,
            lower_bound: best,
            fresh_best: fresh,
            decay,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.m as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.lower_bound.ln()).collect();
    let fitted_exponent = least_squares_slope(&xs, &ys);
    let fresh: Vec<f64> = points.iter().map(|p| p.fresh_best.ln()).collect();
    let fresh_exponent = least_squares_slope(&xs, &fresh);
    let orders = opts.decay.max_order + 1;
    let decay_spread = (0..orders)
        .map(|k| {
            let vals = points.iter().map(|p| p.decay.per_order[k]);
            let hi = vals.clone().fold(f64::MIN, f64::max);
            let lo = vals.fold(f64::MAX, f64::min);
            if hi == 0.0 {
                0.0
            } else {
                hi / lo - 1.0
            }
        })
        .collect();
    Ok(SharpnessReport {
        q,
        points,
        fitted_exponent,
        fresh_exponent,
        predicted_exponent: 1.0 / q[0] + 1.0 / q[1] - 1.5,
        monotone,
        decay_spread,
    })
}

/// Slope of the least-squares line through `(x, y)`; zero for fewer than two points.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_examples() {
        let d = GammaParametrization::default();
        assert!((d.delta_beta() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(GammaParametrization::from_beta([1.0, -0.5, -0.5]).is_err());
        let f = GammaParametrization::from_beta([2.0, -1.0, 0.0]).unwrap();
        assert!(f.delta_beta() > 0.0);
        let (s, t) = f.coords(f.point(0.3, -1.7));
        assert!((s - 0.3).abs() < 1e-12 && (t + 1.7).abs() < 1e-12);
    }

    #[test]
    fn phi_hat_sandwich() {
        for k in 0..=100 {
            let u = k as f64 / 100.0 * 0.0625;
            assert_eq!(phi_hat(u), 1.0);
            assert_eq!(phi_hat(-u), 1.0);
            assert_eq!(phi_hat(0.125 + u), 0.0);
        }
        let mid = phi_hat(0.09375);
        assert!((mid - 0.5).abs() < 1e-12);
        assert!(phi_hat(0.07) > phi_hat(0.1));
    }
}

#[cfg(test)]
mod quadrature_tests {
    use super::*;
    use crate::signal::FunctionPreset;

    fn smooth(seed: u64, level: u32) -> SampledFunction {
        FunctionPreset::RandomTrig {
            seed,
            degree: 4,
            center: 0.5,
            width: 0.4,
        }
        .sample_at_level(level)
    }

    fn triple(seed: u64, level: u32) -> [SampledFunction; 3] {
        [smooth(seed, level), smooth(seed + 101, level), smooth(seed + 202, level)]
    }

    fn direct_trilinear(f: [&SampledFunction; 3]) -> Complex64 {
        let h = f[0].grid().step_f64();
        let g = f[0].grid();
        (0..g.len)
            .map(|i| {
                let gl = g.start + i as i64;
                f[0].at_cell(gl) * f[1].at_cell(gl) * f[2].at_cell(gl)
            })
            .sum::<Complex64>()
            * h
    }

    /// Riemann sum over `[-ν, ν)^2` at spacing `d`, transforms summed directly.
    fn dense_oracle(m: &MultiplierSpec, f: [&SampledFunction; 3], d: f64) -> Complex64 {
        let nyq = 0.5 / f[0].grid().step_f64();
        let k = (2.0 * nyq / d).round() as i64;
        let xi = |i: i64| -nyq + i as f64 * d;
        let t1: Vec<Complex64> = (0..k).map(|i| sampled_transform(f[0], xi(i))).collect();
        let t2: Vec<Complex64> = (0..k).map(|i| sampled_transform(f[1], xi(i))).collect();
        // ξ1 + ξ2 = -2ν + (i + j) d
        let t3: Vec<Complex64> = (0..2 * k)
            .map(|s| sampled_transform(f[2], 2.0 * nyq - s as f64 * d))
            .collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                acc += m.eval(xi(i), xi(j)) * t1[i as usize] * t2[j as usize] * t3[(i + j) as usize];
            }
        }
        acc * d * d
    }

    #[test]
    fn identity_reproduces_pointwise_product() {
        let opts = QuadratureOptions::default();
        for seed in 0..5 {
            let f = triple(seed, 8);
            let r = lambda_m_quadrature(&MultiplierSpec::identity(), [&f[0], &f[1], &f[2]], &opts).unwrap();
            let exact = direct_trilinear([&f[0], &f[1], &f[2]]);
            assert!((r.value - exact).norm() <= 1e-10 * exact.norm(), "{} vs {}", r.value, exact);
            assert_eq!(r.method, QuadratureMethod::Fft);
            assert!(!r.aliasing);
        }
    }

    #[test]
    fn sign_matches_dense_oracle() {
        let m = MultiplierSpec::bht_sign(GammaParametrization::default());
        for seed in 0..3 {
            let f = triple(seed, 4);
            let f = [&f[0], &f[1], &f[2]];
            let fast = lambda_m_quadrature(&m, f, &QuadratureOptions::default()).unwrap().value;
            let slow = dense_oracle(&m, f, 0.125);
            assert!((fast - slow).norm() <= 1e-3 * slow.norm(), "{fast} vs {slow}");
        }
    }

    #[test]
    fn conjugation_symmetry() {
        let f = triple(7, 5);
        let g = [f[0].conj(), f[1].conj(), f[2].conj()];
        let opts = QuadratureOptions::default();
        let id = MultiplierSpec::identity();
        let a = lambda_m_quadrature(&id, [&f[0], &f[1], &f[2]], &opts).unwrap().value;
        let b = lambda_m_quadrature(&id, [&g[0], &g[1], &g[2]], &opts).unwrap().value;
        assert!((a.conj() - b).norm() <= 1e-12 * a.norm());
        // sign(-ξ·β) = -sign(ξ·β)
        let sgn = MultiplierSpec::bht_sign(GammaParametrization::default());
        let a = lambda_m_quadrature(&sgn, [&f[0], &f[1], &f[2]], &opts).unwrap().value;
        let b = lambda_m_quadrature(&sgn, [&g[0], &g[1], &g[2]], &opts).unwrap().value;
        assert!((a.conj() + b).norm() <= 1e-10 * a.norm(), "{a} {b}");
    }

    #[test]
    fn translation_and_modulation_invariance() {
        let f = triple(3, 5);
        let frame = GammaParametrization::default();
        let sgn = MultiplierSpec::bht_sign(frame);
        let opts = QuadratureOptions::default();
        let base = lambda_m_quadrature(&sgn, [&f[0], &f[1], &f[2]], &opts).unwrap().value;
        let t = f.clone().map(|g| g.translate(17));
        let moved = lambda_m_quadrature(&sgn, [&t[0], &t[1], &t[2]], &opts).unwrap().value;
        assert!((moved - base).norm() <= 1e-10 * base.norm());
        // θγ on the coarse frequency lattice keeps the shift exact at both paddings
        let period = common_grid([&f[0], &f[1], &f[2]]).unwrap().len as f64 * f[0].grid().step_f64() * 2.0;
        let theta = 3.0 * 6f64.sqrt() / period;
        let mo: Vec<SampledFunction> = (0..3).map(|j| f[j].modulate(theta * frame.gamma[j])).collect();
        let modulated = lambda_m_quadrature(&sgn, [&mo[0], &mo[1], &mo[2]], &opts).unwrap().value;
        assert!((modulated - base).norm() <= 1e-6 * base.norm(), "{modulated} vs {base}");
        // a generic β-modulation is not a symmetry
        let mb: Vec<SampledFunction> = (0..3).map(|j| f[j].modulate(2.0 * theta * frame.beta[j])).collect();
        let off = lambda_m_quadrature(&sgn, [&mb[0], &mb[1], &mb[2]], &opts).unwrap().value;
        assert!((off - base).norm() > 1e-3 * base.norm());
    }

    #[test]
    fn counterexample_boxes_match_finer_rule() {
        let m = counterexample_build(&[1, -1, 1], GammaParametrization::default()).unwrap();
        let f = [
            smooth(11, 6).modulate(0.7),
            smooth(12, 6).modulate(-0.7),
            smooth(13, 6),
        ];
        let f = [&f[0], &f[1], &f[2]];
        let r = lambda_m_quadrature(&m, f, &QuadratureOptions::default()).unwrap();
        assert_eq!(r.method, QuadratureMethod::LocalBoxes);
        // closed trapezoid on a 3x finer lattice, every transform direct
        let mut oracle = Complex64::new(0.0, 0.0);
        for (bx, by) in m.support_boxes().unwrap() {
            let k = 144;
            let d = (bx[1] - bx[0]) / k as f64;
            for a in 0..=k {
                for b in 0..=k {
                    let (u, v) = (bx[0] + a as f64 * d, by[0] + b as f64 * d);
                    let w = if a == 0 || a == k { 0.5 } else { 1.0 } * if b == 0 || b == k { 0.5 } else { 1.0 };
                    oracle += m.eval(u, v)
                        * sampled_transform(f[0], u)
                        * sampled_transform(f[1], v)
                        * sampled_transform(f[2], -u - v)
                        * (w * d * d);
                }
            }
        }
        assert!(oracle.norm() > 0.0);
        assert!((r.value - oracle).norm() <= 1e-6 * oracle.norm(), "{} vs {oracle}", r.value);
    }

    #[test]
    fn aliasing_flag() {
        let grid = GridSpec::new(3, 0, 24).unwrap();
        let rough = SampledFunction::from_real_fn(grid, |x| if (x * 24.0) as i64 % 2 == 0 { 1.0 } else { -1.0 });
        let r = lambda_m_quadrature(&MultiplierSpec::identity(), [&rough, &rough, &rough], &QuadratureOptions::default()).unwrap();
        assert!(r.aliasing);
    }
}

#[cfg(test)]
mod structure_tests {
    use super::*;
    use crate::signal::FunctionPreset;
    use proptest::prelude::*;

    #[test]
    fn decay_examples() {
        let opts = DecayOptions::default();
        let id = decay_constants(&MultiplierSpec::identity(), &opts).unwrap();
        assert_eq!(id.per_order, vec![1.0, 0.0, 0.0, 0.0]);
        let sgn = decay_constants(&MultiplierSpec::bht_sign(GammaParametrization::default()), &opts).unwrap();
        assert_eq!(sgn.cumulative, vec![1.0; 4]);
        assert_eq!(&sgn.per_order[1..], &[0.0; 3]);
    }

    #[test]
    fn counterexample_decay_against_profile() {
        let frame = GammaParametrization::default();
        let m = counterexample_build(&[1], frame).unwrap();
        let d = decay_constants(&m, &DecayOptions { max_order: 1, points: 96, radius: 4.0 }).unwrap();
        // order one: the steepest slope of φ̂(256 ξ1) φ̂(256 ξ2) along a unit direction,
        // at distance close to 1 from the singular line
        let slope = (0..20000)
            .map(|i| {
                let u = 0.0625 + i as f64 / 20000.0 * 0.0625;
                (phi_hat(u + 1e-7) - phi_hat(u - 1e-7)).abs() / 2e-7
            })
            .fold(0.0, f64::max);
        let bound = 256.0 * slope * 2f64.sqrt();
        assert!(d.per_order[1] <= bound * 1.01, "{} vs {bound}", d.per_order[1]);
        assert!(d.per_order[1] >= 256.0 * slope * 0.5);
        assert!((d.per_order[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn counterexample_acts_diagonally() {
        let frame = GammaParametrization::default();
        let signs = random_signs(6, 3);
        let m = counterexample_build(&signs, frame).unwrap();
        let r = 2f64.powi(-12);
        for n in 0..6 {
            for k in 0..6 {
                let (a, b) = (m.node(n), m.node(k));
                for (u, v) in [(0.0, 0.0), (r, -r), (-r, r), (r, r)] {
                    let val = m.eval(a[0] + u, b[1] + v).re;
                    let want = if n == k { signs[n] as f64 } else { 0.0 };
                    assert_eq!(val, want);
                }
            }
        }
        assert!(MultiplierSpec::new(MultiplierKind::Counterexample { signs: vec![1, 0] }, frame).is_err());
    }

    #[test]
    fn table_round_trip() {
        let xi: Vec<f64> = (0..5).map(|i| i as f64 * 0.5 - 1.0).collect();
        let values: Vec<Complex64> = (0..25).map(|i| Complex64::new(i as f64, -(i as f64) / 2.0)).collect();
        let t = MultiplierTable::new(xi.clone(), xi, values).unwrap();
        let back = MultiplierTable::from_csv_reader(t.to_csv().as_bytes()).unwrap();
        assert_eq!(back, t);
        // bilinear in each cell
        let mid = t.eval(-0.75, -0.75);
        assert_eq!(mid, Complex64::new(3.0, -1.5));
        assert_eq!(t.eval(5.0, 0.0), Complex64::new(0.0, 0.0));
        assert!(MultiplierTable::from_csv_reader("xi1,xi2,re,im\n0,0,1,0\n1,1,1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn vector_form_sums_terms() {
        let grid = GridSpec::new(5, 0, 96).unwrap();
        let comp = |seed| FunctionPreset::RandomTrig { seed, degree: 3, center: 0.5, width: 0.4 }.sample(grid);
        let r = HolderTuple::new([Exponent::int(3); 3]).unwrap();
        let fs: Vec<VectorSignal> = (0..3)
            .map(|j| VectorSignal::new((0..2).map(|k| comp(10 * j + k)).collect(), r.get(j as usize)).unwrap())
            .collect();
        let ms = vec![MultiplierSpec::identity(), MultiplierSpec::bht_sign(GammaParametrization::default())];
        let opts = QuadratureOptions::default();
        let rep = vector_valued_form(&ms, [&fs[0], &fs[1], &fs[2]], &opts).unwrap();
        for k in 0..2 {
            let c = [&fs[0].components()[k], &fs[1].components()[k], &fs[2].components()[k]];
            assert_eq!(rep.terms[k], lambda_m_quadrature(&ms[k], c, &opts).unwrap().value);
        }
        assert!(rep.abs_sum >= rep.signed_sum.norm());
        assert!(vector_valued_form(&ms[..1], [&fs[0], &fs[1], &fs[2]], &opts).is_err());
    }

    fn holder(r: [i64; 3]) -> HolderTuple {
        HolderTuple::new(r.map(Exponent::int)).unwrap()
    }

    #[test]
    fn vector_range_examples() {
        let r = holder([3, 3, 3]);
        let a = corvv_range(Exponent::int(3), Exponent::int(3), &r).unwrap();
        assert_eq!(a.q3, Exponent::int(3));
        assert_eq!(a.capped_sum, Rat::new(3, 2));
        let w = a.witness.unwrap();
        assert!(w.is_admissible(true));
        // both q_j near 1: 1/q3 clamps to 0 and the capped sum reaches 2
        let b = corvv_range(Exponent::ratio(11, 10), Exponent::ratio(11, 10), &r).unwrap();
        assert_eq!(b.q3, Exponent::INFINITY);
        assert!(!b.in_range && b.witness.is_none());
        assert!(corvv_range(Exponent::int(1), Exponent::int(3), &r).is_err());
    }

    #[test]
    fn sharpness_report_shape() {
        let r = sharpness_experiment(GammaParametrization::default(), &SharpnessOptions::default()).unwrap();
        assert_eq!(r.points.iter().map(|p| p.m).collect::<Vec<_>>(), vec![1, 2, 4, 8, 16]);
        assert!(r.points.windows(2).all(|w| w[1].lower_bound >= w[0].lower_bound));
        assert!(r.decay_spread.iter().all(|&s| s <= 0.05));
        assert!((r.predicted_exponent - (2.0 / 1.2 - 1.5)).abs() < 1e-12);
        // a single packet: ‖ψ²‖_1 = ‖ψ‖_2^2
        let mut pl = FftPlanner::new();
        let one = [Complex64::new(1.0, 0.0)];
        let v = trial_ratio(&[1], &one, &one, [2.0, 2.0], &mut pl);
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn trial_ratio_matches_direct_sampling() {
        let frame = GammaParametrization::default();
        let m = counterexample_build(&[1, -1, 1], frame).unwrap();
        let a = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0), Complex64::new(-0.5, 0.5)];
        let b = [Complex64::new(1.0, 1.0), Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.0)];
        let signs = [1i8, -1, 1];
        let q = [1.5, 2.5];
        let r = 1.0 / (1.0 / q[0] + 1.0 / q[1]);
        let w: f64 = 3.0 * 4096.0;
        let dx = 0.02;
        let (mut n1, mut n2, mut nt) = (0.0, 0.0, 0.0);
        let mut x = -5.0 * w;
        while x < 5.0 * w {
            let psi = (-PI * (x / w).powi(2)).exp();
            let wave = |j: usize, n: usize| Complex64::from_polar(1.0, 2.0 * PI * m.node(n)[j] * x);
            let f1: Complex64 = (0..3).map(|n| a[n] * wave(0, n)).sum::<Complex64>() * psi;
            let f2: Complex64 = (0..3).map(|n| b[n] * wave(1, n)).sum::<Complex64>() * psi;
            let t: Complex64 = (0..3).map(|n| a[n] * b[n] * signs[n] as f64 * wave(0, n) * wave(1, n)).sum::<Complex64>() * psi * psi;
            n1 += f1.norm().powf(q[0]) * dx;
            n2 += f2.norm().powf(q[1]) * dx;
            nt += t.norm().powf(r) * dx;
            x += dx;
        }
        let direct = nt.powf(1.0 / r) / (n1.powf(1.0 / q[0]) * n2.powf(1.0 / q[1]));
        let fast = trial_ratio(&signs, &a, &b, q, &mut FftPlanner::new());
        assert!((fast - direct).abs() < 1e-6 * direct, "{fast} vs {direct}");
    }

    #[test]
    fn tent_packets_grow_with_predicted_slope() {
        // far beyond the default range the slope approaches 1/q1 + 1/q2 - 3/2
        let mut pl = FftPlanner::new();
        let q = [1.2, 1.2];
        let at = |m: usize, pl: &mut FftPlanner<f64>| {
            (0..8).map(|s| trial_ratio(&random_signs(m, s), &tent(m), &tent(m), q, pl)).fold(0.0, f64::max)
        };
        let slope = (at(1024, &mut pl) / at(64, &mut pl)).ln() / 16f64.ln();
        assert!(slope > 0.1 && slope < 0.25, "{slope}");
    }

    proptest! {
        #[test]
        fn phi_hat_even_and_bounded(u in -1.0f64..1.0) {
            let v = phi_hat(u);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, phi_hat(-u));
        }

        #[test]
        fn witness_is_valid(a in 2i64..40, b in 2i64..40, r1 in 3i64..12) {
            let q1 = Exponent::ratio(a + 10, 10);
            let q2 = Exponent::ratio(b + 10, 10);
            // r = (r1, r1, r1 / (r1 - 2)) needs r1 > 2
            let r3 = Exponent::ratio(r1, r1 - 2);
            let r = HolderTuple::new([Exponent::int(r1), Exponent::int(r1), r3]).unwrap();
            let rep = corvv_range(q1, q2, &r).unwrap();
            if let Some(p) = rep.witness {
                prop_assert!(rep.in_range);
                prop_assert!(p.is_admissible(true));
                for j in 0..3 {
                    let cap = [q1, q2, rep.q3][j].min(r.get(j));
                    prop_assert!(p.get(j) < cap);
                }
            } else {
                prop_assert!(!rep.in_range);
            }
        }
    }
}
