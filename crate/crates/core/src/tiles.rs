//! Tiles, tritiles and rank-1 collections; wave packets on a periodic
//! analysis grid; tritile maps and forms; trees; tail and localization
//! diagnostics; the discrete domination check.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use num_traits::{One, Zero};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pow2, rat, to_f64, DyadicInterval, Exponent, ExponentTuple, Interval, Rat};
use crate::signal::{weighted_local_norm, GridSpec, MaximalMode, MaximalProfile, SampledFunction};
use crate::sparse::{dominating_collection, psf_intervals, DominatingCollection};

/// A time-frequency rectangle with `|I_T| |ω_T| = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub time: DyadicInterval,
    pub freq: Interval,
}

impl Tile {
    pub fn new(time: DyadicInterval, freq: Interval) -> Result<Self> {
        let product = time.length() * freq.length();
        if product < rat(1, 2) || product > Rat::from_integer(2) {
            return Err(Error::InvalidArgument(format!(
                "tile area {product} outside [1/2, 2]"
            )));
        }
        Ok(Tile { time, freq })
    }
}

/// Three tiles sharing the time interval `I_P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tritile {
    pub time: DyadicInterval,
    pub freq: [Interval; 3],
}

impl Tritile {
    pub fn new(time: DyadicInterval, freq: [Interval; 3]) -> Result<Self> {
        for w in &freq {
            Tile::new(time, *w)?;
        }
        Ok(Tritile { time, freq })
    }

    pub fn tile(&self, j: usize) -> Tile {
        Tile {
            time: self.time,
            freq: self.freq[j],
        }
    }

    pub fn interval(&self) -> Interval {
        self.time.interval()
    }

    /// `ω_P`: the convex hull of `3ω_{P_1}, 3ω_{P_2}, 3ω_{P_3}`.
    pub fn hull(&self) -> Interval {
        let t = self.freq.map(|w| w.triple());
        t[0].hull(&t[1]).hull(&t[2])
    }

    pub fn modulate(&self, theta: [Rat; 3]) -> Self {
        let mut freq = self.freq;
        for (w, t) in freq.iter_mut().zip(theta) {
            *w = w.translate(t);
        }
        Tritile { time: self.time, freq }
    }

    /// Translate in time by an integer multiple of `|I_P|`.
    pub fn translate(&self, shift: Rat) -> Result<Self> {
        let steps = shift / self.time.length();
        if !steps.is_integer() {
            return Err(Error::InvalidArgument(format!(
                "translation {shift} is not a multiple of |I_P| = {}",
                self.time.length()
            )));
        }
        let time = DyadicInterval::new(self.time.scale, self.time.offset + steps.to_integer(), self.time.shift)?;
        Ok(Tritile { time, freq: self.freq })
    }
}

impl fmt::Display for Tritile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} x ({}, {}, {})",
            self.interval(),
            self.freq[0],
            self.freq[1],
            self.freq[2]
        )
    }
}

/// Which of the rank-1 properties failed, and on which tritiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub property: char,
    pub first: usize,
    pub second: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rank1Report {
    pub valid: bool,
    pub pairs_checked: usize,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rank1Collection {
    pub tritiles: Vec<Tritile>,
    /// Scale separation `g`; time scales differ by integer powers of `g`.
    pub g: u32,
}

fn nested_or_disjoint(a: &Interval, b: &Interval) -> bool {
    a.contains_interval(b) || b.contains_interval(a) || !a.intersects(b)
}

/// Whether `ratio = g^e` for some integer `e`.
fn is_power_of(ratio: Rat, g: u32) -> bool {
    let g = Rat::from_integer(g as i64);
    let mut r = if ratio >= Rat::one() { ratio } else { ratio.recip() };
    while r > Rat::one() {
        r /= g;
    }
    r == Rat::one()
}

fn strictly_inside(a: &Interval, b: &Interval) -> bool {
    a != b && b.contains_interval(a)
}

impl Rank1Collection {
    pub fn new(tritiles: Vec<Tritile>, g: u32) -> Result<Self> {
        if g < 2 {
            return Err(Error::InvalidArgument(format!("scale separation must exceed 1, got {g}")));
        }
        Ok(Rank1Collection { tritiles, g })
    }

    pub fn len(&self) -> usize {
        self.tritiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tritiles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tritile> {
        self.tritiles.iter()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Rank1Collection {
            tritiles: indices.iter().map(|&i| self.tritiles[i]).collect(),
            g: self.g,
        }
    }

    /// Convex hull of the time intervals.
    pub fn time_hull(&self) -> Option<Interval> {
        self.tritiles
            .iter()
            .map(|p| p.interval())
            .reduce(|a, b| a.hull(&b))
    }

    pub fn modulate(&self, theta: [Rat; 3]) -> Self {
        Rank1Collection {
            tritiles: self.tritiles.iter().map(|p| p.modulate(theta)).collect(),
            g: self.g,
        }
    }

    pub fn translate(&self, shift: Rat) -> Result<Self> {
        Ok(Rank1Collection {
            tritiles: self.tritiles.iter().map(|p| p.translate(shift)).collect::<Result<_>>()?,
            g: self.g,
        })
    }

    /// Exhaustive check of the rank-1 properties. Property (a) is checked on
    /// the time intervals and on each family `{ω_{P_j}}`; (c) and (d) are
    /// triggered by strict containment `ω_{P_j} ⊊ ω_{Q_j}`.
    pub fn validate(&self) -> Rank1Report {
        let g = Rat::from_integer(self.g as i64);
        let n = self.tritiles.len();
        let mut violations = Vec::new();
        let mut pairs = 0;
        for a in 0..n {
            let p = &self.tritiles[a];
            for b in (a + 1)..n {
                let q = &self.tritiles[b];
                pairs += 1;
                let (ip, iq) = (p.interval(), q.interval());
                let mut push = |property, first, second, detail: String| {
                    violations.push(Violation {
                        property,
                        first,
                        second,
                        detail,
                    })
                };
                if !nested_or_disjoint(&ip, &iq) || !is_power_of(ip.length() / iq.length(), self.g) {
                    push('a', a, b, format!("time intervals {ip} and {iq} do not form a grid"));
                }
                for j in 0..3 {
                    let (wp, wq) = (p.freq[j], q.freq[j]);
                    if !nested_or_disjoint(&wp, &wq) || !is_power_of(wp.length() / wq.length(), self.g) {
                        push('a', a, b, format!("frequency intervals {wp} and {wq} (j = {}) do not form a grid", j + 1));
                    }
                }
                if ip == iq && p != q {
                    for j in 0..3 {
                        if p.freq[j].intersects(&q.freq[j]) {
                            push('b', a, b, format!("same I_P = {ip}, overlapping ω_{}", j + 1));
                        }
                    }
                }
                for (x, y, ix, iy) in [(p, q, a, b), (q, p, b, a)] {
                    for j in 0..3 {
                        if !strictly_inside(&x.freq[j], &y.freq[j]) {
                            continue;
                        }
                        let gx = x.hull().dilate(g).expect("g > 0");
                        let gy = y.hull().dilate(g).expect("g > 0");
                        if !gy.contains_interval(&gx) {
                            push('c', ix, iy, format!("ω_{} nested but g·ω_P = {gx} not inside {gy}", j + 1));
                        }
                        for k in (0..3).filter(|&k| k != j) {
                            if x.freq[k].triple().intersects(&y.freq[k].triple()) {
                                push('d', ix, iy, format!("ω_{} nested but 3ω_{} overlap", j + 1, k + 1));
                            }
                        }
                    }
                }
            }
        }
        Rank1Report {
            valid: violations.is_empty(),
            pairs_checked: pairs,
            violations,
        }
    }
}

/// Parameters of the synthetic lattice collections.
///
/// Time scales run from `2^{scales.1}` down to `2^{scales.0}` in steps of
/// `g`. Each dyadic interval of a used scale inside `window` carries
/// `density` tritiles whose lattice parameters `n` are drawn without
/// replacement from `band` consecutive values centred at zero. At scale
/// `s = |I|^{-1}` the tritile with parameter `n` has
/// `ω_{P_j} = [(Gn + a_j) s, (Gn + a_j + 1) s)`, with `G = 2g` and
/// `a = (-G/4, 0, G/4)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rank1Spec {
    pub seed: u64,
    pub scales: (i32, i32),
    pub window: Interval,
    pub density: usize,
    pub band: usize,
    pub g: u32,
}

impl Default for Rank1Spec {
    fn default() -> Self {
        Rank1Spec {
            seed: 0,
            scales: (-3, 0),
            window: Interval::int(-1, 2),
            density: 2,
            band: 3,
            g: 8,
        }
    }
}

fn lattice_tritile(time: DyadicInterval, n: i64, g: u32) -> Tritile {
    let big = 2 * g as i64;
    let offsets = [-big / 4, 0, big / 4];
    let s = time.length().recip();
    let freq = offsets.map(|a| Interval::new(Rat::from_integer(big * n + a) * s, s).expect("s > 0"));
    Tritile { time, freq }
}

pub fn generate_rank1(spec: &Rank1Spec) -> Result<Rank1Collection> {
    if spec.g <= 3 || !spec.g.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "scale separation must be a power of two above 3, got {}",
            spec.g
        )));
    }
    if spec.density == 0 || spec.band == 0 {
        return Err(Error::InvalidArgument("density and band must be positive".into()));
    }
    if spec.density > spec.band {
        return Err(Error::Infeasible(format!(
            "density {} exceeds the {} lattice slots per interval",
            spec.density, spec.band
        )));
    }
    let (k_min, k_max) = spec.scales;
    if k_min > k_max {
        return Err(Error::InvalidArgument(format!("empty scale range {k_min}..={k_max}")));
    }
    let step = spec.g.trailing_zeros() as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tritiles = Vec::new();
    let lowest = -(spec.band as i64 / 2);
    let mut k = k_max;
    while k >= k_min {
        let len = pow2(k);
        let first = (spec.window.left() / len).ceil().to_integer();
        let last = (spec.window.right() / len).floor().to_integer();
        if first >= last {
            return Err(Error::Infeasible(format!(
                "window {} holds no dyadic interval of length {len}",
                spec.window
            )));
        }
        for offset in first..last {
            let time = DyadicInterval::standard(k, offset);
            let mut chosen: Vec<i64> = sample(&mut rng, spec.band, spec.density)
                .into_iter()
                .map(|i| lowest + i as i64)
                .collect();
            chosen.sort_unstable();
            tritiles.extend(chosen.into_iter().map(|n| lattice_tritile(time, n, spec.g)));
        }
        k -= step;
    }
    let collection = Rank1Collection::new(tritiles, spec.g)?;
    let report = collection.validate();
    if let Some(v) = report.violations.first() {
        return Err(Error::Infeasible(format!(
            "lattice with g = {} is not rank 1: property ({}) fails: {}",
            spec.g, v.property, v.detail
        )));
    }
    Ok(collection)
}

/// Largest analysis grid accepted, in cells.
pub const MAX_ANALYSIS_CELLS: usize = 1 << 24;
/// Padding around each time interval, in units of `|I_P|`, when sizing an
/// analysis grid.
pub const PACKET_REACH: i64 = 8;

/// A grid of period `L = 2^r` (a whole number of unit intervals) on which
/// packets are trigonometric polynomials with frequencies `k / L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisGrid {
    grid: GridSpec,
    period: i64,
}

impl AnalysisGrid {
    /// The grid at `level` starting at `floor(window.left)` whose period is
    /// the smallest power of two covering `window`.
    pub fn new(level: u32, window: &Interval) -> Result<Self> {
        let first = window.left().floor().to_integer();
        let span = (window.right() - Rat::from_integer(first)).ceil().to_integer().max(1);
        let period = (span as u64).next_power_of_two() as i64;
        let per_unit = 3 * (1i64 << level);
        let len = (per_unit * period) as usize;
        if len > MAX_ANALYSIS_CELLS {
            return Err(Error::TooLarge {
                size: len,
                limit: MAX_ANALYSIS_CELLS,
            });
        }
        Ok(AnalysisGrid {
            grid: GridSpec::new(level, first * per_unit, len)?,
            period,
        })
    }

    /// A grid holding every signal domain and every `I_P` with
    /// `PACKET_REACH |I_P|` to spare on both sides.
    pub fn for_inputs(signals: &[&SampledFunction], tritiles: &[Tritile]) -> Result<Self> {
        let level = match signals.first() {
            Some(f) => f.grid().level,
            None => return Err(Error::InvalidArgument("at least one signal is required".into())),
        };
        if signals.iter().any(|f| f.grid().level != level) {
            return Err(Error::InvalidArgument("signals live on different grid levels".into()));
        }
        let mut window = signals
            .iter()
            .map(|f| f.grid().domain())
            .reduce(|a, b| a.hull(&b))
            .expect("nonempty");
        for p in tritiles {
            let i = p.interval();
            let reach = i.length() * Rat::from_integer(PACKET_REACH);
            let padded = Interval::from_endpoints(i.left() - reach, i.right() + reach)?;
            window = window.hull(&padded);
        }
        let reach = tritiles
            .iter()
            .map(|p| p.time.length())
            .max()
            .unwrap_or_else(Rat::one)
            * Rat::from_integer(PACKET_REACH);
        let window = Interval::from_endpoints(window.left() - reach, window.right() + reach)?;
        Self::new(level, &window)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    /// Signed bins `k` with `|k| < N/2` are resolvable.
    fn nyquist(&self) -> i64 {
        (self.grid.len / 2) as i64
    }

    fn slot(&self, k: i64) -> usize {
        k.rem_euclid(self.grid.len as i64) as usize
    }

    /// `e^{-2πi k x_0 / L}` for the first cell midpoint `x_0`, reduced exactly.
    fn origin_phase(&self, k: i64) -> Complex64 {
        let n = self.grid.len as i128;
        let num = (k as i128 * (2 * self.grid.start as i128 + 1)).rem_euclid(2 * n);
        Complex64::from_polar(1.0, -PI * num as f64 / n as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `sup |φ_T| = |I_T|^{-1}`.
    #[default]
    L1,
    /// `‖φ_T‖_2 = 1`.
    L2,
}

/// Fraction of `ω_T` carrying the packet's spectrum.
pub const PACKET_SUPPORT: f64 = 0.8;
/// Derivative orders whose adaptation constants are measured.
pub const ADAPTATION_ORDERS: usize = 4;

/// Smooth bump `exp(-1/(1-u^2))` on `(-1, 1)`.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Fractional part of a rational, as `f64` in `[0, 1)`.
fn frac(r: Rat) -> f64 {
    to_f64(r - r.floor())
}

/// The canonical packet of a tile: a trigonometric polynomial on the
/// analysis grid with coefficients `a_k` on the bins `k / L` inside the
/// middle of `ω_T`, centred in time at `c(I_T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub tile: Tile,
    pub normalization: Normalization,
    pub analysis: AnalysisGrid,
    pub first_bin: i64,
    pub coefficients: Vec<Complex64>,
    /// Measured `A_N` for `N = 0..=ADAPTATION_ORDERS`; empty until measured.
    pub adaptation: Vec<f64>,
}

impl WavePacket {
    pub fn new(tile: Tile, analysis: &AnalysisGrid, normalization: Normalization) -> Result<Self> {
        let l = Rat::from_integer(analysis.period);
        let c = tile.freq.center();
        let half = tile.freq.length() * rat(2, 5);
        let first_bin = ((c - half) * l).floor().to_integer() + 1;
        let last_bin = ((c + half) * l).ceil().to_integer() - 1;
        if last_bin - first_bin + 1 < 3 {
            return Err(Error::InvalidArgument(format!(
                "frequency interval {} spans fewer than 3 bins of width 1/{}",
                tile.freq, analysis.period
            )));
        }
        let nyq = analysis.nyquist();
        if first_bin <= -nyq || last_bin >= nyq {
            return Err(Error::InvalidArgument(format!(
                "frequency interval {} exceeds the grid's Nyquist frequency",
                tile.freq
            )));
        }
        let centre = tile.time.interval().center();
        let width = to_f64(half);
        let weights: Vec<f64> = (first_bin..=last_bin)
            .map(|k| bump(to_f64(Rat::new(k, analysis.period) - c) / width))
            .collect();
        let scale = match normalization {
            Normalization::L1 => 1.0 / (to_f64(tile.time.length()) * weights.iter().sum::<f64>()),
            Normalization::L2 => {
                1.0 / (analysis.period as f64 * weights.iter().map(|b| b * b).sum::<f64>()).sqrt()
            }
        };
        let coefficients = (first_bin..=last_bin)
            .zip(&weights)
            .map(|(k, b)| {
                let phase = frac((Rat::new(k, analysis.period) - c) * centre);
                Complex64::from_polar(b * scale, -2.0 * PI * phase)
            })
            .collect();
        Ok(WavePacket {
            tile,
            normalization,
            analysis: *analysis,
            first_bin,
            coefficients,
            adaptation: Vec::new(),
        })
    }

    pub fn bins(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        (self.first_bin..).zip(self.coefficients.iter().copied())
    }

    /// The packet's value at `x`.
    pub fn eval(&self, x: f64) -> Complex64 {
        let l = self.analysis.period as f64;
        self.bins()
            .map(|(k, a)| a * Complex64::from_polar(1.0, 2.0 * PI * (k as f64 / l) * x))
            .sum()
    }

    /// `d^n/dx^n (e^{-2πi c(ω_T) x} φ_T(x))`.
    pub fn demodulated_derivative(&self, n: usize, x: f64) -> Complex64 {
        let l = self.analysis.period as f64;
        let c = to_f64(self.tile.freq.center());
        self.bins()
            .map(|(k, a)| {
                let xi = k as f64 / l - c;
                let factor = Complex64::new(0.0, 2.0 * PI * xi).powu(n as u32);
                a * factor * Complex64::from_polar(1.0, 2.0 * PI * xi * x)
            })
            .sum()
    }

    /// `sup |φ_T|`, attained at `c(I_T)`.
    pub fn peak(&self) -> f64 {
        self.coefficients.iter().map(|a| a.norm()).sum()
    }

    /// `‖φ_T‖_2^2` over one period.
    pub fn energy(&self) -> f64 {
        self.analysis.period as f64 * self.coefficients.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    /// Samples on the analysis grid, by inverse FFT.
    pub fn samples(&self) -> SampledFunction {
        let n = self.analysis.len();
        let mut buf = vec![Complex64::zero(); n];
        for (k, a) in self.bins() {
            buf[self.analysis.slot(k)] = a * self.analysis.origin_phase(k).conj();
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        SampledFunction::new(self.analysis.grid, buf).expect("grid length matches")
    }

    /// `A_N = sup_{n <= N} sup_x |I|^{n+1} χ_I(x)^{-N} |ψ^{(n)}(x)|` for the
    /// demodulated packet `ψ`, sampled on `1024` points of
    /// `|x - c(I)| <= R |I|`, with `R` a quarter period capped at `8`.
    pub fn measure_adaptation(&mut self, orders: usize) {
        let i = self.tile.time.interval();
        let len = i.length_f64();
        let c = i.center_f64();
        let reach = (self.analysis.period as f64 / (4.0 * len)).min(8.0);
        let points: Vec<f64> = (0..=1024)
            .map(|t| c + len * reach * (2.0 * t as f64 / 1024.0 - 1.0))
            .collect();
        let per_order: Vec<Vec<f64>> = (0..=orders)
            .map(|n| {
                points
                    .iter()
                    .map(|&x| len.powi(n as i32 + 1) * self.demodulated_derivative(n, x).norm())
                    .collect()
            })
            .collect();
        self.adaptation = (0..=orders)
            .map(|big_n| {
                points
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| {
                        let weight = crate::grid::chi_weight(&i, big_n as u32, x);
                        (0..=big_n).map(|n| per_order[n][t]).fold(0.0, f64::max) / weight
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
    }
}

/// The canonical packet with its adaptation constants measured.
pub fn build_wave_packet(tile: Tile, analysis: &AnalysisGrid) -> Result<WavePacket> {
    let mut packet = WavePacket::new(tile, analysis, Normalization::L1)?;
    packet.measure_adaptation(ADAPTATION_ORDERS);
    Ok(packet)
}

/// A signal's spectrum on an analysis grid:
/// `F[k] = Σ_n f(x_n) e^{-2πi k x_n / L}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedSignal {
    analysis: AnalysisGrid,
    spectrum: Vec<Complex64>,
}

impl TransformedSignal {
    pub fn new(f: &SampledFunction, analysis: &AnalysisGrid) -> Result<Self> {
        let mut buf = f.embed(analysis.grid)?.values().to_vec();
        let n = buf.len();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        Ok(TransformedSignal {
            analysis: *analysis,
            spectrum: buf,
        })
    }

    pub fn analysis(&self) -> &AnalysisGrid {
        &self.analysis
    }

    /// `⟨f, φ⟩ = h Σ_k F[k] conj(a_k)`.
    pub fn inner(&self, packet: &WavePacket) -> Result<Complex64> {
        if packet.analysis != self.analysis {
            return Err(Error::InvalidArgument("packet and signal use different analysis grids".into()));
        }
        let h = self.analysis.grid.step_f64();
        let s: Complex64 = packet
            .bins()
            .map(|(k, a)| self.spectrum[self.analysis.slot(k)] * self.analysis.origin_phase(k) * a.conj())
            .sum();
        Ok(s * h)
    }
}

/// `F_j(f)(P) = |⟨f, φ_{P_j}⟩|` for every tritile of the collection.
pub fn map_values(collection: &Rank1Collection, signal: &TransformedSignal, j: usize) -> Result<Vec<f64>> {
    if j > 2 {
        return Err(Error::InvalidArgument(format!("slot index {j} out of range")));
    }
    collection
        .tritiles
        .par_iter()
        .map(|p| {
            let packet = WavePacket::new(p.tile(j), signal.analysis(), Normalization::L1)?;
            Ok(signal.inner(&packet)?.norm())
        })
        .collect()
}

/// `F_j(f)(P)` with the analysis grid sized for `f` and `P`.
pub fn tritile_map(f: &SampledFunction, p: &Tritile, j: usize) -> Result<f64> {
    let analysis = AnalysisGrid::for_inputs(&[f], std::slice::from_ref(p))?;
    let signal = TransformedSignal::new(f, &analysis)?;
    Ok(map_values(&Rank1Collection::new(vec![*p], 2)?, &signal, j)?[0])
}

/// The three maps `F_1(f_1), F_2(f_2), F_3(f_3)` on a collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TritileMaps {
    pub values: Vec<[f64; 3]>,
}

impl TritileMaps {
    pub fn compute(collection: &Rank1Collection, signals: [&TransformedSignal; 3]) -> Result<Self> {
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|j| map_values(collection, signals[j], j))
            .collect::<Result<_>>()?;
        let values = (0..collection.len())
            .map(|i| [cols[0][i], cols[1][i], cols[2][i]])
            .collect();
        Ok(TritileMaps { values })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[j]).collect()
    }

    /// `Σ_{P ∈ indices} |I_P| Π_j F_j(P)`.
    pub fn form_on(&self, collection: &Rank1Collection, indices: impl IntoIterator<Item = usize>) -> f64 {
        indices
            .into_iter()
            .map(|i| to_f64(collection.tritiles[i].time.length()) * self.values[i].iter().product::<f64>())
            .sum()
    }

    pub fn form(&self, collection: &Rank1Collection) -> f64 {
        self.form_on(collection, 0..collection.len())
    }
}

fn transform_all(f: [&SampledFunction; 3], analysis: &AnalysisGrid) -> Result<[TransformedSignal; 3]> {
    Ok([
        TransformedSignal::new(f[0], analysis)?,
        TransformedSignal::new(f[1], analysis)?,
        TransformedSignal::new(f[2], analysis)?,
    ])
}

/// `Λ_P(f_1, f_2, f_3) = Σ_P |I_P| Π_j F_j(f_j)(P)`.
pub fn tritile_form(collection: &Rank1Collection, f: [&SampledFunction; 3]) -> Result<f64> {
    if collection.is_empty() {
        return Ok(0.0);
    }
    let analysis = AnalysisGrid::for_inputs(&f, &collection.tritiles)?;
    let t = transform_all(f, &analysis)?;
    Ok(TritileMaps::compute(collection, [&t[0], &t[1], &t[2]])?.form(collection))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictMode {
    /// `P_≤(I) = {P : I_P ⊆ I}`.
    Leq,
    /// `P_=(I) = {P : I_P = I}`.
    Eq,
}

/// Indices of the tritiles selected by `mode`.
pub fn restrict_indices(collection: &Rank1Collection, i: &Interval, mode: RestrictMode) -> Vec<usize> {
    collection
        .tritiles
        .iter()
        .enumerate()
        .filter(|(_, p)| match mode {
            RestrictMode::Leq => i.contains_interval(&p.interval()),
            RestrictMode::Eq => p.interval() == *i,
        })
        .map(|(k, _)| k)
        .collect()
}

pub fn restrict(collection: &Rank1Collection, i: &Interval, mode: RestrictMode) -> Rank1Collection {
    collection.subset(&restrict_indices(collection, i, mode))
}

/// Indices of `P \ ∪_{I ∈ stopping} P_≤(I)`.
pub fn good_indices(collection: &Rank1Collection, stopping: &[Interval]) -> Vec<usize> {
    collection
        .tritiles
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let ip = p.interval();
            !stopping.iter().any(|s| s.contains_interval(&ip))
        })
        .map(|(k, _)| k)
        .collect()
}

pub fn good_set(collection: &Rank1Collection, stopping: &[Interval]) -> Rank1Collection {
    collection.subset(&good_indices(collection, stopping))
}

/// A tree: tritiles with `I_P ⊆ I_T` and `ξ_T ∈ ω_P`, stored as indices
/// into the collection it was cut from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub top: Interval,
    pub xi: Rat,
    pub members: Vec<usize>,
}

impl Tree {
    /// The maximal tree with the given top inside `collection`.
    pub fn with_top(collection: &Rank1Collection, top: Interval, xi: Rat) -> Self {
        let members = collection
            .tritiles
            .iter()
            .enumerate()
            .filter(|(_, p)| top.contains_interval(&p.interval()) && p.hull().contains(xi))
            .map(|(k, _)| k)
            .collect();
        Tree { top, xi, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_valid(&self, collection: &Rank1Collection) -> bool {
        self.members.iter().all(|&k| {
            let p = &collection.tritiles[k];
            self.top.contains_interval(&p.interval()) && p.hull().contains(self.xi)
        })
    }

    /// The sub-trees `T_j = {P ∈ T : ξ_T ∈ ω_{P_j}}`.
    pub fn split(&self, collection: &Rank1Collection) -> [Vec<usize>; 3] {
        let mut parts: [Vec<usize>; 3] = Default::default();
        for &k in &self.members {
            let p = &collection.tritiles[k];
            for (j, part) in parts.iter_mut().enumerate() {
                if p.freq[j].contains(self.xi) {
                    part.push(k);
                }
            }
        }
        parts
    }

    /// Checks that `T = ∪_{j<k} T \ (T_j ∪ T_k)` and that inside `T_j` the
    /// distinct intervals of `{3ω_{P_k}}`, `k ≠ j`, are pairwise disjoint.
    pub fn split_is_valid(&self, collection: &Rank1Collection) -> bool {
        let parts = self.split(collection);
        let covered = self.members.iter().all(|k| {
            [(0, 1), (0, 2), (1, 2)]
                .iter()
                .any(|&(a, b)| !parts[a].contains(k) && !parts[b].contains(k))
        });
        let lacunary = (0..3).all(|j| {
            (0..3).filter(|&k| k != j).all(|k| {
                let mut tripled: Vec<Interval> =
                    parts[j].iter().map(|&i| collection.tritiles[i].freq[k].triple()).collect();
                tripled.sort();
                tripled.dedup();
                tripled.windows(2).all(|w| !w[0].intersects(&w[1]))
            })
        });
        covered && lacunary
    }
}

/// Maximal levels above an `I_P` searched for tree tops.
pub const TOP_ANCESTORS: i32 = 4;

/// All distinct nonempty maximal trees whose top interval is `I_P` or one
/// of its first `TOP_ANCESTORS` dyadic ancestors and whose top frequency is
/// a centre `c(ω_{P_j})`.
pub fn enumerate_trees(collection: &Rank1Collection) -> Vec<Tree> {
    let mut tops: Vec<Interval> = Vec::new();
    for p in &collection.tritiles {
        let mut d = p.time;
        for _ in 0..=TOP_ANCESTORS {
            tops.push(d.interval());
            d = d.parent();
        }
    }
    tops.sort();
    tops.dedup();
    let mut xis: Vec<Rat> = collection
        .tritiles
        .iter()
        .flat_map(|p| p.freq.iter().map(|w| w.center()))
        .collect();
    xis.sort();
    xis.dedup();
    let mut trees: Vec<Tree> = tops
        .par_iter()
        .flat_map_iter(|top| {
            xis.iter()
                .map(|&xi| Tree::with_top(collection, *top, xi))
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
        })
        .collect();
    // trees with equal members but different splits size differently
    let mut keyed: Vec<([Vec<usize>; 3], Tree)> =
        trees.drain(..).map(|t| (t.split(collection), t)).collect();
    keyed.sort_by(|a, b| (a.1.top, &a.1.members, &a.0).cmp(&(b.1.top, &b.1.members, &b.0)));
    keyed.dedup_by(|a, b| a.1.top == b.1.top && a.1.members == b.1.members && a.0 == b.0);
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Decay exponent `M` of the weights `χ_J^M` in the localization checks.
pub const LOCALIZATION_M: u32 = 16;

/// Maxima over a suite of the two ratios
/// `sup_{P_=(J)} F_j(f) / ‖f‖_{L^1(χ_J^M)}` and
/// `(|J|^{-1} Σ_{P_=(J)} |I_P| F_j(f)^2)^{1/2} / ‖f‖_{L^2(χ_J^M)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub m: u32,
    pub sup_ratio: [f64; 3],
    pub square_ratio: [f64; 3],
    pub cases: usize,
    pub skipped: usize,
}

impl LocalizationReport {
    pub fn max_sup_ratio(&self) -> f64 {
        self.sup_ratio.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_square_ratio(&self) -> f64 {
        self.square_ratio.iter().copied().fold(0.0, f64::max)
    }
}

pub fn almost_localized_check(
    collection: &Rank1Collection,
    j_interval: &Interval,
    suite: &[SampledFunction],
    m: u32,
) -> Result<LocalizationReport> {
    let local = restrict(collection, j_interval, RestrictMode::Eq);
    let mut report = LocalizationReport {
        m,
        sup_ratio: [0.0; 3],
        square_ratio: [0.0; 3],
        cases: 0,
        skipped: 0,
    };
    if local.is_empty() {
        report.skipped = suite.len();
        return Ok(report);
    }
    let len = to_f64(j_interval.length());
    for f in suite {
        let l1 = weighted_local_norm(f, j_interval, m, Exponent::int(1));
        let l2 = weighted_local_norm(f, j_interval, m, Exponent::int(2));
        if l1 <= 0.0 || l2 <= 0.0 {
            report.skipped += 1;
            continue;
        }
        let analysis = AnalysisGrid::for_inputs(&[f], &local.tritiles)?;
        let signal = TransformedSignal::new(f, &analysis)?;
        for j in 0..3 {
            let values = map_values(&local, &signal, j)?;
            let sup = values.iter().copied().fold(0.0, f64::max);
            let square = (values.iter().map(|v| len * v * v).sum::<f64>() / len).sqrt();
            report.sup_ratio[j] = report.sup_ratio[j].max(sup / l1);
            report.square_ratio[j] = report.square_ratio[j].max(square / l2);
        }
        report.cases += 1;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `3I`.
    In,
    /// `ℝ \ 3I`.
    Out,
}

/// The eight types `(t_1, t_2, t_3)`, all-in first.
pub fn all_types() -> Vec<[Side; 3]> {
    let mut out = Vec::with_capacity(8);
    for mask in 0..8u8 {
        out.push([0, 1, 2].map(|j| if mask >> j & 1 == 0 { Side::In } else { Side::Out }));
    }
    out
}

fn split_sides(f: &SampledFunction, i: &Interval) -> Result<[SampledFunction; 2]> {
    let inside = f.restrict(&i.triple());
    let outside = f.add(&inside.scale(Complex64::new(-1.0, 0.0)))?;
    Ok([inside, outside])
}

/// `Λ^{t}_{P_≤(I)}(f) = Σ_{P ∈ P_≤(I)} |I_P| Π_j F_j(f_j 1_{I^{t_j}})(P)`
/// for every type `t`, in the order of [`all_types`].
pub fn tail_forms(collection: &Rank1Collection, i: &Interval, f: [&SampledFunction; 3]) -> Result<Vec<([Side; 3], f64)>> {
    let local = restrict(collection, i, RestrictMode::Leq);
    let types = all_types();
    if local.is_empty() {
        return Ok(types.into_iter().map(|t| (t, 0.0)).collect());
    }
    let analysis = AnalysisGrid::for_inputs(&f, &local.tritiles)?;
    let mut maps: Vec<[Vec<f64>; 2]> = Vec::with_capacity(3);
    for j in 0..3 {
        let [inside, outside] = split_sides(f[j], i)?;
        maps.push([
            map_values(&local, &TransformedSignal::new(&inside, &analysis)?, j)?,
            map_values(&local, &TransformedSignal::new(&outside, &analysis)?, j)?,
        ]);
    }
    Ok(types
        .into_iter()
        .map(|t| {
            let value = local
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let prod: f64 = (0..3).map(|j| maps[j][t[j] as usize][k]).product();
                    to_f64(p.time.length()) * prod
                })
                .sum();
            (t, value)
        })
        .collect())
}

pub fn tail_form(collection: &Rank1Collection, i: &Interval, f: [&SampledFunction; 3], t: [Side; 3]) -> Result<f64> {
    Ok(tail_forms(collection, i, f)?
        .into_iter()
        .find(|(s, _)| *s == t)
        .map(|(_, v)| v)
        .expect("all types present"))
}

/// `|I| Π_j inf_{3I} M_{p_j} f_j`.
pub fn maximal_bound(i: &Interval, f: [&SampledFunction; 3], p: [f64; 3]) -> Result<f64> {
    let mut out = to_f64(i.length());
    for j in 0..3 {
        out *= MaximalProfile::new(f[j], p[j], MaximalMode::Full)?.inf_on_triple(i);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub bound: f64,
    /// `(type, Λ^t, Λ^t / bound)` for the seven types with an `out` slot.
    pub terms: Vec<([Side; 3], f64, f64)>,
    pub max_ratio: f64,
}

pub fn tail_bound_check(
    collection: &Rank1Collection,
    i: &Interval,
    f: [&SampledFunction; 3],
    p: [f64; 3],
) -> Result<TailReport> {
    let bound = maximal_bound(i, f, p)?;
    let terms: Vec<_> = tail_forms(collection, i, f)?
        .into_iter()
        .filter(|(t, _)| t.contains(&Side::Out))
        .map(|(t, v)| {
            let ratio = if v == 0.0 { 0.0 } else { v / bound };
            (t, v, ratio)
        })
        .collect();
    let max_ratio = terms.iter().map(|t| t.2).fold(0.0, f64::max);
    Ok(TailReport {
        bound,
        terms,
        max_ratio,
    })
}

/// `Λ_{P_=(J)}(f) / (|J| Π_j inf_{3J} M_{p_j} f_j)`: the quantity that decays
/// as the support of one input moves away from `J`.
pub fn separated_ratio(collection: &Rank1Collection, j_interval: &Interval, f: [&SampledFunction; 3], p: [f64; 3]) -> Result<f64> {
    let local = restrict(collection, j_interval, RestrictMode::Eq);
    let lambda = tritile_form(&local, f)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(lambda / maximal_bound(j_interval, f, p)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub lambda: f64,
    pub psf: f64,
    pub ratio: f64,
    pub tritiles: usize,
}

/// A sparse collection built once from `f` and `p`, against which any number
/// of rank-1 collections can be compared.
#[derive(Clone, Debug)]
pub struct Dominator {
    pub dominating: DominatingCollection,
    f: [SampledFunction; 3],
}

impl Dominator {
    pub fn new(f: [&SampledFunction; 3], p: &ExponentTuple) -> Result<Self> {
        if !p.is_admissible(true) {
            return Err(Error::Precondition(format!("tuple {p} is not open admissible")));
        }
        let dominating = dominating_collection(f, p)?;
        Ok(Dominator {
            dominating,
            f: f.map(|g| g.clone()),
        })
    }

    pub fn psf(&self) -> f64 {
        self.dominating.psf
    }

    pub fn check(&self, collection: &Rank1Collection) -> Result<DominationReport> {
        let f = [&self.f[0], &self.f[1], &self.f[2]];
        let lambda = tritile_form(collection, f)?;
        let psf = self.dominating.psf;
        let ratio = if lambda == 0.0 {
            0.0
        } else if psf <= 0.0 {
            return Err(Error::Falsified(format!(
                "tritile form {lambda} is positive while the sparse form vanishes"
            )));
        } else {
            lambda / psf
        };
        Ok(DominationReport {
            lambda,
            psf,
            ratio,
            tritiles: collection.len(),
        })
    }

    pub fn batch(&self, collections: &[Rank1Collection]) -> Result<Vec<DominationReport>> {
        collections.par_iter().map(|c| self.check(c)).collect()
    }
}

/// Builds `S̃` from `f` and `p` and compares `Λ_P(f)` with `PSF_{S̃}(f)`.
pub fn domination_check(
    collection: &Rank1Collection,
    f: [&SampledFunction; 3],
    p: &ExponentTuple,
) -> Result<(DominationReport, DominatingCollection)> {
    let dominator = Dominator::new(f, p)?;
    let report = dominator.check(collection)?;
    Ok((report, dominator.dominating))
}

/// Re-evaluate a sparse form on `S̃` for other inputs, e.g. translated ones.
pub fn psf_on(dominating: &DominatingCollection, f: [&SampledFunction; 3]) -> Result<f64> {
    let intervals: Vec<Interval> = dominating.tripled.intervals.clone();
    psf_intervals(&intervals, &dominating.form_exponents, f)
}
