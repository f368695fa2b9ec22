//! Exact interval arithmetic on the real line.
//!
//! Endpoints are rationals with denominators of the form `3 * 2^m`, which
//! keeps membership in the three shifted dyadic grids decidable.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rat = Ratio<i64>;

/// `2^k` as an exact rational, `k` may be negative.
pub fn pow2(k: i32) -> Rat {
    if k >= 0 {
        Rat::from_integer(1i64 << k)
    } else {
        Rat::new(1, 1i64 << (-k))
    }
}

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n, d)
}

pub fn to_f64(r: Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Best rational approximation with denominator at most `max_den`
/// (continued fractions, ties to the last convergent). Non-finite input gives 0.
pub fn rat_from_f64(x: f64, max_den: i64) -> Rat {
    if !x.is_finite() || max_den < 1 {
        return Rat::zero();
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut y = x;
    for _ in 0..64 {
        let a = y.floor();
        if a.abs() > 1e15 {
            break;
        }
        let a = a as i128;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den as i128 {
            // semiconvergent with the largest admissible coefficient
            let t = (max_den as i128 - k0) / k1;
            let (hs, ks) = (t * h1 + h0, t * k1 + k0);
            if t > 0 && ((hs as f64 / ks as f64) - x).abs() < ((h1 as f64 / k1 as f64) - x).abs() {
                (h1, k1) = (hs, ks);
            }
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = y - a as f64;
        if frac.abs() < 1e-12 {
            break;
        }
        y = 1.0 / frac;
    }
    match (i64::try_from(h1), i64::try_from(k1)) {
        (Ok(h), Ok(k)) if k > 0 => Rat::new(h, k),
        _ => Rat::zero(),
    }
}

/// Half-open interval `[left, left + length)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "EndpointPair", try_from = "EndpointPair")]
pub struct Interval {
    left: Rat,
    length: Rat,
}

#[derive(Serialize, Deserialize)]
struct EndpointPair {
    left: Rat,
    right: Rat,
}

impl From<Interval> for EndpointPair {
    fn from(i: Interval) -> Self {
        EndpointPair {
            left: i.left,
            right: i.right(),
        }
    }
}

impl TryFrom<EndpointPair> for Interval {
    type Error = Error;
    fn try_from(p: EndpointPair) -> Result<Self> {
        Interval::from_endpoints(p.left, p.right)
    }
}

impl Interval {
    pub fn new(left: Rat, length: Rat) -> Result<Self> {
        if length <= Rat::zero() {
            return Err(Error::InvalidArgument(format!(
                "interval length must be positive, got {length}"
            )));
        }
        Ok(Interval { left, length })
    }

    pub fn from_endpoints(left: Rat, right: Rat) -> Result<Self> {
        Interval::new(left, right - left)
    }

    /// Convenience for small integer endpoints.
    pub fn int(left: i64, right: i64) -> Self {
        Interval::from_endpoints(Rat::from_integer(left), Rat::from_integer(right))
            .expect("right > left")
    }

    pub fn left(&self) -> Rat {
        self.left
    }

    pub fn right(&self) -> Rat {
        self.left + self.length
    }

    pub fn length(&self) -> Rat {
        self.length
    }

    pub fn center(&self) -> Rat {
        self.left + self.length / Rat::from_integer(2)
    }

    pub fn left_f64(&self) -> f64 {
        to_f64(self.left)
    }

    pub fn right_f64(&self) -> f64 {
        to_f64(self.right())
    }

    pub fn length_f64(&self) -> f64 {
        to_f64(self.length)
    }

    pub fn center_f64(&self) -> f64 {
        to_f64(self.center())
    }

    /// Same center, length multiplied by `factor`.
    pub fn dilate(&self, factor: Rat) -> Result<Self> {
        if factor <= Rat::zero() {
            return Err(Error::InvalidArgument(format!(
                "dilation factor must be positive, got {factor}"
            )));
        }
        let length = self.length * factor;
        Interval::new(self.center() - length / Rat::from_integer(2), length)
    }

    pub fn triple(&self) -> Self {
        self.dilate(Rat::from_integer(3)).expect("positive factor")
    }

    pub fn translate(&self, shift: Rat) -> Self {
        Interval {
            left: self.left + shift,
            length: self.length,
        }
    }

    pub fn contains(&self, x: Rat) -> bool {
        self.left <= x && x < self.right()
    }

    pub fn contains_f64(&self, x: f64) -> bool {
        self.left_f64() <= x && x < self.right_f64()
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.left <= other.left && other.right() <= self.right()
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.left < other.right() && other.left < self.right()
    }

    pub fn overlap_length(&self, other: &Interval) -> Rat {
        let lo = self.left.max(other.left);
        let hi = self.right().min(other.right());
        if hi > lo {
            hi - lo
        } else {
            Rat::zero()
        }
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        let lo = self.left.min(other.left);
        let hi = self.right().max(other.right());
        Interval::from_endpoints(lo, hi).expect("nonempty hull")
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.left, self.right())
    }
}

impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        self.left
            .cmp(&other.left)
            .then_with(|| self.length.cmp(&other.length))
    }
}

/// Element `2^k [0,1) + (n + (-1)^k j/3) 2^k` of the shifted dyadic grid `D_j`.
///
/// The alternating sign keeps each `D_j` a nested grid; at even scales the
/// realization is the plain `(n + j/3) 2^k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub scale: i32,
    pub offset: i64,
    pub shift: u8,
}

impl DyadicInterval {
    pub fn new(scale: i32, offset: i64, shift: u8) -> Result<Self> {
        if shift > 2 {
            return Err(Error::InvalidArgument(format!(
                "grid shift must be 0, 1 or 2, got {shift}"
            )));
        }
        Ok(DyadicInterval {
            scale,
            offset,
            shift,
        })
    }

    pub fn standard(scale: i32, offset: i64) -> Self {
        DyadicInterval {
            scale,
            offset,
            shift: 0,
        }
    }

    pub fn length(&self) -> Rat {
        pow2(self.scale)
    }

    /// `±1` alternating with the scale, which makes each `D_j` nested.
    fn sign(scale: i32) -> i64 {
        if scale.rem_euclid(2) == 0 {
            1
        } else {
            -1
        }
    }

    pub fn left(&self) -> Rat {
        let j = Self::sign(self.scale) * self.shift as i64;
        Rat::new(3 * self.offset + j, 3) * pow2(self.scale)
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.left(), self.length()).expect("positive length")
    }

    pub fn parent(&self) -> Self {
        let k = self.scale + 1;
        let left = self.left();
        let offset = grid_offset_floor(left, k, self.shift);
        DyadicInterval {
            scale: k,
            offset,
            shift: self.shift,
        }
    }

    pub fn children(&self) -> [Self; 2] {
        let k = self.scale - 1;
        let left = self.left();
        let first = grid_offset_floor(left, k, self.shift);
        [
            DyadicInterval {
                scale: k,
                offset: first,
                shift: self.shift,
            },
            DyadicInterval {
                scale: k,
                offset: first + 1,
                shift: self.shift,
            },
        ]
    }

    pub fn contains(&self, other: &DyadicInterval) -> bool {
        self.interval().contains_interval(&other.interval())
    }

    /// The grid element of `D_shift` at scale `k` containing `x`.
    pub fn containing(x: Rat, scale: i32, shift: u8) -> Self {
        DyadicInterval {
            scale,
            offset: grid_offset_floor(x, scale, shift),
            shift,
        }
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (D_{})", self.interval(), self.shift)
    }
}

/// Largest `n` with `(n ± j/3) 2^k <= x`.
fn grid_offset_floor(x: Rat, scale: i32, shift: u8) -> i64 {
    let t = x / pow2(scale) - Rat::new(DyadicInterval::sign(scale) * shift as i64, 3);
    t.floor().to_integer()
}

/// The interval `Ĩ` of `D_0 ∪ D_1 ∪ D_2` containing `3I`, of minimal length,
/// ties broken by least center. Returns the interval and its grid index.
pub fn three_grid_embed(interval: &Interval) -> (DyadicInterval, u8) {
    let tripled = interval.triple();
    // Smallest k with 2^k >= |3I|.
    let mut k = smallest_scale_at_least(tripled.length());
    loop {
        let mut best: Option<DyadicInterval> = None;
        for shift in 0..3u8 {
            let cand = DyadicInterval::containing(tripled.left(), k, shift);
            if cand.interval().contains_interval(&tripled) {
                let better = match &best {
                    None => true,
                    Some(b) => cand.interval().center() < b.interval().center(),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        if let Some(b) = best {
            return (b, b.shift);
        }
        k += 1;
    }
}

pub fn smallest_scale_at_least(length: Rat) -> i32 {
    let mut k = 0i32;
    while pow2(k) < length {
        k += 1;
    }
    while k > -62 && pow2(k - 1) >= length {
        k -= 1;
    }
    k
}

/// `((1 + ((x - c(I))/ℓ(I))^2)^{-1})^N`.
pub fn chi_weight(interval: &Interval, n: u32, x: f64) -> f64 {
    let t = (x - interval.center_f64()) / interval.length_f64();
    (1.0 + t * t).powi(-(n as i32))
}

/// Finite union of disjoint half-open intervals, kept sorted and merged.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalSet {
    pieces: Vec<(Rat, Rat)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { pieces: Vec::new() }
    }

    pub fn from_interval(i: &Interval) -> Self {
        IntervalSet {
            pieces: vec![(i.left(), i.right())],
        }
    }

    pub fn pieces(&self) -> &[(Rat, Rat)] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn measure(&self) -> Rat {
        self.pieces
            .iter()
            .fold(Rat::zero(), |acc, (a, b)| acc + (*b - *a))
    }

    fn normalize(mut pieces: Vec<(Rat, Rat)>) -> Self {
        pieces.retain(|(a, b)| b > a);
        pieces.sort();
        let mut out: Vec<(Rat, Rat)> = Vec::with_capacity(pieces.len());
        for (a, b) in pieces {
            match out.last_mut() {
                Some(last) if a <= last.1 => {
                    if b > last.1 {
                        last.1 = b;
                    }
                }
                _ => out.push((a, b)),
            }
        }
        IntervalSet { pieces: out }
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut all = self.pieces.clone();
        all.extend_from_slice(&other.pieces);
        IntervalSet::normalize(all)
    }

    pub fn insert(&mut self, i: &Interval) {
        *self = self.union(&IntervalSet::from_interval(i));
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for &(a, b) in &self.pieces {
            let mut cur = a;
            for &(c, d) in &other.pieces {
                if d <= cur || c >= b {
                    continue;
                }
                if c > cur {
                    out.push((cur, c));
                }
                cur = cur.max(d);
                if cur >= b {
                    break;
                }
            }
            if cur < b {
                out.push((cur, b));
            }
        }
        IntervalSet::normalize(out)
    }

    pub fn intersection(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for &(a, b) in &self.pieces {
            for &(c, d) in &other.pieces {
                let lo = a.max(c);
                let hi = b.min(d);
                if hi > lo {
                    out.push((lo, hi));
                }
            }
        }
        IntervalSet::normalize(out)
    }

    pub fn overlap_with(&self, i: &Interval) -> Rat {
        self.intersection(&IntervalSet::from_interval(i)).measure()
    }

    pub fn is_disjoint(&self, other: &IntervalSet) -> bool {
        self.intersection(other).is_empty()
    }

    pub fn is_subset_of(&self, i: &Interval) -> bool {
        self.pieces
            .iter()
            .all(|&(a, b)| i.left() <= a && b <= i.right())
    }
}

/// Extended real exponent in `[1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Finite(Rat),
    Infinite(InfinityTag),
}

/// Serialized as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InfinityTag {
    #[serde(rename = "inf")]
    Inf,
}

const EXPONENT_DEN: i64 = 1 << 10;

impl Exponent {
    pub const INFINITY: Exponent = Exponent::Infinite(InfinityTag::Inf);

    pub fn int(p: i64) -> Self {
        Exponent::Finite(Rat::from_integer(p))
    }

    pub fn ratio(n: i64, d: i64) -> Self {
        Exponent::Finite(Rat::new(n, d))
    }

    /// Rational approximation of a float exponent, `f64::INFINITY` maps to ∞.
    /// Nearest exponent with denominator at most 1024, which keeps exact
    /// tuple arithmetic far from `i64` overflow.
    pub fn from_f64(p: f64) -> Self {
        if p.is_infinite() {
            Exponent::INFINITY
        } else {
            Exponent::Finite(rat_from_f64(p, EXPONENT_DEN))
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Exponent::Finite(_))
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Exponent::Finite(r) => to_f64(*r),
            Exponent::Infinite(_) => f64::INFINITY,
        }
    }

    /// `1/p`, zero for `p = ∞`.
    pub fn reciprocal(&self) -> Rat {
        match self {
            Exponent::Finite(r) => r.recip(),
            Exponent::Infinite(_) => Rat::zero(),
        }
    }

    /// `1 / min(p, 2)`.
    fn capped_reciprocal(&self) -> Rat {
        let half = Rat::new(1, 2);
        self.reciprocal().max(half)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(r) => write!(f, "{r}"),
            Exponent::Infinite(_) => write!(f, "inf"),
        }
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Exponent {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Exponent::Finite(a), Exponent::Finite(b)) => a.cmp(b),
            (Exponent::Finite(_), Exponent::Infinite(_)) => Ordering::Less,
            (Exponent::Infinite(_), Exponent::Finite(_)) => Ordering::Greater,
            _ => Ordering::Equal,
        }
    }
}

/// Exponent tuple `(p1, p2, p3)` of a sparse form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExponentTuple(pub [Exponent; 3]);

impl ExponentTuple {
    pub fn new(p1: Exponent, p2: Exponent, p3: Exponent) -> Self {
        ExponentTuple([p1, p2, p3])
    }

    pub fn uniform(p: Exponent) -> Self {
        ExponentTuple([p; 3])
    }

    pub fn from_f64(p: [f64; 3]) -> Self {
        ExponentTuple(p.map(Exponent::from_f64))
    }

    pub fn get(&self, j: usize) -> Exponent {
        self.0[j]
    }

    pub fn to_f64(&self) -> [f64; 3] {
        self.0.map(|p| p.to_f64())
    }

    /// `2 - Σ 1/min(p_j, 2)`, exact.
    pub fn epsilon(&self) -> Rat {
        let sum = self
            .0
            .iter()
            .fold(Rat::zero(), |acc, p| acc + p.capped_reciprocal());
        Rat::from_integer(2) - sum
    }

    /// Admissible: `1 <= p_j < ∞` and `ε >= 0`. Open: `1 < p_j < ∞` and `ε > 0`.
    pub fn is_admissible(&self, open: bool) -> bool {
        let one = Rat::one();
        let eps = self.epsilon();
        self.0.iter().all(|p| match p {
            Exponent::Finite(r) => {
                if open {
                    *r > one
                } else {
                    *r >= one
                }
            }
            Exponent::Infinite(_) => false,
        }) && if open {
            eps.is_positive()
        } else {
            !eps.is_negative()
        }
    }

    /// An open admissible tuple `p` with `p_j <= self_j` and `max p_j < 2`.
    pub fn reduce_below_two(&self) -> Result<Self> {
        if !self.is_admissible(true) {
            return Err(Error::Precondition(format!(
                "tuple {self} is not open admissible"
            )));
        }
        let two = Rat::from_integer(2);
        let mut delta = Rat::new(1, 8);
        for _ in 0..40 {
            let cand = ExponentTuple(self.0.map(|p| match p {
                Exponent::Finite(r) if r < two => Exponent::Finite(r),
                _ => Exponent::Finite(two - delta),
            }));
            if cand.is_admissible(true) {
                return Ok(cand);
            }
            delta /= Rat::from_integer(2);
        }
        Err(Error::Infeasible(format!(
            "no open admissible tuple below 2 under {self}"
        )))
    }
}

impl fmt::Display for ExponentTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Exponents `(q1, q2, q3)` in `(1, ∞]` with reciprocals summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[Exponent; 3]", into = "[Exponent; 3]")]
pub struct HolderTuple([Exponent; 3]);

impl HolderTuple {
    pub fn new(q: [Exponent; 3]) -> Result<Self> {
        let one = Rat::one();
        for e in &q {
            if let Exponent::Finite(r) = e {
                if *r <= one {
                    return Err(Error::InvalidArgument(format!(
                        "Hölder exponent must exceed 1, got {r}"
                    )));
                }
            }
        }
        let sum = q.iter().fold(Rat::zero(), |acc, e| acc + e.reciprocal());
        if sum != one {
            return Err(Error::InvalidArgument(format!(
                "Hölder reciprocals sum to {sum}, expected 1"
            )));
        }
        Ok(HolderTuple(q))
    }

    pub fn get(&self, j: usize) -> Exponent {
        self.0[j]
    }

    pub fn exponents(&self) -> [Exponent; 3] {
        self.0
    }

    pub fn to_f64(&self) -> [f64; 3] {
        self.0.map(|q| q.to_f64())
    }
}

impl TryFrom<[Exponent; 3]> for HolderTuple {
    type Error = Error;
    fn try_from(q: [Exponent; 3]) -> Result<Self> {
        HolderTuple::new(q)
    }
}

impl From<HolderTuple> for [Exponent; 3] {
    fn from(h: HolderTuple) -> Self {
        h.0
    }
}
