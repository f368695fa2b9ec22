//! Stopping intervals, the iterated sparse construction, sparseness
//! certification and positive sparse forms.

use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    smallest_scale_at_least, to_f64, DyadicInterval, Exponent, ExponentTuple, Interval,
    IntervalSet, Rat,
};
use crate::signal::{check_p, GridSpec, PowerPrefix, SampledFunction};

/// Packing bound of a single stopping family, as a fraction of `|Q|`.
pub const FAMILY_PACKING: f64 = 1.0 / 6.0;
/// Packing bound of the merged family.
pub const MERGED_PACKING: f64 = 0.5;
const MAX_DOUBLINGS: u32 = 12;

/// `C = 36^{1/p}`: the uncentered weak (1,1) bound applied to `|f|^p`
/// supported in `3Q` gives `Σ|I| <= 6|Q| / C^p = |Q|/6`.
pub fn default_constant(p: f64) -> f64 {
    36f64.powf(1.0 / p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingFamily {
    pub parent: DyadicInterval,
    pub members: Vec<DyadicInterval>,
    pub constant: f64,
    pub threshold: f64,
    pub packing_ratio: f64,
}

fn grid_of_triple(q: &DyadicInterval, level: u32) -> Result<GridSpec> {
    if q.scale < -(level as i32) {
        return Err(Error::Precondition(format!(
            "interval {q} is finer than the sample grid"
        )));
    }
    Ok(GridSpec::covering(&q.interval().triple(), level))
}

/// Maximal dyadic subintervals of `q` on which every cell has `M_p f > threshold`.
fn select_members(prefix: &PowerPrefix, p: f64, q: &DyadicInterval, threshold: f64) -> Vec<DyadicInterval> {
    let grid = *prefix.grid();
    let above = prefix.superlevel_cells(threshold.powf(p));
    let mut count = vec![0u32; above.len() + 1];
    for (k, &a) in above.iter().enumerate() {
        count[k + 1] = count[k] + a as u32;
    }
    let exceeds_on = |a: i64, b: i64| {
        let (a, b) = ((a - grid.start) as usize, (b - grid.start) as usize);
        (count[b] - count[a]) as usize == b - a
    };
    let min_scale = -(grid.level as i32);
    let mut members = Vec::new();
    let mut stack = vec![*q];
    while let Some(i) = stack.pop() {
        let (a, b) = cell_range(&grid, &i.interval());
        if exceeds_on(a, b) {
            members.push(i);
        } else if i.scale > min_scale {
            stack.extend(i.children());
        }
    }
    members.sort_by_key(|x| x.left());
    members
}

fn cell_range(grid: &GridSpec, i: &Interval) -> (i64, i64) {
    (
        grid.position(i.left()).to_integer(),
        grid.position(i.right()).to_integer(),
    )
}

fn check_support(f: &SampledFunction, q: &DyadicInterval) -> Result<()> {
    if let Some(hull) = f.support_hull() {
        if !q.interval().triple().contains_interval(&hull) {
            return Err(Error::Precondition(format!(
                "support {hull} is not inside 3Q = {}",
                q.interval().triple()
            )));
        }
    }
    Ok(())
}

/// The `p`-stopping intervals of `f` on `Q` with threshold `C ⟨f⟩_{3Q,p}`.
pub fn stopping_intervals(
    f: &SampledFunction,
    p: f64,
    q: &DyadicInterval,
    c: f64,
) -> Result<StoppingFamily> {
    check_p(p)?;
    check_support(f, q)?;
    let local = f.embed(grid_of_triple(q, f.grid().level)?)?;
    let prefix = PowerPrefix::new(&local, p);
    family_from_profile(&prefix, p, q, c)
}

fn family_from_profile(prefix: &PowerPrefix, p: f64, q: &DyadicInterval, c: f64) -> Result<StoppingFamily> {
    let average = prefix.average(&q.interval().triple()).max(0.0).powf(1.0 / p);
    let threshold = c * average;
    let members = if average == 0.0 {
        Vec::new()
    } else {
        select_members(prefix, p, q, threshold)
    };
    let total: Rat = members.iter().map(|i| i.length()).sum();
    let packing_ratio = to_f64(total / q.length());
    if packing_ratio > FAMILY_PACKING {
        return Err(Error::Packing {
            ratio: packing_ratio,
            bound: FAMILY_PACKING,
        });
    }
    Ok(StoppingFamily {
        parent: *q,
        members,
        constant: c,
        threshold,
        packing_ratio,
    })
}

/// As [`stopping_intervals`] starting from `36^{1/p}` and doubling `C` on packing failure.
pub fn stopping_intervals_auto(f: &SampledFunction, p: f64, q: &DyadicInterval) -> Result<StoppingFamily> {
    check_p(p)?;
    check_support(f, q)?;
    let local = f.embed(grid_of_triple(q, f.grid().level)?)?;
    auto_family(&PowerPrefix::new(&local, p), p, q)
}

fn auto_family(prefix: &PowerPrefix, p: f64, q: &DyadicInterval) -> Result<StoppingFamily> {
    let mut c = default_constant(p);
    let mut last = None;
    for _ in 0..=MAX_DOUBLINGS {
        match family_from_profile(prefix, p, q, c) {
            Ok(family) => return Ok(family),
            Err(e @ Error::Packing { .. }) => {
                last = Some(e);
                c *= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Maximal elements of the union of the families; all must share the parent.
pub fn merge_stopping(families: &[StoppingFamily]) -> Result<Vec<DyadicInterval>> {
    let Some(first) = families.first() else {
        return Ok(Vec::new());
    };
    if families.iter().any(|f| f.parent != first.parent) {
        return Err(Error::Precondition("stopping families have different parents".into()));
    }
    let mut all: Vec<DyadicInterval> = families.iter().flat_map(|f| f.members.iter().copied()).collect();
    all.sort_by(|a, b| b.scale.cmp(&a.scale).then(a.left().cmp(&b.left())));
    all.dedup();
    let mut kept: Vec<DyadicInterval> = Vec::new();
    for i in all {
        if !kept.iter().any(|k| k.contains(&i)) {
            kept.push(i);
        }
    }
    kept.sort_by_key(|a| a.left());
    Ok(kept)
}

/// Intervals with pairwise disjoint major subsets `E_I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCollection {
    pub intervals: Vec<Interval>,
    pub major_subsets: Vec<IntervalSet>,
    pub eta: f64,
}

impl SparseCollection {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Smallest `|E_I| / |I|` and the interval attaining it.
    pub fn worst_fraction(&self) -> Option<(f64, Interval)> {
        self.intervals
            .iter()
            .zip(&self.major_subsets)
            .map(|(i, e)| (to_f64(e.measure() / i.length()), *i))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
    }

    /// Check `E_I ⊆ I`, pairwise disjointness and `|E_I| >= η|I|`, exactly.
    pub fn verify(&self) -> Result<()> {
        if self.intervals.len() != self.major_subsets.len() {
            return Err(Error::InvalidArgument("one major subset per interval required".into()));
        }
        for (i, e) in self.intervals.iter().zip(&self.major_subsets) {
            if !e.is_subset_of(i) {
                return Err(Error::NotSparse {
                    eta: self.eta,
                    interval: format!("{i} (E_I escapes I)"),
                    fraction: to_f64(e.measure() / i.length()),
                });
            }
        }
        let mut pieces: Vec<(Rat, Rat, usize)> = self
            .major_subsets
            .iter()
            .enumerate()
            .flat_map(|(k, e)| e.pieces().iter().map(move |&(a, b)| (a, b, k)))
            .collect();
        pieces.sort();
        for w in pieces.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::NotSparse {
                    eta: self.eta,
                    interval: format!(
                        "{} (E_I overlaps that of {})",
                        self.intervals[w[1].2], self.intervals[w[0].2]
                    ),
                    fraction: 0.0,
                });
            }
        }
        if let Some((fraction, interval)) = self.worst_fraction() {
            if fraction < self.eta * (1.0 - 1e-12) {
                return Err(Error::NotSparse {
                    eta: self.eta,
                    interval: interval.to_string(),
                    fraction,
                });
            }
        }
        Ok(())
    }
}

fn is_laminar(intervals: &[Interval]) -> bool {
    for (k, a) in intervals.iter().enumerate() {
        for b in &intervals[k + 1..] {
            if a.intersects(b) && !a.contains_interval(b) && !b.contains_interval(a) {
                return false;
            }
        }
    }
    true
}

/// `E_I = I \ ∪ children`, children being the maximal proper subintervals in the list.
/// Repeated intervals are chained, so later copies count as children of earlier ones.
fn child_subtraction(intervals: &[Interval]) -> Vec<IntervalSet> {
    let n = intervals.len();
    // Order by decreasing length so parents precede children.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        intervals[b]
            .length()
            .cmp(&intervals[a].length())
            .then(intervals[a].left().cmp(&intervals[b].left()))
            .then(a.cmp(&b))
    });
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for (pos, &k) in order.iter().enumerate() {
        // The smallest earlier interval containing this one.
        parent[k] = order[..pos]
            .iter()
            .rev()
            .copied()
            .find(|&c| intervals[c].contains_interval(&intervals[k]));
    }
    let mut sets: Vec<IntervalSet> = intervals.iter().map(IntervalSet::from_interval).collect();
    for k in 0..n {
        if let Some(par) = parent[k] {
            sets[par] = sets[par].difference(&IntervalSet::from_interval(&intervals[k]));
        }
    }
    sets
}

/// Smallest intervals first, each taking what earlier ones left free.
fn greedy_disjointification(intervals: &[Interval]) -> Vec<IntervalSet> {
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| intervals[a].length().cmp(&intervals[b].length()).then(a.cmp(&b)));
    let mut used = IntervalSet::empty();
    let mut sets = vec![IntervalSet::empty(); intervals.len()];
    for k in order {
        let e = IntervalSet::from_interval(&intervals[k]).difference(&used);
        used = used.union(&e);
        sets[k] = e;
    }
    sets
}

/// Produce disjoint major subsets, by child subtraction for laminar families
/// and greedy disjointification otherwise.
pub fn certify_sparseness(intervals: &[Interval], eta: f64) -> Result<SparseCollection> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1], got {eta}")));
    }
    let major_subsets = if is_laminar(intervals) {
        child_subtraction(intervals)
    } else {
        greedy_disjointification(intervals)
    };
    let collection = SparseCollection {
        intervals: intervals.to_vec(),
        major_subsets,
        eta,
    };
    collection.verify()?;
    Ok(collection)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFormSpec {
    pub p: ExponentTuple,
    pub collection: SparseCollection,
}

impl SparseFormSpec {
    pub fn new(p: ExponentTuple, collection: SparseCollection) -> Result<Self> {
        if p.0.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument(format!("sparse form exponents must be finite: {p}")));
        }
        Ok(SparseFormSpec { p, collection })
    }
}

/// `Σ_{I ∈ S} |I| Π_j ⟨f_j⟩_{I,p_j}`.
pub fn psf_intervals(intervals: &[Interval], p: &ExponentTuple, f: [&SampledFunction; 3]) -> Result<f64> {
    let mut prefixes = Vec::with_capacity(3);
    for j in 0..3 {
        let pj = match p.get(j) {
            Exponent::Finite(_) => p.get(j).to_f64(),
            Exponent::Infinite(_) => {
                return Err(Error::InvalidArgument("sparse form exponents must be finite".into()))
            }
        };
        if pj < 1.0 {
            return Err(Error::InvalidArgument(format!("exponent {pj} below 1")));
        }
        prefixes.push((PowerPrefix::new(f[j], pj), pj));
    }
    Ok(intervals
        .iter()
        .map(|i| {
            i.length_f64()
                * prefixes
                    .iter()
                    .map(|(pp, pj)| pp.average(i).max(0.0).powf(1.0 / pj))
                    .product::<f64>()
        })
        .sum())
}

pub fn psf_eval(spec: &SparseFormSpec, f: [&SampledFunction; 3]) -> Result<f64> {
    psf_intervals(&spec.collection.intervals, &spec.p, f)
}

/// One interval of the construction trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub interval: DyadicInterval,
    pub generation: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// `Σ_{children} |I| / |Q|`.
    pub child_ratio: f64,
    /// Per-function packing ratios of the stopping families.
    pub family_ratios: [f64; 3],
    /// Final threshold constants after any doubling.
    pub constants: [f64; 3],
}

/// Output of the iterated stopping-time construction on one shifted grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseConstruction {
    pub shift: u8,
    pub p: ExponentTuple,
    pub root: DyadicInterval,
    pub nodes: Vec<TraceNode>,
}

impl SparseConstruction {
    pub fn intervals(&self) -> Vec<Interval> {
        self.nodes.iter().map(|n| n.interval.interval()).collect()
    }

    pub fn tripled_intervals(&self) -> Vec<Interval> {
        self.nodes.iter().map(|n| n.interval.interval().triple()).collect()
    }

    pub fn generations(&self) -> usize {
        self.nodes.iter().map(|n| n.generation + 1).max().unwrap_or(0)
    }

    /// Largest threshold constant used for function `j`.
    pub fn max_constant(&self, j: usize) -> f64 {
        self.nodes.iter().map(|n| n.constants[j]).fold(0.0, f64::max)
    }

    pub fn max_child_ratio(&self) -> f64 {
        self.nodes.iter().map(|n| n.child_ratio).fold(0.0, f64::max)
    }

    fn major_subsets(&self) -> Vec<IntervalSet> {
        self.nodes
            .iter()
            .map(|n| {
                let children = n
                    .children
                    .iter()
                    .fold(IntervalSet::empty(), |acc, &c| {
                        acc.union(&IntervalSet::from_interval(&self.nodes[c].interval.interval()))
                    });
                IntervalSet::from_interval(&n.interval.interval()).difference(&children)
            })
            .collect()
    }

    /// The collection with `E_I = I \ ∪ children`, verified `1/2`-sparse.
    pub fn collection(&self) -> Result<SparseCollection> {
        let c = SparseCollection {
            intervals: self.intervals(),
            major_subsets: self.major_subsets(),
            eta: 0.5,
        };
        c.verify()?;
        Ok(c)
    }

    /// `{3Q}` with `E_{3Q} = E_Q`, verified `1/6`-sparse.
    pub fn tripled(&self) -> Result<SparseCollection> {
        let c = SparseCollection {
            intervals: self.tripled_intervals(),
            major_subsets: self.major_subsets(),
            eta: 1.0 / 6.0,
        };
        c.verify()?;
        Ok(c)
    }
}

fn joint_support(f: [&SampledFunction; 3]) -> Interval {
    f.iter()
        .filter_map(|g| g.support_hull())
        .reduce(|a, b| a.hull(&b))
        .unwrap_or_else(|| f[0].grid().domain())
}

/// The root interval: the smallest `Q ∈ D_shift` containing the joint support
/// hull, searched over six scales; otherwise the smallest `Q` with hull `⊆ 3Q`.
pub fn root_interval(hull: &Interval, shift: u8, level: u32) -> DyadicInterval {
    let k0 = smallest_scale_at_least(hull.length()).max(-(level as i32));
    for k in k0..k0 + 6 {
        let q = DyadicInterval::containing(hull.left(), k, shift);
        if q.interval().contains_interval(hull) {
            return q;
        }
    }
    DyadicInterval::containing(hull.center(), k0, shift)
}

/// The iterated sparse collection `S = ∪_ℓ S_ℓ(Q_0)` on the grid `D_shift`.
///
/// At each node `Q` the stopping families are computed for `f_j 1_{3Q}`.
pub fn build_sparse(f: [&SampledFunction; 3], p: &ExponentTuple, shift: u8) -> Result<SparseConstruction> {
    if shift > 2 {
        return Err(Error::InvalidArgument(format!("grid shift {shift} out of range")));
    }
    if !p.is_admissible(true) {
        return Err(Error::Precondition(format!("tuple {p} is not open admissible")));
    }
    if p.0.iter().any(|e| *e >= Exponent::int(2)) {
        return Err(Error::Precondition(format!(
            "tuple {p} has an entry >= 2; reduce it first"
        )));
    }
    let level = f[0].grid().level;
    if f.iter().any(|g| g.grid().level != level) {
        return Err(Error::InvalidArgument("functions must share a grid level".into()));
    }
    let pf = p.to_f64();
    let root = root_interval(&joint_support(f), shift, level);
    let mut nodes = vec![TraceNode {
        interval: root,
        generation: 0,
        parent: None,
        children: Vec::new(),
        child_ratio: 0.0,
        family_ratios: [0.0; 3],
        constants: [0.0; 3],
    }];
    let mut next = 0;
    while next < nodes.len() {
        let q = nodes[next].interval;
        let grid = grid_of_triple(&q, level)?;
        let mut families = Vec::with_capacity(3);
        for j in 0..3 {
            let local = f[j].embed(grid)?;
            let family = if local.is_zero() {
                StoppingFamily {
                    parent: q,
                    members: Vec::new(),
                    constant: default_constant(pf[j]),
                    threshold: 0.0,
                    packing_ratio: 0.0,
                }
            } else {
                auto_family(&PowerPrefix::new(&local, pf[j]), pf[j], &q)?
            };
            families.push(family);
        }
        let merged = merge_stopping(&families)?;
        let total: Rat = merged.iter().map(|i| i.length()).sum();
        let generation = nodes[next].generation;
        let node = &mut nodes[next];
        node.child_ratio = to_f64(total / q.length());
        node.family_ratios = [0, 1, 2].map(|j| families[j].packing_ratio);
        node.constants = [0, 1, 2].map(|j| families[j].constant);
        for child in merged {
            if child.scale >= q.scale {
                return Err(Error::Infeasible(format!(
                    "stopping interval {child} does not refine {q}"
                )));
            }
            let id = nodes.len();
            nodes[next].children.push(id);
            nodes.push(TraceNode {
                interval: child,
                generation: generation + 1,
                parent: Some(next),
                children: Vec::new(),
                child_ratio: 0.0,
                family_ratios: [0.0; 3],
                constants: [0.0; 3],
            });
        }
        next += 1;
    }
    Ok(SparseConstruction {
        shift,
        p: *p,
        root,
        nodes,
    })
}

/// The tripled collection `S̃ = {3Q : Q ∈ S_{j0}}` used for domination, with
/// `j0` maximizing `Σ_{Q ∈ S_j} |3Q| Π ⟨f⟩_{3Q,p}` over the three grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominatingCollection {
    pub shift: u8,
    pub form_exponents: ExponentTuple,
    pub construction: SparseConstruction,
    pub tripled: SparseCollection,
    pub psf: f64,
    pub per_grid_psf: [f64; 3],
}

/// Build the sparse collections on all three grids and keep the dominant one.
/// Tuples with an entry `>= 2` are first reduced below 2 for the construction;
/// the form itself is evaluated with `p`.
pub fn dominating_collection(f: [&SampledFunction; 3], p: &ExponentTuple) -> Result<DominatingCollection> {
    let build_p = if p.0.iter().all(|e| *e < Exponent::int(2)) {
        *p
    } else {
        p.reduce_below_two()?
    };
    let mut best: Option<(SparseConstruction, f64)> = None;
    let mut per_grid = [0.0; 3];
    for shift in 0..3u8 {
        let c = build_sparse(f, &build_p, shift)?;
        let value = psf_intervals(&c.tripled_intervals(), p, f)?;
        per_grid[shift as usize] = value;
        if best.as_ref().map(|(_, v)| value > *v).unwrap_or(true) {
            best = Some((c, value));
        }
    }
    let (construction, psf) = best.expect("three grids");
    let tripled = construction.tripled()?;
    Ok(DominatingCollection {
        shift: construction.shift,
        form_exponents: *p,
        construction,
        tripled,
        psf,
        per_grid_psf: per_grid,
    })
}

/// Result of comparing a bilinear operator against its sparse-form hypothesis
/// and the implied `L^{q1} × L^{q2} -> L^q` bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UptypeReport {
    pub q: f64,
    /// `‖T(f1, f2)‖_q` computed directly.
    pub norm: f64,
    /// Best dual pairing `|⟨T(f1,f2), f3⟩| / ‖f3‖_{q'}` over the trial family.
    pub dual_estimate: f64,
    /// `Π ‖f_j‖_{q_j}`.
    pub input_norms: f64,
    /// `dual_estimate / (K Π ‖f_j‖_{q_j})`, zero when both sides vanish.
    pub ratio: f64,
    /// Largest `|⟨T(f1,f2), f3⟩| / (K PSF_S̃(f1,f2,f3))` over the trial family.
    pub hypothesis_ratio: f64,
}

/// Duality estimate of `‖T(f1, f2)‖_q` against `K Π‖f_j‖_{q_j}`.
///
/// `t12` holds the samples of `T(f1, f2)`. Trial duals are the extremal
/// `|T|^{q-1} sgn(T)` followed by the supplied family.
pub fn uptype_bound_check(
    t12: &SampledFunction,
    f1: &SampledFunction,
    f2: &SampledFunction,
    q1: f64,
    q2: f64,
    p: &ExponentTuple,
    k: f64,
    trial_duals: &[SampledFunction],
) -> Result<UptypeReport> {
    let pf = p.to_f64();
    if !(pf[0] < q1 && pf[1] < q2) || !(q1.is_finite() || q2.is_finite()) {
        return Err(Error::Precondition(format!(
            "need p_j < q_j and a finite q_j, got p={p}, q=({q1}, {q2})"
        )));
    }
    let q = if q1.is_infinite() {
        q2
    } else if q2.is_infinite() {
        q1
    } else {
        q1 * q2 / (q1 + q2)
    };
    if q < 1.0 {
        return Err(Error::Precondition(format!(
            "duality estimate needs q >= 1, got {q}"
        )));
    }
    let norm = t12.lp_norm(Exponent::from_f64(q));
    let input_norms = f1.lp_norm(Exponent::from_f64(q1)) * f2.lp_norm(Exponent::from_f64(q2));
    let qd = if q == 1.0 { f64::INFINITY } else { q / (q - 1.0) };
    let extremal = t12.map(|v| {
        if v.is_zero() {
            Complex64::zero()
        } else {
            (v.conj() / v.norm()) * v.norm().powf(q - 1.0)
        }
    });
    let mut duals = vec![extremal];
    duals.extend(trial_duals.iter().cloned());
    let mut dual_estimate = 0.0f64;
    let mut hypothesis_ratio = 0.0f64;
    for f3 in &duals {
        let dn = f3.lp_norm(Exponent::from_f64(qd));
        if dn == 0.0 {
            continue;
        }
        let pairing = t12.mul(f3)?.integral().norm();
        dual_estimate = dual_estimate.max(pairing / dn);
        if pairing > 0.0 {
            let sparse = dominating_collection([f1, f2, f3], p)?;
            if sparse.psf > 0.0 {
                hypothesis_ratio = hypothesis_ratio.max(pairing / (k * sparse.psf));
            }
        }
    }
    let ratio = if input_norms > 0.0 {
        dual_estimate / (k * input_norms)
    } else {
        0.0
    };
    Ok(UptypeReport {
        q,
        norm,
        dual_estimate,
        input_norms,
        ratio,
        hypothesis_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{pow2, rat};
    use crate::signal::{random_bumps, FunctionPreset, MaximalMode, MaximalProfile};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(preset: FunctionPreset, domain: (i64, i64), level: u32) -> SampledFunction {
        preset.sample(GridSpec::covering(&Interval::int(domain.0, domain.1), level))
    }

    fn unit_indicator(level: u32) -> SampledFunction {
        sample(FunctionPreset::Indicator { a: 0.0, b: 1.0 }, (-1, 2), level)
    }

    fn spike(level: u32) -> SampledFunction {
        sample(
            FunctionPreset::Spike {
                center: 1.0 / 128.0,
                width: 1.0 / 64.0,
                height: 1024.0,
            },
            (-1, 2),
            level,
        )
    }

    #[test]
    fn stopping_examples() {
        let q = DyadicInterval::standard(0, 0);
        let f = unit_indicator(6);
        for p in [1.0, 1.5] {
            let fam = stopping_intervals(&f, p, &q, default_constant(p)).unwrap();
            assert!(fam.members.is_empty());
            // Threshold 36^{1/p} 3^{-1/p} exceeds sup M_p f = 1.
            assert!((fam.threshold - (12f64).powf(1.0 / p)).abs() < 1e-9);
        }
        let zero = SampledFunction::zeros(*f.grid());
        assert!(stopping_intervals(&zero, 1.5, &q, 6.0).unwrap().members.is_empty());

        let s = spike(8);
        let fam = stopping_intervals(&s, 1.5, &q, default_constant(1.5)).unwrap();
        assert!(!fam.members.is_empty());
        assert!(fam.packing_ratio <= 1.0 / 6.0);
        for m in &fam.members {
            assert!(m.interval().right() <= rat(1, 2), "member {m} far from the spike");
        }
        // Brute force: every member lies in the superlevel set, its parent does not.
        let local = s.embed(grid_of_triple(&q, 8).unwrap()).unwrap();
        let prof = MaximalProfile::new(&local, 1.5, MaximalMode::Full).unwrap();
        let grid = *prof.grid();
        for m in &fam.members {
            let (a, b) = cell_range(&grid, &m.interval());
            assert!((a..b).all(|g| prof.at_cell(g) > fam.threshold));
            if m.scale < q.scale {
                let (a, b) = cell_range(&grid, &m.parent().interval());
                assert!((a..b).any(|g| prof.at_cell(g) <= fam.threshold));
            }
        }
    }

    #[test]
    fn stopping_rejects_support_outside_triple() {
        let f = sample(FunctionPreset::Indicator { a: 3.0, b: 4.0 }, (-1, 5), 3);
        let q = DyadicInterval::standard(0, 0);
        assert!(matches!(
            stopping_intervals(&f, 1.5, &q, 6.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn small_constant_reports_packing() {
        let s = spike(8);
        let q = DyadicInterval::standard(0, 0);
        match stopping_intervals(&s, 1.5, &q, 1.0) {
            Err(Error::Packing { ratio, .. }) => assert!(ratio > 1.0 / 6.0),
            other => panic!("expected packing failure, got {other:?}"),
        }
        let auto = stopping_intervals_auto(&s, 1.5, &q).unwrap();
        assert!(auto.constant >= default_constant(1.5));
    }

    #[test]
    fn doubling_condition_holds_for_members() {
        let s = spike(8);
        let q = DyadicInterval::standard(0, 0);
        let fam = stopping_intervals(&s, 1.5, &q, default_constant(1.5)).unwrap();
        let local = s.embed(grid_of_triple(&q, 8).unwrap()).unwrap();
        let prof = MaximalProfile::new(&local, 1.5, MaximalMode::Full).unwrap();
        let bound = fam.constant * 18f64.powf(1.0 / 1.5) * 2.0 * fam.threshold / fam.constant;
        for m in &fam.members {
            assert!(prof.inf_on_triple(&m.interval()) <= bound);
        }
    }

    fn family(members: Vec<DyadicInterval>) -> StoppingFamily {
        StoppingFamily {
            parent: DyadicInterval::standard(0, 0),
            members,
            constant: 1.0,
            threshold: 1.0,
            packing_ratio: 0.0,
        }
    }

    /// Keep intervals not strictly inside another one of the union.
    fn brute_maximal(all: &[DyadicInterval]) -> Vec<DyadicInterval> {
        let mut out: Vec<DyadicInterval> = all
            .iter()
            .filter(|i| !all.iter().any(|j| j != *i && j.contains(i)))
            .copied()
            .collect();
        out.sort_by_key(|a| a.left());
        out.dedup();
        out
    }

    #[test]
    fn merge_examples() {
        assert!(merge_stopping(&[family(vec![]), family(vec![]), family(vec![])])
            .unwrap()
            .is_empty());
        let one = vec![DyadicInterval::standard(-3, 1), DyadicInterval::standard(-2, 3)];
        assert_eq!(merge_stopping(&[family(one.clone())]).unwrap(), one);
        let a = vec![DyadicInterval::standard(-2, 0), DyadicInterval::standard(-4, 9)];
        let b = vec![DyadicInterval::standard(-3, 0), DyadicInterval::standard(-3, 2)];
        let c = vec![DyadicInterval::standard(-1, 1), DyadicInterval::standard(-2, 0)];
        let merged = merge_stopping(&[family(a.clone()), family(b.clone()), family(c.clone())]).unwrap();
        let all: Vec<_> = a.into_iter().chain(b).chain(c).collect();
        assert_eq!(merged, brute_maximal(&all));
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn certification_examples() {
        let disjoint = [Interval::int(0, 1), Interval::int(2, 3), Interval::int(5, 9)];
        assert!(certify_sparseness(&disjoint, 1.0).is_ok());

        let chain: Vec<Interval> = (0..3)
            .map(|k| Interval::new(Rat::zero(), pow2(-k)).unwrap())
            .collect();
        let c = certify_sparseness(&chain, 0.5).unwrap();
        assert_eq!(c.major_subsets[0], IntervalSet::from_interval(&Interval::from_endpoints(rat(1, 2), Rat::from_integer(1)).unwrap()));
        assert_eq!(c.major_subsets[1].measure(), rat(1, 4));

        let mut all = Vec::new();
        for k in 0..=3 {
            for n in 0..(1 << k) {
                all.push(DyadicInterval::standard(-k, n).interval());
            }
        }
        match certify_sparseness(&all, 0.5) {
            Err(Error::NotSparse { fraction, .. }) => assert_eq!(fraction, 0.0),
            other => panic!("expected failure, got {other:?}"),
        }
        // Total mass: Σ|E_I| <= 1 < η Σ|I| = 2 for any disjoint choice.
        let total: f64 = all.iter().map(|i| i.length_f64()).sum();
        assert!(0.5 * total > 1.0);
    }

    #[test]
    fn greedy_for_overlapping_families() {
        let overlapping = [
            Interval::int(0, 4),
            Interval::from_endpoints(Rat::from_integer(3), Rat::from_integer(6)).unwrap(),
        ];
        let c = certify_sparseness(&overlapping, 0.5).unwrap();
        assert!(c.verify().is_ok());
        assert!(c.major_subsets[0].is_disjoint(&c.major_subsets[1]));
    }

    #[test]
    fn psf_examples() {
        let grid = GridSpec::covering(&Interval::int(-1, 2), 5);
        let one = FunctionPreset::Indicator { a: 0.0, b: 1.0 }.sample(grid);
        let half = FunctionPreset::Indicator { a: 0.0, b: 0.5 }.sample(grid);
        let unit = Interval::int(0, 1);
        let ones = ExponentTuple::uniform(Exponent::int(1));
        let v = psf_intervals(&[unit], &ones, [&one, &one, &one]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let s = [unit, Interval::new(Rat::zero(), rat(1, 2)).unwrap()];
        let v = psf_intervals(&s, &ones, [&one, &one, &one]).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
        let p = ExponentTuple::new(Exponent::int(2), Exponent::int(1), Exponent::int(1));
        let v = psf_intervals(&[unit], &p, [&half, &one, &one]).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
    }

    fn p18() -> ExponentTuple {
        ExponentTuple::from_f64([1.8, 1.8, 1.8])
    }

    #[test]
    fn build_examples() {
        let f = unit_indicator(8);
        for shift in 0..3 {
            let c = build_sparse([&f, &f, &f], &p18(), shift).unwrap();
            assert_eq!(c.nodes.len(), 1, "shift {shift}");
            assert!(c.root.interval().triple().contains_interval(&Interval::int(0, 1)));
        }
        let zero = SampledFunction::zeros(*f.grid());
        let c = build_sparse([&zero, &zero, &zero], &p18(), 0).unwrap();
        assert_eq!(c.nodes.len(), 1);
        let v = psf_intervals(&c.tripled_intervals(), &p18(), [&zero, &zero, &zero]).unwrap();
        assert_eq!(v, 0.0);

        let s = spike(8);
        let c = build_sparse([&s, &f, &s], &p18(), 0).unwrap();
        assert!(c.generations() >= 2);
        assert!(c.max_child_ratio() <= 0.5);
        c.collection().unwrap();
        c.tripled().unwrap();
    }

    #[test]
    fn build_rejects_bad_tuples() {
        let f = unit_indicator(4);
        let two = ExponentTuple::uniform(Exponent::int(2));
        assert!(matches!(build_sparse([&f, &f, &f], &two, 0), Err(Error::Precondition(_))));
        let closed = ExponentTuple::uniform(Exponent::int(1));
        assert!(matches!(build_sparse([&f, &f, &f], &closed, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn json_roundtrip() {
        let s = spike(7);
        let f = unit_indicator(7);
        let c = build_sparse([&s, &f, &f], &p18(), 1).unwrap();
        let col = c.collection().unwrap();
        let json = serde_json::to_string(&col).unwrap();
        let back: SparseCollection = serde_json::from_str(&json).unwrap();
        assert_eq!(back, col);
        let trace = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<SparseConstruction>(&trace).unwrap(), c);
    }

    #[test]
    fn dominating_collection_is_tripled_and_sparse() {
        let s = spike(7);
        let f = unit_indicator(7);
        let p = ExponentTuple::uniform(Exponent::int(3));
        let d = dominating_collection([&s, &f, &f], &p).unwrap();
        assert!(d.tripled.verify().is_ok());
        assert!(d.psf >= d.per_grid_psf.iter().cloned().fold(0.0, f64::max) - 1e-12);
        assert!(d.construction.p.0.iter().all(|e| *e < Exponent::int(2)));
    }

    #[test]
    fn uptype_zero_inputs() {
        let grid = GridSpec::covering(&Interval::int(-1, 2), 4);
        let z = SampledFunction::zeros(grid);
        let r = uptype_bound_check(&z, &z, &z, 3.0, 3.0, &p18(), 1.0, &[]).unwrap();
        assert_eq!(r.norm, 0.0);
        assert_eq!(r.dual_estimate, 0.0);
        assert_eq!(r.ratio, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn psf_monotone_and_homogeneous(seed in any::<u64>(), c in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = GridSpec::covering(&Interval::int(-1, 2), 4);
            let f: Vec<SampledFunction> = (0..3).map(|_| random_bumps(&mut rng, 2, -0.5, 1.5).sample(grid)).collect();
            let s = [Interval::int(0, 1), Interval::int(-1, 2), Interval::new(rat(1, 4), rat(1, 2)).unwrap()];
            let p = ExponentTuple::from_f64([1.5, 1.25, 1.75]);
            let base = psf_intervals(&s, &p, [&f[0], &f[1], &f[2]]).unwrap();
            let scaled = f[1].scale(Complex64::new(c, 0.0));
            let v = psf_intervals(&s, &p, [&f[0], &scaled, &f[2]]).unwrap();
            prop_assert!((v - c * base).abs() <= 1e-10 * v.max(1e-12));
            let bigger = f[2].add(&f[2].abs()).unwrap().abs();
            let w = psf_intervals(&s, &p, [&f[0], &f[1], &bigger]).unwrap();
            prop_assert!(w >= base * (1.0 - 1e-12));
        }

        #[test]
        fn construction_is_half_sparse(seed in any::<u64>(), shift in 0u8..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = GridSpec::covering(&Interval::int(-1, 2), 6);
            let f: Vec<SampledFunction> = (0..3)
                .map(|_| {
                    let spike = FunctionPreset::Spike { center: rng.gen_range(0.0..1.0), width: 1.0 / 96.0, height: 64.0 };
                    FunctionPreset::Sum { terms: vec![spike, random_bumps(&mut rng, 2, -0.5, 1.5)] }.sample(grid)
                })
                .collect();
            let p = ExponentTuple::from_f64([1.5, 1.75, 1.5]);
            let c = build_sparse([&f[0], &f[1], &f[2]], &p, shift).unwrap();
            prop_assert!(c.max_child_ratio() <= 0.5);
            prop_assert!(c.collection().is_ok());
            prop_assert!(c.tripled().is_ok());
            let intervals = c.intervals();
            prop_assert!(certify_sparseness(&intervals, 0.5).is_ok());
        }
    }
}
