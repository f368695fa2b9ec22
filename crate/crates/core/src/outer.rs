//! Sizes on tritile collections, superlevel outer measures through tree
//! covers, outer `L^p` norms, the outer Hölder check and the localized
//! embedding check.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{to_f64, DyadicInterval, Exponent, HolderTuple, Interval, Rat};
use crate::signal::{local_average, SampledFunction};
use crate::sparse::stopping_intervals_auto;
use crate::tiles::{
    enumerate_trees, good_indices, map_values, AnalysisGrid, Rank1Collection, TransformedSignal, Tree,
};

/// Largest collection accepted by the exact superlevel computation.
pub const EXACT_LIMIT: usize = 14;
/// Ratio of consecutive points of the layer-cake grid.
pub const LAMBDA_RATIO: f64 = 1.189_207_115_002_721; // 2^{1/4}
/// The layer-cake grid starts no lower than this fraction of the largest size.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// A function on the tritiles of a fixed collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TritileFunction {
    pub values: Vec<Complex64>,
}

impl TritileFunction {
    pub fn new(values: Vec<Complex64>) -> Self {
        TritileFunction { values }
    }

    pub fn from_real(values: &[f64]) -> Self {
        TritileFunction {
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        TritileFunction {
            values: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn abs(&self, i: usize) -> f64 {
        self.values[i].norm()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        TritileFunction {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Zero outside `keep`.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut out = TritileFunction::zeros(self.len());
        for &i in keep {
            out.values[i] = self.values[i];
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.norm() == 0.0)
    }
}

/// A maximal tree prepared for repeated size evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTree {
    pub tree: Tree,
    pub length: f64,
    /// `T \ T_j` for each `j`.
    pub lacunary: [Vec<usize>; 3],
}

/// A collection together with its candidate trees, sorted for greedy
/// selection: largest top first, then leftmost top, then lowest `ξ_T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterSpace {
    pub collection: Rank1Collection,
    pub trees: Vec<CandidateTree>,
}

fn lacunary_parts(tree: &Tree, collection: &Rank1Collection) -> [Vec<usize>; 3] {
    let split = tree.split(collection);
    [0, 1, 2].map(|j| {
        tree.members
            .iter()
            .copied()
            .filter(|k| !split[j].contains(k))
            .collect()
    })
}

impl OuterSpace {
    pub fn new(collection: &Rank1Collection) -> Self {
        let mut trees: Vec<CandidateTree> = enumerate_trees(collection)
            .into_iter()
            .map(|tree| CandidateTree {
                length: tree.top.length_f64(),
                lacunary: lacunary_parts(&tree, collection),
                tree,
            })
            .collect();
        trees.sort_by(|a, b| {
            b.tree
                .top
                .length()
                .cmp(&a.tree.top.length())
                .then(a.tree.top.left().cmp(&b.tree.top.left()))
                .then(a.tree.xi.cmp(&b.tree.xi))
        });
        OuterSpace {
            collection: collection.clone(),
            trees,
        }
    }

    pub fn len(&self) -> usize {
        self.collection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collection.is_empty()
    }

    fn check(&self, f: &TritileFunction, j: usize) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "function has {} values for {} tritiles",
                f.len(),
                self.len()
            )));
        }
        if j > 2 {
            return Err(Error::InvalidArgument(format!("size index {j} out of range")));
        }
        Ok(())
    }

    fn time_length(&self, k: usize) -> f64 {
        to_f64(self.collection.tritiles[k].time.length())
    }

    /// `s_j(F 1_{E^c})(T)` with `removed` the indicator of `E`.
    fn size_with(&self, moduli: &[f64], t: &CandidateTree, j: usize, removed: &[bool]) -> f64 {
        let square: f64 = t.lacunary[j]
            .iter()
            .filter(|&&k| !removed[k])
            .map(|&k| self.time_length(k) * moduli[k] * moduli[k])
            .sum();
        let sup = t
            .tree
            .members
            .iter()
            .filter(|&&k| !removed[k])
            .map(|&k| moduli[k])
            .fold(0.0, f64::max);
        (square / t.length).sqrt() + sup
    }

    /// `sup_T s_j(F 1_{E^c})(T)` over the candidate trees.
    fn max_size_with(&self, moduli: &[f64], j: usize, removed: &[bool]) -> f64 {
        self.trees
            .iter()
            .map(|t| self.size_with(moduli, t, j, removed))
            .fold(0.0, f64::max)
    }

    pub fn max_size(&self, f: &TritileFunction, j: usize) -> Result<f64> {
        self.check(f, j)?;
        Ok(self.max_size_with(&f.moduli(), j, &vec![false; self.len()]))
    }
}

/// `s_j(F)(T) = (|I_T|^{-1} Σ_{T \ T_j} |I_P| |F(P)|^2)^{1/2} + sup_T |F(P)|`.
pub fn size_eval(collection: &Rank1Collection, f: &TritileFunction, tree: &Tree, j: usize) -> f64 {
    let lac = lacunary_parts(tree, collection);
    let len = tree.top.length_f64();
    let square: f64 = lac[j]
        .iter()
        .map(|&k| to_f64(collection.tritiles[k].time.length()) * f.values[k].norm_sqr())
        .sum();
    let sup = tree.members.iter().map(|&k| f.abs(k)).fold(0.0, f64::max);
    (square / len).sqrt() + sup
}

/// `s^1(F)(T) = |I_T|^{-1} Σ_T |I_P| |F(P)|`.
pub fn size_s1(collection: &Rank1Collection, f: &TritileFunction, tree: &Tree) -> f64 {
    tree.members
        .iter()
        .map(|&k| to_f64(collection.tritiles[k].time.length()) * f.abs(k))
        .sum::<f64>()
        / tree.top.length_f64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMode {
    Greedy,
    Exact,
}

/// Trees picked by the greedy selection at one `λ` and their total `Σ |I_T|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyCover {
    pub cost: f64,
    pub selected: Vec<usize>,
}

/// A right-continuous nonincreasing step function `λ -> μ̂(λ)`, stored as
/// its left endpoints. The last point has value `0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperlevelProfile {
    pub points: Vec<(f64, f64)>,
}

impl SuperlevelProfile {
    pub fn at(&self, lambda: f64) -> f64 {
        match self.points.iter().rposition(|&(l, _)| l <= lambda) {
            Some(i) => self.points[i].1,
            None => self.points.first().map(|p| p.1).unwrap_or(0.0),
        }
    }

    /// `∫_0^∞ p λ^{p-1} μ̂(λ) dλ`, exact for the step function.
    pub fn layer_cake(&self, p: f64) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].1 * (w[1].0.powf(p) - w[0].0.powf(p)))
            .sum()
    }

    /// Lower and upper Riemann sums of the layer cake when only the values
    /// at the stored points are known and `μ̂` may step anywhere between them.
    pub fn layer_cake_bracket(&self, p: f64) -> (f64, f64) {
        self.points.windows(2).fold((0.0, 0.0), |(lo, hi), w| {
            let d = w[1].0.powf(p) - w[0].0.powf(p);
            (lo + w[1].1 * d, hi + w[0].1 * d)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,mu\n");
        for (l, m) in &self.points {
            let _ = writeln!(out, "{l},{m}");
        }
        out
    }
}

fn mask_of(members: &[usize]) -> u32 {
    members.iter().fold(0, |m, &k| m | 1 << k)
}

fn removed_from_mask(mask: u32, n: usize) -> Vec<bool> {
    (0..n).map(|k| mask >> k & 1 == 1).collect()
}

impl OuterSpace {
    /// Greedy tree selection at `λ`. Sizes only decrease as tritiles are
    /// removed, so one pass over the sorted trees realizes the selection rule.
    pub fn greedy_cover(&self, f: &TritileFunction, j: usize, lambda: f64) -> Result<GreedyCover> {
        self.check(f, j)?;
        let moduli = f.moduli();
        let mut removed = vec![false; self.len()];
        let mut cover = GreedyCover {
            cost: 0.0,
            selected: Vec::new(),
        };
        for (i, t) in self.trees.iter().enumerate() {
            if self.size_with(&moduli, t, j, &removed) > lambda {
                cover.cost += t.length;
                cover.selected.push(i);
                for &k in &t.tree.members {
                    removed[k] = true;
                }
            }
        }
        Ok(cover)
    }

    /// Whether removing the members of `selected` brings every size to `λ` or below.
    pub fn cover_is_feasible(&self, f: &TritileFunction, j: usize, lambda: f64, selected: &[usize]) -> Result<bool> {
        self.check(f, j)?;
        let mut removed = vec![false; self.len()];
        for &i in selected {
            for &k in &self.trees[i].tree.members {
                removed[k] = true;
            }
        }
        Ok(self.max_size_with(&f.moduli(), j, &removed) <= lambda)
    }

    /// The exact superlevel profile: every removal set `E` is scored by its
    /// residual maximal size and by its cheapest tree cover.
    pub fn exact_profile(&self, f: &TritileFunction, j: usize) -> Result<SuperlevelProfile> {
        self.check(f, j)?;
        let n = self.len();
        if n > EXACT_LIMIT {
            return Err(Error::TooLarge {
                size: n,
                limit: EXACT_LIMIT,
            });
        }
        let moduli = f.moduli();
        let full = 1u32 << n;
        let residual: Vec<f64> = (0..full)
            .into_par_iter()
            .map(|mask| self.max_size_with(&moduli, j, &removed_from_mask(mask, n)))
            .collect();
        let mut by_bit: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for t in &self.trees {
            let m = mask_of(&t.tree.members);
            for &k in &t.tree.members {
                by_bit[k].push((m, t.length));
            }
        }
        let mut cost = vec![0.0f64; full as usize];
        for mask in 1..full {
            let b = mask.trailing_zeros() as usize;
            cost[mask as usize] = by_bit[b]
                .iter()
                .map(|&(m, len)| len + cost[(mask & !m) as usize])
                .fold(f64::INFINITY, f64::min);
        }
        let mut order: Vec<u32> = (0..full).collect();
        order.sort_by(|&a, &b| residual[a as usize].total_cmp(&residual[b as usize]));
        let mut points: Vec<(f64, f64)> = Vec::new();
        let mut best = f64::INFINITY;
        for mask in order {
            let (level, c) = (residual[mask as usize], cost[mask as usize]);
            best = best.min(c);
            match points.last_mut() {
                Some(last) if last.0 == level => last.1 = best,
                _ => points.push((level, best)),
            }
        }
        points.dedup_by(|b, a| a.1 == b.1);
        Ok(SuperlevelProfile { points })
    }

    pub fn superlevel_measure(&self, f: &TritileFunction, j: usize, lambda: f64, mode: OuterMode) -> Result<f64> {
        match mode {
            OuterMode::Greedy => Ok(self.greedy_cover(f, j, lambda)?.cost),
            OuterMode::Exact => Ok(self.exact_profile(f, j)?.at(lambda)),
        }
    }

    /// The layer-cake grid: `0`, then `λ_0 r^i` below the largest size, then
    /// the largest size. `λ_0` is half the smallest nonzero `|F(P)|`, raised
    /// to `LAMBDA_FLOOR` times the largest size if needed.
    pub fn lambda_grid(&self, f: &TritileFunction, j: usize) -> Result<Vec<f64>> {
        let top = self.max_size(f, j)?;
        if top == 0.0 {
            return Ok(vec![0.0]);
        }
        let smallest = f
            .moduli()
            .into_iter()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let mut lambda = (smallest.max(LAMBDA_FLOOR * top)) / 2.0;
        let mut grid = vec![0.0];
        while lambda < top {
            grid.push(lambda);
            lambda *= LAMBDA_RATIO;
        }
        grid.push(top);
        Ok(grid)
    }

    /// Greedy values on the layer-cake grid, made nonincreasing by a running
    /// minimum (a cover feasible at `λ' <= λ` is feasible at `λ`).
    pub fn greedy_profile(&self, f: &TritileFunction, j: usize) -> Result<SuperlevelProfile> {
        let grid = self.lambda_grid(f, j)?;
        let values: Vec<f64> = grid
            .par_iter()
            .map(|&l| self.greedy_cover(f, j, l).map(|c| c.cost))
            .collect::<Result<_>>()?;
        let mut best = f64::INFINITY;
        let points = grid
            .into_iter()
            .zip(values)
            .map(|(l, v)| {
                best = best.min(v);
                (l, best)
            })
            .collect();
        Ok(SuperlevelProfile { points })
    }

    pub fn profile(&self, f: &TritileFunction, j: usize, mode: OuterMode) -> Result<SuperlevelProfile> {
        match mode {
            OuterMode::Greedy => self.greedy_profile(f, j),
            OuterMode::Exact => self.exact_profile(f, j),
        }
    }

    /// `‖F‖_{L^p(s_j)}`; `p = ∞` is the largest size. Greedy mode takes the
    /// midpoint of the two Riemann sums over the layer-cake grid.
    pub fn outer_lp_norm(&self, f: &TritileFunction, j: usize, p: Exponent, mode: OuterMode) -> Result<f64> {
        match p {
            Exponent::Infinite(_) => self.max_size(f, j),
            Exponent::Finite(_) => {
                let p = p.to_f64();
                if p <= 0.0 {
                    return Err(Error::InvalidArgument(format!("outer exponent must be positive, got {p}")));
                }
                if f.is_zero() {
                    return Ok(0.0);
                }
                let integral = match mode {
                    OuterMode::Exact => self.exact_profile(f, j)?.layer_cake(p),
                    OuterMode::Greedy => {
                        let (lo, hi) = self.greedy_profile(f, j)?.layer_cake_bracket(p);
                        (lo + hi) / 2.0
                    }
                };
                Ok(integral.powf(1.0 / p))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub lhs: f64,
    pub norms: [f64; 3],
    pub ratio: f64,
}

/// `Σ_P |I_P| Π_j |G_j(P)|` against `Π_j ‖G_j‖_{L^{q_j}(s_j)}`.
pub fn outer_holder_check(
    space: &OuterSpace,
    g: [&TritileFunction; 3],
    q: &HolderTuple,
    mode: OuterMode,
) -> Result<HolderReport> {
    for (j, gj) in g.iter().enumerate() {
        space.check(gj, j)?;
    }
    let lhs: f64 = (0..space.len())
        .map(|k| space.time_length(k) * g.iter().map(|gj| gj.abs(k)).product::<f64>())
        .sum();
    let mut norms = [0.0; 3];
    for j in 0..3 {
        norms[j] = space.outer_lp_norm(g[j], j, q.get(j), mode)?;
    }
    let denom: f64 = norms.iter().product();
    let ratio = if lhs == 0.0 {
        0.0
    } else if denom == 0.0 {
        return Err(Error::Falsified(format!(
            "tritile sum {lhs} is positive while an outer norm vanishes"
        )));
    } else {
        lhs / denom
    };
    Ok(HolderReport { lhs, norms, ratio })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub norm: f64,
    pub average: f64,
    pub ratio: f64,
    pub stopping: Vec<Interval>,
    pub good: usize,
}

/// `‖F_j(f 1_{3Q}) 1_{G_{f,p,Q}}‖_{L^q(s_j)} / (|Q|^{1/q} ⟨f⟩_{3Q,p})` with the
/// greedy outer norm. `None` when `⟨f⟩_{3Q,p} = 0`.
pub fn embedding_check(
    f: &SampledFunction,
    q_interval: &DyadicInterval,
    p: f64,
    q: f64,
    collection: &Rank1Collection,
    j: usize,
) -> Result<Option<EmbeddingReport>> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::Precondition(format!("embedding needs 1 < p < 2, got {p}")));
    }
    if q <= p / (p - 1.0) {
        return Err(Error::Precondition(format!("embedding needs q > p', got q = {q}, p = {p}")));
    }
    let triple = q_interval.interval().triple();
    let local = f.restrict(&triple);
    let average = local_average(&local, &triple, p)?;
    if average == 0.0 {
        return Ok(None);
    }
    let family = stopping_intervals_auto(&local, p, q_interval)?;
    let stopping: Vec<Interval> = family.members.iter().map(|i| i.interval()).collect();
    let good = good_indices(collection, &stopping);
    let analysis = AnalysisGrid::for_inputs(&[&local], &collection.tritiles)?;
    let signal = TransformedSignal::new(&local, &analysis)?;
    let values = map_values(collection, &signal, j)?;
    let fun = TritileFunction::from_real(&values).restrict(&good);
    let space = OuterSpace::new(collection);
    let norm = space.outer_lp_norm(&fun, j, Exponent::from_f64(q), OuterMode::Greedy)?;
    let scale: Rat = q_interval.length();
    let ratio = norm / (to_f64(scale).powf(1.0 / q) * average);
    Ok(Some(EmbeddingReport {
        norm,
        average,
        ratio,
        stopping,
        good: good.len(),
    }))
}
