//! Numerical laboratory for sparse domination of modulation-invariant
//! trilinear forms of bilinear-Hilbert-transform type.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: exact dyadic and shifted-dyadic interval arithmetic, exponent tuples.
//! * [`signal`]: sampled functions, local averages and maximal functions.
//! * [`sparse`]: stopping intervals, the iterated sparse construction and sparse forms.
//! * [`tiles`]: tritiles, rank-1 collections, wave packets and tritile forms.
//! * [`outer`]: sizes, outer measures and outer `L^p` norms on tritile collections.
//! * [`weights`]: Muckenhoupt, reverse Hölder and multilinear weight constants.
//! * [`multiplier`]: multipliers on the frequency plane and direct quadrature of the forms.
//! * [`experiments`]: configuration-driven experiment runner and report emission.

pub mod error;
pub mod experiments;
pub mod grid;
pub mod multiplier;
pub mod outer;
pub mod regression;
pub mod signal;
pub mod sparse;
pub mod tiles;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{DyadicInterval, Exponent, ExponentTuple, HolderTuple, Interval, IntervalSet, Rat};
pub use signal::{FunctionPreset, GridSpec, SampledFunction, VectorSignal};
pub use sparse::{SparseCollection, SparseConstruction, SparseFormSpec};
pub use tiles::{Rank1Collection, Tile, Tree, Tritile, WavePacket};
