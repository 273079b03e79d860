//! Range verification for Kolmogorov–Arnold networks.
//!
//! Each univariate unit is replaced by an optimal piecewise-affine
//! abstraction with a certified error, errors are propagated to the outputs
//! through Lipschitz path weights, a multiple-choice knapsack picks the
//! per-unit piece counts, and the resulting mixed-integer program is solved
//! for a sound output range.

pub mod bench;
pub mod error;
pub mod error_prop;
pub mod knapsack;
pub mod milp;
pub mod model_io;
pub mod network;
pub mod pwa;
pub mod solver;
mod poly;
pub mod unit;
pub mod verify;

pub use error::{Error, Result};
pub use network::{Edge, InputBox, KanNetwork, Layer, Node, UnitId, UnitSlot};
pub use unit::{DerivativeInterval, UnitKind, UnitParams, UnivariateUnit};
