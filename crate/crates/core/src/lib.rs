//! Varying window attention for multi-scale decoding.
//!
//! The crate is organised bottom-up: a dense `f64` [`tensor`] type, a tape
//! [`autodiff`] graph that every forward pass runs on, [`windowing`] and
//! padding, the [`attention`] layers, the [`vwformer`] decoder, the
//! analytic and measured [`cost`] model, and [`analysis`] tools (effective
//! receptive fields, attention collapse).

pub mod analysis;
pub mod attention;
pub mod autodiff;
pub mod cost;
pub mod error;
pub mod params;
pub mod tensor;
pub mod vwformer;
pub mod windowing;

pub use attention::{AttnConfig, AttnWeights, RescaleStrategy};
pub use autodiff::{Gradients, Graph, Var};
pub use cost::{CostConfig, CostCounter, CostReport, Variant};
pub use error::{Error, Result};
pub use tensor::{Tensor, WindowSet};
pub use windowing::{PadMode, PadSpec};
