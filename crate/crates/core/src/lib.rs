//! Martingale calculus on finite non-homogeneous interval lattices.
//!
//! A lattice is a measured forest whose children partition their parent.
//! Functions are constant on leaves. Everything numeric is generic over
//! [`Real`] (`f32` or `f64`); the `*64` aliases fix `f64`.

pub mod error;
pub mod experiments;
pub mod gspace;
pub mod io;
pub mod lattice;
pub mod matrix;
pub mod mfunc;
pub mod mixing;
pub mod num;
pub mod opnorm;
pub mod paraprod;
pub mod random;
pub mod stopping;

pub use error::{Error, Result};
pub use gspace::{CoefSequence, SlotLayout, SlotOp};
pub use lattice::{build_lattice, uniform_radic, Lattice, LatticeSpec, NodeId, NodeSpec, Violation};
pub use matrix::Matrix;
pub use mfunc::{MartDecomp, StepFunction};
pub use mixing::{Classification, MixingCert};
pub use num::Real;
pub use opnorm::NormReport;
pub use paraprod::{Family, LinearOp, ParaKind, TransformBlocks};
pub use stopping::StoppingForest;

pub type Lattice64 = Lattice<f64>;
pub type StepFunction64 = StepFunction<f64>;
pub type MartDecomp64 = MartDecomp<f64>;
pub type CoefSequence64 = CoefSequence<f64>;
pub type LinearOp64 = LinearOp<f64>;
pub type TransformBlocks64 = TransformBlocks<f64>;

pub type Lattice32 = Lattice<f32>;
pub type StepFunction32 = StepFunction<f32>;
pub type MartDecomp32 = MartDecomp<f32>;
pub type CoefSequence32 = CoefSequence<f32>;
pub type LinearOp32 = LinearOp<f32>;
pub type TransformBlocks32 = TransformBlocks<f32>;
