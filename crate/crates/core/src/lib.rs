//! Skeleton-conditioned organ placement priors: mesh geometry, rig
//! unposing, template registration, organ decomposition, prior fitting,
//! instantiation, probe contact planning and semantic grounding.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the file formats and pipeline use.

pub mod decomposition;
pub mod error;
pub mod format;
pub mod geometry;
pub mod grounding;
pub mod instantiation;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod prior;
pub mod registration;
pub mod rig;
pub mod scalar;
pub mod targeting;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh = geometry::TriMesh<f64>;
pub type Transform = geometry::AffineTransform<f64>;
pub type Rig = rig::RigState<f64>;
pub type Frame = decomposition::AnatomicalFrame<f64>;
pub type Template = decomposition::ReferenceTemplate<f64>;
pub type Descriptor = decomposition::OrganDescriptor<f64>;
pub type PriorAsset = prior::OrganPriorAsset<f64>;
pub type Instance = instantiation::InstantiatedOrgan<f64>;
pub type Contact = targeting::ContactCandidate<f64>;
pub type Control = targeting::ControlState<f64>;
