//! Relational scene reasoning for physical decision making.
//!
//! Objects become nodes of a scene graph, consecutive graphs are differenced,
//! the most urgent pairs are summarized, every candidate action is simulated
//! forward with explicit Euler, and the resulting descriptors are folded into
//! a prompt for a decision backend.
//!
//! Geometry, salience and physics are generic over [`Scalar`] (`f32` or
//! `f64`); rollouts and decisions work in `f64`.

pub mod decision;
pub mod error;
pub mod physics;
pub mod rollout;
pub mod salience;
pub mod scalar;
pub mod scenegraph;
pub mod vec3;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use vec3::Vec3;

pub type Vec3f = Vec3<f64>;
pub type Object = scenegraph::ObjectState<f64>;
pub type World = scenegraph::WorldState<f64>;
pub type Graph = scenegraph::SceneGraph<f64>;
pub type Diff = scenegraph::DiffGraph<f64>;
pub type Sim = physics::SimConfig<f64>;
pub type Summary = salience::SceneSummary<f64>;
