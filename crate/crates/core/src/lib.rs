//! Multi-part pose estimation and Bayesian pose fusion for a camera looking
//! at a ship, with uncertainty quantification on SO(3).

pub mod assignment;
pub mod bessel;
pub mod camera;
pub mod detector;
pub mod fusion;
pub mod harness;
pub mod pnp;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod so3;

pub use camera::{CameraIntrinsics, Keypoints2};
pub use sampler::CameraPose;
pub use scene::Scene;
pub use so3::Rotation;
