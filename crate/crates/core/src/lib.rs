//! Character reenactment toolkit: keypoint-based motion retargeting between
//! differently proportioned skeletons, linear blend skinning of part-labeled
//! characters, a z-buffered software rasterizer producing color, depth and
//! body-part masks, and the multi-channel conditioning stacks consumed by a
//! character-to-image translation network.
//!
//! The data-parallel loops (frames, vertices, trajectories) run on rayon when
//! the default `parallel` feature is enabled; see [`par::Exec`].

pub mod charmesh;
pub mod conditioning;
pub mod error;
pub mod kinematics;
pub mod motion;
pub mod par;
pub mod pipeline;
pub mod planes;
pub mod raster;
pub mod retarget;

pub use error::{Error, Result};
pub use kinematics::{Pose, Skeleton, Vec3};
pub use par::Exec;
