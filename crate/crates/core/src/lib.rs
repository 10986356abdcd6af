//! Template matching under occlusion via hashing in a decomposed search
//! space of translations or affine transforms.

pub mod analysis;
pub mod decomposition;
pub mod error;
pub mod experiments;
pub mod hashgrid;
pub mod image;
pub mod matcher;
pub mod transform;

pub use decomposition::{Decomposition, SpaceKind, SpaceSpec};
pub use error::{Error, PgmError, Result};
pub use image::{load_pgm, save_pgm, GrayImage, PixelCoord};
pub use matcher::{match_template, MatchConfig, MatchResult};
pub use transform::{delta, Transform};
