//! Knowledge graph completion on the Poincaré ball.
//!
//! Entities live in a ball of curvature `-c`; an attention GCN built from
//! gyrovector operations refines them, a bilinear relation transform moves
//! the head, and the hyperbolic inner product scores it against every tail.

pub mod ball;
pub mod checkpoint;
pub mod data;
pub mod decoders;
pub mod diff;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod scoring;
pub mod train;

pub use ball::{BallPoint, Curvature, TangentVector};
pub use data::{Adjacency, FilterIndex, Split, Triple, TripleStore, Vocab};
pub use decoders::{RelationTransform, TransformKind};
pub use encoder::{EncoderConfig, EncoderVariant, Space};
pub use error::{Error, Result};
pub use eval::RankingReport;
pub use model::{ModelConfig, ModelParams};
pub use scoring::ScoreKind;
pub use train::{TrainConfig, Trainer};
