//! Schema-constrained extraction of patient-voice annotations from secure
//! messages: codebook handling, prompt rendering, completion parsing,
//! evaluation metrics, stratified splitting and SFT data preparation.

pub mod codebook;
pub mod corpus;
pub mod infer;
pub mod meta;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod sftprep;

pub use codebook::{Codebook, CodeId, Direction, SubcodeId};
pub use corpus::{Annotation, GoldRecord, Message, Span};
