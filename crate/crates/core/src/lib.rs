//! Unsupervised domain adaptation toolkit for token-level event trigger
//! extraction.
//!
//! The crate trains a BiLSTM tagger over contextual features on a labeled
//! source corpus and adapts it to unlabeled target domains through three
//! techniques: adversarial representation alignment (`ada`), domain-adaptive
//! fine-tuning of the encoder (`daft`), and likelihood-based instance
//! weighting (`liw`). Supporting modules handle annotation-format parsing
//! and corpus statistics (`corpus`), feature extraction (`encoders`), tagger
//! training (`tagger`), evaluation under lexical and semantic shift
//! (`evalsuite`), and a seeded synthetic benchmark (`synthbench`).
//!
//! Numeric code is generic over the scalar type via [`scalar::Scalar`];
//! the crate root exposes `f64` aliases used by the CLI.

pub mod ada;
pub mod corpus;
pub mod daft;
pub mod encoders;
pub mod evalsuite;
pub mod liw;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod synthbench;
pub mod tagger;

/// Default scalar type for the CLI and pipelines.
pub type F = f64;

pub type ParamStore = nn::store::ParamStore<F>;
pub type Tape<'a> = nn::tape::Tape<'a, F>;
pub type TaggerModel = tagger::TaggerModel<F>;
pub type TargetLm = liw::TargetLm<F>;
pub type ContextualEncoder = encoders::ContextualEncoder<F>;
pub type PosEmbeddingTable = encoders::PosEmbeddingTable<F>;
