//! Anonymization, ontology enrichment and cascaded classification of Spanish
//! dermatology reports.

pub mod anonymizer;
pub mod bundled;
pub mod cascade;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod ontology;
pub mod seed;
pub mod text;

pub use error::{Error, Result};
