#![allow(dead_code)]

pub mod anon_corpus;
pub mod gradient;
pub mod metrics_oracle;
