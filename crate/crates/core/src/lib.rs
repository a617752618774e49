pub mod corpus;
pub mod embedding;
pub mod ensemble;
pub mod label;
pub mod limit;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod retrieval;
pub mod window;

pub use label::Label;
