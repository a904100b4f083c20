//! Temporal event forecasting over text-enriched temporal knowledge graphs,
//! posed as multiple-choice questions to a language model.

pub mod dataset;
pub mod evaluation;
pub mod gateway;
pub mod harness;
pub mod history;
pub mod model;
pub mod prompting;
pub mod question_bank;
pub mod retrieval;
pub mod text;
