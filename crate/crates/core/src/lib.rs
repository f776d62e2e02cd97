//! Task exposure to AI: O*NET ingestion, LLM ensemble judging, consensus,
//! the occupation exposure index and labor-market analytics.

pub mod consensus;
pub mod exposure_index;
pub mod labor_analytics;
pub mod llm_gateway;
pub mod onet_ingest;
