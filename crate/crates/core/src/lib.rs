//! Turn a corpus of support tickets into a categorized knowledge base and
//! measure how well it answers questions compared with raw-ticket retrieval.

pub mod agent;
pub mod categorize;
pub mod corpus;
pub mod discovery;
pub mod eval;
pub mod fsutil;
pub mod llm;
pub mod par;
pub mod prompts;
pub mod rag;
pub mod simulate;
pub mod synthesis;
pub mod synthetic;
pub mod workspace;
