//! Visual word sense disambiguation harness.
//!
//! Ranks ten candidate images per ambiguous phrase by embedding similarity (with an
//! optional majority-bias penalty), enriches phrases with LLM-generated knowledge, and
//! recasts the task as multiple-choice question answering over image captions.
//! Neural models stay outside the process: embeddings and captions arrive as files,
//! LLMs are reached through an OpenAI-compatible HTTP endpoint with a replayable cache.

pub mod dataset;
pub mod gateway;
pub mod retrieval;
pub mod text;
pub mod vector_store;
pub mod captions;
pub mod enhancer;
pub mod qa;
pub mod evaluator;
pub mod config;
pub mod commands;
pub mod cli;
