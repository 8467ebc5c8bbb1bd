//! Streaming inference with entropy-scored KV-cache eviction.
//!
//! The crate bundles a small trainable decoder ([`tinylm`]), the cache and
//! its eviction strategies ([`kvcache`]), token-entropy measurement and
//! attention analyses ([`entropy`]), the multi-turn streaming loop
//! ([`session`]) and the evaluation harnesses ([`tasks`]).

pub mod entropy;
pub mod error;
pub mod kvcache;
pub mod session;
pub mod tasks;
pub mod tinylm;
pub mod tokenizer;

pub use error::{Error, Result};
pub use kvcache::{
    evict, CacheBudget, EntropyCache, EvictionPolicy, EvictionStrategy, KvCacheStore, PolicyKind,
    PolicyRegistry, SlotMeta,
};
pub use tinylm::{forward_step, sequence_logprobs, ModelConfig, StepOutput, TinyModel};
pub use tokenizer::{TokenId, Tokenizer};
