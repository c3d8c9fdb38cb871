pub mod cee;
pub mod deep_rag;
pub mod detector;
pub mod handler;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod pool;
pub mod ranker;
pub mod syntax;
pub mod text;
