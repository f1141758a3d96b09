//! Multitask reward discovery for meta-black-box optimization.

pub mod context;
pub mod envs;
pub mod eval;
pub mod evolution;
pub mod llm;
pub mod problems;
pub mod report;
pub mod rsl;
pub mod seeding;
