//! Pseudo-task meta-learning for natural-language-to-SQL semantic parsing.
//!
//! Each training example becomes the test point of its own few-shot task whose
//! support set is retrieved by a relevance function (same predicted query type,
//! similar question length). A grammar-constrained encoder-decoder is trained
//! with first-order MAML over those tasks and adapted on retrieved neighbours
//! at test time.

pub mod data;
pub mod learner;
pub mod meta;
pub mod relevance;
pub mod sql;
pub mod text;
