//! Text-classification, agreement and crowd-labeling toolkit for a
//! five-category online harassment taxonomy.

pub mod agreement;
pub mod bayes;
pub mod corpus;
pub mod crowd;
pub mod eval;
pub mod features;
pub mod neural;
pub mod topics;
