pub mod augment;
pub mod autograd;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod objectives;
pub mod rng;
pub mod seqmodel;
pub mod subword;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
