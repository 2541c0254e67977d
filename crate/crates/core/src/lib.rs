pub mod atomic;
pub mod tensor;
pub mod nn;
pub mod data;
pub mod train;
pub mod attack;
pub mod eval;
