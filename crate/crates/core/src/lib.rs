pub mod eval;
pub mod model;
pub mod tensor;
pub mod text;
pub mod train;
