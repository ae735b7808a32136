pub mod conv;
pub mod dense;
pub mod elementwise;
pub mod norm;
pub mod shuffle;
