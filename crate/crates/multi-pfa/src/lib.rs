pub mod data;
pub mod linalg;
pub mod multinomial;
pub mod mmm;
pub mod normal;
pub mod pfa;
pub mod simulate;
