pub mod design;
pub mod error;
pub mod estimand;
pub mod mi;
pub mod mmrm;
pub mod numerics;
pub mod pool;
pub mod sim;
pub mod study;
