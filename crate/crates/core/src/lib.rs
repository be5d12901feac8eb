//! Recurrent network capacity and trainability laboratory.

pub mod ndcore;
pub mod cells;
pub mod capacity;
pub mod tasks;
pub mod training;
pub mod tuner;
pub mod harness;
