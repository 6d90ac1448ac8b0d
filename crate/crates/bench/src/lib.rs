//! Benchmarks: kinematics question answering, Tetris placement and dynamic
//! obstacle avoidance.

pub mod avoid;
pub mod physqa;
pub mod tetris;
