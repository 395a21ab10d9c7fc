//! Mission planning for dual-band (μWave / mmWave) relay drones.
//!
//! The planner places a hover stop for every (pair, drone) combination,
//! picks the band, solves the drone-to-pair routing exactly, then refines the
//! stops of each tour with a shrinking cuboid search, alternating the last
//! two steps until the weighted service time stops improving.

pub mod channel;
pub mod cli;
pub mod geometry;
pub mod placement;
pub mod planner;
pub mod power;
pub mod refinement;
pub mod routing;
pub mod scenario;
