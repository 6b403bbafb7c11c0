//! Simulation of a stereo-vision, galvanometer-steered laser weeder adapted to
//! pest control: detection, tracking, aiming and firing at insects on a crop
//! plane, plus the experiment harness that sweeps range and platform speed.

pub mod galvo;
pub mod geometry;
pub mod perception;
pub mod time;
pub mod world;
pub mod engage;
pub mod events;
pub mod harness;
