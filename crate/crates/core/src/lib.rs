//! Streamline-based fault recovery for quadrotor teams.
//!
//! When some vehicles of a team fail, the healthy ones are routed along
//! streamlines of an ideal flow that wraps each failed vehicle in a circular
//! unsafe zone. The stream function is solved on a grid, each healthy vehicle
//! slides along its own streamline at a common speed, and a feedback
//! linearizing controller tracks the resulting reference. The common speed is
//! maximized subject to every rotor staying below its speed limit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod fdm;
pub mod flc;
pub mod flowfield;
pub mod orchestrator;
pub mod quadrotor;
pub mod streamline;
