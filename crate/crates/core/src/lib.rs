//! Joint pilot/data power allocation and receive combining for uplink
//! integrated sensing and communication with imperfect CSI.

pub mod beamforming;
pub mod cvx;
pub mod estimation;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod power_alloc;
pub mod scenario;
