//! Max-min-fair coordinated RSMA beamforming for integrated
//! satellite-terrestrial networks (ISTN).
//!
//! A multibeam satellite serves grouped satellite users by multicast while a
//! terrestrial base station serves cellular users by unicast in the same band.
//! Messages are split into super-common / intra-network common / private
//! streams, and the precoders plus common-rate allocations are jointly
//! optimized for the max-min fairness (MMF) rate by successive convex
//! approximation over second-order cone subproblems.
//!
//! Crate layout:
//! - [`scenario`] — configuration constants, network geometry, user drops
//! - [`channel`] — satellite/terrestrial channel synthesis and CSIT errors
//! - [`rates`] — SINRs, GMI rate lower bounds, rate aggregation and audits
//! - [`conic`] — conic program model and the interior-point solve contract
//! - [`sca`] — the SCA loop: Taylor minorants, SOC log rows, subproblems
//! - [`schemes`] — the seven evaluated multiple-access schemes
//! - [`harness`] — Monte Carlo sweeps, CSV persistence, summaries

pub mod channel;
pub mod conic;
pub mod harness;
pub mod rates;
pub mod sca;
pub mod scenario;
pub mod schemes;

pub use channel::ChannelRealization;
pub use harness::{ExperimentPlan, ResultRow, SweepAxis};
pub use rates::{PrecoderSet, RateAllocation, RateReport};
pub use sca::{ScaIterate, ScaOptions};
pub use scenario::{Geometry, ScenarioConfig};
pub use schemes::{SchemeId, SchemeSpec};
