//! Core of the `pana` access-control protocol.
//!
//! A mobile client asks an access-controlled object (ACO) for a challenge,
//! forwards it through a telecom gateway to the access provider, pays for
//! the service, and later presents the resulting access key to a service
//! provider. Every actor is a pure step function; [`sim`] drives them over
//! a seeded, lossy virtual network and [`store`] records each decision.

pub mod accounts;
pub mod actors;
pub mod crypto;
pub mod payload;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod store;
pub mod wire;

/// Virtual simulation time.
pub type Tick = u64;
