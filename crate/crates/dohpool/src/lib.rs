//! DNS stub resolver that answers address queries from pools built over
//! several DNS-over-HTTPS resolvers.
//!
//! Each configured resolver is asked the same question concurrently; every
//! answer list is cut to the length of the shortest one before the lists are
//! interleaved, so no single resolver can crowd out the others. A strict
//! majority vote mode is also available.

pub mod cache;
pub mod config;
pub mod doh;
pub mod live;
pub mod mock;
pub mod service;

pub use config::{Mode, ServiceConfig};
pub use doh::{DohClient, Method, ResolverEndpoint, TrustRoots};
pub use service::{Resolution, Resolver, Server, Transport};
