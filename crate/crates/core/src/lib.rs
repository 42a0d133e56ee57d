//! Building trustworthy server address pools from several DNS-over-HTTPS
//! resolvers.
//!
//! * [`codec`]: DNS wire format.
//! * [`combine`]: shortest-list truncation and majority vote.
//! * [`model`]: attack-probability formulas and their oracles.
//! * [`sim`]: attacker fleets for exercising the combiner.

pub mod codec;
pub mod combine;
pub mod model;
pub mod response;
pub mod sim;

pub use codec::{
    decode_message, encode_message, AddressRecord, DnsHeader, DnsMessage, Name, Question, Rcode,
    RecordType,
};
pub use combine::{
    combine_pool, combine_pool_allow_empty, majority_vote, pool_to_answers, AddressPool, CombineError, CombineInput,
    CombinePolicy,
};
pub use response::{FailureKind, Outcome, ResolverResponse};
