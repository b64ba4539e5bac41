//! Depression detection from social-media timelines.
//!
//! A user is classified from two views of their timeline: a short token
//! sequence condensed from representative tweets, and four families of
//! behaviour features (social, emotional, domain-specific and topic). See
//! [`harness::train`] for the end-to-end entry point.

pub mod behavior;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod layers;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod summarize;
pub mod synth;
pub mod text;
pub mod topicmodel;

pub use error::{Error, Result};
