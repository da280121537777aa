//! Analysis and exploration toolkit for ad-bearing mobile apps described as
//! static models.
//!
//! The pipeline has three stages, mirrored by the module layout:
//!
//! 1. **Identify** — [`static_ads`] classifies widgets of a parsed
//!    [`model::AppModel`] as ad widgets (banner views, popups, natives) by
//!    matching dataflow facts against an ad-library registry.
//! 2. **Trigger** — [`explorer`] drives a [`sim::Simulator`] session over the
//!    app, guided by the window transition graph ([`wtg`]), a knowledge base
//!    of previously seen ad UIs ([`kb`]), and a pluggable decision policy
//!    ([`policy`]).
//! 3. **Check** — [`regulation`] evaluates the resulting trace against
//!    placement, interaction, and content rules, and [`metrics`] scores
//!    detection quality against ground truth.
//!
//! [`bench`] generates seeded synthetic apps so the whole loop can be
//! exercised and compared across policies without a device.

pub mod bench;
pub mod explorer;
pub mod geometry;
pub mod hash;
pub mod kb;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod regulation;
pub mod sim;
pub mod static_ads;
pub mod wtg;
