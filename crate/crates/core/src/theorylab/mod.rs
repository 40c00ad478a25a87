//! Synthetic worlds for checking the margin analysis, the common-evidence
//! failure modes, and the metric trends under controlled conditions.

pub mod experiments;
pub mod margin;
pub mod proxy;
pub mod world;

pub use margin::{margin, margin_breakdown, softmax_lower_bound, CompetitorTerms, MarginBreakdown};
pub use world::{gram_schmidt, SyntheticView, SyntheticWorld, WorldSpec};
