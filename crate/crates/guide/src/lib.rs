//! Chapters of the book, compiled as doctests so the snippets stay honest.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}
#[doc = include_str!("../../../book/src/ranking.md")]
pub mod ranking {}
#[doc = include_str!("../../../book/src/scheduling.md")]
pub mod scheduling {}
#[doc = include_str!("../../../book/src/workloads.md")]
pub mod workloads {}
#[doc = include_str!("../../../book/src/checkpoints.md")]
pub mod checkpoints {}
#[doc = include_str!("../../../book/src/wire.md")]
pub mod wire {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
