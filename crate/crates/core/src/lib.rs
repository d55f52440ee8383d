//! Online edge coloring of bipartite graphs under one-sided node arrivals:
//! instance streams, a contention-resolution partial coloring, its cascade,
//! adversaries, run metrics and a micro-scale game solver.

pub mod adversary;
pub mod coloring;
pub mod crs;
pub mod experiment;
pub mod expectimax;
pub mod generators;
pub mod metrics;
pub mod graph_stream;
pub mod partial_coloring;
pub mod pipeline;
pub mod seed;
