//! Dynamic stochastic block models for temporal networks.
//!
//! A dynamic SBM couples a static stochastic block model at every snapshot
//! with one independent latent Markov chain per node, so group memberships
//! evolve while within-group connectivity stays stable over time. The crate
//! covers the full workflow:
//!
//! - [`sim`]: generative sampling, including the benchmark presets.
//! - [`vem`]: variational EM inference with presence-mask support.
//! - [`init`]: k-means initialization on the concatenated adjacency rows.
//! - [`selection`]: choosing the number of groups by a classification
//!   likelihood score or an elbow scan.
//! - [`eval`]: adjusted Rand indices (per-step, averaged and global),
//!   transition-matrix error and group-flux tables.
//! - [`oracle`] (feature `oracle`, on by default): brute-force references
//!   for desk-scale verification of every analytic shortcut.
//! - [`io`]: the text formats shared with the command-line tool.

// Index arithmetic over symmetric (t, i, j, q, l) structures reads better
// with plain range loops than with iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod emissions;
pub mod error;
pub mod eval;
pub mod init;
pub mod io;
pub mod labels;
pub mod markov;
pub mod network;
pub mod numeric;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod params;
pub mod selection;
pub mod sim;
pub mod state;
pub mod vem;

pub use error::{Error, Result};
pub use labels::{LabelSeries, ABSENT};
pub use network::{validate_network, DynamicNetwork, ValidationReport};
pub use params::{Bin, EmissionFamily, EmissionParams, ModelParams};
pub use state::{NodeSchedule, VariationalState};
pub use vem::{fit, FitConfig, FitResult, MapMode};

/// Builds a rayon thread pool with `n` workers (or the rayon default when
/// `None`). All parallel sections write disjoint slices and reduce in fixed
/// order, so results are identical for every pool size.
pub fn thread_pool(n: Option<usize>) -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        builder = builder.num_threads(n);
    }
    builder.build().expect("failed to build thread pool")
}
