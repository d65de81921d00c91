//! Dataset assembly, training, evaluation and the ablation matrix.

mod dataset;
mod report;
mod train;

pub use dataset::*;
pub use report::*;
pub use train::*;

use crate::scenario::{Episode, ScenarioKind};

/// Splits episodes per scenario: sorted by seed, the first half trains and
/// the rest tests. With an odd count the extra episode goes to training.
pub fn split_episodes(episodes: &[Episode]) -> Vec<(ScenarioKind, Vec<Episode>, Vec<Episode>)> {
    let mut out = Vec::new();
    for kind in ScenarioKind::ALL {
        let mut eps: Vec<&Episode> = episodes.iter().filter(|e| e.scenario == kind).collect();
        if eps.is_empty() {
            continue;
        }
        eps.sort_by_key(|e| e.seed);
        let n_train = eps.len().div_ceil(2);
        let train = eps[..n_train].iter().map(|e| (*e).clone()).collect();
        let test = eps[n_train..].iter().map(|e| (*e).clone()).collect();
        out.push((kind, train, test));
    }
    out
}
