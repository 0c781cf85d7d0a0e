use super::{CandidateSet, SelectionPolicy};
use crate::types::{RoutingView, TargetId};

/// Fewest outstanding requests; ties go to the lowest id.
#[derive(Debug, Default, Clone, Copy)]
pub struct LeastLoad;

impl SelectionPolicy for LeastLoad {
    fn name(&self) -> &'static str {
        "ll"
    }

    fn select(&mut self, _request: &RoutingView<'_>, candidates: &CandidateSet) -> Option<TargetId> {
        candidates.least_loaded()
    }
}
