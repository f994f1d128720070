//! Common interface every imputation method sits behind: zero-fill, the
//! linear nearest-neighbor baseline, and the autoencoders.

use crate::numerics::Tensor;
use crate::pipeline::ElectrodeRole;
use crate::ragged::ParticipantId;

/// Produces a full `K x T` output series from a masked instance.
///
/// The input has masked and naturally-missing rows zeroed; `roles` says
/// which is which. Implementations must not look at anything but the masked
/// input (evaluation hides the ground truth behind this trait).
pub trait Imputer: Sync {
    fn name(&self) -> &str;

    fn impute_instance(
        &self,
        participant: ParticipantId,
        masked: &Tensor,
        roles: &[ElectrodeRole],
    ) -> Tensor;
}

/// The conventional approach: leave missing channels at zero.
pub struct ZeroFill;

impl Imputer for ZeroFill {
    fn name(&self) -> &str {
        "zero"
    }

    fn impute_instance(&self, _: ParticipantId, masked: &Tensor, _: &[ElectrodeRole]) -> Tensor {
        masked.clone()
    }
}

/// Scoring upper bound: echoes the ground truth it is given. Only useful in
/// tests, where it must score a correlation of exactly 1. Relies on
/// evaluation visiting instances in order 0..n within each mask set.
pub struct PerfectCopy<'a> {
    pub truth: &'a [Tensor],
    pub cursor: std::sync::atomic::AtomicUsize,
}

impl<'a> PerfectCopy<'a> {
    pub fn new(truth: &'a [Tensor]) -> Self {
        PerfectCopy {
            truth,
            cursor: std::sync::atomic::AtomicUsize::new(0),
        }
    }
}

impl Imputer for PerfectCopy<'_> {
    fn name(&self) -> &str {
        "perfect-copy"
    }

    fn impute_instance(&self, _: ParticipantId, _: &Tensor, _: &[ElectrodeRole]) -> Tensor {
        let i = self
            .cursor
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.truth[i % self.truth.len()].clone()
    }
}
