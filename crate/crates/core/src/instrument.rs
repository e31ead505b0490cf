//! Per-thread operation counters.
//!
//! Every forward kernel reports its kind and an approximate floating-point
//! operation count. Counting is off unless a caller wraps work in
//! [`count_ops`], so the hot path pays one thread-local lookup per kernel.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum OpKind {
    Conv,
    BatchNorm,
    Relu,
    GlobalPool,
    Linear,
    Softmax,
    Feedback,
    SamplingGrid,
    Resample,
    PatternMap,
    PolarHead,
    PolarLoss,
    Transfer,
}

impl OpKind {
    /// Operations that belong to the amplification, encoding, or transfer
    /// branches and must never run at evaluation time.
    pub fn is_auxiliary(self) -> bool {
        matches!(
            self,
            OpKind::Feedback
                | OpKind::SamplingGrid
                | OpKind::Resample
                | OpKind::PatternMap
                | OpKind::PolarHead
                | OpKind::PolarLoss
                | OpKind::Transfer
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpTally {
    pub calls: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub by_kind: BTreeMap<OpKind, OpTally>,
}

impl OpCounts {
    pub fn total_flops(&self) -> u64 {
        self.by_kind.values().map(|t| t.flops).sum()
    }

    pub fn total_calls(&self) -> u64 {
        self.by_kind.values().map(|t| t.calls).sum()
    }

    pub fn calls(&self, kind: OpKind) -> u64 {
        self.by_kind.get(&kind).map_or(0, |t| t.calls)
    }

    pub fn auxiliary_calls(&self) -> u64 {
        self.by_kind
            .iter()
            .filter(|(k, _)| k.is_auxiliary())
            .map(|(_, t)| t.calls)
            .sum()
    }
}

thread_local! {
    static ACTIVE: RefCell<Vec<OpCounts>> = const { RefCell::new(Vec::new()) };
}

/// Record one kernel invocation on the current thread.
#[inline]
pub fn record(kind: OpKind, flops: u64) {
    ACTIVE.with(|stack| {
        let mut stack = stack.borrow_mut();
        if let Some(top) = stack.last_mut() {
            let tally = top.by_kind.entry(kind).or_default();
            tally.calls += 1;
            tally.flops += flops;
        }
    });
}

/// Run `f` and return its result with every operation it executed on this thread.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    ACTIVE.with(|stack| stack.borrow_mut().push(OpCounts::default()));
    let out = f();
    let counts = ACTIVE.with(|stack| stack.borrow_mut().pop().unwrap_or_default());
    (out, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_only_inside_scope() {
        record(OpKind::Conv, 10);
        let ((), counts) = count_ops(|| {
            record(OpKind::Conv, 5);
            record(OpKind::Resample, 7);
        });
        assert_eq!(counts.calls(OpKind::Conv), 1);
        assert_eq!(counts.total_flops(), 12);
        assert_eq!(counts.auxiliary_calls(), 1);
    }

    #[test]
    fn nested_scopes_are_independent() {
        let (inner, outer) = count_ops(|| {
            record(OpKind::Linear, 1);
            let ((), inner) = count_ops(|| record(OpKind::Linear, 2));
            inner
        });
        assert_eq!(inner.total_flops(), 2);
        assert_eq!(outer.total_flops(), 1);
    }
}
