// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cnngraph;
pub mod platform;
pub mod power;
pub mod sched;
