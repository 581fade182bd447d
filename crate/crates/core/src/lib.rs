// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod numkit;
pub mod plant;
pub mod uclf;
pub mod cli;
pub mod simloop;
