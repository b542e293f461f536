#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
pub mod geometry;
pub mod qp;
pub mod topology;
pub mod behaviors;
pub mod scenario;
pub mod sim;
