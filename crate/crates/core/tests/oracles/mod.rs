//! Reference implementations shared by the property suites and the
//! acceptance run.
#![allow(dead_code)]

pub mod attention;
pub mod complexity;
pub mod geometry;
pub mod permutation;
