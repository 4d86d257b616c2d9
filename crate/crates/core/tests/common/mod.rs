#![allow(dead_code)]

pub mod qp;
pub mod svm_cases;
