#[allow(dead_code)]
pub mod op_suite;
