#[allow(dead_code)]
pub mod arch;
#[allow(dead_code)]
pub mod grad_suite;
#[allow(dead_code)]
pub mod sam_props;
