use pyo3::prelude::*;
#[pymodule]
fn iob_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
