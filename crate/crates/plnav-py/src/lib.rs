use pyo3::prelude::*;

#[pymodule]
fn plnav_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
