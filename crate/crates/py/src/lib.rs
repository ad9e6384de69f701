use pyo3::prelude::*;

#[pymodule]
fn ecosim_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
