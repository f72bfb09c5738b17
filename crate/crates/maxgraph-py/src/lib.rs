use pyo3::prelude::*;

#[pymodule]
fn maxgraph_py(_m: &Bound<PyModule>) -> PyResult<()> {
    Ok(())
}
