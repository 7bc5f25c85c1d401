use std::ffi::CString;
use std::path::Path;

use pyo3::prelude::*;

#[test]
fn python_smoke_script() {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let code = CString::new(std::fs::read_to_string(&script).unwrap()).unwrap();
    use cmprof::cmprof as module;
    pyo3::append_to_inittab!(module);
    Python::initialize();
    Python::attach(|py| {
        let globals = pyo3::types::PyDict::new(py);
        globals.set_item("__name__", "__main__").unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("smoke script failed");
        }
    });
}
