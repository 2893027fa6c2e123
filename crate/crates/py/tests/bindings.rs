use std::ffi::CString;

use lewis_weights::{cohen_peng, leverage_scores, lewis_residual, solve, variant, Report};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn triangle() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]
}

#[test]
fn solve_through_rust_entry_points() {
    Python::initialize();
    Python::attach(|py| {
        let r: Report = solve(py, triangle(), 4.0, 1e-6, "sequential", None).unwrap();
        assert!(r.weights_definition.iter().all(|w| (w - 2.0 / 3.0).abs() < 1e-8));
        assert!(r.converged);
        assert_eq!(r.variant, "sequential");
        assert_eq!(r.trace[0].1, "init");
        let e = solve(py, triangle(), 1.5, 1e-6, "parallel", None).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let e = solve(py, vec![vec![1.0, 2.0]], 4.0, 1e-6, "parallel", None).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}

#[test]
fn helpers() {
    assert!(variant("one-step").is_ok());
    assert!(variant("newton").is_err());
    let s = leverage_scores(triangle(), vec![1.0; 3]).unwrap();
    assert!(s.iter().all(|v| (v - 2.0 / 3.0).abs() < 1e-15));
    let w = cohen_peng(vec![vec![1.0], vec![1.0]], 3.0, 1e-8).unwrap();
    assert!(lewis_residual(vec![vec![1.0], vec![1.0]], w, 3.0).unwrap() < 1e-8);
}

#[test]
fn module_from_python() {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(lewis_weights::lewis_weights)(py);
        let globals = PyDict::new(py);
        globals.set_item("lw", module).unwrap();
        let code = CString::new(
            "r = lw.solve([[1.0], [1.0]], 4.0, variant='parallel')\n\
             assert all(abs(w - 0.5) < 1e-8 for w in r.weights_definition), r\n\
             assert r.converged\n\
             w, f = lw.oracle_solve([[1.0, 0.0], [0.0, 1.0]], 4.0)\n\
             assert abs(f - 1.0) < 1e-9\n\
             assert lw.rho([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0], 6.0) == [1.0, 1.0]\n\
             try:\n    lw.solve([[1.0, 1.0], [1.0, 1.0]], 4.0)\n    raise AssertionError('rank deficiency accepted')\n\
             except ValueError:\n    pass\n",
        )
        .unwrap();
        py.run(&code, Some(&globals), None).unwrap();
    });
}
