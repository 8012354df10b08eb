use std::ffi::CString;

use cocoa_py::cocoa_py;
use pyo3::prelude::*;

fn run(code: &str) {
    pyo3::append_to_inittab!(cocoa_py);
    Python::initialize();
    Python::attach(|py| {
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn train_and_inspect_from_python() {
    run(r#"
import cocoa_py as cp
problem, part = cp.generate_instance(40, 5, 2, loss="logistic", lam=0.1, seed=3)
res = cp.train(problem, part, nu="avg", rounds=20, gap_tol=1e-8)
assert not res.diverged
assert res.metrics[0]["round"] == 0
p, d, g = problem.objectives(res.alpha)
assert abs(g - (p - d)) < 1e-12 and g >= -1e-12
assert len(res.w) == problem.d
try:
    cp.Problem(problem.data, "nope", 0.1)
    raise AssertionError("bad loss accepted")
except ValueError:
    pass
"#);
}
