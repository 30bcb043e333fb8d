use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(scatclr_py::scatclr_module)(py);
        let globals = PyDict::new(py);
        globals.set_item("scatclr", module)?;
        py.run(code, Some(&globals), None)
    })
}

#[test]
fn functions_are_exposed() {
    with_module(
        c"
import math
assert scatclr.channel_count(3, 4) == 1 + 12 + 16 * 3
assert scatclr.channel_count(3, 4, order=1) == 13
assert abs(scatclr.nt_xent([[0.0, 1.0]] * 4) - math.log(3)) < 1e-12
bank = scatclr.FilterBank(1, 4, 32)
assert bank.num_bandpass == 4 and bank.size == 32
assert 'scales=1' in repr(bank)
",
    )
    .unwrap();
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(
        c"
for bad in (lambda: scatclr.FilterBank(2, 8, 96), lambda: scatclr.nt_xent([[2.0, 0.0], [0.0, 1.0]])):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError('accepted')
try:
    scatclr.synth_images('stripes', 2)
except Exception:
    pass
else:
    raise AssertionError('unknown kind accepted')
",
    )
    .unwrap();
}
