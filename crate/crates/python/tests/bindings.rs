use pyo3::prelude::*;
use pyo3::types::IntoPyDict;

#[test]
fn module_works_from_an_embedded_interpreter() {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(mad_py::mad_py)(py);
        let locals = [("mad", m)].into_py_dict(py).unwrap();
        py.run(
            c"
cfg = mad.TaskConfig.desk('recall')
train, evals = mad.generate(cfg, 3)
assert len(train) == 800
inp, tgt, mask = train.sample(0)
assert inp[1:] == tgt[:-1]
assert mad.Architecture('hyena').fixed_state() == 4096
assert mad.correlate([1.0, 2.0, 3.0], [9.0, 4.0, 1.0])['spearman'] == -1.0
try:
    mad.Architecture('no_such_arch')
    raise AssertionError('expected ValueError')
except ValueError:
    pass
",
            None,
            Some(&locals),
        )
        .unwrap();
    });
}
