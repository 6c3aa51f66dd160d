import numpy as np
import pytest

from mistnet.diffcore import backward, check_gradients, numerical_gradient


def record_outputs(blocks):
    """Wrap each (label, module) so calling it appends (label, output channels) to a list."""
    log = []
    for label, module in blocks:
        original = module.forward

        def wrapped(*args, _orig=original, _label=label, **kwargs):
            out = _orig(*args, **kwargs)
            log.append((_label, out.shape[1]))
            return out

        module.forward = wrapped
    return log


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradient_errors(loss_fn, named, h=1e-6, max_entries=None, null_tol=1e-7):
    """Per-tensor relative errors, skipping tensors whose true gradient is structurally zero.

    A conv bias feeding a training-mode batch norm has zero gradient; there the
    relative error is noise over noise, so both gradients must instead be ~0.
    """
    errors = {}
    for _, t in named:
        t.grad = None
    base = loss_fn()
    # round-off in a central difference is about eps * |loss| / h
    null_tol = max(null_tol, 1e3 * np.finfo(np.float64).eps * max(1.0, abs(float(base.data))) / h)
    backward(base)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in named}
    for name, t in named:
        if np.abs(analytic[name]).max() <= null_tol:
            numeric = numerical_gradient(lambda: float(loss_fn().data), t.data, h)
            assert np.abs(numeric).max() <= null_tol, f"{name}: zero backprop gradient but numeric is not"
            continue
        errors[name] = check_gradients(loss_fn, [t], h=h, max_entries=max_entries)
    return errors


ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str, soft: bool = False) -> None:
    """Record one acceptance verdict; the lines are echoed in the terminal summary."""
    status = "PASS" if ok else ("WARN" if soft else "FAIL")
    line = f"criterion {number} [{status}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
