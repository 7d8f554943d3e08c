import numpy as np
import pytest

from interpomae.model import ModelConfig, init_params


@pytest.fixture
def tiny():
    """T=3, P=2, C=1, d=2, hidden 4; small enough for full finite-difference checks."""
    cfg = ModelConfig(T=3, P=2, C=1, d=2, enc_hidden=4, dec_hidden=4, interp_hidden=4, seed=5)
    bundle = init_params(cfg)
    # perturb biases so no gradient path is trivially symmetric
    rng = np.random.default_rng(11)
    for name, value in bundle.params.items():
        bundle.params[name] = value + rng.normal(scale=0.1, size=value.shape)
    return bundle


@pytest.fixture
def small():
    return init_params(ModelConfig(T=6, P=4, C=5, seed=3))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and outcome == "passed":
                continue
            name = nodeid.split("::")[-1][len("test_criterion_"):]
            lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines):
            number, _, label = name.partition("_")
            terminalreporter.write_line(f"criterion {int(number):2d} {status}  {label.replace('_', ' ')}")
