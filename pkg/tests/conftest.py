import pytest

from chainqa.pipeline import desk_config, train_pipeline
from chainqa.synthetic import SyntheticSpec, generate_synthetic_benchmark

TINY_SPEC = SyntheticSpec(n_movies=20, n_persons=24, n_years=5, n_languages=3, n_genres=4, n_tags=6,
                          n_ratings=3, hops=(1, 2), n_train=300, n_dev=40, n_test=80)


def tiny_config(**overrides):
    base = dict(dim=16, kge_epochs=30, hidden=12, filter_epochs=15, reasoner_epochs=3, eval_every=5)
    return desk_config(**{**base, **overrides})


@pytest.fixture(scope="session")
def tiny_bench():
    return generate_synthetic_benchmark(TINY_SPEC, seed=0)


@pytest.fixture(scope="session")
def tiny_trained(tiny_bench):
    """A small end-to-end pipeline; quality is irrelevant, only shapes and invariants are tested."""
    return train_pipeline(tiny_bench.kg, tiny_bench.train, tiny_bench.dev, tiny_config())


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::test_criterion_" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            number = int(rep.nodeid.split("test_criterion_")[1].split("_")[0])
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((number, f"criterion {number}: {'PASS' if rep.passed else 'FAIL'}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
