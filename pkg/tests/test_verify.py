import pytest

from ray_mixtures.verify import DEFAULT_SUITES, SLOW_SUITES, SUITES, expand_suites, gradient_check, run_suite


@pytest.mark.parametrize("name", ["mixture", "regen", "schedule", "metrics", "determinism"])
def test_suite_passes(name):
    res = run_suite(name, seed=0)
    assert res.passed, [c for c in res.checks if not c.passed]
    assert res.checks


@pytest.mark.slow
@pytest.mark.parametrize("name", ["oracle", "gradcheck"])
def test_numerical_suite_passes(name):
    res = run_suite(name, seed=0)
    assert res.passed, [c for c in res.checks if not c.passed]


@pytest.mark.slow
def test_ablation_suite_passes():
    res = run_suite("ablation", seed=0)
    assert res.passed, [c for c in res.checks if not c.passed]


def test_gradient_check_single_seed():
    worst, failures, size = gradient_check(5, coords=16)
    assert failures == 0
    assert size <= 2000


def test_all_expands_to_default_suites():
    assert expand_suites(["all"]) == list(DEFAULT_SUITES)
    assert set(DEFAULT_SUITES) | set(SLOW_SUITES) == set(SUITES)
    assert expand_suites(["metrics", "all", "metrics"])[0] == "metrics"


def test_suite_report_shape():
    rep = run_suite("schedule").to_json()
    assert rep["suite"] == "schedule" and rep["passed"] is True
    assert all({"name", "passed", "detail"} <= set(c) for c in rep["checks"])


def test_io_failure_inside_a_suite_is_reported(monkeypatch):
    def broken(res, seed):
        raise PermissionError("read-only scratch dir")

    monkeypatch.setitem(SUITES, "metrics", broken)
    res = run_suite("metrics")
    assert not res.passed
    assert res.checks[-1].name == "completed" and "PermissionError" in res.checks[-1].detail
