import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from croco.bench import (NA, SweepRecord, emit_all, emit_bound_check, emit_records, emit_target_comparison,
                         emit_tradeoff, emit_validity_heatmap, evaluate, fmt, run_sweep, synthetic_benchmark,
                         tradeoff_rows)
from croco.errors import ConfigError
from croco.generators import GenerationConfig, GenerationResult
from croco.noise import NoiseSpec

from conftest import linear_model

FAST = GenerationConfig(K=50, max_inner_iters=100, allow_unreachable_target=True)


@pytest.fixture(scope="module")
def bench():
    return synthetic_benchmark(n_instances=10)


@pytest.fixture(scope="module")
def records(bench):
    return run_sweep(bench.model, bench.X, [0.005, 0.02], [0.1, 0.35], methods=["wachter", "probe", "croco"],
                     config=FAST, K_eval=2000, instances=bench.instances)


def _result(x, delta, method="wachter"):
    return GenerationResult(method, np.asarray(x, float), np.asarray(delta, float), True, 1.0, 0)


def test_evaluate_identity_counterfactual():
    model = linear_model([1.0, 1.0])
    rec = evaluate(model, [-0.5, -0.5], _result([-0.5, -0.5], [0.0, 0.0]), 1000, NoiseSpec.gaussian(0.01, 2))
    assert rec.validity == 0 and rec.distance == 0.0
    assert rec.gamma_eval == 1.0


def test_evaluate_deep_counterfactual():
    model = linear_model([1.0, 1.0])
    rec = evaluate(model, [-0.5, -0.5], _result([-0.5, -0.5], [3.0, 3.0]), 1000, NoiseSpec.gaussian(0.01, 2))
    assert rec.validity == 1
    assert rec.gamma_eval == pytest.approx(0.0, abs=1e-3)
    assert rec.sigma2 == 0.01 and rec.target is None


def test_evaluate_distance_is_l1():
    model = linear_model([1.0, 1.0])
    rec = evaluate(model, [0.0, 0.0], _result([0.0, 0.0], [0.1, -0.2]), 100, NoiseSpec.gaussian(0.01, 2))
    assert rec.distance == pytest.approx(0.3)


def test_evaluate_uses_fresh_draws():
    # the evaluation stream differs from the optimization stream of the same instance
    model = linear_model([1.0], b=0.0)
    spec = NoiseSpec.gaussian(0.04, 1, seed=0)
    a = evaluate(model, [0.0], _result([0.0], [0.0]), 1000, spec)
    res = _result([0.0], [0.0])
    res.instance = 1
    b = evaluate(model, [0.0], res, 1000, spec)
    assert a.gamma_eval != b.gamma_eval


def test_evaluate_needs_spec():
    with pytest.raises(ConfigError):
        evaluate(linear_model([1.0]), [0.0], _result([0.0], [0.0]), 100)


def test_record_invariants():
    with pytest.raises(ValueError):
        SweepRecord("croco", 0.01, 0.3, 0, 2, 0.1, 0.1, 0.3, True)
    with pytest.raises(ValueError):
        SweepRecord("croco", 0.01, 0.3, 0, 1, -0.1, 0.1, 0.3, True)
    with pytest.raises(ValueError):
        SweepRecord("croco", 0.01, 0.3, 0, 1, 0.1, 1.1, 0.3, True)


def test_sweep_cardinality(bench, records):
    grid = [r for r in records if r.method != "wachter"]
    assert len(grid) == 2 * 2 * 2 * 10
    wachter = [r for r in records if r.method == "wachter"]
    assert len(wachter) == 2 * 10
    assert all(r.target is None for r in wachter)
    # one Wachter counterfactual per instance, scored under each variance
    by_instance = {}
    for r in wachter:
        by_instance.setdefault(r.instance, set()).add(r.distance)
    assert all(len(d) == 1 for d in by_instance.values())


def test_sweep_record_invariants(records):
    for r in records:
        assert 0.0 <= r.gamma_eval <= 1.0 and r.distance >= 0.0
        if r.converged:
            assert r.validity == 1


def test_sweep_rerun_is_byte_identical(bench, records, tmp_path):
    again = run_sweep(bench.model, bench.X, [0.005, 0.02], [0.1, 0.35], methods=["wachter", "probe", "croco"],
                      config=FAST, K_eval=2000, instances=bench.instances)
    emit_all(records, tmp_path / "a")
    emit_all(again, tmp_path / "b")
    for name in ("tradeoff.csv", "validity_heatmap.csv", "target_comparison.csv", "bound_check.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_independent_of_jobs(bench, tmp_path):
    kw = dict(methods=["wachter", "croco"], config=FAST, K_eval=500, instances=bench.instances[:4])
    one = run_sweep(bench.model, bench.X[:4], [0.01], [0.3, 0.35], jobs=1, **kw)
    two = run_sweep(bench.model, bench.X[:4], [0.01], [0.3, 0.35], jobs=2, **kw)
    assert emit_records(one, tmp_path / "1.csv").read_bytes() == emit_records(two, tmp_path / "2.csv").read_bytes()


def test_sweep_rejects_unreachable_by_default(bench):
    with pytest.raises(ConfigError, match="unreachable"):
        run_sweep(bench.model, bench.X[:2], [0.01], [0.1], methods=["croco"])


def test_sweep_input_validation(bench):
    with pytest.raises(ConfigError):
        run_sweep(bench.model, bench.X[:2], [0.01], [0.3], methods=["magic"])
    with pytest.raises(ConfigError):
        run_sweep(bench.model, bench.X[:2], [], [0.3], methods=["croco"])
    with pytest.raises(ConfigError):
        run_sweep(bench.model, bench.X[:2], [0.01], [], methods=["probe"])


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("emit", [emit_tradeoff, emit_validity_heatmap, emit_target_comparison, emit_bound_check])
def test_emitters_reject_empty(emit, tmp_path):
    with pytest.raises(ValueError):
        emit([], tmp_path / "x.csv")


@pytest.mark.parametrize("emit", [emit_tradeoff, emit_validity_heatmap, emit_target_comparison, emit_bound_check])
def test_single_record_single_row(emit, tmp_path):
    rec = SweepRecord("croco", 0.01, 0.3, 4, 1, 0.123456789, 0.05, 0.31, True)
    rows = read(emit([rec], tmp_path / "x.csv"))
    assert len(rows) == 2
    assert len(rows[0]) == len(rows[1])


def test_tradeoff_statistics(tmp_path):
    recs = [SweepRecord("croco", 0.01, 0.3, i, 1, d, g, 0.3, True)
            for i, (d, g) in enumerate([(0.1, 0.0), (0.3, 0.2), (0.2, 0.1)])]
    rows = read(emit_tradeoff(recs, tmp_path / "t.csv"))
    head, row = rows[0], dict(zip(rows[0], rows[1]))
    assert head[:3] == ["method", "sigma2", "target"]
    assert row["n"] == "3" and row["distance_mean"] == "0.2" and row["distance_sd"] == "0.1"
    assert row["gamma_eval_mean"] == "0.1" and row["gamma_eval_sd"] == "0.1"
    single = read(emit_tradeoff(recs[:1], tmp_path / "s.csv"))
    assert dict(zip(single[0], single[1]))["distance_sd"] == NA


def test_heatmap_fills_missing_cells(tmp_path):
    recs = [SweepRecord("croco", 0.01, 0.3, 0, 1, 0.1, 0.0, 0.3, True),
            SweepRecord("croco", 0.02, 0.35, 0, 0, 0.1, 0.0, 0.3, False),
            SweepRecord("wachter", 0.01, None, 0, 1, 0.1, 0.5, 1.0, True)]
    rows = read(emit_validity_heatmap(recs, tmp_path / "h.csv"))
    assert rows[0] == ["method", "sigma2", "target=0.3", "target=0.35", "target=NA"]
    assert rows[1] == ["croco", "0.01", "100", NA, NA]
    assert rows[2] == ["croco", "0.02", NA, "0", NA]
    assert rows[3] == ["wachter", "0.01", NA, NA, "100"]


def test_wachter_only_tradeoff_has_null_target(bench, tmp_path):
    recs = run_sweep(bench.model, bench.X[:3], [0.01], [], methods=["wachter"], K_eval=200,
                     instances=bench.instances[:3])
    rows = read(emit_tradeoff(recs, tmp_path / "t.csv"))
    assert rows[1][:3] == ["wachter", "0.01", NA]
    with pytest.raises(ValueError):
        emit_target_comparison(recs, tmp_path / "c.csv")
    names = sorted(p.name for p in emit_all(recs, tmp_path / "all"))
    assert names == ["bound_check.csv", "tradeoff.csv", "validity_heatmap.csv"]


def test_bound_check_flags_exceedance(tmp_path):
    recs = [SweepRecord("croco", 0.01, 0.3, 0, 1, 0.1, 0.25, 0.3, True),
            SweepRecord("croco", 0.01, 0.3, 1, 1, 0.1, 0.35, 0.3, True)]
    rows = read(emit_bound_check(recs, tmp_path / "b.csv"))
    assert [r[-1] for r in rows[1:]] == ["0", "1"]


def test_fmt():
    assert fmt(0.1234567891) == "0.123457"
    assert fmt(None) == NA and fmt(float("nan")) == NA
    assert fmt(True) == "1" and fmt(np.int64(7)) == "7" and fmt("croco") == "croco"
    assert fmt(1e-7) == "1e-07"


@given(st.randoms(use_true_random=False))
def test_emitters_are_permutation_invariant(tmp_path_factory, rnd):
    base = [SweepRecord(m, s, t, i, i % 2, 0.1 * i, 0.01 * i, 0.2 + 0.01 * i, bool(i % 2))
            for m in ("croco", "probe") for s in (0.005, 0.02) for t in (0.1, 0.35) for i in range(3)]
    shuffled = list(base)
    rnd.shuffle(shuffled)
    d = tmp_path_factory.mktemp("perm")
    for emit in (emit_tradeoff, emit_validity_heatmap, emit_target_comparison, emit_bound_check):
        assert emit(base, d / "a.csv").read_bytes() == emit(shuffled, d / "b.csv").read_bytes()
    assert tradeoff_rows(base) == tradeoff_rows(shuffled)
