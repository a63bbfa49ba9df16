import json
import time

import numpy as np
import pytest

from thermomech.bench import TABLE_COLUMNS, format_table, poisson_system, run_bench
from thermomech.mesh import build_box_mesh
from thermomech.timing import TimingReport


def test_poisson_system_properties():
    A, b = poisson_system(build_box_mesh(3, 3, 3))
    assert abs(A - A.T).max() <= 1e-15
    assert b.sum() == pytest.approx(1.0, rel=1e-14)
    # constants feel only the Robin term: 1^T A 1 = beta * boundary area
    one = np.ones(A.shape[0])
    assert one @ A @ one == pytest.approx(6.0, rel=1e-12)
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


def test_run_bench_rows():
    rows = run_bench(3, 1, amg="sa")
    assert [r.level for r in rows] == [0, 1]
    assert rows[1].n == 7 ** 3
    assert all(r.amg_iterations > 0 and r.cg_iterations > 0 for r in rows)
    assert all(r.amg_seconds >= r.amg_setup_seconds >= 0 for r in rows)
    with pytest.raises(ValueError):
        run_bench(3, 0, amg="jacobi")


def test_format_table_layout():
    rows = run_bench(2, 0, unpreconditioned=False)
    text = format_table(rows)
    lines = text.splitlines()
    assert lines[0].split("\t") == list(TABLE_COLUMNS)
    fields = lines[1].split("\t")
    assert fields[2] == "-1" and fields[4] == "nan"
    assert format_table(rows, header=False) == lines[1] + "\n"


def test_timing_phases():
    t = TimingReport()
    with t.phase("assembly"):
        time.sleep(0.01)
    with t.phase("assembly"):
        pass
    t.add("output", 0.5)
    assert t.calls("assembly") == 2 and t.seconds("assembly") >= 0.01
    assert t.phases == ["assembly", "output"]
    assert t.total() == pytest.approx(t.seconds("assembly") + 0.5)
    with pytest.raises(ValueError):
        t.add("x", -1.0)


def test_timing_merge_and_jsonl():
    a, b = TimingReport(), TimingReport()
    a.add("solve", 1.0)
    b.add("solve", 2.0, calls=3)
    b.add("build", 0.25)
    a.merge(b)
    a.steps.append({"step": 1, "dt": 0.5})
    recs = [json.loads(line) for line in a.to_jsonl().splitlines()]
    assert recs[0] == {"record": "phase", "name": "solve", "seconds": 3.0, "calls": 4}
    assert recs[1]["name"] == "build"
    assert recs[2] == {"record": "step", "step": 1, "dt": 0.5}


def test_phase_records_exception_time():
    t = TimingReport()
    with pytest.raises(RuntimeError):
        with t.phase("fail"):
            raise RuntimeError
    assert t.calls("fail") == 1


def test_run_bench_min_time_samples_more(monkeypatch):
    import thermomech.bench as tb
    calls = []
    orig = tb.build_classical
    monkeypatch.setattr(tb, "build_classical", lambda A: calls.append(1) or orig(A))
    run_bench(2, 0, unpreconditioned=False, repeats=2, min_time=0.05)
    assert 2 < len(calls) <= 100
