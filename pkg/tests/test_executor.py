import json
import sys
import time

import numpy as np
import pytest

from flexhb.bench import ToyBenchmark, ToySpec
from flexhb.executor import (EvaluationRequest, InprocEvaluator, SubprocessEvaluator,
                             VirtualClock)


def test_clock_monotone():
    clock = VirtualClock()
    clock.advance(1.5)
    clock.advance(0.0)
    assert clock.now == 1.5
    with pytest.raises(ValueError):
        clock.advance(-0.1)


def make_request(resume, target, report_at, config=None):
    bench = ToyBenchmark(ToySpec(phi=0.0))
    config = config or bench.space.sample_random(np.random.default_rng(0))
    return bench, EvaluationRequest(config, resume, target, tuple(report_at))


def test_request_invariants():
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(0))
    with pytest.raises(ValueError):
        EvaluationRequest(c, 9, 9, (9,))
    with pytest.raises(ValueError):
        EvaluationRequest(c, 0, 9, (3, 6))  # must end at target
    with pytest.raises(ValueError):
        EvaluationRequest(c, 3, 9, (3, 9))  # report below resume


def test_inproc_incremental_accounting():
    bench, request = make_request(3, 9, [6, 9])
    clock = VirtualClock()
    out = InprocEvaluator(bench, clock).evaluate(request)
    assert not out.failed
    assert [r for r, _, _ in out.reports] == [6, 9]
    assert clock.now == pytest.approx(6.0)  # cost of 6 training units only
    times = [t for _, _, t in out.reports]
    assert times == [pytest.approx(3.0), pytest.approx(6.0)]


def test_inproc_single_report_vanilla():
    bench, request = make_request(0, 27, [27])
    clock = VirtualClock()
    out = InprocEvaluator(bench, clock).evaluate(request)
    assert len(out.reports) == 1
    assert clock.now == pytest.approx(27.0)


def test_inproc_deterministic_stream():
    bench = ToyBenchmark(ToySpec(phi=0.5), noise_seed=3)
    c = bench.space.sample_random(np.random.default_rng(1))
    req = EvaluationRequest(c, 0, 9, (3, 6, 9))
    a = InprocEvaluator(bench, VirtualClock()).evaluate(req)
    b = InprocEvaluator(bench, VirtualClock()).evaluate(req)
    assert [(r, y) for r, y, _ in a.reports] == [(r, y) for r, y, _ in b.reports]


def test_inproc_failure_marks_outcome():
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(2))
    req = EvaluationRequest(c, 0, 99, (99,))  # beyond the benchmark's max epoch
    out = InprocEvaluator(bench, VirtualClock()).evaluate(req)
    assert out.failed
    assert out.reports == ()


def test_inproc_budget_audit():
    # sum of clock advances equals trained units times unit cost
    bench = ToyBenchmark(ToySpec(phi=0.2, cost_per_unit=1.5), noise_seed=1)
    clock = VirtualClock()
    ev = InprocEvaluator(bench, clock)
    rng = np.random.default_rng(3)
    total_units = 0
    for _ in range(30):
        c = bench.space.sample_random(rng)
        target = int(rng.integers(2, 28))
        resume = int(rng.integers(0, target))
        ev.evaluate(EvaluationRequest(c, resume, target, (target,)))
        total_units += target - resume
    assert clock.now == pytest.approx(1.5 * total_units)


# ------------------------------------------------------------- subprocess

@pytest.fixture
def echo_cmd(tmp_path):
    curve = [round(1.0 / (r + 1), 6) for r in range(27)]
    curve_file = tmp_path / "curve.json"
    curve_file.write_text(json.dumps(curve))
    return [sys.executable, "-m", "flexhb.echo_evaluator", "--curve", str(curve_file)], curve


def test_subprocess_roundtrip_and_resume(tmp_path, echo_cmd):
    cmd, curve = echo_cmd
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(0))
    clock = VirtualClock()
    ev = SubprocessEvaluator(cmd, clock, str(tmp_path))

    out = ev.evaluate(EvaluationRequest(c, 0, 9, (3, 6, 9)))
    assert not out.failed
    assert [(r, y) for r, y, _ in out.reports] == [(3, curve[2]), (6, curve[5]), (9, curve[8])]
    assert clock.now > 0  # wall time charged

    out2 = ev.evaluate(EvaluationRequest(c, 9, 27, (12, 15, 18, 21, 24, 27)))
    assert not out2.failed
    assert [r for r, _, _ in out2.reports] == [12, 15, 18, 21, 24, 27]


def test_subprocess_killed_child_yields_failure(tmp_path, echo_cmd):
    cmd, _ = echo_cmd
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(1))
    ev = SubprocessEvaluator(cmd + ["--stall-after", "1"], VirtualClock(),
                             str(tmp_path), timeout=1.5)
    start = time.monotonic()
    out = ev.evaluate(EvaluationRequest(c, 0, 9, (3, 6, 9)))
    assert out.failed
    assert out.reports == ()  # partial metrics discarded
    assert time.monotonic() - start < 10


def test_subprocess_nonzero_exit(tmp_path, echo_cmd):
    cmd, _ = echo_cmd
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(2))
    ev = SubprocessEvaluator(cmd + ["--fail"], VirtualClock(), str(tmp_path))
    out = ev.evaluate(EvaluationRequest(c, 0, 3, (3,)))
    assert out.failed
    assert "status 3" in out.error


def test_subprocess_resume_requires_checkpoint(tmp_path, echo_cmd):
    cmd, _ = echo_cmd
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(3))
    ev = SubprocessEvaluator(cmd, VirtualClock(), str(tmp_path))
    out = ev.evaluate(EvaluationRequest(c, 5, 9, (9,)))
    assert out.failed
    assert "no checkpoint" in out.error


def test_subprocess_child_receives_checkpoint_env(tmp_path):
    # child reports the env var back as its metric source
    script = (
        "import json, os, sys\n"
        "req = json.loads(sys.stdin.readline())\n"
        "ok = os.environ.get('FLEXHB_CHECKPOINT_DIR') == req['checkpoint_dir']\n"
        "print(json.dumps({'resource': req['target'], 'metric': float(ok)}))\n"
        "print(json.dumps({'done': True}))\n"
    )
    bench = ToyBenchmark(ToySpec(phi=0.0))
    c = bench.space.sample_random(np.random.default_rng(4))
    ev = SubprocessEvaluator([sys.executable, "-c", script], VirtualClock(),
                             str(tmp_path))
    out = ev.evaluate(EvaluationRequest(c, 0, 3, (3,)))
    assert not out.failed
    assert out.reports[0][1] == 1.0
