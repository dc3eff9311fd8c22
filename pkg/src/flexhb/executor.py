"""Evaluation transport: the virtual clock and the two evaluator backends.

In-process evaluation replays a benchmark and advances the virtual clock by
the benchmark's incremental training cost as each report point is reached.
Subprocess evaluation speaks a JSON-lines protocol with an external trainer
(one request object on stdin; ``{"resource": r, "metric": y}`` lines and a
final ``{"done": true}`` on stdout) and charges wall time to the clock. Any
protocol violation, nonzero exit, or missing done marker turns the whole
evaluation into a failure and discards partial metrics.
"""

from __future__ import annotations

import json
import os
import queue
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from typing import Sequence

from .bench import BenchmarkError
from .space import Configuration

CHECKPOINT_ENV = "FLEXHB_CHECKPOINT_DIR"


class VirtualClock:
    """Monotone run time, advanced only by evaluation costs and proposal overhead."""

    def __init__(self, now: float = 0.0):
        self.now = float(now)

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("clock cannot move backwards")
        self.now += dt
        return self.now


@dataclass(frozen=True)
class EvaluationRequest:
    config: Configuration
    resume_from: int
    target: int
    report_at: tuple[int, ...]
    checkpoint_dir: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "report_at", tuple(self.report_at))
        if not self.resume_from < self.target:
            raise ValueError("resume_from must be below target")
        if not self.report_at or max(self.report_at) != self.target:
            raise ValueError("report_at must end at the target resource")
        if any(not self.resume_from < r <= self.target for r in self.report_at):
            raise ValueError("report points must lie in (resume_from, target]")

    def to_wire(self) -> str:
        return json.dumps({
            "config_id": self.config.id,
            "config": self.config.values,
            "resume_from": self.resume_from,
            "target": self.target,
            "report_at": list(self.report_at),
            "checkpoint_dir": self.checkpoint_dir,
        })


@dataclass(frozen=True)
class EvaluationOutcome:
    """Reports are (resource, metric, virtual time); empty when failed."""

    reports: tuple[tuple[int, float, float], ...] = ()
    failed: bool = False
    error: str = ""

    @classmethod
    def failure(cls, error: str) -> "EvaluationOutcome":
        return cls(reports=(), failed=True, error=error)


class InprocEvaluator:
    """Runs benchmark evaluations directly, driving the virtual clock."""

    def __init__(self, benchmark, clock: VirtualClock):
        self.benchmark = benchmark
        self.clock = clock

    def evaluate(self, request: EvaluationRequest) -> EvaluationOutcome:
        reports = []
        prev = request.resume_from
        try:
            for r in request.report_at:
                cost = self.benchmark.incremental_cost(request.config, prev, r)
                metric = self.benchmark.evaluate(request.config, r)
                self.clock.advance(cost)
                reports.append((r, float(metric), self.clock.now))
                prev = r
        except BenchmarkError as exc:
            return EvaluationOutcome.failure(str(exc))
        return EvaluationOutcome(tuple(reports))

    def measure_only(self, config: Configuration, resource: int) -> float:
        """Metric lookup at an already-trained resource; costs nothing."""
        return float(self.benchmark.evaluate(config, resource))


class SubprocessEvaluator:
    """Launches an external evaluator per request and parses its report stream."""

    def __init__(self, command: Sequence[str], clock: VirtualClock,
                 checkpoint_dir: str, timeout: float | None = None):
        self.command = list(command)
        self.clock = clock
        self.checkpoint_dir = checkpoint_dir
        self.timeout = timeout

    def evaluate(self, request: EvaluationRequest) -> EvaluationOutcome:
        if request.checkpoint_dir is None:
            request = EvaluationRequest(request.config, request.resume_from,
                                        request.target, request.report_at,
                                        self.checkpoint_dir)
        env = dict(os.environ, **{CHECKPOINT_ENV: request.checkpoint_dir})
        start_wall = time.monotonic()
        start_clock = self.clock.now
        raw: list[tuple[int, float, float]] = []
        done = False
        error = ""
        with tempfile.TemporaryFile(mode="w+") as stderr_file:
            try:
                proc = subprocess.Popen(self.command, stdin=subprocess.PIPE,
                                        stdout=subprocess.PIPE, stderr=stderr_file,
                                        text=True, env=env)
            except OSError as exc:
                return EvaluationOutcome.failure(f"failed to launch evaluator: {exc}")
            lines: queue.Queue[str | None] = queue.Queue()
            reader = threading.Thread(target=_pump_lines, args=(proc.stdout, lines),
                                      daemon=True)
            reader.start()
            try:
                proc.stdin.write(request.to_wire() + "\n")
                proc.stdin.flush()
                proc.stdin.close()
            except BrokenPipeError:
                error = "evaluator closed stdin early"
            expected = set(request.report_at)
            while not error and not done:
                remaining = None
                if self.timeout is not None:
                    remaining = self.timeout - (time.monotonic() - start_wall)
                    if remaining <= 0:
                        error = "evaluator timed out"
                        break
                try:
                    line = lines.get(timeout=remaining)
                except queue.Empty:
                    error = "evaluator timed out"
                    break
                if line is None:
                    break  # EOF
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    error = f"unparseable evaluator output: {line!r}"
                    break
                if msg.get("done"):
                    done = True
                elif "resource" not in msg or "metric" not in msg:
                    error = f"malformed report: {line!r}"
                elif int(msg["resource"]) not in expected:
                    error = (f"unexpected resource {msg['resource']} "
                             f"(report_at={sorted(expected)})")
                else:
                    raw.append((int(msg["resource"]), float(msg["metric"]),
                                time.monotonic() - start_wall))
            if proc.poll() is None and (error or not done):
                proc.kill()
            code = proc.wait()
            reader.join(timeout=5.0)
            stderr_file.seek(0)
            stderr_tail = stderr_file.read()[-500:].strip()
        self.clock.advance(time.monotonic() - start_wall)
        if error:
            return EvaluationOutcome.failure(_with_stderr(error, stderr_tail))
        if code != 0:
            return EvaluationOutcome.failure(
                _with_stderr(f"evaluator exited with status {code}", stderr_tail))
        if not done:
            return EvaluationOutcome.failure(
                _with_stderr("evaluator ended without done marker", stderr_tail))
        missing = set(request.report_at) - {r for r, _, _ in raw}
        if missing:
            return EvaluationOutcome.failure(f"missing reports for resources {sorted(missing)}")
        reports = tuple((r, y, start_clock + dt) for r, y, dt in raw)
        return EvaluationOutcome(reports)


def _pump_lines(stream, out: "queue.Queue[str | None]") -> None:
    try:
        for line in stream:
            out.put(line)
    finally:
        out.put(None)


def _with_stderr(error: str, stderr_tail: str) -> str:
    return f"{error} [stderr: {stderr_tail}]" if stderr_tail else error
