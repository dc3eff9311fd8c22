"""Reference external evaluator speaking the subprocess wire protocol.

Replays a stored learning curve instead of training anything: reads one JSON
request line from stdin, emits ``{"resource": r, "metric": y}`` for every
requested report point, then ``{"done": true}``. Persists the trained-to
resource per configuration in the checkpoint directory, so a resumed request
continues where the previous one stopped instead of re-emitting old points.

Useful both as a protocol fixture and as a template for wiring real trainers.

    python -m flexhb.echo_evaluator --curve curve.json [--stall-after N]
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .executor import CHECKPOINT_ENV


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--curve", required=True,
                        help="JSON file with a list of metrics, one per resource unit")
    parser.add_argument("--stall-after", type=int, default=None,
                        help="hang after emitting N reports (fault-injection aid)")
    parser.add_argument("--fail", action="store_true", help="exit nonzero immediately")
    args = parser.parse_args(argv)

    if args.fail:
        print("induced failure", file=sys.stderr)
        return 3

    curve = json.loads(Path(args.curve).read_text())
    request = json.loads(sys.stdin.readline())
    ckpt_dir = request.get("checkpoint_dir") or os.environ.get(CHECKPOINT_ENV)

    trained_to = 0
    state_path = None
    if ckpt_dir:
        state_path = Path(ckpt_dir) / f"{request['config_id']}.state"
        if state_path.exists():
            trained_to = json.loads(state_path.read_text())["trained_to"]

    resume = int(request["resume_from"])
    if resume > trained_to:
        print(f"no checkpoint at resource {resume}", file=sys.stderr)
        return 4

    emitted = 0
    for r in request["report_at"]:
        r = int(r)
        if r <= resume:
            continue  # never re-emit already-delivered resources
        if args.stall_after is not None and emitted >= args.stall_after:
            time.sleep(3600)
        print(json.dumps({"resource": r, "metric": curve[r - 1]}), flush=True)
        emitted += 1

    if state_path is not None:
        state_path.parent.mkdir(parents=True, exist_ok=True)
        state_path.write_text(json.dumps({"trained_to": int(request["target"])}))
    print(json.dumps({"done": True}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
