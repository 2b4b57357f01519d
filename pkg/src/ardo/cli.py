"""Command line front end: train / verify / eval.

Exit codes: 0 success, 1 usage or config problems, 2 numerical divergence.
Every emitted file goes through a temp-plus-rename so partial artifacts never
appear under their final names.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .checks import SUITES
from .config import apply_overrides, load_config, resolve
from .errors import ConfigError, DivergenceError
from .estimator import check_sampling_condition
from .networks import MlpNetwork
from .problems import builtin_problem
from .training import evaluate_l2_error, evaluation_points, solution_field, train


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ardo",
        description="Adversarial training of pointwise solution networks "
        "against difference-quotient test functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a configured problem")
    p_train.add_argument("--config", required=True, help="flat key=value config file")
    p_train.add_argument(
        "--set",
        action="append",
        default=[],
        dest="overrides",
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_train.add_argument("--out", default=None, help="output directory override")
    p_train.add_argument("--seed", type=int, default=None, help="seed override")

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("suite", help="one of: " + ", ".join(sorted(SUITES)))

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint against a problem")
    p_eval.add_argument("checkpoint", help="binary network checkpoint")
    p_eval.add_argument("problem", help="builtin problem name")
    p_eval.add_argument("dim", type=int, help="spatial dimension")
    p_eval.add_argument("--out", default=".", help="directory for the CSV dump")
    return parser


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def cmd_train(config_path, overrides, out_override=None, seed_override=None) -> int:
    try:
        raw = load_config(config_path)
        raw = apply_overrides(raw, overrides)
        if out_override is not None:
            raw["out.dir"] = out_override
        if seed_override is not None:
            raw["train.seed"] = str(seed_override)
        spec = resolve(raw)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    summary = {
        "status": "ok",
        "config": spec.resolved,
        "warnings": [],
        "wall_clock_seconds": None,
        "final": None,
    }
    check = check_sampling_condition(spec.train.step_params, spec.train.m_interior)
    if not check.ok:
        summary["warnings"].append(check.message)

    start = time.perf_counter()
    code = 0
    try:
        result = train(
            spec.problem,
            spec.train,
            hidden_widths=spec.hidden,
            activation=spec.activation,
            out_dir=out_dir,
        )
        summary["warnings"] = list(result.warnings)
        last = result.metrics.last
        if last is not None:
            summary["final"] = {
                "epoch": last.epoch,
                "loss": last.loss,
                "l2_rel": last.l2_rel,
            }
    except DivergenceError as err:
        summary["status"] = "diverged"
        summary["error"] = str(err)
        last = err.metrics.last if err.metrics is not None else None
        if last is not None:
            summary["final"] = {
                "epoch": last.epoch,
                "loss": last.loss,
                "l2_rel": last.l2_rel,
            }
        print(f"divergence: {err}", file=sys.stderr)
        code = 2

    summary["wall_clock_seconds"] = time.perf_counter() - start
    _atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    return code


def cmd_verify(suite: str) -> int:
    runner = SUITES.get(suite)
    if runner is None:
        print(
            f"unknown suite: {suite!r} (choose from {', '.join(sorted(SUITES))})",
            file=sys.stderr,
        )
        return 1
    results = runner()
    width = max(len(r.name) for r in results)
    all_passed = True
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        all_passed &= r.passed
        print(f"[{mark}] {r.name:<{width}}  {r.detail}")
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if all_passed else 1


def cmd_eval(checkpoint, problem_name, dim, out_dir=".") -> int:
    try:
        net = MlpNetwork.load(checkpoint)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        problem = builtin_problem(problem_name, dim)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    expected_in = problem.domain.dim + (1 if problem.is_parabolic else 0)
    widths = net.layer_widths
    if widths[0] != expected_in:
        print(
            f"architecture mismatch: expected input width {expected_in} for "
            f"{problem_name} dim {dim}, found widths {list(widths)}",
            file=sys.stderr,
        )
        return 1

    error = evaluate_l2_error(net, problem)
    points, times = evaluation_points(problem)
    field = solution_field(net, problem.is_parabolic)
    values = np.asarray(field(points, times), dtype=float).reshape(-1)
    exact = problem.exact_at(points, times if problem.is_parabolic else 0.0)

    header = [f"x{k}" for k in range(problem.domain.dim)]
    columns = [points[:, k] for k in range(problem.domain.dim)]
    if problem.is_parabolic:
        header.append("t")
        columns.append(times)
    header += ["f", "exact"]
    columns += [values, exact]
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(repr(float(v)) for v in row))
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_path / "eval.csv", "\n".join(lines) + "\n")

    print(error)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config, args.overrides, args.out, args.seed)
    if args.command == "verify":
        return cmd_verify(args.suite)
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.problem, args.dim, args.out)
    return 1


if __name__ == "__main__":
    sys.exit(main())
