"""Command-line entry point.

Subcommands: ``mi run <config>`` (training, one sub-run per seed, aggregated
learning curves), ``mi verify <config>`` (certification suite + report),
``mi replay <run-dir>`` (reproduce a run from its config snapshot and compare
artifacts byte for byte), ``mi curves <run-dir> -o out.csv`` (re-aggregate
curves).  The ``MI_OUTPUT_ROOT`` environment variable rebases relative output
directories.  Exit codes: 0 ok, 1 run failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, config_to_json, load_config, save_config
from .exceptions import ConfigError, MimicError
from .training import CURVE_HEADER, run_single, run_verification_suite

__all__ = ["main"]

OK, RUN_FAILURE, CONFIG_ERROR = 0, 1, 2


def _resolve_output_dir(cfg: RunConfig, override: str | None) -> str:
    out = override or cfg.output_dir
    if out is None:
        env = cfg.env_name or "corpus"
        out = os.path.join("runs", f"{cfg.mode}-{env}")
    if not os.path.isabs(out):
        out = os.path.join(os.environ.get("MI_OUTPUT_ROOT", "."), out)
    return out


def _seed_dir(root: str, seed: int) -> str:
    return os.path.join(root, f"seed_{seed}")


def _aggregate_curves(root: str, seeds: list[int]) -> str:
    """Mean and std across the per-seed eval means at each logged budget."""
    per_seed = []
    for seed in seeds:
        path = os.path.join(_seed_dir(root, seed), "curve.csv")
        rows = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != CURVE_HEADER:
                raise MimicError(f"unexpected curve header in {path}: {header!r}")
            for line in fh:
                steps, mean, _std = line.strip().split(",")
                rows.append((int(steps), float(mean)))
        per_seed.append(rows)
    lengths = {len(r) for r in per_seed}
    if len(lengths) != 1:
        raise MimicError("per-seed curves have differing lengths; cannot aggregate")
    lines = [CURVE_HEADER]
    for i in range(lengths.pop()):
        budgets = {rows[i][0] for rows in per_seed}
        if len(budgets) != 1:
            raise MimicError("per-seed curves disagree on step budgets")
        vals = np.array([rows[i][1] for rows in per_seed])
        lines.append(f"{budgets.pop()},{float(vals.mean())!r},{float(vals.std())!r}")
    return "\n".join(lines) + "\n"


def _run_training(cfg: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    save_config(cfg, os.path.join(out_dir, "config.json"))
    adversarial = cfg.mode == "mi"
    status = OK
    for seed in cfg.seeds:
        try:
            run_single(cfg, seed, _seed_dir(out_dir, seed), adversarial)
        except MimicError as exc:
            print(f"seed {seed} failed: {exc}", file=sys.stderr)
            status = RUN_FAILURE
    if status == OK:
        with open(os.path.join(out_dir, "curves.csv"), "w") as fh:
            fh.write(_aggregate_curves(out_dir, cfg.seeds))
        print(f"run complete: {out_dir}")
    return status


def _run_verify(cfg: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    save_config(cfg, os.path.join(out_dir, "config.json"))
    rng = np.random.default_rng(cfg.seeds[0])
    reports = run_verification_suite(cfg.verify, rng)
    with open(os.path.join(out_dir, "verify_report.jsonl"), "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_dict(), sort_keys=True) + "\n")
    violated = [r for r in reports if not r.verdict]
    groups: dict[str, list] = {}
    for rep in reports:
        groups.setdefault(rep.instance.split("#")[0].strip(), []).append(rep)
    width = max(len(g) for g in groups)
    print(f"{'check':<{width}}  {'count':>5}  {'violations':>10}  {'worst slack':>12}")
    for name, reps in groups.items():
        bad = sum(not r.verdict for r in reps)
        worst = min(r.slack for r in reps)
        print(f"{name:<{width}}  {len(reps):>5}  {bad:>10}  {worst:>12.3e}")
    print(f"total: {len(reports)} checks, {len(violated)} violated -> {out_dir}")
    return OK if not violated else RUN_FAILURE


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out_dir = _resolve_output_dir(cfg, args.output)
    if cfg.mode == "verify":
        return _run_verify(cfg, out_dir)
    return _run_training(cfg, out_dir)


def _cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if cfg.mode != "verify":
        cfg.mode = "verify"
        cfg.validate()
    return _run_verify(cfg, _resolve_output_dir(cfg, args.output))


def _cmd_replay(args) -> int:
    snapshot = os.path.join(args.run_dir, "config.json")
    cfg = load_config(snapshot)
    replay_dir = args.output or os.path.join(args.run_dir, "replay")
    if cfg.mode == "verify":
        return _run_verify(cfg, replay_dir)
    status = _run_training(cfg, replay_dir)
    if status != OK:
        return status
    original = os.path.join(args.run_dir, "curves.csv")
    replayed = os.path.join(replay_dir, "curves.csv")
    with open(original, "rb") as a, open(replayed, "rb") as b:
        if a.read() != b.read():
            print("replay mismatch: curves.csv differs from the original", file=sys.stderr)
            return RUN_FAILURE
    print("replay reproduced the original curves byte-identically")
    return OK


def _cmd_curves(args) -> int:
    cfg = load_config(os.path.join(args.run_dir, "config.json"))
    csv = _aggregate_curves(args.run_dir, cfg.seeds)
    with open(args.output, "w") as fh:
        fh.write(csv)
    print(f"wrote {args.output}")
    return OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mi", description="Adversarial transition-model learning and certification."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a training or verification config")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", default=None, help="override the output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_ver = sub.add_parser("verify", help="run the certification suite")
    p_ver.add_argument("config")
    p_ver.add_argument("-o", "--output", default=None)
    p_ver.set_defaults(fn=_cmd_verify)

    p_rep = sub.add_parser("replay", help="reproduce a run from its config snapshot")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("-o", "--output", default=None)
    p_rep.set_defaults(fn=_cmd_replay)

    p_cur = sub.add_parser("curves", help="re-aggregate per-seed learning curves")
    p_cur.add_argument("run_dir")
    p_cur.add_argument("-o", "--output", required=True)
    p_cur.set_defaults(fn=_cmd_curves)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except MimicError as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
