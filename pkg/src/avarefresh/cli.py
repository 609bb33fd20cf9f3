"""Command-line entry point: ``avarefresh {train,eval,sweep,replay,env-serve}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .env import CFNEnv, RewardKind, UsageError
from .harness import (Cell, desk_profile, eval_seed, load_spec, output_dir, full_profile,
                      parse_arrival, parse_delay, run_cell, run_eval, run_sweep, run_train,
                      write_rows)
from .policies import make_policy
from .replay import Scenario, format_trace, replay
from .rl.checkpoint import CheckpointError
from .sim import ConfigError, write_trace


def _spec_from_args(args):
    spec = full_profile() if getattr(args, "full_grid", False) else desk_profile()
    if getattr(args, "config", None):
        spec = load_spec(args.config, base=spec)
    overrides = {}
    if getattr(args, "steps", None):
        overrides["train"] = replace(spec.train, total_steps=args.steps)
    if getattr(args, "delay", None):
        overrides["delay_model"] = parse_delay(args.delay)
    if getattr(args, "duration", None):
        overrides["eval_duration_s"] = args.duration
    if getattr(args, "seeds", None):
        overrides["seeds"] = tuple(args.seeds)
    return replace(spec, **overrides)


def _cell_from_args(args) -> Cell:
    return Cell(args.c_max, parse_arrival(args.arrival), RewardKind(args.reward))


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    spec.validate()
    out = Path(args.out) if args.out else output_dir()
    if args.eval:
        row = run_cell(spec, _cell_from_args(args), args.seed, out)
        write_rows([row], out / f"{_cell_from_args(args).slug}_s{args.seed}.csv")
        print(json.dumps(row.__dict__))
        return 0 if row.ok else 1
    print(run_train(spec, _cell_from_args(args), args.seed, out))
    return 0


def cmd_eval(args) -> int:
    spec = _spec_from_args(args)
    cell = _cell_from_args(args)
    env_cfg = spec.env_config(cell, args.seed).validate()
    policy = make_policy(args.policy, env_cfg)
    metrics = run_eval(policy, env_cfg, eval_seed(args.seed), spec.eval_duration_s)
    print(json.dumps(metrics))
    return 0


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out) if args.out else output_dir()
    rows = run_sweep(spec, out, workers=args.workers)
    failed = [r for r in rows if not r.ok]
    print(f"{len(rows) - len(failed)}/{len(rows)} runs succeeded; results in {out}")
    return 0 if not failed else 1


def _slots(text):
    return tuple(int(x) for x in text.split(",") if x.strip()) if text else ()


def cmd_replay(args) -> int:
    sc = Scenario()
    if args.arrivals is not None:
        sc = replace(sc, arrival_slots=_slots(args.arrivals))
    if args.actions is not None:
        sc = replace(sc, action_slots=_slots(args.actions))
    if args.slots:
        sc = replace(sc, n_slots=args.slots)
    rows = replay(sc)
    if args.trace:
        write_trace(rows, args.trace)
    print(format_trace(rows))
    return 0


def _serve_reply(env: CFNEnv, msg: dict) -> dict:
    cmd = msg.get("cmd")
    if cmd == "reset":
        obs = env.reset_vector(msg.get("seed"))
        return {"obs": obs.tolist()}
    if cmd == "step":
        obs, reward, done, info = env.step_vector(msg.get("action"))
        return {"obs": obs.tolist(), "reward": reward, "done": done,
                "info": {"slot": info.slot, "dispatched": info.update_dispatched,
                         "arrivals": info.arrivals_at_ap,
                         "outcomes": [o.value for o in info.decision_outcomes]}}
    raise ValueError(f"unknown cmd {cmd!r}")


def serve(env: CFNEnv, stdin, stdout) -> None:
    """Newline-delimited JSON loop: one request per line, one reply per line."""
    for line in stdin:
        if not line.strip():
            continue
        try:
            reply = _serve_reply(env, json.loads(line))
        except (ValueError, UsageError, TypeError) as exc:
            reply = {"error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def cmd_env_serve(args) -> int:
    spec = _spec_from_args(args)
    env = CFNEnv(spec.env_config(_cell_from_args(args), args.seed))
    serve(env, sys.stdin, sys.stdout)
    return 0


def _add_cell_args(p):
    p.add_argument("--c-max", type=int, default=4)
    p.add_argument("--arrival", default="det:0.025", help="det:<s> or uni:<min_s>[:<max_s>]")
    p.add_argument("--reward", default="AVA", choices=[k.value for k in RewardKind])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delay", help="det:<slots> or stoch:<base>:<rate>")
    p.add_argument("--config", help="YAML experiment file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avarefresh", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent and save its checkpoint")
    _add_cell_args(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--eval", action="store_true", help="also evaluate the greedy policy")
    p.add_argument("--duration", type=float, help="evaluation length in seconds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a heuristic or a checkpoint")
    _add_cell_args(p)
    p.add_argument("--policy", default="always",
                   help="always | never | periodic:<slots> | threshold:<theta> | learned:<path>")
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate over a grid")
    p.add_argument("--config")
    p.add_argument("--full-grid", action="store_true", help="use the full published grid")
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--delay")
    p.add_argument("--duration", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="print a scripted slot-by-slot trace")
    p.add_argument("--arrivals", help="comma-separated arrival slots")
    p.add_argument("--actions", help="comma-separated update slots")
    p.add_argument("--slots", type=int)
    p.add_argument("--trace", help="also write the trace as JSON lines")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("env-serve", help="expose the environment over stdin/stdout JSON lines")
    _add_cell_args(p)
    p.set_defaults(func=cmd_env_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
