"""Experiment orchestration: seeded train/eval runs and grid sweeps with CSV output.

A sweep is the Cartesian product of ``c_max`` values, arrival settings,
reward kinds and seeds. Each (cell, seed) trains one agent, evaluates its
greedy policy and yields one :class:`ResultRow`. Cells are independent, so
they may run in worker processes; results are always merged in grid order.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .env import CFNEnv, EnvConfig, RewardKind
from .metrics import finalize
from .policies import Learned, Policy, make_policy
from .rl.checkpoint import CheckpointError, config_hash, save_checkpoint
from .rl.ppo import TrainConfig, TrainingDivergence, train
from .sim import (ConfigError, DeterministicArrivals, DeterministicDelay, SimConfig,
                  StochasticDelay, UniformArrivals)

log = logging.getLogger(__name__)

OUTPUT_ENV_VAR = "AVA_OUTPUT_DIR"
CSV_COLUMNS = ("c_max", "arrival_model", "reward_kind", "seed",
               "update_rate", "accuracy", "avg_aoi", "mean_return")
FULL_GRID_INTERVALS_S = (0.0167, 0.02, 0.025, 0.0333, 0.05, 0.1)
UNIFORM_SPREAD = 1.5


# -- textual labels for arrival and delay models ---------------------------------

def arrival_label(model) -> str:
    if isinstance(model, DeterministicArrivals):
        return f"det:{model.interval_s:g}"
    if isinstance(model, UniformArrivals):
        return f"uni:{model.min_s:g}:{model.max_s:g}"
    raise ConfigError(f"arrival model {model!r} has no label")


def parse_arrival(text: str):
    """``det:<interval_s>`` or ``uni:<min_s>[:<max_s>]`` (max defaults to 1.5 x min)."""
    kind, *args = str(text).split(":")
    try:
        nums = [float(a) for a in args]
    except ValueError as exc:
        raise ConfigError(f"bad arrival setting {text!r}") from exc
    if kind == "det" and len(nums) == 1:
        return DeterministicArrivals(nums[0])
    if kind == "uni" and len(nums) in (1, 2):
        hi = nums[1] if len(nums) == 2 else UNIFORM_SPREAD * nums[0]
        return UniformArrivals(nums[0], hi)
    raise ConfigError(f"bad arrival setting {text!r}")


def parse_delay(text: str):
    """``det:<slots>`` or ``stoch:<base_slots>:<rate>``."""
    kind, *args = str(text).split(":")
    try:
        if kind == "det" and len(args) == 1:
            return DeterministicDelay(int(args[0]))
        if kind == "stoch" and len(args) == 2:
            return StochasticDelay(int(args[0]), float(args[1]))
    except ValueError as exc:
        raise ConfigError(f"bad delay setting {text!r}") from exc
    raise ConfigError(f"bad delay setting {text!r}")


# -- spec, cells, rows ------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    c_max: int
    arrival_model: object
    reward_kind: RewardKind

    @property
    def key(self) -> tuple:
        return (self.c_max, arrival_label(self.arrival_model), RewardKind(self.reward_kind).value)

    @property
    def slug(self) -> str:
        c, arr, kind = self.key
        return f"c{c}_{arr.replace(':', '-')}_{kind}"


@dataclass
class ExperimentSpec:
    c_max: Sequence[int] = (1, 2, 4)
    arrivals: Sequence[object] = (DeterministicArrivals(0.025), UniformArrivals(0.05, 0.075))
    reward_kinds: Sequence[RewardKind] = (RewardKind.AVA, RewardKind.QAOI)
    seeds: Sequence[int] = (0, 1, 2)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(total_steps=100_000))
    eval_duration_s: float = 100.0
    delay_model: object = StochasticDelay(4, 1.0)
    update_cost: float = 0.5
    age_norm: float = 100.0
    heuristics: Sequence[str] = ("always", "never")

    def validate(self) -> "ExperimentSpec":
        if not self.c_max or not self.arrivals or not self.reward_kinds:
            raise ConfigError("experiment grid is empty")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        if not self.eval_duration_s > 0:
            raise ConfigError("eval_duration_s must be positive")
        for kind in self.reward_kinds:
            RewardKind(kind)
        self.train.validate()
        for cell in self.cells():
            self.env_config(cell).validate()
        return self

    def cells(self) -> list:
        return [Cell(int(c), arr, RewardKind(kind))
                for c in self.c_max for arr in self.arrivals for kind in self.reward_kinds]

    def env_config(self, cell: Cell, seed: int = 0) -> EnvConfig:
        sim = SimConfig(c_max=cell.c_max, arrival_model=cell.arrival_model,
                        delay_model=self.delay_model, rng_seed=seed)
        return EnvConfig(sim=sim, reward_kind=RewardKind(cell.reward_kind),
                         update_cost=self.update_cost, episode_len=self.train.episode_len,
                         age_norm=self.age_norm)

    def cell_hash(self, cell: Cell) -> str:
        return config_hash({"cell": cell.key, "train": asdict(self.train),
                            "delay": repr(self.delay_model), "update_cost": self.update_cost,
                            "age_norm": self.age_norm})


@dataclass
class ResultRow:
    c_max: int
    arrival_model: str
    reward_kind: str
    seed: int
    update_rate: Optional[float] = None
    accuracy: Optional[float] = None
    avg_aoi: Optional[float] = None
    mean_return: Optional[float] = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    def csv_values(self) -> list:
        return ["" if getattr(self, c) is None else getattr(self, c) for c in CSV_COLUMNS]


def desk_profile() -> ExperimentSpec:
    return ExperimentSpec()


def full_profile() -> ExperimentSpec:
    arrivals = [DeterministicArrivals(x) for x in FULL_GRID_INTERVALS_S]
    arrivals += [UniformArrivals(x, UNIFORM_SPREAD * x) for x in FULL_GRID_INTERVALS_S]
    return ExperimentSpec(c_max=(1, 2, 3, 4), arrivals=tuple(arrivals),
                          reward_kinds=tuple(RewardKind),
                          train=TrainConfig(total_steps=500_000))


def load_spec(path, base: Optional[ExperimentSpec] = None) -> ExperimentSpec:
    """Read a YAML file whose keys mirror :class:`ExperimentSpec` fields.

    ``arrivals`` and ``delay_model`` use the textual forms accepted by
    :func:`parse_arrival` / :func:`parse_delay`; ``train`` is a mapping of
    :class:`TrainConfig` fields.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    spec = base or desk_profile()
    known = {f.name for f in fields(ExperimentSpec)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    updates = {}
    for key, value in raw.items():
        if key == "arrivals":
            value = tuple(parse_arrival(v) for v in value)
        elif key == "delay_model":
            value = parse_delay(value)
        elif key == "reward_kinds":
            value = tuple(RewardKind(v) for v in value)
        elif key == "train":
            train_fields = {f.name for f in fields(TrainConfig)}
            bad = set(value) - train_fields
            if bad:
                raise ConfigError(f"{path}: unknown train keys {sorted(bad)}")
            if "hidden" in value:
                value = dict(value, hidden=tuple(value["hidden"]))
            value = replace(spec.train, **value)
        elif key in ("c_max", "seeds", "heuristics"):
            value = tuple(value)
        updates[key] = value
    return replace(spec, **updates)


def output_dir(default="runs") -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR, default))


def eval_seed(seed: int) -> int:
    # evaluation traffic is independent of every training episode
    return int(np.random.SeedSequence([seed, 0xE7A1]).generate_state(1)[0])


# -- single runs -------------------------------------------------------------------

def run_train(spec: ExperimentSpec, cell: Cell, seed: int, out_dir) -> Path:
    """Train one agent for ``cell`` and write its checkpoint and learning curve."""
    env_cfg = spec.env_config(cell, seed).validate()
    out_dir = Path(out_dir)
    env = CFNEnv(env_cfg, seed=seed)
    params, curve = train(env, spec.train, seed)
    ckpt = save_checkpoint(params, out_dir / "checkpoints" / f"{cell.slug}_s{seed}.ckpt",
                           spec.cell_hash(cell))
    curve_path = _mkparent(out_dir / "curves" / f"{cell.slug}_s{seed}.csv")
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update_index", "mean_return", "policy_loss", "value_loss", "entropy"])
        for p in curve:
            w.writerow([p.update_index, p.mean_return, p.policy_loss, p.value_loss, p.entropy])
    return ckpt


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def run_eval(policy: Policy, env_cfg: EnvConfig, seed: int, eval_duration_s: float) -> dict:
    """Run ``policy`` for ``eval_duration_s`` of simulated time and return finalized metrics.

    ``mean_return`` is the reward collected per ``env_cfg.episode_len`` slots.
    """
    if not eval_duration_s > 0:
        raise ConfigError("eval_duration_s must be positive")
    n_slots = int(round(eval_duration_s / env_cfg.sim.slot_duration_s))
    env = CFNEnv(replace(env_cfg, episode_len=n_slots), seed=seed)
    policy.reset()
    obs = env.reset(seed)
    total = 0.0
    for _ in range(n_slots):
        res = env.step(policy.act(obs))
        total += res.reward
        obs = res.observation
    out = finalize(env.metrics, env_cfg.sim.slot_duration_s)
    out["mean_return"] = total * env_cfg.episode_len / n_slots
    out["slots"] = n_slots
    out["updates"] = env.metrics.total_updates
    return out


def _row(cell_key, seed, metrics=None, error="") -> ResultRow:
    c_max, arrival, kind = cell_key
    row = ResultRow(c_max, arrival, kind, seed, error=error)
    if metrics is not None:
        row.update_rate = metrics["update_rate_per_s"]
        row.accuracy = metrics.get("accuracy")
        row.avg_aoi = metrics["avg_aoi_slots"]
        row.mean_return = metrics["mean_return"]
    return row


def run_cell(spec: ExperimentSpec, cell: Cell, seed: int, out_dir) -> ResultRow:
    """Train then evaluate one (cell, seed); failures come back as a row with ``error`` set."""
    try:
        ckpt = run_train(spec, cell, seed, out_dir)
        env_cfg = spec.env_config(cell, seed)
        policy = Learned.from_checkpoint(ckpt, env_cfg, spec.cell_hash(cell))
        metrics = run_eval(policy, env_cfg, eval_seed(seed), spec.eval_duration_s)
    except (TrainingDivergence, CheckpointError, FloatingPointError) as exc:
        log.warning("cell %s seed %d failed: %s", cell.slug, seed, exc)
        return _row(cell.key, seed, error=f"{type(exc).__name__}: {exc}")
    return _row(cell.key, seed, metrics)


def run_heuristic(spec: ExperimentSpec, cell: Cell, seed: int, name: str) -> ResultRow:
    env_cfg = spec.env_config(cell, seed)
    metrics = run_eval(make_policy(name, env_cfg), env_cfg, eval_seed(seed), spec.eval_duration_s)
    c_max, arrival, _ = cell.key
    return _row((c_max, arrival, name), seed, metrics)


# -- sweeps ------------------------------------------------------------------------

def _job(args):
    spec, cell, seed, out_dir, heuristic = args
    if heuristic:
        return run_heuristic(spec, cell, seed, heuristic)
    return run_cell(spec, cell, seed, out_dir)


def _run_jobs(jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so results line up with the grid
        return list(pool.map(_job, jobs))


def write_rows(rows, path) -> Path:
    path = _mkparent(Path(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_values())
    return path


def aggregate(rows) -> dict:
    """Mean of each metric across seeds, keyed by (arrival_model, c_max, reward_kind)."""
    groups = {}
    for r in rows:
        if r.ok:
            groups.setdefault((r.arrival_model, r.c_max, r.reward_kind), []).append(r)
    out = {}
    for key, members in groups.items():
        out[key] = {"n": len(members)}
        for metric in ("update_rate", "accuracy", "avg_aoi", "mean_return"):
            vals = [getattr(m, metric) for m in members if getattr(m, metric) is not None]
            out[key][metric] = float(np.mean(vals)) if vals else None
    return out


def write_figures(rows, out_dir) -> list:
    """One CSV per metric: rows are (arrival_model, c_max), columns are policies."""
    agg = aggregate(rows)
    kinds = list(dict.fromkeys(k for _, _, k in agg))
    settings = list(dict.fromkeys((a, c) for a, c, _ in agg))
    paths = []
    for metric in ("update_rate", "accuracy", "avg_aoi"):
        path = _mkparent(Path(out_dir) / f"figure_{metric}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arrival_model", "c_max", *kinds])
            for arrival, c_max in settings:
                vals = [agg.get((arrival, c_max, k), {}).get(metric) for k in kinds]
                w.writerow([arrival, c_max, *["" if v is None else v for v in vals]])
        paths.append(path)
    return paths


def run_sweep(spec: ExperimentSpec, out_dir=None, workers: int = 1) -> list:
    """Run the full grid and write ``results.csv``, ``heuristics.csv``, ``failures.csv``
    and per-metric figure tables under ``out_dir``. Returns agent rows then heuristic rows."""
    spec.validate()
    out_dir = Path(out_dir) if out_dir is not None else output_dir()
    cells = spec.cells()
    jobs = [(spec, cell, seed, out_dir, None) for cell in cells for seed in spec.seeds]
    # heuristics do not depend on the reward kind, so evaluate them once per setting
    settings = list(dict.fromkeys((c.c_max, c.arrival_model) for c in cells))
    hjobs = [(spec, Cell(c, arr, RewardKind.AVA), seed, out_dir, name)
             for c, arr in settings for name in spec.heuristics for seed in spec.seeds]
    results = _run_jobs(jobs + hjobs, workers)
    rows, hrows = results[:len(jobs)], results[len(jobs):]
    write_rows(rows, out_dir / "results.csv")
    write_rows(hrows, out_dir / "heuristics.csv")
    with open(out_dir / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c_max", "arrival_model", "reward_kind", "seed", "error"])
        for r in rows:
            if not r.ok:
                w.writerow([r.c_max, r.arrival_model, r.reward_kind, r.seed, r.error])
    write_figures(rows + hrows, out_dir)
    return rows + hrows
