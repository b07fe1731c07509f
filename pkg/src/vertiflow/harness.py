"""Run orchestration: config files, episode metrics, aggregation, exports.

All exports are deterministic byte-for-byte given (config, seeds): floats are
serialized with repr (shortest round-trip form), json records sort their
keys, and rows follow fixed column orders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import ppo
from .env import EnvConfig, MobilityEnv, VertiportSpec, passenger_times
from .neural import NetConfig, PolicyNetwork, load_checkpoint, no_grad, save_checkpoint
from .policies import POLICY_KINDS, Policy, make_policy

DEFAULT_SEEDS = tuple(range(10))
DEFAULT_UPDATES = 400
DEFAULT_NET_OPTS: Dict[str, object] = dict(
    d_model=64, n_layers=2, n_heads=4, d_ff=128, d_out=64,
    use_embedding=True, use_transformer=True)
DEFAULT_POLICY_OPTS: Dict[str, object] = dict(
    rule_weights=(3.0, 1.0), qtti_include_enroute=True)
SWEEP_PASSENGERS = (100, 200, 300)
SWEEP_SEATS = (3, 4)

METRIC_KEYS = ("att", "awt", "aet", "agt", "aat")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    train: ppo.TrainConfig
    updates: int
    net_opts: Dict[str, object]
    policy: str
    seeds: Tuple[int, ...]
    out_dir: str
    policy_opts: Dict[str, object]
    sweep_passengers: Tuple[int, ...]
    sweep_seats: Tuple[int, ...]


def _check_keys(raw: dict, allowed: Iterable[str], prefix: str = "") -> None:
    allowed = set(allowed)
    for key in raw:
        if key not in allowed:
            raise ValueError(f"unknown key {prefix}{key}")


def load_config(path: Optional[str]) -> RunConfig:
    """Load a yaml run config; None means all defaults. Unknown keys and
    out-of-range values are rejected with the offending key named.
    """
    if path is None:
        raw: dict = {}
    else:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValueError("config root must be a mapping")
    _check_keys(raw, ("policy", "seeds", "out_dir", "env", "train", "net",
                      "policy_opts", "sweep"))

    env_raw = dict(raw.get("env") or {})
    _check_keys(env_raw, (f.name for f in fields(EnvConfig)), "env.")
    if "vertiports" in env_raw:
        env_raw["vertiports"] = tuple(
            v if isinstance(v, VertiportSpec) else VertiportSpec(**v)
            for v in env_raw["vertiports"])
    if "blocked" in env_raw and env_raw["blocked"] is not None:
        env_raw["blocked"] = tuple((int(i), int(j)) for i, j in env_raw["blocked"])
    env_cfg = EnvConfig(**env_raw)

    train_raw = dict(raw.get("train") or {})
    updates = train_raw.pop("updates", DEFAULT_UPDATES)
    if not isinstance(updates, int) or updates < 1:
        raise ValueError("train.updates must be a positive integer")
    _check_keys(train_raw, (f.name for f in fields(ppo.TrainConfig)), "train.")
    train_cfg = ppo.TrainConfig(**train_raw)

    net_raw = dict(raw.get("net") or {})
    _check_keys(net_raw, DEFAULT_NET_OPTS, "net.")
    net_opts = {**DEFAULT_NET_OPTS, **net_raw}

    policy = raw.get("policy", "qtti")
    if policy not in POLICY_KINDS:
        raise ValueError(f"policy must be one of {POLICY_KINDS}, got {policy!r}")

    seeds_raw = raw.get("seeds", list(DEFAULT_SEEDS))
    if (not isinstance(seeds_raw, (list, tuple)) or len(seeds_raw) == 0
            or not all(isinstance(s, int) for s in seeds_raw)):
        raise ValueError("seeds must be a non-empty list of integers")
    seeds = tuple(seeds_raw)

    popts_raw = dict(raw.get("policy_opts") or {})
    _check_keys(popts_raw, DEFAULT_POLICY_OPTS, "policy_opts.")
    policy_opts = {**DEFAULT_POLICY_OPTS, **popts_raw}
    policy_opts["rule_weights"] = tuple(policy_opts["rule_weights"])

    sweep_raw = dict(raw.get("sweep") or {})
    _check_keys(sweep_raw, ("passengers", "seats"), "sweep.")
    sweep_passengers = tuple(sweep_raw.get("passengers", SWEEP_PASSENGERS))
    sweep_seats = tuple(sweep_raw.get("seats", SWEEP_SEATS))

    return RunConfig(env=env_cfg, train=train_cfg, updates=updates,
                     net_opts=net_opts, policy=policy, seeds=seeds,
                     out_dir=str(raw.get("out_dir", "runs")),
                     policy_opts=policy_opts,
                     sweep_passengers=sweep_passengers, sweep_seats=sweep_seats)


# -- episode metrics ------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeMetrics:
    policy: str
    seed: int
    n_passengers: int
    att: float
    att_var: float
    awt: float
    awt_var: float
    aet: float
    aet_var: float
    agt: float
    agt_var: float
    aat: float
    aat_var: float
    tt_eps: float
    port_ids: Tuple[int, ...]
    shares: Tuple[float, ...]
    totals: Tuple[float, ...]


def _check_identities(m: EpisodeMetrics) -> None:
    if abs(m.att - (m.awt + m.aet)) > 1e-9:
        raise ValueError(
            f"metric identity violated: att {m.att} != awt + aet {m.awt + m.aet}")
    if abs(m.aet - (m.agt + m.aat + m.tt_eps)) > 1e-9:
        raise ValueError(
            f"metric identity violated: aet {m.aet} != agt + aat + tt_eps "
            f"{m.agt + m.aat + m.tt_eps}")
    share_sum = sum(m.shares)
    if share_sum != 0.0 and abs(share_sum - 100.0) > 1e-9:
        raise ValueError(f"metric identity violated: shares sum to {share_sum}")


def run_episode(env_cfg: EnvConfig, policy: Policy, seed: int
                ) -> Tuple[EpisodeMetrics, List[dict]]:
    """Drive one episode to completion and decompose realized travel times."""
    if policy.kind == "ground" and not env_cfg.ground_mode:
        raise ValueError("the ground policy needs env.ground_mode: true")
    env = MobilityEnv(env_cfg)
    env.reset(seed)
    done = False
    while not done:
        _, _, done, _ = env.step(policy.act(env))

    times = [passenger_times(p, env_cfg.tt_eps_min) for p in env.passengers]
    cols = {key: np.array([t[key] for t in times])
            for key in ("total", "wait", "evtol", "ground", "air")}
    port_ids = tuple(s.id for s in env.dep_specs)
    counts = {pid: 0 for pid in port_ids}
    for p in env.passengers:
        if p.departure_vp is not None:
            counts[p.departure_vp] += 1
    n = len(env.passengers)
    shares = tuple(100.0 * counts[pid] / n for pid in port_ids)

    metrics = EpisodeMetrics(
        policy=policy.kind, seed=seed, n_passengers=n,
        att=float(cols["total"].mean()), att_var=float(cols["total"].var()),
        awt=float(cols["wait"].mean()), awt_var=float(cols["wait"].var()),
        aet=float(cols["evtol"].mean()), aet_var=float(cols["evtol"].var()),
        agt=float(cols["ground"].mean()), agt_var=float(cols["ground"].var()),
        aat=float(cols["air"].mean()), aat_var=float(cols["air"].var()),
        tt_eps=env_cfg.tt_eps_min, port_ids=port_ids, shares=shares,
        totals=tuple(float(t) for t in cols["total"]))
    _check_identities(metrics)
    return metrics, list(env.trace)


def simulate(run_cfg: RunConfig, out_dir: Optional[str] = None
             ) -> Tuple[List[EpisodeMetrics], List[List[dict]]]:
    """Run the configured heuristic policy over all seeds; optionally export."""
    kind = run_cfg.policy
    if kind == "learned":
        raise ValueError("simulate runs heuristic baselines; "
                         "use eval with a checkpoint for the learned policy")
    env_cfg = run_cfg.env
    if kind == "ground" and not env_cfg.ground_mode:
        env_cfg = replace(env_cfg, ground_mode=True)
    metrics, traces = [], []
    for seed in run_cfg.seeds:
        policy = make_policy(kind, seed=seed,
                             rule_weights=run_cfg.policy_opts["rule_weights"],
                             qtti_include_enroute=run_cfg.policy_opts["qtti_include_enroute"])
        m, t = run_episode(env_cfg, policy, seed)
        metrics.append(m)
        traces.append(t)
    if out_dir is not None:
        export(metrics, traces, out_dir)
    return metrics, traces


# -- aggregation -----------------------------------------------------------------


def aggregate(metrics: Sequence[EpisodeMetrics]) -> Dict[str, object]:
    """Across-episode summary; emits both variance conventions per metric."""
    if not metrics:
        raise ValueError("aggregate needs at least one episode")
    port_ids = metrics[0].port_ids
    row: Dict[str, object] = {"policy": metrics[0].policy,
                              "n_episodes": len(metrics)}
    for key in METRIC_KEYS:
        vals = np.array([getattr(m, key) for m in metrics])
        within = np.array([getattr(m, f"{key}_var") for m in metrics])
        row[f"{key}_mean"] = float(vals.mean())
        row[f"{key}_var_episodes"] = float(vals.var())
        row[f"{key}_var_passengers"] = float(within.mean())
    for i, pid in enumerate(port_ids):
        row[f"share_v{pid}_mean"] = float(np.mean([m.shares[i] for m in metrics]))
    return row


def sweep(env_cfg: EnvConfig, policy_kind: str, seeds: Sequence[int],
          passengers: Sequence[int] = SWEEP_PASSENGERS,
          seat_options: Sequence[int] = SWEEP_SEATS,
          policy_opts: Optional[Dict[str, object]] = None) -> List[Dict[str, object]]:
    """Demand x capacity grid; one aggregated row per cell."""
    opts = {**DEFAULT_POLICY_OPTS, **(policy_opts or {})}
    rows = []
    for pax in passengers:
        for seats in seat_options:
            cell = replace(env_cfg, total_passengers=pax, seats=seats)
            cell_metrics = []
            for seed in seeds:
                policy = make_policy(policy_kind, seed=seed,
                                     rule_weights=tuple(opts["rule_weights"]),
                                     qtti_include_enroute=opts["qtti_include_enroute"])
                cell_metrics.append(run_episode(cell, policy, seed)[0])
            rows.append({"passengers": pax, "seats": seats,
                         **aggregate(cell_metrics)})
    return rows


# -- exports -----------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_lines(path: Path, lines: List[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rows(rows: Sequence[Dict[str, object]], path) -> None:
    """CSV from uniform dict rows, column order = first row's key order."""
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        if list(row.keys()) != keys:
            raise ValueError("rows have inconsistent columns")
        lines.append(",".join(_fmt(row[k]) for k in keys))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_lines(path, lines)


def export(metrics: Sequence[EpisodeMetrics], traces: Sequence[List[dict]],
           out_dir) -> None:
    """Write metrics.csv, summary.csv, trace.jsonl and cdf.csv.

    Metric identities are re-checked on every row before anything is written.
    """
    if len(metrics) != len(traces):
        raise ValueError("metrics and traces must align")
    for m in metrics:
        _check_identities(m)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    port_ids = metrics[0].port_ids
    header = ["policy", "seed", "n_passengers"]
    for key in METRIC_KEYS:
        header += [f"{key}_mean", f"{key}_var"]
    header += [f"share_v{pid}" for pid in port_ids]
    lines = [",".join(header)]
    for m in metrics:
        row = [m.policy, str(m.seed), str(m.n_passengers)]
        for key in METRIC_KEYS:
            row += [_fmt(getattr(m, key)), _fmt(getattr(m, f"{key}_var"))]
        row += [_fmt(s) for s in m.shares]
        lines.append(",".join(row))
    _write_lines(out / "metrics.csv", lines)

    summary = aggregate(metrics)
    write_rows([summary], out / "summary.csv")

    trace_lines = []
    for m, trace in zip(metrics, traces):
        for rec in trace:
            trace_lines.append(json.dumps({"seed": m.seed, **rec}, sort_keys=True))
    _write_lines(out / "trace.jsonl", trace_lines)

    totals = sorted(t for m in metrics for t in m.totals)
    n = len(totals)
    cdf_lines = ["total_min,fraction"]
    cdf_lines += [f"{_fmt(t)},{_fmt((i + 1) / n)}" for i, t in enumerate(totals)]
    _write_lines(out / "cdf.csv", cdf_lines)


def validate_trace(records: Sequence[dict], port_ids: Sequence[int]) -> None:
    """Replay enqueue/board events and check every step's queue vector."""
    index = {pid: i for i, pid in enumerate(port_ids)}
    queues = [0] * len(port_ids)
    for rec in records:
        kind = rec["kind"]
        if kind == "enqueue":
            queues[index[rec["vertiport"]]] += 1
        elif kind == "board":
            queues[index[rec["vertiport"]]] -= len(rec["passengers"])
            if min(queues) < 0:
                raise ValueError(f"queue went negative at step {rec['step']}")
        elif kind == "step":
            if list(rec["queues"]) != queues:
                raise ValueError(
                    f"queue vector mismatch at step {rec['step']}: "
                    f"trace {rec['queues']} vs replay {queues}")


# -- training orchestration ----------------------------------------------------------


def build_net(run_cfg: RunConfig, env: Optional[MobilityEnv] = None,
              seed: Optional[int] = None) -> PolicyNetwork:
    if env is None:
        env = MobilityEnv(run_cfg.env)
    net_cfg = NetConfig(frame_width=env.frame_width, n_actions=env.n_actions,
                        k_frames=run_cfg.env.frame_history, **run_cfg.net_opts)
    return PolicyNetwork(net_cfg, seed=run_cfg.seeds[0] if seed is None else seed)


def train_policy(run_cfg: RunConfig, updates: int, checkpoint_dir
                 ) -> Tuple[PolicyNetwork, List[dict]]:
    """Train the learned policy and persist checkpoint plus update log."""
    ckpt = Path(checkpoint_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    net = build_net(run_cfg)

    log_path = ckpt / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        def log_fn(record: dict) -> None:
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()

        history = ppo.train(lambda: MobilityEnv(run_cfg.env), net,
                            run_cfg.train, updates, seed=run_cfg.seeds[0],
                            log_fn=log_fn)
    save_checkpoint(net, ckpt / "net.npz")
    return net, history


def greedy_score_fn(net: PolicyNetwork):
    def score(stack: np.ndarray) -> np.ndarray:
        with no_grad():
            logits, _ = net.forward(stack[None])
        return logits.data[0]
    return score


def evaluate_checkpoint(checkpoint, env_cfg: EnvConfig, seeds: Sequence[int],
                        out_dir: Optional[str] = None
                        ) -> Tuple[List[EpisodeMetrics], List[List[dict]]]:
    """Greedy evaluation of a saved network over the given seeds."""
    path = Path(checkpoint)
    if path.is_dir():
        path = path / "net.npz"
    net = load_checkpoint(path)
    policy = make_policy("learned", score_fn=greedy_score_fn(net))
    metrics, traces = [], []
    for seed in seeds:
        m, t = run_episode(env_cfg, policy, seed)
        metrics.append(m)
        traces.append(t)
    if out_dir is not None:
        export(metrics, traces, out_dir)
    return metrics, traces
