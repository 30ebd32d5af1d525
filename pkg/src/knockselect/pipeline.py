"""End-to-end selection runs, their reports, and the ablation suite."""
from __future__ import annotations

import csv
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .agent import Agent, AgentConfig, PolicyConfig, PretrainReport, QNetwork, decay_policy, pretrain
from .autoencoder import DescriptorBank, encode, train_autoencoder, train_reconstructor
from .data import Dataset, DataError, SplitSpec, TaskKind, load_csv, split
from .environment import (
    EpisodeResult, MatrixReward, RewardConfig, RewardVariant, SelectionEnv, StateEncoder, greedy_mask, run_episode,
)
from .evaluation import (
    DOWNSTREAM, comparator_masks, compare, default_models, mean_ranks, time_profile, write_comparison_csv,
    write_json,
)
from .knockoff import KnockoffResult, ScoreMode, ThresholdMode, dump_knockoffs, generate
from .nn import TrainConfig

REPORT_VERSION = 1
FINAL_MASK_RULES = ("best-episode", "greedy", "last")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class RunError(RuntimeError):
    """A failure inside one pipeline phase; ``cause`` keeps the original exception."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    target: Optional[str] = None
    task: str = "c"
    episodes: int = 10
    seed: int = 0
    eps1: float = 0.05
    eps2: float = 0.05
    eps_decay: float = 0.9
    eps_floor: float = 0.0
    tau: float = 0.9
    threshold: str = "mean"
    score_mode: str = "correlation"
    ridge: float = 1e-6
    no_pretrain: bool = False
    no_knockoff_reward: bool = False
    no_greedy_guidance: bool = False
    no_matrix_reward: bool = False
    random_reward: bool = False
    reward_variant: str = "compare"
    rmr_every_episode: bool = False
    rmr_reduction: str = "sum"
    full_retrain: bool = False
    shuffle_order: bool = False
    final_mask: str = "best-episode"
    train_fraction: float = 0.8
    n_bootstrap: int = 64
    ae_code: int = 32
    ae_hidden: int = 64
    ae_epochs: int = 100
    ae_batch: int = 16
    ae_lr: float = 1e-3
    finetune_steps: int = 20
    finetune_lr: float = 1e-3
    gamma: float = 0.9
    lr: float = 1e-3
    batch: int = 32
    buffer_capacity: int = 4096
    sync_interval: int = 50
    q_hidden: int = 64
    pretrain_epochs: int = 20
    pretrain_per_feature: int = 50
    evaluate: bool = True
    n_random: int = 5
    compare_random_reward: bool = False
    trace: bool = False
    dump_knockoffs: bool = False
    dump_encodings: bool = False
    out: Optional[str] = None

    def validate(self) -> "RunConfig":
        checks = [
            (self.data != "", "a data file is required"),
            (self.episodes >= 1, "episodes must be at least 1"),
            (self.eps1 >= 0 and self.eps2 >= 0 and self.eps1 + self.eps2 <= 1, "need eps1, eps2 >= 0, eps1 + eps2 <= 1"),
            (0 < self.eps_decay <= 1, "eps_decay must lie in (0, 1]"),
            (0 < self.tau < 1, "tau must lie in (0, 1)"),
            (0 <= self.gamma < 1, "gamma must lie in [0, 1)"),
            (0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)"),
            (self.threshold in ("mean", "median"), "threshold must be mean or median"),
            (self.score_mode in ("correlation", "own-column"), "score_mode must be correlation or own-column"),
            (self.reward_variant in ("compare", "reconstruct-original"), "unknown reward variant"),
            (self.rmr_reduction in ("sum", "mean"), "rmr_reduction must be sum or mean"),
            (self.final_mask in FINAL_MASK_RULES, f"final_mask must be one of {FINAL_MASK_RULES}"),
            (self.ae_epochs >= 1 and self.n_bootstrap >= 1 and self.batch >= 1, "sizes must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            TaskKind.parse(self.task)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def policy(self) -> PolicyConfig:
        eps2 = 0.0 if self.no_greedy_guidance else self.eps2
        return PolicyConfig(self.eps1, eps2, self.eps_decay, self.eps_floor)

    def reward(self) -> RewardConfig:
        return RewardConfig(
            tau=self.tau, variant=RewardVariant(self.reward_variant), no_knockoff_reward=self.no_knockoff_reward,
            no_matrix_reward=self.no_matrix_reward, random_reward=self.random_reward,
            rmr_every_episode=self.rmr_every_episode, finetune_steps=self.finetune_steps,
            finetune_lr=self.finetune_lr, full_retrain=self.full_retrain, rmr_reduction=self.rmr_reduction,
        )

    def agent(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.gamma, lr=self.lr, batch=self.batch, buffer_capacity=self.buffer_capacity,
            sync_interval=self.sync_interval, hidden=self.q_hidden, pretrain_epochs=self.pretrain_epochs,
            pretrain_per_feature=self.pretrain_per_feature,
        )

    def ae_train(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.ae_lr, epochs=self.ae_epochs, batch_size=self.ae_batch, seed=self.seed)


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}.get(name)
    if kind is None:
        raise ConfigError(f"unknown config key {name!r}")
    text = raw.strip()
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "Optional[str]":
        return text or None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return text


def read_config_file(path) -> Dict[str, object]:
    """Flat ``key = value`` lines; '#' starts a comment; dashes in keys map to underscores."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def config_from(base: Optional[dict] = None, **overrides) -> RunConfig:
    values = dict(base or {})
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values).validate()


@dataclass
class SelectionOutcome:
    mask: np.ndarray
    mask_source: str
    knockoffs: KnockoffResult
    pretrain: Optional[PretrainReport]
    episodes: List[EpisodeResult]
    phases: Dict[str, float]
    downstream_calls: int
    encoder: StateEncoder
    agent: Agent
    matrix_evaluations: int


def _timed(phases: Dict[str, float], name: str, fn):
    t0 = time.perf_counter()
    try:
        return fn()
    except (ConfigError, RunError):
        raise
    except Exception as exc:
        raise RunError(name, exc) from exc
    finally:
        phases[name] = phases.get(name, 0.0) + time.perf_counter() - t0


def select_features(cfg: RunConfig, train: Dataset) -> SelectionOutcome:
    """The unsupervised loop. Only a target-free view of ``train`` is used."""
    view = train.without_target()
    phases: Dict[str, float] = {}
    calls_before = DOWNSTREAM.count

    kr = _timed(phases, "knockoff", lambda: generate(
        view, seed=cfg.seed, ridge=cfg.ridge, threshold=ThresholdMode(cfg.threshold), score=ScoreMode(cfg.score_mode)))

    def build_autoencoders():
        bank = DescriptorBank(view.features, n_bootstrap=cfg.n_bootstrap, seed=cfg.seed)
        ae = train_autoencoder(bank.bootstrap_descriptors(np.ones(view.d, bool)), cfg.ae_train(),
                               code=cfg.ae_code, hidden=cfg.ae_hidden)
        rec = None
        if cfg.reward_variant == RewardVariant.RECONSTRUCT_ORIGINAL.value:
            rec = train_reconstructor(bank, cfg.ae_train(), code=cfg.ae_code, hidden=cfg.ae_hidden)
        return bank, ae, rec

    bank, ae, rec = _timed(phases, "autoencoder", build_autoencoders)
    encoder = StateEncoder(bank, ae)
    rcfg = cfg.reward()
    matrix = MatrixReward(bank, ae, rcfg, retrain_cfg=cfg.ae_train(), reconstructor=rec)
    acfg = cfg.agent()
    agent = Agent.create(encoder.state_dim, acfg, seed=cfg.seed)

    report = None
    if not cfg.no_pretrain:
        report = _timed(phases, "pretrain", lambda: pretrain(agent.q, encoder, kr.labels, acfg, seed=cfg.seed))

    env = SelectionEnv(view, kr, encoder, matrix, rcfg, seed=cfg.seed, shuffle_order=cfg.shuffle_order)
    base = cfg.policy()
    episodes: List[EpisodeResult] = []

    def loop():
        for ep in range(cfg.episodes):
            pol = base if ep == 0 else decay_policy(base, ep)
            episodes.append(run_episode(agent, env, pol))

    _timed(phases, "episodes", loop)

    def finalize():
        if cfg.final_mask == "greedy":
            mask = greedy_mask(agent, encoder)
            if mask.any():
                return mask, "greedy"
        elif cfg.final_mask == "last" and episodes[-1].mask.any():
            return episodes[-1].mask.copy(), f"episode-{len(episodes)}"
        # best return first, earliest episode on ties
        candidates = [(e.episode_return, -i, i) for i, e in enumerate(episodes) if e.mask.any()]
        if candidates:
            i = max(candidates)[2]
            return episodes[i].mask.copy(), f"episode-{i + 1}"
        return np.ones(view.d, dtype=bool), "all-features-fallback"

    mask, source = _timed(phases, "finalize", finalize)
    return SelectionOutcome(
        mask=mask, mask_source=source, knockoffs=kr, pretrain=report, episodes=episodes, phases=phases,
        downstream_calls=DOWNSTREAM.count - calls_before, encoder=encoder, agent=agent,
        matrix_evaluations=matrix.evaluations,
    )


def _step_rows(outcome: SelectionOutcome) -> List[dict]:
    rows = []
    step = 0
    for ep, res in enumerate(outcome.episodes, 1):
        for br, dec in zip(res.steps, res.decisions):
            rows.append({
                "episode": ep, "step": step, "index": br.feature, "action": br.action,
                "source": dec.source.value, "p_choose": br.p_choose,
                "q_drop": float(dec.q_values[0]), "q_select": float(dec.q_values[1]),
                "time": br.time, "r_mr": br.r_mr, "r_pi": br.r_pi, "r_rd": br.r_rd,
                "r_random": br.r_random, "total": br.total,
            })
            step += 1
    return rows


def load_for(cfg: RunConfig) -> Dataset:
    return load_csv(cfg.data, cfg.target, TaskKind.parse(cfg.task))


def run_select(cfg: RunConfig, ds: Optional[Dataset] = None) -> dict:
    """ingest, split, select, evaluate; returns the JSON-ready report and writes it under ``cfg.out``."""
    cfg.validate()
    t0 = time.perf_counter()
    if ds is None:
        try:
            ds = load_for(cfg)
        except (DataError, OSError) as exc:
            raise RunError("ingest", exc) from exc
    ingest_time = time.perf_counter() - t0
    try:
        train, test = split(ds, SplitSpec(cfg.train_fraction, cfg.seed))
    except DataError as exc:
        raise RunError("split", exc) from exc

    outcome = select_features(cfg, train)
    names = list(ds.feature_names)
    steps = _step_rows(outcome)
    pre = outcome.pretrain
    report = {
        "version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "data_hash": ds.source_hash,
        "dataset": {"n": ds.n, "d": ds.d, "n_train": train.n, "n_test": test.n, "task": ds.task.value,
                    "dropped_rows": ds.dropped_rows, "feature_names": names,
                    "has_target": ds.target is not None},
        "seed": cfg.seed,
        "knockoff": {"labels": [int(v) for v in outcome.knockoffs.labels],
                     "scores": [float(v) for v in outcome.knockoffs.scores],
                     "threshold": float(outcome.knockoffs.threshold)},
        "pretrain": None if pre is None else {
            "n_states": pre.n_states, "agreement_before": pre.agreement_before,
            "agreement_after": pre.agreement_after, "loss_trace": pre.loss_trace},
        "episodes": [{"episode": i + 1, "mask": [int(b) for b in e.mask], "return": e.episode_return}
                     for i, e in enumerate(outcome.episodes)],
        "mask": [int(b) for b in outcome.mask],
        "mask_source": outcome.mask_source,
        "selected_features": [n for n, b in zip(names, outcome.mask) if b],
        "n_steps": len(steps),
        "trace": steps,
        "matrix_reward_evaluations": outcome.matrix_evaluations,
    }

    phases = {"ingest": ingest_time, **outcome.phases}
    timing = time_profile(phases, outcome.downstream_calls)
    timings = {"selection": timing.to_dict(),
               "episode_durations": [e.duration for e in outcome.episodes]}

    results = []
    if cfg.evaluate and ds.target is not None:
        t1 = time.perf_counter()
        rr = None
        if cfg.compare_random_reward and not cfg.random_reward:
            rr = [select_features(replace(cfg, random_reward=True), train).mask]
        masks = comparator_masks(ds.d, [outcome.mask], rr, n_random=cfg.n_random, seed=cfg.seed)
        results = compare(train, test, masks, default_models(ds.task), seed=cfg.seed)
        report["comparison"] = [r.to_dict() for r in results]
        report["mean_ranks"] = mean_ranks(results)
        timings["evaluation"] = time.perf_counter() - t1
    report["downstream_calls_during_selection"] = outcome.downstream_calls
    report["timings"] = timings

    if cfg.out:
        write_outputs(cfg, report, outcome, results)
    return report


def strip_timings(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timings"}


def _write_rows(path: Path, rows: List[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def write_outputs(cfg: RunConfig, report: dict, outcome: SelectionOutcome, results) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(report, out / "report.json")
    if results:
        write_comparison_csv(results, out / "comparison.csv", Path(cfg.data).stem)
    if cfg.trace:
        _write_rows(out / "reward_trace.csv", report["trace"],
                    ["step", "index", "action", "r_mr", "r_pi", "r_rd", "total"])
        _write_rows(out / "action_log.csv", report["trace"],
                    ["step", "index", "source", "action", "p_choose", "q_drop", "q_select"])
        outcome.agent.q.save(out / "qnet.json")
    if cfg.dump_knockoffs:
        dump_knockoffs(outcome.knockoffs, report["dataset"]["feature_names"], out)
    if cfg.dump_encodings:
        enc = outcome.encoder
        rows = [("full", np.ones(enc.d, bool)), ("selected", outcome.mask)]
        rows += [(f"episode-{i + 1}", e.mask) for i, e in enumerate(outcome.episodes)]
        with open(out / "encodings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["subset", "mask"] + [f"z{j + 1}" for j in range(enc.ae.code_size)])
            for name, m in rows:
                w.writerow([name, "".join("1" if b else "0" for b in m)] + [repr(float(v)) for v in enc.code(m)])


# ablation suite

EPS_SPLITS = {"10:0:90": (0.10, 0.0), "0:10:90": (0.0, 0.10), "5:5:90": (0.05, 0.05), "0:0:100": (0.0, 0.0)}
FLAG_AXES = ("no_pretrain", "no_knockoff_reward", "no_greedy_guidance", "no_matrix_reward", "random_reward",
             "rmr_every_episode", "shuffle_order", "full_retrain")


def axis_values(axis: str):
    """(label, overrides) pairs for one named axis."""
    axis = axis.strip().replace("-", "_")
    if axis == "eps":
        return [(f"eps={k}", {"eps1": a, "eps2": b}) for k, (a, b) in EPS_SPLITS.items()]
    if axis == "reward_variant":
        return [(f"reward_variant={v}", {"reward_variant": v}) for v in ("compare", "reconstruct-original")]
    if axis == "threshold":
        return [(f"threshold={v}", {"threshold": v}) for v in ("mean", "median")]
    if axis in FLAG_AXES:
        return [(f"{axis}=off", {axis: False}), (f"{axis}=on", {axis: True})]
    raise ConfigError(f"unknown ablation axis {axis!r}")


def ablation_variants(axes: Sequence[str]):
    if not axes:
        raise ConfigError("at least one ablation axis is required")
    grids = [axis_values(a) for a in axes]
    for combo in itertools.product(*grids):
        label = ",".join(c[0] for c in combo)
        overrides = {}
        for _, o in combo:
            overrides.update(o)
        yield label, overrides


def _run_one(args):
    cfg, ds = args
    return run_select(cfg, ds)


def summarize(report: dict) -> Optional[float]:
    """Mean selected-mask metric over the downstream models of a report."""
    rows = [r for r in report.get("comparison", []) if r["method"] == "selected"]
    return float(np.mean([r["value"] for r in rows])) if rows else None


def run_ablation_suite(cfg: RunConfig, axes: Sequence[str], seeds: Sequence[int] = (0, 1, 2),
                       workers: int = 1) -> dict:
    if len(seeds) < 3:
        raise ConfigError("the ablation suite needs at least 3 seeds")
    cfg.validate()
    try:
        ds = load_for(cfg)
    except (DataError, OSError) as exc:
        raise RunError("ingest", exc) from exc
    variants = list(ablation_variants(axes))
    jobs, keys = [], []
    for label, overrides in variants:
        for seed in seeds:
            keys.append((label, seed))
            jobs.append((replace(cfg, seed=seed, out=None, trace=False, dump_knockoffs=False, dump_encodings=False,
                                 **overrides).validate(), ds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]

    table = []
    for label, _ in variants:
        runs = [(seed, rep) for (lab, seed), rep in zip(keys, reports) if lab == label]
        per_model: Dict[str, List[float]] = {}
        for _, rep in runs:
            for row in rep.get("comparison", []):
                if row["method"] == "selected":
                    per_model.setdefault(row["model"], []).append(row["value"])
        values = [summarize(rep) for _, rep in runs]
        table.append({
            "variant": label,
            "seeds": [s for s, _ in runs],
            "per_model": {m: float(np.mean(v)) for m, v in per_model.items()},
            "mean": None if None in values else float(np.mean(values)),
            "per_seed": values,
            "mean_size": float(np.mean([sum(rep["mask"]) for _, rep in runs])),
        })
    suite = {"config": cfg.to_dict(), "data_hash": ds.source_hash, "axes": list(axes), "seeds": list(seeds),
             "task": ds.task.value, "table": table}
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(suite, out / "ablation.json")
        with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "mean", "mean_size"])
            for row in table:
                w.writerow([row["variant"], repr(row["mean"]), repr(row["mean_size"])])
    return suite
