"""Inherited-sampling one-shot layer assignment search.

Starting from one layer per group, every step trains the ``n`` one-layer-deeper
successors of the current winner inside the supernet (interleaved with the
deepest sub-network), recalibrates their batch norms, scores them on the
validation split and keeps the single best.  The search costs
``n * (m_t - n)`` candidate trainings instead of one per composition.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import supernet as _sn
from .assignments import LayerAssignment, is_inherited_chain, seed_assignment, successors
from .nn.network import SearchSpaceSpec
from .nn.training import DivergenceError, TrainConfig, evaluate

__all__ = [
    "TRACE_VERSION",
    "SearchConfig",
    "StepRecord",
    "SearchTrace",
    "StepEvaluator",
    "SupernetEvaluator",
    "select_top1",
    "run_search",
]

log = logging.getLogger(__name__)

TRACE_VERSION = 1


@dataclass
class SearchConfig:
    spec: SearchSpaceSpec = field(default_factory=SearchSpaceSpec)
    step_epochs: int = 10
    warmup_epochs: int = 5
    base_lr: float = 0.1
    search_lr: float | None = None
    calib_size: int = 1000
    calib_fraction: float = 0.2
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.spec, dict):
            self.spec = SearchSpaceSpec.from_dict(self.spec)
        if self.search_lr is None:
            self.search_lr = self.base_lr / 2
        if self.step_epochs < 1:
            raise ValueError("step_epochs (K) must be >= 1")
        if not self.search_lr > 0:
            raise ValueError("search_lr must be > 0")
        if self.warmup_epochs < 0 or self.calib_size < 1:
            raise ValueError("warmup_epochs must be >= 0 and calib_size >= 1")

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def target_depth(self) -> int:
        return self.spec.target_depth

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["spec"] = self.spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown search config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def calibration_size(self, n_train: int) -> int:
        return max(1, min(self.calib_size, int(self.calib_fraction * n_train)))


@dataclass
class StepRecord:
    depth: int
    candidates: list[tuple[LayerAssignment, float]]
    winner: LayerAssignment
    lr_used: float
    epochs: int
    wall_clock: float = 0.0
    failed: dict[str, str] = field(default_factory=dict)


@dataclass
class SearchTrace:
    n: int
    target_depth: int
    config_digest: str
    steps: list[StepRecord] = field(default_factory=list)
    chain: list[LayerAssignment] = field(default_factory=list)
    budget: int = 0
    error: str | None = None

    def winner_at(self, depth: int) -> LayerAssignment:
        for a in self.chain:
            if a.depth == depth:
                return a
        raise KeyError(f"trace has no winner at depth {depth}")

    def to_json(self) -> dict:
        return {
            "trace_version": TRACE_VERSION,
            "config_digest": self.config_digest,
            "n": self.n,
            "target_depth": self.target_depth,
            "steps": [
                {
                    "depth": s.depth,
                    "candidates": [{"assignment": str(a), "val_acc": acc} for a, acc in s.candidates],
                    "winner": str(s.winner),
                    "lr": s.lr_used,
                    "epochs": s.epochs,
                    "wall_clock_s": s.wall_clock,
                    "failed": s.failed,
                }
                for s in self.steps
            ],
            "chain": [str(a) for a in self.chain],
            "budget": self.budget,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SearchTrace":
        if d.get("trace_version") != TRACE_VERSION:
            raise ValueError(f"unsupported trace_version {d.get('trace_version')!r}")
        steps = [
            StepRecord(
                depth=s["depth"],
                candidates=[(LayerAssignment.parse(c["assignment"]), c["val_acc"]) for c in s["candidates"]],
                winner=LayerAssignment.parse(s["winner"]),
                lr_used=s["lr"],
                epochs=s["epochs"],
                wall_clock=s.get("wall_clock_s", 0.0),
                failed=s.get("failed", {}),
            )
            for s in d["steps"]
        ]
        return cls(d["n"], d["target_depth"], d["config_digest"], steps,
                   [LayerAssignment.parse(a) for a in d["chain"]], d["budget"], d.get("error"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "SearchTrace":
        return cls.from_json(json.loads(Path(path).read_text()))


class StepEvaluator(Protocol):
    """What the search loop needs from a training/scoring backend."""

    def start(self) -> None: ...

    def train(self, candidates: Sequence[LayerAssignment]) -> dict: ...

    def evaluate(self, a: LayerAssignment) -> float: ...


class SupernetEvaluator:
    """Trains candidates inside a weight-sharing supernet and scores them."""

    def __init__(self, cfg: SearchConfig, data):
        self.cfg = cfg
        ss = np.random.SeedSequence(cfg.seed)
        init_seq, warm_seq, stream_seq, calib_seq = ss.spawn(4)
        self._init_seed = int(init_seq.generate_state(1)[0])
        self._warm_seed = int(warm_seq.generate_state(1)[0])
        self.stream = np.random.default_rng(stream_seq)
        calib_seed = int(calib_seq.generate_state(1)[0])
        self.data = data.with_calibration(cfg.calibration_size(len(data.train_x)), calib_seed)
        self.supernet = None

    def _train_cfg(self, epochs: int, lr: float, schedule: str) -> TrainConfig:
        c = self.cfg
        return TrainConfig(base_lr=lr, lr_schedule=schedule, momentum=c.momentum, weight_decay=c.weight_decay,
                           batch_size=c.batch_size, epochs=epochs, rng_seed=self._warm_seed)

    def start(self) -> None:
        self.supernet = _sn.init_supernet(self.cfg.spec, self._init_seed)
        _sn.warmup(self.supernet, self.data, self._train_cfg(self.cfg.warmup_epochs, self.cfg.base_lr, "multistep"))

    def train(self, candidates):
        cfg = self._train_cfg(self.cfg.step_epochs, self.cfg.search_lr, "linear")
        summary = _sn.train_candidates_interleaved(self.supernet, candidates, self.data, cfg,
                                                  rng=self.stream, drop_failed=True)
        return {"lr": cfg.base_lr, "epochs": cfg.epochs, "failed": summary.failed, "steps": summary.steps}

    def evaluate(self, a):
        view = _sn.sample_subnetwork(self.supernet, a)
        _sn.recalc_bn(view, self.data.calib_x, self.cfg.batch_size)
        return evaluate(view, self.data.val_x, self.data.val_y)


def select_top1(candidates: Sequence[tuple[Sequence[int], float]]) -> LayerAssignment:
    """Highest accuracy; ties go to the lexicographically smallest assignment."""
    if not candidates:
        raise ValueError("select_top1 needs at least one candidate")
    best = min(candidates, key=lambda c: (-c[1], tuple(c[0])))
    return LayerAssignment(best[0])


def run_search(cfg: SearchConfig, data=None, evaluator: StepEvaluator | None = None) -> SearchTrace:
    """Search the best assignment for every depth from ``n`` to ``target_depth``.

    A training divergence of the deepest sub-network stops the search; the
    trace up to that point is returned with ``error`` set.
    """
    n, m_t = cfg.n, cfg.target_depth
    if evaluator is None:
        if data is None:
            raise ValueError("run_search needs data or an evaluator")
        evaluator = SupernetEvaluator(cfg, data)
    trace = SearchTrace(n, m_t, cfg.digest())
    winner = seed_assignment(n)
    trace.chain.append(winner)
    if m_t == n:
        return trace
    try:
        evaluator.start()
        for depth in range(n, m_t):
            t0 = time.perf_counter()
            cands = successors(winner)
            info = evaluator.train(cands)
            trace.budget += len(cands)
            failed = info.get("failed", {})
            scored = [(a, float(evaluator.evaluate(a))) for a in cands if str(a) not in failed]
            if not scored:
                raise DivergenceError(f"every candidate diverged at depth {depth + 1}")
            winner = select_top1(scored)
            trace.steps.append(StepRecord(depth + 1, scored, winner, info.get("lr", 0.0), info.get("epochs", 0),
                                          time.perf_counter() - t0, dict(failed)))
            trace.chain.append(winner)
            log.info("depth %d: %s", depth + 1,
                     ", ".join(f"{a}={acc:.4f}" for a, acc in scored) + f" -> {winner}")
    except DivergenceError as exc:
        log.error("search stopped: %s", exc)
        trace.error = str(exc)
    assert is_inherited_chain(trace.chain)
    return trace
