"""Brute-force ground truth for layer assignment search.

Builds the architecture dataset (every assignment in a depth range trained
stand-alone), checks whether per-depth winners inherit from shallower ones,
summarizes accuracy spread, scores a search trace against the dataset, and
provides synthetic surrogate landscapes for fast search testing.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assignments import (
    LayerAssignment,
    count_assignments,
    count_range,
    enumerate_assignments,
    is_successor,
    iter_assignments,
)
from .nn.network import SearchSpaceSpec, build_network
from .nn.training import DivergenceError, TrainConfig, evaluate, train
from .search import SearchTrace

__all__ = [
    "ORACLE_VERSION",
    "NIR_VERSION",
    "ArchitectureRecord",
    "ArchitectureDataset",
    "record_seed",
    "config_digest",
    "build_architecture_dataset",
    "best_per_depth",
    "verify_nir",
    "distribution_stats",
    "CompareRow",
    "compare_search_to_oracle",
    "SurrogateLandscape",
    "SurrogateEvaluator",
    "surrogate_search_adapter",
    "dataset_from_landscape",
]

log = logging.getLogger(__name__)

ORACLE_VERSION = 1
NIR_VERSION = 1
CSV_COLUMNS = ["family", "assignment", "depth", "val_acc", "seed", "config_digest"]


@dataclass(frozen=True)
class ArchitectureRecord:
    family: str
    assignment: LayerAssignment
    val_accuracy: float
    seed: int
    config_digest: str = ""

    def __post_init__(self):
        if not math.isnan(self.val_accuracy) and not 0.0 <= self.val_accuracy <= 1.0:
            raise ValueError(f"accuracy {self.val_accuracy} outside [0, 1]")

    @property
    def failed(self) -> bool:
        return math.isnan(self.val_accuracy)

    @property
    def depth(self) -> int:
        return self.assignment.depth


class ArchitectureDataset:
    """Records keyed by ``(family, assignment)`` with a per-depth index."""

    def __init__(self, records: Iterable[ArchitectureRecord] = ()):
        self.records: dict[tuple[str, LayerAssignment], ArchitectureRecord] = {}
        self._by_depth: dict[tuple[str, int], list[ArchitectureRecord]] = {}
        for r in records:
            self.add(r)

    def add(self, record: ArchitectureRecord) -> None:
        key = (record.family, record.assignment)
        if key in self.records:
            raise ValueError(f"duplicate record {record.family} {record.assignment}")
        self.records[key] = record
        bucket = self._by_depth.setdefault((record.family, record.depth), [])
        bucket.append(record)
        bucket.sort(key=lambda r: tuple(r.assignment))

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, key) -> bool:
        return key in self.records

    def get(self, family: str, a: Sequence[int]) -> ArchitectureRecord:
        return self.records[(family, LayerAssignment(a))]

    def families(self) -> list[str]:
        return sorted({f for f, _ in self.records})

    def resolve_family(self, family: str | None) -> str:
        fams = self.families()
        if family is None:
            if len(fams) != 1:
                raise ValueError(f"dataset holds families {fams}; pass one explicitly")
            return fams[0]
        if family not in fams:
            raise KeyError(f"dataset has no {family!r} records")
        return family

    def depths(self, family: str | None = None) -> list[int]:
        family = self.resolve_family(family)
        return sorted(d for f, d in self._by_depth if f == family)

    def at_depth(self, family: str, depth: int, include_failed: bool = False) -> list[ArchitectureRecord]:
        recs = self._by_depth.get((family, depth), [])
        return recs if include_failed else [r for r in recs if not r.failed]

    def n_groups(self) -> int:
        return len(next(iter(self.records))[1])

    def check_complete(self, family: str | None = None) -> None:
        """Raise unless every depth between the extremes is fully enumerated."""
        family = self.resolve_family(family)
        depths = self.depths(family)
        n = self.n_groups()
        for d in range(depths[0], depths[-1] + 1):
            have = len(self._by_depth.get((family, d), []))
            want = count_assignments(d, n)
            if have != want:
                raise ValueError(f"{family} depth {d}: {have} records, expected {want}")

    def sorted_records(self) -> list[ArchitectureRecord]:
        return [self.records[k] for k in sorted(self.records, key=lambda k: (k[0], k[1].depth, tuple(k[1])))]

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.sorted_records():
            h.update(f"{r.family},{r.assignment},{r.val_accuracy!r},{r.seed},{r.config_digest}\n".encode())
        return h.hexdigest()

    # -- persistence -------------------------------------------------------

    @staticmethod
    def _row(r: ArchitectureRecord) -> list:
        return [r.family, str(r.assignment), r.depth, repr(float(r.val_accuracy)), r.seed, r.config_digest]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"#oracle_version={ORACLE_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.sorted_records():
                w.writerow(self._row(r))

    @classmethod
    def append_csv(cls, path, record: ArchitectureRecord) -> None:
        path = Path(path)
        new = not path.exists() or path.stat().st_size == 0
        with open(path, "a", newline="") as fh:
            if new:
                fh.write(f"#oracle_version={ORACLE_VERSION}\n")
                csv.writer(fh).writerow(CSV_COLUMNS)
            csv.writer(fh).writerow(cls._row(record))

    @classmethod
    def from_csv(cls, path) -> "ArchitectureDataset":
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].startswith("#oracle_version="):
            raise ValueError(f"{path}: missing '#oracle_version=' header")
        version = int(lines[0].split("=", 1)[1])
        if version != ORACLE_VERSION:
            raise ValueError(f"{path}: unsupported oracle_version {version}")
        reader = csv.DictReader(lines[1:])
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
        ds = cls()
        for row in reader:
            a = LayerAssignment.parse(row["assignment"])
            if int(row["depth"]) != a.depth:
                raise ValueError(f"{path}: depth {row['depth']} does not match {a}")
            rec = ArchitectureRecord(row["family"], a, float(row["val_acc"]), int(row["seed"]), row["config_digest"])
            # append-only log: a later row for the same key supersedes earlier ones
            key = (rec.family, rec.assignment)
            if key in ds.records:
                ds._remove(key)
            ds.add(rec)
        return ds

    def _remove(self, key) -> None:
        rec = self.records.pop(key)
        self._by_depth[(rec.family, rec.depth)].remove(rec)


def record_seed(run_seed: int, family: str, a: Sequence[int]) -> int:
    """Reproducible, decorrelated per-record seed."""
    blob = f"{run_seed}|{family}|{LayerAssignment(a)}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") & (2**63 - 1)


def config_digest(spec: SearchSpaceSpec, cfg: TrainConfig) -> str:
    d = {"spec": spec.to_dict(), "train": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}}
    d["train"].pop("rng_seed")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# Worker state for the process pool; set once per worker by the initializer.
_JOB: dict = {}


def _init_worker(spec, cfg, data, repeats):
    _JOB.update(spec=spec, cfg=cfg, data=data, repeats=repeats)


def _train_one(a: LayerAssignment, seed: int) -> float:
    spec, cfg, data, repeats = _JOB["spec"], _JOB["cfg"], _JOB["data"], _JOB["repeats"]
    accs = []
    for r in range(repeats):
        s = seed if r == 0 else record_seed(seed, "repeat", [r])
        net = build_network(spec, a, s)
        try:
            train(net, data, _with_seed(cfg, s))
        except DivergenceError as exc:
            log.warning("training %s failed: %s", a, exc)
            return float("nan")
        accs.append(evaluate(net, data.val_x, data.val_y))
    return float(np.mean(accs))


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, rng_seed=seed)


def train_standalone(spec: SearchSpaceSpec, a: Sequence[int], data, cfg: TrainConfig, seed: int,
                     repeats: int = 1) -> float:
    """Validation accuracy of ``a`` trained from scratch (mean over ``repeats`` seeds)."""
    _init_worker(spec, cfg, data, repeats)
    return _train_one(LayerAssignment(a), seed)


def build_architecture_dataset(spec: SearchSpaceSpec, depth_lo: int, depth_hi: int, cfg: TrainConfig, data,
                               workers: int = 1, run_seed: int = 0, repeats: int = 1,
                               path=None) -> ArchitectureDataset:
    """Train every assignment with depth in ``[depth_lo, depth_hi]`` stand-alone.

    With ``path`` the records are appended to that CSV as they finish and any
    records already present are reused, so interrupted runs resume.  The
    result does not depend on ``workers`` or completion order.
    """
    n = spec.n
    count_range(n, depth_lo, depth_hi)  # validates the range
    family = spec.cell_kind
    digest = config_digest(spec, cfg)
    ds = ArchitectureDataset()
    if path is not None and Path(path).exists():
        for rec in ArchitectureDataset.from_csv(path).sorted_records():
            if rec.family == family and rec.config_digest == digest and depth_lo <= rec.depth <= depth_hi:
                ds.add(rec)
    jobs = [(a, record_seed(run_seed, family, a))
            for m in range(depth_lo, depth_hi + 1) for a in iter_assignments(m, n)
            if (family, a) not in ds]
    log.info("oracle: %d networks to train (%d reused)", len(jobs), len(ds))

    def finish(a, seed, acc):
        rec = ArchitectureRecord(family, a, acc, seed, digest)
        ds.add(rec)
        if path is not None:
            ArchitectureDataset.append_csv(path, rec)

    if workers <= 1 or len(jobs) <= 1:
        _init_worker(spec, cfg, data, repeats)
        for a, seed in jobs:
            finish(a, seed, _train_one(a, seed))
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(spec, cfg, data, repeats)) as pool:
            futures = {pool.submit(_train_one, a, seed): (a, seed) for a, seed in jobs}
            for fut in futures:
                a, seed = futures[fut]
                finish(a, seed, fut.result())
    # canonical order regardless of completion order
    return ArchitectureDataset(ds.sorted_records())


def best_per_depth(ds: ArchitectureDataset, k: int = 1, family: str | None = None) -> dict[int, list[ArchitectureRecord]]:
    """Top-``k`` records per depth, accuracy descending, ties lexicographic."""
    family = ds.resolve_family(family)
    out = {}
    for d in ds.depths(family):
        recs = sorted(ds.at_depth(family, d), key=lambda r: (-r.val_accuracy, tuple(r.assignment)))
        out[d] = recs[:k]
    return out


def verify_nir(ds: ArchitectureDataset, k: int = 1, family: str | None = None) -> dict:
    """Does each depth's top-1 inherit from one of the previous depth's top-``k``?"""
    family = ds.resolve_family(family)
    depths = ds.depths(family)
    for lo, hi in zip(depths, depths[1:]):
        if hi != lo + 1:
            raise ValueError(f"gap in depth coverage between {lo} and {hi}")
    top = best_per_depth(ds, max(k, 1), family)
    pairs = []
    for d in depths[:-1]:
        parents = top[d][:k]
        child = top[d + 1][0]
        pairs.append({
            "depth_from": d,
            "depth_to": d + 1,
            "top1": str(child.assignment),
            "parents": [str(p.assignment) for p in parents],
            "inherited": any(is_successor(p.assignment, child.assignment) for p in parents),
        })
    fraction = sum(p["inherited"] for p in pairs) / len(pairs) if pairs else 1.0
    return {
        "nir_version": NIR_VERSION,
        "family": family,
        "k": k,
        "pairs": pairs,
        "fraction": fraction,
        "topk": {str(d): [{"assignment": str(r.assignment), "val_acc": r.val_accuracy} for r in recs]
                 for d, recs in top.items()},
    }


def distribution_stats(ds: ArchitectureDataset, family: str | None = None, bins: int = 10) -> dict[int, dict]:
    """Per-depth accuracy spread: min, quartiles, max, best-minus-median, histogram."""
    family = ds.resolve_family(family)
    out = {}
    for d in ds.depths(family):
        accs = np.array([r.val_accuracy for r in ds.at_depth(family, d)])
        if accs.size == 0:
            continue
        q1, med, q3 = np.quantile(accs, [0.25, 0.5, 0.75])
        lo, hi = float(accs.min()), float(accs.max())
        counts, edges = np.histogram(accs, bins=bins, range=(lo, hi) if hi > lo else (lo - 1e-9, hi + 1e-9))
        out[d] = {
            "count": int(accs.size),
            "min": lo,
            "q1": float(q1),
            "median": float(med),
            "q3": float(q3),
            "max": hi,
            "spread": hi - lo,
            "best_minus_median": hi - float(med),
            "histogram": counts.tolist(),
            "bin_edges": edges.tolist(),
        }
    return out


@dataclass
class CompareRow:
    depth: int
    searched_assignment: LayerAssignment
    searched_acc: float
    best_assignment: LayerAssignment
    best_acc: float

    @property
    def gap(self) -> float:
        return self.best_acc - self.searched_acc


def compare_search_to_oracle(trace: SearchTrace, ds: ArchitectureDataset, retrain_cfg: TrainConfig | None = None, *,
                             spec: SearchSpaceSpec | None = None, data=None, family: str | None = None,
                             run_seed: int = 0, landscape: "SurrogateLandscape | None" = None,
                             repeats: int = 1) -> list[CompareRow]:
    """Per searched depth: the winner's accuracy next to the dataset's best.

    The winner's accuracy comes from the surrogate ``landscape`` if given,
    otherwise from retraining it from scratch with ``retrain_cfg`` (per-record
    seed, so identical settings reproduce the dataset entry), otherwise from
    the dataset record itself.
    """
    family = ds.resolve_family(family)
    best = best_per_depth(ds, 1, family)
    rows = []
    for step in trace.steps:
        d = step.depth
        if d not in best or not best[d]:
            raise KeyError(f"oracle has no {family} records at depth {d}")
        w = step.winner
        if landscape is not None:
            acc = landscape(w)
        elif retrain_cfg is not None:
            if spec is None or data is None:
                raise ValueError("retraining needs spec and data")
            acc = train_standalone(spec, w, data, retrain_cfg, record_seed(run_seed, family, w), repeats)
        else:
            acc = ds.get(family, w).val_accuracy
        rows.append(CompareRow(d, w, float(acc), best[d][0].assignment, best[d][0].val_accuracy))
    return rows


# -- surrogate landscapes ---------------------------------------------------

LANDSCAPE_KINDS = ("planted", "random", "adversarial", "constant")


@dataclass
class SurrogateLandscape:
    """Deterministic assignment -> pseudo-accuracy map for testing the search.

    ``planted``: each group has a concave utility curve (positive, shrinking
    per-layer gains); an assignment scores the sum, squashed into (0, 1).
    Greedy growth is optimal for separable concave objectives, so the
    per-depth argmax chain is inherited.
    ``adversarial``: ``planted`` plus a bonus on one assignment at
    ``trap_depth`` that is not reachable from the greedy chain.
    ``random``: independent pseudo-random value per assignment.
    ``constant``: every assignment scores 0.5.
    """

    kind: str
    n: int
    seed: int = 0
    max_depth: int = 20
    trap_depth: int | None = None
    gains: np.ndarray = field(init=False, repr=False)
    trap: LayerAssignment | None = field(init=False, default=None)
    bonus: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.kind not in LANDSCAPE_KINDS:
            raise ValueError(f"landscape kind must be one of {LANDSCAPE_KINDS}")
        rng = np.random.default_rng(self.seed)
        k = self.max_depth - self.n + 1
        first = rng.uniform(0.5, 1.5, size=self.n)
        ratio = rng.uniform(0.5, 0.95, size=self.n)
        self.gains = first[:, None] * ratio[:, None] ** np.arange(k)[None, :]
        if self.kind == "adversarial":
            self._plant_trap(rng)

    def utility(self, a: Sequence[int]) -> float:
        # layers beyond the first earn gains[i][0], gains[i][1], ...
        return float(sum(self.gains[i, :ai - 1].sum() for i, ai in enumerate(a)))

    def _plant_trap(self, rng) -> None:
        d = self.trap_depth if self.trap_depth is not None else (self.n + self.max_depth) // 2
        if count_assignments(d, self.n) <= self.n:
            raise ValueError(f"trap depth {d} too shallow to break inheritance for n={self.n}")
        greedy = _argmax_chain(self.utility, self.n, d)
        prev = greedy[d - 1]
        options = [a for a in iter_assignments(d, self.n) if not is_successor(prev, a)]
        self.trap = options[int(rng.integers(len(options)))]
        best = self.utility(greedy[d])
        self.bonus = best - self.utility(self.trap) + 0.25
        self.trap_depth = d

    def score(self, a: Sequence[int]) -> float:
        a = LayerAssignment(a)
        if self.kind == "constant":
            return 0.0
        if self.kind == "random":
            h = hashlib.sha256(f"{self.seed}|{a}".encode()).digest()
            return int.from_bytes(h[:8], "little") / 2**64
        s = self.utility(a)
        if self.trap is not None and a == self.trap:
            s += self.bonus
        return s

    def __call__(self, a: Sequence[int]) -> float:
        if len(a) != self.n:
            raise ValueError(f"assignment {a} does not have {self.n} groups")
        if self.kind == "constant":
            return 0.5
        if self.kind == "random":
            return 0.2 + 0.6 * self.score(a)
        return 1.0 - 0.9 * math.exp(-0.15 * self.score(a))

    def argmax_at(self, depth: int) -> LayerAssignment:
        """Exhaustive best assignment at ``depth`` (ties lexicographic)."""
        return min(enumerate_assignments(depth, self.n), key=lambda a: (-self(a), tuple(a)))


def _argmax_chain(fn, n, depth) -> dict[int, LayerAssignment]:
    out = {}
    for m in range(n, depth + 1):
        out[m] = min(iter_assignments(m, n), key=lambda a: (-fn(a), tuple(a)))
    return out


class SurrogateEvaluator:
    """Search backend that looks accuracies up in a landscape; no training."""

    def __init__(self, landscape: SurrogateLandscape):
        self.landscape = landscape
        self.trained: list[LayerAssignment] = []

    def start(self) -> None:
        pass

    def train(self, candidates):
        self.trained.extend(candidates)
        return {"lr": 0.0, "epochs": 0, "failed": {}}

    def evaluate(self, a) -> float:
        return self.landscape(a)


def surrogate_search_adapter(landscape: SurrogateLandscape) -> SurrogateEvaluator:
    return SurrogateEvaluator(landscape)


def dataset_from_landscape(landscape: SurrogateLandscape, depth_lo: int, depth_hi: int,
                           family: str = "surrogate") -> ArchitectureDataset:
    ds = ArchitectureDataset()
    for m in range(depth_lo, depth_hi + 1):
        for a in iter_assignments(m, landscape.n):
            ds.add(ArchitectureRecord(family, a, landscape(a), landscape.seed, f"surrogate-{landscape.kind}"))
    return ds
