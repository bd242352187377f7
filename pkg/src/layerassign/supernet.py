"""Weight-sharing supernet over layer assignments.

Group ``i`` of the supernet owns ``c_i`` cell slots.  A sub-network for
assignment ``a`` uses the stem, slots ``0 .. a_i - 1`` of every group and the
shared classifier ("prefix sharing"); slot 0 of a group is its transition
cell and is therefore shared by every sub-network.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .assignments import LayerAssignment
from .nn import checkpoint
from .nn.layers import BatchNorm
from .nn.network import (
    Classifier,
    Network,
    SearchSpaceSpec,
    SpecError,
    _classifier_in,
    _new_cell,
    _new_stem,
)
from .nn.training import (
    SGD,
    DivergenceError,
    TrainConfig,
    iterate_minibatches,
    lr_at,
    n_batches,
    to_float,
    train_step,
)

__all__ = [
    "Supernet",
    "init_supernet",
    "sample_subnetwork",
    "extract_subnetwork",
    "warmup",
    "InterleavedSummary",
    "train_candidates_interleaved",
    "recalc_bn",
    "accuracy_gap",
]

log = logging.getLogger(__name__)


class Supernet:
    """Maximal parameter set: stem, per-group slot arrays, classifier."""

    def __init__(self, spec: SearchSpaceSpec, stem, slots, classifier):
        self.spec = spec
        self.stem = stem
        self.slots = slots
        self.classifier = classifier

    @property
    def capacity(self) -> LayerAssignment:
        return LayerAssignment(len(g) for g in self.slots)

    def full_view(self) -> Network:
        """The deepest sub-network: every slot of every group."""
        return sample_subnetwork(self, self.capacity)

    def layers(self):
        return self.full_view().layers()

    def slot_digest(self, group: int, slot: int) -> str:
        h = hashlib.sha256()
        for layer in self.slots[group][slot].layers():
            for store in (layer.params, layer.buffers):
                for k in sorted(store):
                    h.update(store[k].tobytes())
        return h.hexdigest()

    def slot_digests(self) -> dict[tuple[int, int], str]:
        return {(g, s): self.slot_digest(g, s) for g in range(len(self.slots)) for s in range(len(self.slots[g]))}

    def digest(self) -> str:
        return self.full_view().digest()

    def save(self, path) -> None:
        Path(path).write_bytes(checkpoint.dumps(self.spec, self.capacity, self.layers(), slots=tuple(self.capacity)))

    @classmethod
    def load(cls, path, spec: SearchSpaceSpec) -> "Supernet":
        decoded = checkpoint.loads(Path(path).read_bytes())
        if decoded["slots"] is None:
            raise checkpoint.CheckpointError("file holds a single network, not a supernet")
        if tuple(decoded["slots"]) != spec.group_capacity:
            raise checkpoint.CheckpointError(
                f"slot layout {decoded['slots']} does not match capacity {spec.group_capacity}")
        sn = init_supernet(spec, seed=0)
        checkpoint.load_into(decoded, spec, sn.layers())
        return sn


def init_supernet(spec: SearchSpaceSpec, seed: int, dtype=np.float32) -> Supernet:
    rng = np.random.default_rng(seed)
    stem = _new_stem(spec, rng, dtype)
    slots = [[_new_cell(spec, g, s, rng, dtype) for s in range(c)] for g, c in enumerate(spec.group_capacity)]
    classifier = Classifier(_classifier_in(spec), spec.classifier_plan, rng, dtype)
    return Supernet(spec, stem, slots, classifier)


def sample_subnetwork(sn: Supernet, a: Sequence[int]) -> Network:
    """View of ``a`` inside the supernet; its parameters alias the supernet's."""
    a = sn.spec.check_assignment(a)
    groups = [sn.slots[g][:ai] for g, ai in enumerate(a)]
    return Network(sn.spec, a, sn.stem, groups, sn.classifier)


def extract_subnetwork(sn: Supernet, a: Sequence[int]) -> Network:
    """Stand-alone copy of the slots that ``a`` selects."""
    return copy.deepcopy(sample_subnetwork(sn, a))


def warmup(sn: Supernet, data, cfg: TrainConfig) -> dict:
    """Train the deepest sub-network for ``cfg.epochs`` epochs."""
    net = sn.full_view()
    opt = SGD(cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.rng_seed)
    iters = n_batches(len(data.train_x), cfg.batch_size)
    losses = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for it, (xb, yb) in enumerate(iterate_minibatches(data.train_x, data.train_y, cfg.batch_size, rng,
                                                          cfg.augment_flip, cfg.augment_crop)):
            try:
                total += train_step(net, xb, yb, opt, lr_at(cfg, epoch, it, iters)) * len(yb)
            except DivergenceError as exc:
                raise DivergenceError(f"warm-up diverged at epoch {epoch} step {it}: {exc}",
                                      epoch, it, str(net.assignment)) from exc
        losses.append(total / len(data.train_x))
    return {"epochs": cfg.epochs, "epoch_losses": losses}


@dataclass
class InterleavedSummary:
    steps: int = 0
    steps_per_network: dict[str, int] = field(default_factory=dict)
    losses: dict[str, list[float]] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)


def train_candidates_interleaved(sn: Supernet, candidates: Sequence[Sequence[int]], data, cfg: TrainConfig,
                                 rng: np.random.Generator | None = None,
                                 drop_failed: bool = False) -> InterleavedSummary:
    """For every batch: one step on the deepest sub-network, then one per candidate.

    ``cfg.lr_schedule``/``cfg.base_lr`` set the learning rate; search steps
    use a linear decay over ``cfg.epochs``.  ``rng`` carries the shuffle
    stream across calls.  With ``drop_failed`` a diverging candidate is
    removed and reported in ``failed``; otherwise the error propagates.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    deepest = sn.full_view()
    views = {str(LayerAssignment(a)): sample_subnetwork(sn, a) for a in candidates}
    opt = SGD(cfg.momentum, cfg.weight_decay)
    summary = InterleavedSummary()
    names = [str(deepest.assignment)] + list(views)
    summary.steps_per_network = {k: 0 for k in names}
    summary.losses = {k: [] for k in names}
    iters = n_batches(len(data.train_x), cfg.batch_size)
    for epoch in range(cfg.epochs):
        sums = {k: 0.0 for k in names}
        for it, (xb, yb) in enumerate(iterate_minibatches(data.train_x, data.train_y, cfg.batch_size, rng,
                                                          cfg.augment_flip, cfg.augment_crop)):
            lr = lr_at(cfg, epoch, it, iters)
            try:
                sums[names[0]] += train_step(deepest, xb, yb, opt, lr) * len(yb)
            except DivergenceError as exc:
                raise DivergenceError(f"deepest sub-network diverged at epoch {epoch} step {it}",
                                      epoch, it, names[0]) from exc
            summary.steps += 1
            summary.steps_per_network[names[0]] += 1
            for key in list(views):
                try:
                    sums[key] += train_step(views[key], xb, yb, opt, lr) * len(yb)
                except DivergenceError as exc:
                    if not drop_failed:
                        raise DivergenceError(f"candidate {key} diverged at epoch {epoch} step {it}",
                                              epoch, it, key) from exc
                    log.warning("dropping candidate %s: diverged at epoch %d step %d", key, epoch, it)
                    summary.failed[key] = f"diverged at epoch {epoch} step {it}"
                    del views[key]
                    continue
                summary.steps += 1
                summary.steps_per_network[key] += 1
        for k in names:
            if k not in summary.failed:
                summary.losses[k].append(sums[k] / len(data.train_x))
    return summary


def recalc_bn(view: Network, calib_x: np.ndarray, batch_size: int = 128) -> Network:
    """Replace every BN layer's running stats with exact aggregates over ``calib_x``.

    One pass over the calibration set in training mode (layers normalize with
    batch statistics); each BN layer accumulates the exact mean and
    population variance of all inputs it sees.  The result depends on how
    the set is batched but not on the order of the batches.
    """
    if len(calib_x) == 0:
        raise ValueError("calibration set is empty")
    bns: list[BatchNorm] = view.bn_layers()
    for bn in bns:
        bn.begin_calibration()
    try:
        for start in range(0, len(calib_x), batch_size):
            view.forward(to_float(calib_x[start:start + batch_size], view.dtype), train=True)
    except BaseException:
        for bn in bns:
            bn._calib = None
        raise
    for bn in bns:
        bn.end_calibration()
    _drop_caches(view)
    return view


def _drop_caches(net: Network) -> None:
    for mod in net.modules():
        for layer in mod.layers():
            layer._cache = None
        for attr in ("_out", "_cache"):
            if hasattr(mod, attr):
                setattr(mod, attr, None)
        if isinstance(mod, Classifier):
            mod._outs = []


def accuracy_gap(pairs: Sequence[tuple[float, float]]) -> float:
    """Mean absolute difference between stand-alone and one-shot accuracies."""
    if not pairs:
        raise ValueError("accuracy_gap needs at least one pair")
    total = 0.0
    for stand_alone, one_shot in pairs:
        for v in (stand_alone, one_shot):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")
        total += abs(stand_alone - one_shot)
    return total / len(pairs)
