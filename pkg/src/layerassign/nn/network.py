"""Search-space description, cell templates and the network container."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ..assignments import LayerAssignment
from .layers import (
    BatchNorm,
    Conv3x3,
    Layer,
    Linear,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
)

__all__ = [
    "CELL_KINDS",
    "SpecError",
    "NumericError",
    "SearchSpaceSpec",
    "PlainCell",
    "ResidualCell",
    "Classifier",
    "Network",
    "build_network",
    "count_macs",
    "count_parameters",
]

CELL_KINDS = ("plain", "residual")


class SpecError(ValueError):
    """Invalid search space, or an assignment that does not fit it."""


class NumericError(FloatingPointError):
    """Non-finite activations; ``layer`` names where they first appeared."""

    def __init__(self, layer: str):
        super().__init__(f"non-finite activations after {layer}")
        self.layer = layer


@dataclass(frozen=True)
class SearchSpaceSpec:
    """Everything that defines the supernet universe for one search.

    ``group_capacity`` defaults to ``target_depth - n + 1`` layers per group,
    the most any group can hold on an inherited chain that ends at
    ``target_depth``.
    """

    n: int = 3
    channel_plan: tuple[int, ...] = (8, 16, 32)
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 8
    cell_kind: str = "plain"
    classifier_plan: tuple[int, ...] = (64, 8)
    target_depth: int = 8
    group_capacity: tuple[int, ...] | None = None
    allow_irregular_channels: bool = False

    def __post_init__(self):
        for name in ("channel_plan", "input_shape", "classifier_plan", "group_capacity"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))
        if self.group_capacity is None:
            object.__setattr__(self, "group_capacity", (self.target_depth - self.n + 1,) * self.n)
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise SpecError("group count n must be >= 1")
        if self.cell_kind not in CELL_KINDS:
            raise SpecError(f"cell_kind must be one of {CELL_KINDS}, got {self.cell_kind!r}")
        if len(self.channel_plan) != self.n:
            raise SpecError(f"channel_plan has {len(self.channel_plan)} entries for {self.n} groups")
        if len(self.group_capacity) != self.n:
            raise SpecError(f"group_capacity has {len(self.group_capacity)} entries for {self.n} groups")
        if any(c < 1 for c in self.group_capacity):
            raise SpecError("every group capacity must be >= 1")
        if any(c < 1 for c in self.channel_plan):
            raise SpecError("channel counts must be positive")
        if not self.allow_irregular_channels:
            for lo, hi in zip(self.channel_plan, self.channel_plan[1:]):
                if hi != 2 * lo:
                    raise SpecError(
                        f"channel plan {list(self.channel_plan)} does not double per group; "
                        "set allow_irregular_channels to override")
        if len(self.input_shape) != 3:
            raise SpecError("input_shape must be (channels, height, width)")
        _, h, w = self.input_shape
        div = 2 ** (self.n if self.cell_kind == "plain" else self.n - 1)
        if h % div or w % div:
            raise SpecError(f"input {h}x{w} cannot be halved {div.bit_length() - 1} times")
        if not self.classifier_plan or self.classifier_plan[-1] != self.num_classes:
            raise SpecError("classifier_plan must end with num_classes")
        if self.target_depth < self.n:
            raise SpecError("target_depth must be >= n")

    @property
    def supernet_depth(self) -> int:
        return sum(self.group_capacity)

    def group_hw(self, group: int) -> tuple[int, int]:
        """Spatial size at which the cells of ``group`` (0-based) operate."""
        _, h, w = self.input_shape
        return h >> group, w >> group

    def check_assignment(self, a: Sequence[int], capacity: bool = True) -> LayerAssignment:
        a = LayerAssignment(a)
        if len(a) != self.n:
            raise SpecError(f"assignment {a} has {len(a)} groups, search space has {self.n}")
        if capacity:
            for i, (ai, ci) in enumerate(zip(a, self.group_capacity)):
                if ai > ci:
                    raise SpecError(f"assignment {a}: group {i + 1} holds {ai} layers, capacity is {ci}")
        return a

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpaceSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown search-space keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()


class PlainCell:
    """3x3 conv -> batch norm -> ReLU."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.conv = Conv3x3(c_in, c_out, 1, rng, dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)
        self._out = None

    def layers(self) -> list[Layer]:
        return [self.conv, self.bn]

    def forward(self, x, train=False):
        out = relu_forward(self.bn.forward(self.conv.forward(x, train), train))
        if train:
            self._out = out
        return out

    def backward(self, dout):
        d = relu_backward(dout, self._out)
        self._out = None
        return self.conv.backward(self.bn.backward(d))

    def macs(self, in_hw):
        return self.conv.macs(in_hw)

    def out_hw(self, in_hw):
        return in_hw


class ResidualCell:
    """Basic residual block: two 3x3 convs plus a parameter-free shortcut.

    When the block halves resolution and/or widens channels, the shortcut
    subsamples with stride 2 and zero-pads the extra channels.
    """

    def __init__(self, c_in, c_out, stride, rng, dtype=np.float32):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.conv1 = Conv3x3(c_in, c_out, stride, rng, dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv3x3(c_out, c_out, 1, rng, dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        self._cache = None

    def layers(self) -> list[Layer]:
        return [self.conv1, self.bn1, self.conv2, self.bn2]

    def _shortcut(self, x):
        if self.stride == 2:
            x = x[:, :, ::2, ::2]
        if self.c_out != self.c_in:
            pad = np.zeros((self.c_out - self.c_in,) + x.shape[1:], dtype=x.dtype)
            x = np.concatenate([x, pad], axis=0)
        return x

    def forward(self, x, train=False):
        h = relu_forward(self.bn1.forward(self.conv1.forward(x, train), train))
        y = self.bn2.forward(self.conv2.forward(h, train), train)
        out = relu_forward(y + self._shortcut(x))
        if train:
            self._cache = (h, out, x.shape)
        return out

    def backward(self, dout):
        h, out, in_shape = self._cache
        self._cache = None
        d = relu_backward(dout, out)
        dh = self.conv2.backward(self.bn2.backward(d))
        dx = self.conv1.backward(self.bn1.backward(relu_backward(dh, h)))
        ds = d[: self.c_in]
        if self.stride == 2:
            full = np.zeros(in_shape, dtype=d.dtype)
            full[:, :, ::2, ::2] = ds
            ds = full
        return dx + ds

    def macs(self, in_hw):
        return self.conv1.macs(in_hw) + self.conv2.macs(self.conv1.out_hw(in_hw))

    def out_hw(self, in_hw):
        return self.conv1.out_hw(in_hw)


class Classifier:
    """Fully connected head; ReLU between layers, none after the last."""

    def __init__(self, d_in, plan, rng, dtype=np.float32):
        self.fcs = []
        for d_out in plan:
            self.fcs.append(Linear(d_in, d_out, rng, dtype))
            d_in = d_out
        self._outs = []

    def layers(self) -> list[Layer]:
        return list(self.fcs)

    def forward(self, x, train=False):
        outs = []
        for i, fc in enumerate(self.fcs):
            x = fc.forward(x, train)
            if i < len(self.fcs) - 1:
                x = relu_forward(x)
                outs.append(x)
        if train:
            self._outs = outs
        return x

    def backward(self, dout):
        for i in range(len(self.fcs) - 1, -1, -1):
            if i < len(self.fcs) - 1:
                dout = relu_backward(dout, self._outs[i])
            dout = self.fcs[i].backward(dout)
        self._outs = []
        return dout

    def macs(self):
        return sum(fc.macs() for fc in self.fcs)


def _new_cell(spec: SearchSpaceSpec, group: int, slot: int, rng, dtype):
    """Cell for ``slot`` (0-based) of ``group``; slot 0 is the transition cell."""
    c_out = spec.channel_plan[group]
    if spec.cell_kind == "plain":
        if slot == 0:
            c_in = spec.input_shape[0] if group == 0 else spec.channel_plan[group - 1]
        else:
            c_in = c_out
        return PlainCell(c_in, c_out, rng, dtype)
    if slot == 0 and group > 0:
        return ResidualCell(spec.channel_plan[group - 1], c_out, 2, rng, dtype)
    return ResidualCell(c_out, c_out, 1, rng, dtype)


def _new_stem(spec: SearchSpaceSpec, rng, dtype):
    if spec.cell_kind == "plain":
        return None
    return PlainCell(spec.input_shape[0], spec.channel_plan[0], rng, dtype)


def _classifier_in(spec: SearchSpaceSpec) -> int:
    if spec.cell_kind == "plain":
        h, w = spec.group_hw(spec.n)
        return spec.channel_plan[-1] * h * w
    # residual nets use global average pooling
    return spec.channel_plan[-1]


class Network:
    """A concrete network: stem, ``a_i`` cells per group, classifier.

    The cells are held by reference, so several networks can share the same
    parameter blocks (this is how supernet views work).
    """

    def __init__(self, spec: SearchSpaceSpec, assignment: LayerAssignment, stem, groups, classifier):
        self.spec = spec
        self.assignment = LayerAssignment(assignment)
        self.stem = stem
        self.groups = groups
        self.classifier = classifier
        if [len(g) for g in groups] != list(self.assignment):
            raise SpecError(f"cell counts {[len(g) for g in groups]} do not match {self.assignment}")
        self._pool_idx: list = []
        self._pre_head_shape = None

    # -- structure ---------------------------------------------------------

    def modules(self) -> Iterator:
        """Cells and classifier in declaration order."""
        if self.stem is not None:
            yield self.stem
        for g in self.groups:
            yield from g
        yield self.classifier

    def layers(self) -> list[Layer]:
        return [layer for mod in self.modules() for layer in mod.layers()]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers() for p in layer.params.values()]

    def bn_layers(self) -> list[BatchNorm]:
        return [layer for layer in self.layers() if isinstance(layer, BatchNorm)]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def macs(self) -> int:
        """Per-sample multiply-accumulates in conv and fully connected layers."""
        total = 0
        hw = self.spec.input_shape[1:]
        if self.stem is not None:
            total += self.stem.macs(hw)
        for g in self.groups:
            for cell in g:
                total += cell.macs(hw)
                hw = cell.out_hw(hw)
            if self.spec.cell_kind == "plain":
                hw = (hw[0] // 2, hw[1] // 2)
        return total + self.classifier.macs()

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    def astype(self, dtype) -> "Network":
        for layer in self.layers():
            layer.astype(dtype)
        return self

    def copy(self) -> "Network":
        """Deep copy of every parameter block (no sharing with ``self``)."""
        import copy as _copy

        return _copy.deepcopy(self)

    def digest(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers():
            for store in (layer.params, layer.buffers):
                for k in sorted(store):
                    h.update(np.ascontiguousarray(store[k]).tobytes())
        return h.hexdigest()

    # -- computation -------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits for a batch of ``(N, C, H, W)`` images."""
        if x.ndim != 4 or tuple(x.shape[1:]) != self.spec.input_shape:
            raise ValueError(f"expected batch of shape (N, {', '.join(map(str, self.spec.input_shape))}), "
                             f"got {tuple(x.shape)}")
        h = np.ascontiguousarray(x.transpose(1, 0, 2, 3), dtype=self.dtype)
        pool_idx = []
        if self.stem is not None:
            h = self._checked(self.stem.forward(h, train), "stem")
        for gi, g in enumerate(self.groups):
            for ci, cell in enumerate(g):
                h = self._checked(cell.forward(h, train), f"group {gi + 1} cell {ci + 1}")
            if self.spec.cell_kind == "plain":
                h, idx = maxpool_forward(h)
                pool_idx.append(idx)
        c, n = h.shape[:2]
        if self.spec.cell_kind == "plain":
            feats = h.transpose(1, 0, 2, 3).reshape(n, -1)
        else:
            feats = h.mean(axis=(2, 3)).T
        if train:
            self._pool_idx = pool_idx
            self._pre_head_shape = h.shape
        return self._checked(self.classifier.forward(np.ascontiguousarray(feats), train), "classifier")

    @staticmethod
    def _checked(h, where):
        if not np.isfinite(h).all():
            raise NumericError(where)
        return h

    def backward(self, dlogits: np.ndarray) -> None:
        """Backpropagate ``dL/dlogits``; fills ``grads`` on every layer."""
        dfeat = self.classifier.backward(dlogits)
        c, n, hh, ww = self._pre_head_shape
        if self.spec.cell_kind == "plain":
            dh = np.ascontiguousarray(dfeat.reshape(n, c, hh, ww).transpose(1, 0, 2, 3))
        else:
            dh = np.broadcast_to((dfeat.T / (hh * ww))[:, :, None, None], (c, n, hh, ww)).copy()
        for gi in range(len(self.groups) - 1, -1, -1):
            if self.spec.cell_kind == "plain":
                dh = maxpool_backward(dh, self._pool_idx[gi])
            for cell in reversed(self.groups[gi]):
                dh = cell.backward(dh)
        if self.stem is not None:
            self.stem.backward(dh)
        self._pool_idx = []

    def __repr__(self):
        return f"Network({self.spec.cell_kind}, {self.assignment}, params={self.num_parameters()})"


def build_network(spec: SearchSpaceSpec, a: Sequence[int], seed: int, dtype=np.float32) -> Network:
    """Stand-alone network for assignment ``a`` with seeded initialization.

    Capacity limits apply only to supernets, so any assignment with the right
    group count is accepted here.
    """
    a = spec.check_assignment(a, capacity=False)
    rng = np.random.default_rng(seed)
    stem = _new_stem(spec, rng, dtype)
    groups = [[_new_cell(spec, gi, si, rng, dtype) for si in range(ai)] for gi, ai in enumerate(a)]
    classifier = Classifier(_classifier_in(spec), spec.classifier_plan, rng, dtype)
    return Network(spec, a, stem, groups, classifier)


def count_macs(spec: SearchSpaceSpec, a: Sequence[int]) -> int:
    """Closed-form conv/FC multiply-accumulate count for one sample."""
    a = LayerAssignment(a)
    total = 0
    c_img = spec.input_shape[0]
    if spec.cell_kind == "residual":
        h, w = spec.group_hw(0)
        total += h * w * 9 * c_img * spec.channel_plan[0]
    for gi, (ai, c) in enumerate(zip(a, spec.channel_plan)):
        h, w = spec.group_hw(gi)
        if spec.cell_kind == "plain":
            c_prev = c_img if gi == 0 else spec.channel_plan[gi - 1]
            total += h * w * 9 * (c_prev * c + (ai - 1) * c * c)
        else:
            c_prev = c if gi == 0 else spec.channel_plan[gi - 1]
            total += h * w * 9 * (c_prev * c + c * c + (ai - 1) * 2 * c * c)
    dims = [_classifier_in(spec), *spec.classifier_plan]
    total += sum(i * o for i, o in zip(dims, dims[1:]))
    return total


def count_parameters(spec: SearchSpaceSpec, a: Sequence[int]) -> int:
    """Closed-form trainable parameter count."""
    a = LayerAssignment(a)
    c_img = spec.input_shape[0]
    total = 0
    if spec.cell_kind == "residual":
        total += 9 * c_img * spec.channel_plan[0] + 2 * spec.channel_plan[0]
    for gi, (ai, c) in enumerate(zip(a, spec.channel_plan)):
        if spec.cell_kind == "plain":
            c_prev = c_img if gi == 0 else spec.channel_plan[gi - 1]
            total += 9 * c_prev * c + 2 * c + (ai - 1) * (9 * c * c + 2 * c)
        else:
            c_prev = c if gi == 0 else spec.channel_plan[gi - 1]
            block = 9 * c * c + 4 * c
            total += 9 * c_prev * c + block + (ai - 1) * (2 * 9 * c * c + 4 * c)
    dims = [_classifier_in(spec), *spec.classifier_plan]
    total += sum(i * o + o for i, o in zip(dims, dims[1:]))
    return total
