import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerassign.assignments import LayerAssignment, enumerate_assignments, successors
from layerassign.nn.layers import BatchNorm
from layerassign.nn.network import SearchSpaceSpec, SpecError
from layerassign.nn.training import SGD, TrainConfig, evaluate, to_float, train_step
from layerassign.supernet import (
    Supernet,
    accuracy_gap,
    extract_subnetwork,
    init_supernet,
    recalc_bn,
    sample_subnetwork,
    train_candidates_interleaved,
    warmup,
)


@pytest.fixture
def sn(spec):
    return init_supernet(spec, seed=1)


def _selected(a):
    return {(g, s) for g, ai in enumerate(a) for s in range(ai)}


class TestInit:
    def test_determinism(self, spec):
        assert init_supernet(spec, 1).digest() == init_supernet(spec, 1).digest()
        assert init_supernet(spec, 1).digest() != init_supernet(spec, 2).digest()

    def test_capacity_rule(self):
        spec = SearchSpaceSpec(n=3, target_depth=8)
        assert spec.group_capacity == (6, 6, 6)
        sn = init_supernet(spec, 1)
        assert sn.capacity == LayerAssignment([6, 6, 6])
        assert sum(len(g) for g in sn.slots) == 18
        assert sn.stem is None and len(sn.classifier.fcs) == 2

    def test_checkpoint_roundtrip(self, sn, spec, tmp_path):
        sn.save(tmp_path / "sn.lasn")
        assert Supernet.load(tmp_path / "sn.lasn", spec).digest() == sn.digest()


class TestViews:
    def test_all_ones_uses_transition_slots(self, sn):
        view = sample_subnetwork(sn, [1, 1, 1])
        assert [g[0] for g in view.groups] == [g[0] for g in sn.slots]
        assert all(len(g) == 1 for g in view.groups)

    def test_capacity_exceeded(self, sn):
        with pytest.raises(SpecError, match="capacity"):
            sample_subnetwork(sn, [5, 1, 1])

    def test_view_equals_extract(self, sn, rng):
        x = rng.standard_normal((6, 3, 8, 8)).astype(np.float32)
        for a in enumerate_assignments(6, 3):
            view, copy = sample_subnetwork(sn, a), extract_subnetwork(sn, a)
            assert np.max(np.abs(view.forward(x) - copy.forward(x))) == 0.0

    def test_aliasing(self, sn, tiny_data):
        view = sample_subnetwork(sn, [2, 1, 2])
        train_step(view, to_float(tiny_data.train_x[:16]), tiny_data.train_y[:16], SGD(0.9), 0.05)
        assert sample_subnetwork(sn, [2, 1, 2]).digest() == view.digest()
        assert extract_subnetwork(sn, [2, 1, 2]).digest() == view.digest()

    def test_extract_is_independent(self, sn):
        copy = extract_subnetwork(sn, [1, 1, 1])
        before = sn.digest()
        copy.parameters()[0][...] += 1.0
        assert sn.digest() == before

    @given(st.lists(st.integers(1, 3), min_size=3, max_size=3), st.integers(0, 2))
    @settings(max_examples=20, deadline=None)
    def test_prefix_monotonicity(self, a, i):
        sn = init_supernet(SearchSpaceSpec(n=3, channel_plan=(2, 4, 8), input_shape=(3, 8, 8), num_classes=4,
                                           classifier_plan=(8, 4), target_depth=6), 0)
        parent = LayerAssignment(a)
        child = parent.increment(i)
        pv, cv = sample_subnetwork(sn, parent), sample_subnetwork(sn, child)
        parent_ids = {id(p) for p in pv.parameters()}
        assert parent_ids < {id(p) for p in cv.parameters()}


class TestWarmup:
    def test_zero_epochs(self, sn, tiny_data):
        before = sn.digest()
        warmup(sn, tiny_data, TrainConfig(epochs=0))
        assert sn.digest() == before

    def test_beats_chance(self, sn, tiny_data):
        warmup(sn, tiny_data, TrainConfig(epochs=6, base_lr=0.05, batch_size=16))
        view = sn.full_view()
        assert evaluate(view, tiny_data.val_x, tiny_data.val_y) > 1 / tiny_data.num_classes

    def test_determinism(self, spec, tiny_data):
        digests = set()
        for _ in range(2):
            sn = init_supernet(spec, 3)
            warmup(sn, tiny_data, TrainConfig(epochs=1, batch_size=16, rng_seed=4))
            digests.add(sn.digest())
        assert len(digests) == 1


class TestInterleaved:
    def test_step_count(self, sn, tiny_data):
        cfg = TrainConfig(epochs=1, batch_size=16, base_lr=0.02, lr_schedule="linear")
        batches = -(-len(tiny_data.train_x) // 16)
        summary = train_candidates_interleaved(sn, successors(LayerAssignment([1, 1, 1])), tiny_data, cfg)
        assert summary.steps == 4 * batches
        assert set(summary.steps_per_network.values()) == {batches}

    def test_empty_candidates(self, sn, tiny_data):
        cfg = TrainConfig(epochs=1, batch_size=16)
        summary = train_candidates_interleaved(sn, [], tiny_data, cfg)
        assert summary.steps == -(-len(tiny_data.train_x) // 16)
        assert list(summary.steps_per_network) == ["4-4-4"]

    def test_candidate_step_isolation(self, sn, tiny_data):
        opt = SGD(0.9, 5e-4)
        xb, yb = to_float(tiny_data.train_x[:16]), tiny_data.train_y[:16]
        for a in successors(LayerAssignment([1, 2, 1])):
            before = sn.slot_digests()
            train_step(sample_subnetwork(sn, a), xb, yb, opt, 0.05)
            after = sn.slot_digests()
            changed = {k for k in before if before[k] != after[k]}
            assert changed <= _selected(a)
            assert changed  # the step did update the selected slots
            untouched = set(before) - _selected(a)
            assert all(before[k] == after[k] for k in untouched)

    def test_determinism_and_stream(self, spec, tiny_data):
        cfg = TrainConfig(epochs=1, batch_size=16)
        out = []
        for _ in range(2):
            sn = init_supernet(spec, 3)
            rng = np.random.default_rng(9)
            train_candidates_interleaved(sn, [[2, 1, 1]], tiny_data, cfg, rng=rng)
            out.append((sn.digest(), rng.bit_generator.state["state"]["state"]))
        assert out[0] == out[1]


def _record_bn_inputs(view, monkeypatch):
    seen = {}
    for i, bn in enumerate(view.bn_layers()):
        orig = bn.forward

        def wrapped(x, train=False, _i=i, _orig=orig):
            seen.setdefault(_i, []).append(x.astype(np.float64))
            return _orig(x, train)

        monkeypatch.setattr(bn, "forward", wrapped)
    return seen


class TestRecalcBN:
    def test_single_batch_identity(self, sn, tiny_data, monkeypatch):
        view = sample_subnetwork(sn, [2, 1, 2])
        calib = tiny_data.train_x[:24]
        seen = _record_bn_inputs(view, monkeypatch)
        recalc_bn(view, calib, batch_size=64)
        for i, bn in enumerate(view.bn_layers()):
            (x,) = seen[i]
            assert np.allclose(bn.buffers["running_mean"], x.mean(axis=(1, 2, 3)), atol=1e-6, rtol=0)
            assert np.allclose(bn.buffers["running_var"], x.var(axis=(1, 2, 3)), atol=1e-6, rtol=0)

    def test_order_independence(self, sn, tiny_data):
        a, b = tiny_data.train_x[:16], tiny_data.train_x[16:32]
        view = sample_subnetwork(sn, [1, 3, 1])
        recalc_bn(view, np.concatenate([a, b]), batch_size=16)
        first = [bn.buffers["running_mean"].copy() for bn in view.bn_layers()]
        first_v = [bn.buffers["running_var"].copy() for bn in view.bn_layers()]
        recalc_bn(view, np.concatenate([b, a]), batch_size=16)
        for bn, m, v in zip(view.bn_layers(), first, first_v):
            assert np.allclose(bn.buffers["running_mean"], m, atol=1e-6, rtol=0)
            assert np.allclose(bn.buffers["running_var"], v, atol=1e-6, rtol=0)

    def test_stale_then_stable(self, sn, tiny_data):
        view = sample_subnetwork(sn, [2, 2, 2])
        x = to_float(tiny_data.val_x[:8])
        for bn in view.bn_layers():
            bn.buffers["running_mean"][:] = 3.0
        stale = view.forward(x)
        recalc_bn(view, tiny_data.train_x[:32])
        once = view.forward(x)
        recalc_bn(view, tiny_data.train_x[:32])
        twice = view.forward(x)
        assert not np.allclose(stale, once)
        assert np.allclose(once, twice, atol=1e-6, rtol=0)

    def test_does_not_touch_parameters(self, sn, tiny_data):
        view = sample_subnetwork(sn, [1, 1, 1])
        params = [p.copy() for p in view.parameters()]
        recalc_bn(view, tiny_data.train_x[:16])
        assert all(np.array_equal(p, q) for p, q in zip(params, view.parameters()))

    def test_empty(self, sn):
        with pytest.raises(ValueError, match="empty"):
            recalc_bn(sample_subnetwork(sn, [1, 1, 1]), np.zeros((0, 3, 8, 8), np.uint8))

    def test_momentum_one_replaces_stats(self, rng):
        bn = BatchNorm(3, momentum=1.0, dtype=np.float64)
        x = rng.standard_normal((3, 4, 2, 2)) * 2 + 1
        bn.forward(x, train=True)
        assert np.allclose(bn.buffers["running_mean"], x.mean(axis=(1, 2, 3)))
        assert np.allclose(bn.buffers["running_var"], x.var(axis=(1, 2, 3)))


class TestAccuracyGap:
    def test_examples(self):
        assert accuracy_gap([(0.70, 0.70)]) == 0.0
        assert accuracy_gap([(0.70, 0.68), (0.60, 0.63)]) == pytest.approx(0.025, abs=1e-12)

    @pytest.mark.parametrize("bad", [[], [(1.2, 0.5)], [(0.5, -0.1)]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            accuracy_gap(bad)

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=50))
    def test_matches_independent_oracle(self, pairs):
        arr = np.array(pairs, dtype=np.float64)
        assert abs(accuracy_gap(pairs) - float(np.mean(np.abs(arr[:, 0] - arr[:, 1])))) <= 1e-12
