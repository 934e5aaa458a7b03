"""ParamStore bookkeeping, Adam behavior, checkpoint round trips and the
gradient checker itself."""

import numpy as np
import pytest

from moekgc.errors import CheckpointError, GradCheckError, NumericError
from moekgc.gradcheck import grad_check
from moekgc.optim import Adam
from moekgc.params import ParamStore, load_checkpoint, save_checkpoint


def make_store():
    store = ParamStore()
    rng = np.random.default_rng(1)
    store.add("mat", rng.normal(size=(3, 4)))
    store.add("vec", rng.normal(size=5))
    store.add("frozen", rng.normal(size=2), trainable=False)
    return store


class TestParamStore:
    def test_zero_grads(self):
        store = make_store()
        store["mat"].grad[...] = 1.0
        store.zero_grads()
        assert store.grads_are_zero()

    def test_duplicate_name_rejected(self):
        store = make_store()
        with pytest.raises(ValueError):
            store.add("mat", np.zeros(2))

    def test_value_hash_tracks_values(self):
        store = make_store()
        h0 = store.value_hash()
        assert store.value_hash() == h0
        store["vec"].value[0] += 1e-12
        assert store.value_hash() != h0

    def test_ordered_accumulate(self):
        store = make_store()
        buf_a = store.new_grad_buffers()
        buf_b = store.new_grad_buffers()
        buf_a["vec"][0] = 1.0
        buf_b["vec"][0] = 2.0
        store.accumulate(buf_a)
        store.accumulate(buf_b)
        assert store["vec"].grad[0] == 3.0


class TestAdam:
    def test_first_step_closed_form(self):
        # At t=1 the bias-corrected update is -lr * g / (|g| + eps).
        store = ParamStore()
        p = store.add("p", np.zeros(3))
        opt = Adam(store, lr=0.5, eps=1e-8)
        g = np.array([0.3, -2.0, 1e-4])
        p.grad[...] = g
        opt.step()
        expected = -0.5 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p.value, expected, rtol=1e-12)

    def test_zero_grad_zero_update(self):
        store = make_store()
        opt = Adam(store, lr=0.1)
        before = store.copy_values()
        store.zero_grads()
        opt.step()
        for name, val in before.items():
            assert np.array_equal(store[name].value, val)

    def test_frozen_group_untouched(self):
        store = make_store()
        opt = Adam(store, lr=0.1)
        store["frozen"].grad[...] = 5.0
        before = store["frozen"].value.copy()
        opt.step()
        assert np.array_equal(store["frozen"].value, before)

    def test_nonfinite_grad_names_group(self):
        store = make_store()
        opt = Adam(store, lr=0.1)
        store["vec"].grad[0] = np.nan
        with pytest.raises(NumericError, match="vec"):
            opt.step()

    def test_quadratic_bowl_convergence(self):
        # Fixed quadratic 0.5 * sum c_i (x_i - a_i)^2; oracle is the analytic
        # minimum a.
        rng = np.random.default_rng(0)
        c = rng.uniform(0.5, 2.0, size=8)
        a = rng.uniform(-0.2, 0.2, size=8)
        store = ParamStore()
        theta = store.add("theta", np.zeros(8))
        opt = Adam(store, lr=0.02)
        for _ in range(100):
            store.zero_grads()
            theta.grad[...] = c * (theta.value - a)
            opt.step()
        assert np.max(np.abs(theta.value - a)) < 1e-3


class TestCheckpoint:
    def test_round_trip_lossless(self, tmp_path):
        store = make_store()
        opt = Adam(store, lr=0.01)
        store["mat"].grad[...] = 1.0
        opt.step()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, meta={"seed": 7, "note": "x"}, adam_state=opt)

        values, manifest, moments = load_checkpoint(path)
        assert manifest["meta"]["seed"] == 7
        for g in store:
            assert np.array_equal(values[g.name], g.value)
        for name, (m, v) in opt.moments.items():
            assert np.array_equal(moments[name][0], m)
            assert np.array_equal(moments[name][1], v)

        fresh = make_store()
        fresh.load_values(values)
        assert fresh.value_hash() == store.value_hash()

    def test_shape_mismatch_rejected(self, tmp_path):
        store = make_store()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, meta={})
        values, _, _ = load_checkpoint(path)
        other = ParamStore()
        other.add("mat", np.zeros((2, 2)))
        with pytest.raises(CheckpointError, match="mat"):
            other.load_values(values)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"not a zip")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestGradCheck:
    def test_quadratic_exact(self):
        theta = np.random.default_rng(5).normal(size=6)

        def closure():
            return float(theta @ theta)

        passed, reports = grad_check(closure, [("theta", theta, 2 * theta)], tolerance=1e-6)
        assert passed
        assert reports["theta"].max_rel_err < 1e-8

    def test_wrong_gradient_caught(self):
        theta = np.ones(4)

        def closure():
            return float(theta @ theta)

        passed, reports = grad_check(closure, [("theta", theta, 3 * theta)], tolerance=1e-4)
        assert not passed

    def test_nondeterministic_closure_aborts(self):
        rng = np.random.default_rng()
        theta = np.ones(2)

        def closure():
            return float(theta @ theta) + rng.normal() * 1e-9

        with pytest.raises(GradCheckError, match="deterministic"):
            grad_check(closure, [("theta", theta, 2 * theta)])

    def test_coordinate_sampling(self):
        theta = np.random.default_rng(6).normal(size=100)

        def closure():
            return float(theta @ theta)

        passed, reports = grad_check(
            closure, [("theta", theta, 2 * theta)],
            max_coords_per_group=10, rng=np.random.default_rng(0),
        )
        assert passed
        assert reports["theta"].checked == 10
