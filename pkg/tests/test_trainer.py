import dataclasses
import math

import numpy as np
import pytest

import oracles
from conftest import tiny_dataset, tiny_params
from gramtrain import checkpoint, gravity
from gramtrain.data import Dataset, Example, Vocabulary
from gramtrain.errors import DataError, NumericalError, UsageError
from gramtrain.gravity import LowRankPrior
from gramtrain.model import FeatureVector, TowerConfig, embed_all, forward, init_params
from gramtrain.trainer import (METRICS_HEADER, TrainConfig, batch_gradient, load_prior, loss_value_and_slope,
                               new_state, read_trajectory, run, train_step)


def test_loss_examples():
    assert loss_value_and_slope("squared", 0.3, 0.3) == (0.0, 0.0)
    v, d = loss_value_and_slope("squared", 2.0, 0.0)
    assert (v, d) == (4.0, 4.0)
    v, d = loss_value_and_slope("logistic", 0.0, 1.0)
    assert v == pytest.approx(math.log(2), abs=1e-15) and d == -0.5
    with pytest.raises(DataError):
        loss_value_and_slope("logistic", 0.0, 0.5)


def test_logistic_slope_is_derivative():
    p = np.linspace(-30, 30, 13)
    for s in (0.0, 1.0):
        h = 1e-6
        num = (loss_value_and_slope("logistic", p + h, s)[0] - loss_value_and_slope("logistic", p - h, s)[0]) / (2 * h)
        np.testing.assert_allclose(loss_value_and_slope("logistic", p, s)[1], num, atol=1e-8)


def cfg(**kw):
    base = dict(estimator="sogram", alpha=0.1, eta=0.1, lam=1.0, batch_size=4, steps=5, embed_dim=3, hidden=(4,),
                dim=2, eval_every=0, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def _run_steps(config, data, steps):
    state = new_state(config, data)
    for _ in range(steps):
        idx_b = state.rng.integers(0, len(data), config.batch_size)
        idx_bp = state.rng.integers(0, len(data), config.batch_size)
        train_step(state, data, idx_b, idx_bp, config)
    return state


@pytest.mark.parametrize("estimator", ["exact", "sampling", "sogram", "sagram"])
def test_zero_gravity_is_estimator_independent(estimator):
    data = tiny_dataset(n=20, seed=1)
    ref = _run_steps(cfg(estimator="sampling", lam=0.0), data, 6).params.flatten()
    got = _run_steps(cfg(estimator=estimator, lam=0.0), data, 6).params.flatten()
    assert got.tobytes() == ref.tobytes()


def test_zero_gravity_is_plain_sgd():
    data = tiny_dataset(n=20, seed=2)
    config = cfg(lam=0.0)
    state = new_state(config, data)
    p = state.params.copy()
    idx = np.array([0, 3, 3, 9])
    train_step(state, data, idx, idx, config)
    U, tl = forward(p, "left", data.left.take(idx))
    V, tr = forward(p, "right", data.right.take(idx))
    _, slope = loss_value_and_slope("squared", np.einsum("bi,bi->b", U, V), data.targets[idx])
    g = p.zeros_like()
    from gramtrain.model import backward
    backward(p, tl, tr, slope[:, None] * V, slope[:, None] * U, g)
    for a in g.arrays():
        a *= 1.0 / idx.size
    p.axpy(-config.eta, g)
    assert p.flatten().tobytes() == state.params.flatten().tobytes()


def test_zero_eta_freezes_params_but_not_estimator():
    data = tiny_dataset(n=10, seed=3)
    config = cfg(eta=0.0)
    state = new_state(config, data)
    before = state.params.flatten().copy()
    train_step(state, data, [0, 1], [2, 3], config)
    assert np.array_equal(state.params.flatten(), before)
    assert state.estimator.current.value() > 0


def test_hand_computed_step_n2_k1():
    # left items a, b; right item c; one-dim tables, linear towers, k = 1:
    # u = w_l * e_x + b_l, v = w_r * e_y + b_r
    ex = [Example(FeatureVector.one_hot(0, 0), FeatureVector.one_hot(0, 2), 1.0),
          Example(FeatureVector.one_hot(0, 1), FeatureVector.one_hot(0, 2), 0.0)]
    data = Dataset(ex, Vocabulary(("id",), ({"a": 0, "b": 1, "c": 2},)))
    config = TrainConfig(estimator="exact", eta=0.1, lam=2.0, batch_size=2, steps=1, embed_dim=1, hidden=(),
                         dim=1, eval_every=0)
    state = new_state(config, data)
    p = state.params
    p.tables[0][:, 0] = [1.0, 2.0, 3.0]
    p.W["left"][0][...] = 0.5
    p.W["right"][0][...] = 1.0
    p.b["left"][0][...] = 0.0
    p.b["right"][0][...] = 0.0
    e = np.array([1.0, 2.0, 3.0])
    wl, wr, lam = 0.5, 1.0, 2.0

    def objective(e, wl, wr):
        u = wl * e[:2]
        v = wr * np.array([e[2], e[2]])
        loss = np.mean((u * v - np.array([1.0, 0.0])) ** 2)
        return loss + lam * np.mean(np.outer(u, v) ** 2)

    h = 1e-7
    grads = {}
    for name, (ee, a, b) in {"e0": (e + [h, 0, 0], wl, wr), "e1": (e + [0, h, 0], wl, wr),
                             "e2": (e + [0, 0, h], wl, wr), "wl": (e, wl + h, wr), "wr": (e, wl, wr + h)}.items():
        grads[name] = (objective(ee, a, b) - objective(e - (ee - e), 2 * wl - a, 2 * wr - b)) / (2 * h)
    train_step(state, data, [0, 1], [0, 1], config)
    np.testing.assert_allclose(p.tables[0][:, 0], e - 0.1 * np.array([grads["e0"], grads["e1"], grads["e2"]]),
                               rtol=1e-7)
    assert p.W["left"][0][0, 0] == pytest.approx(wl - 0.1 * grads["wl"], rel=1e-7)
    assert p.W["right"][0][0, 0] == pytest.approx(wr - 0.1 * grads["wr"], rel=1e-7)


def test_full_step_gradient_matches_finite_differences():
    data = tiny_dataset(n=10, seed=5)
    config = cfg(lam=3.0)
    p = tiny_params(data.vocab_sizes, hidden=(4,), dim=2, seed=5, scale=0.6)
    assert not oracles.kinked(p, data)
    G = gravity.GramianPair(np.array([[1.0, 0.2], [0.2, 0.5]]), np.array([[0.3, -0.1], [-0.1, 0.8]]))
    idx = np.array([1, 4, 4, 7, 9])
    grad = batch_gradient(p, data, idx, G, config)[0].flatten()
    q = p.copy()

    def f(theta):
        q.assign_flat(theta)
        U = forward(q, "left", data.left.take(idx))[0]
        V = forward(q, "right", data.right.take(idx))[0]
        loss = loss_value_and_slope("squared", np.einsum("bi,bi->b", U, V), data.targets[idx])[0]
        return float(np.mean(loss + config.lam * gravity.ghat_batch(U, V, G)))

    num = oracles.central_difference(f, p.flatten())
    assert np.linalg.norm(grad - num) / np.linalg.norm(num) <= 1e-6


def test_nonfinite_gradient_aborts():
    data = tiny_dataset(n=6, seed=0)
    config = cfg(eta=1.0)
    state = new_state(config, data)
    state.params.tables[0][...] = 1e200
    with pytest.raises(NumericalError, match="non-finite"):
        train_step(state, data, [0], [1], config)


def test_run_deterministic_and_writes_outputs(tmp_path):
    data = tiny_dataset(n=30, seed=4)
    config = cfg(steps=12, eval_every=4, checkpoint_every=5, eval_queries=5, num_candidates=10, map_k=3,
                 gram_reference="exact")
    a = run(config, data, data, tmp_path / "a")
    b = run(config, data, data, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_text() == (tmp_path / "b" / "metrics.csv").read_text()
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(METRICS_HEADER)
    assert [s for s, _ in a.checkpoints] == [0, 5, 10, 12]
    traj = read_trajectory(tmp_path / "a" / "trajectory.txt")
    assert [s for s, _ in traj] == [0, 5, 10, 12]
    assert traj[-1][1].read_bytes() == (tmp_path / "a" / "ckpt_00000012.bin").read_bytes()
    assert a.metrics[-1]["gram_err_u"] != ""


def test_run_zero_steps_writes_initial_checkpoint_only(tmp_path):
    data = tiny_dataset(n=8, seed=4)
    res = run(cfg(steps=0), data, None, tmp_path)
    assert [s for s, _ in res.checkpoints] == [0]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt_00000000.bin", "metrics.csv", "trajectory.txt"]


@pytest.mark.parametrize("estimator", ["sogram", "sagram"])
def test_resume_matches_uninterrupted(tmp_path, estimator):
    from gramtrain.trainer import load_state
    data = tiny_dataset(n=16, seed=6)
    full = run(cfg(estimator=estimator, steps=8), data, None, tmp_path / "full").state
    half = cfg(estimator=estimator, steps=4)
    run(half, data, None, tmp_path / "half")
    state = load_state(tmp_path / "half" / "ckpt_00000004.bin", half, data)
    resumed = run(half, data, None, tmp_path / "rest", state=state).state
    assert resumed.step == 8
    assert resumed.params.flatten().tobytes() == full.params.flatten().tobytes()


def test_prior_file_and_zero_prior_matches_plain(tmp_path):
    data = tiny_dataset(n=10, seed=8)
    path = tmp_path / "prior.txt"
    path.write_text("".join("0 0\t0 0\n" for _ in range(10)))
    prior = load_prior(path, 10)
    assert prior.rank == 2
    plain = _run_steps(cfg(), data, 4).params.flatten()
    state = new_state(cfg(), data, prior)
    for _ in range(4):
        idx_b = state.rng.integers(0, 10, 4)
        idx_bp = state.rng.integers(0, 10, 4)
        train_step(state, data, idx_b, idx_bp, cfg())
    np.testing.assert_allclose(state.params.flatten(), plain, atol=1e-15)
    with pytest.raises(DataError):
        load_prior(path, 11)


def test_h_update_examples():
    H = gravity.h_update_sogram(np.zeros((2, 1)), [[1.0, 0.0]], [[2.0]], 1.0)
    np.testing.assert_array_equal(H, [[2.0], [0.0]])
    H0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    H = H0
    for t in range(1, 20):
        H = gravity.h_update_sogram(H, [[1.0, 2.0]], [[0.0, 0.0]], 0.3)
        assert np.linalg.norm(H) == pytest.approx(0.7 ** t * np.linalg.norm(H0), rel=1e-12)
    with pytest.raises(UsageError):
        gravity.h_update_sogram(H0, np.zeros((0, 2)), np.zeros((0, 2)), 0.3)


def test_sagram_prior_enumeration_equals_exact_h():
    rng = np.random.default_rng(9)
    n, k, kp = 6, 3, 2
    prior = LowRankPrior(rng.standard_normal((n, kp)), rng.standard_normal((n, kp)))
    cache = gravity.sagram_init(rng.standard_normal((n, k)), rng.standard_normal((n, k)))
    tcache = gravity.h_cache_init(cache, prior)
    U, V = rng.standard_normal((n, k)), rng.standard_normal((n, k))
    acc = np.zeros((k, kp))
    for i in range(n):
        acc += gravity.h_estimate_sagram(tcache, cache, prior, [i], U[i], V[i], beta="saga")[0]
    np.testing.assert_allclose(acc / n, gravity.weighted_embeddings(U, prior.q), atol=1e-12)
    # fresh == cached is a no-op
    Hu, _ = gravity.h_estimate_sagram(tcache, cache, prior, [2], cache.cached_u[2], cache.cached_v[2])
    np.testing.assert_array_equal(Hu, tcache.T_u)


def test_checkpoint_carries_estimator_state(tmp_path):
    data = tiny_dataset(n=12, seed=10)
    res = run(cfg(estimator="sagram", steps=3), data, None, tmp_path)
    _, meta, arrays = checkpoint.load(res.checkpoints[-1][1])
    assert meta["step"] == 3 and meta["estimator"] == "sagram:saga"
    np.testing.assert_array_equal(arrays["cached_u"], res.state.estimator.cache.cached_u)


def test_config_rejects_bad_reference():
    with pytest.raises(UsageError):
        cfg(gram_reference="huge")
    assert dataclasses.replace(cfg(), gram_reference="500").gram_reference == "500"


def test_linear_tower_shapes():
    cfg_ = TowerConfig((2, 3), (), 4)
    p = init_params(cfg_, (5, 6), np.random.default_rng(0))
    assert p.W["left"][0].shape == (4, 5)
    data = tiny_dataset(n=3, seed=0)
    p2 = tiny_params(data.vocab_sizes, hidden=(), dim=4)
    assert embed_all(p2, "left", data.left).shape == (3, 4)
