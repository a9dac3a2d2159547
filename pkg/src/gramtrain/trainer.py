"""SGD training with a Gramian-estimated gravity penalty.

One step (both estimator families share it):

1. draw two independent uniform batches B (Gramian) and B' (gradient);
2. update the Gramian estimate from the embeddings of B at the current params;
3. for every example of B', backpropagate ``l'(p, s) * (v, u) + lam * (2 G_v u, 2 G_u v)``;
4. ``theta <- theta - eta * mean gradient``;
5. SAGram only: commit the (pre-update) embeddings of B' to the caches.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, gravity, kvconfig
from .data import Dataset, relevant_sets
from .errors import DataError, NumericalError, UsageError
from .gravity import Estimator, EstimatorKind, GramianPair, LowRankPrior
from .model import ModelParams, TowerConfig, backward, embed_all, forward, init_params

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "loss_train", "gravity_est", "map_at_k_train", "map_at_k_valid",
                  "gram_err_u", "gram_err_v")
LOSSES = ("squared", "logistic")


@dataclass(frozen=True)
class TrainConfig:
    estimator: str = "sogram"
    alpha: float = 0.01
    beta: str = "saga"
    psd_project: bool = True
    eta: float = 0.01
    lam: float = 10.0
    batch_size: int = 128
    steps: int = 1000
    loss: str = "squared"
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0
    prior: str | None = None
    embed_dim: int = 16
    hidden: tuple[int, ...] = (32,)
    dim: int = 16
    valid_fraction: float = 0.1
    map_k: int = 10
    num_candidates: int = 2000
    eval_queries: int = 500
    gram_reference: str = "none"

    def __post_init__(self):
        EstimatorKind(self.estimator, self.alpha, self.beta, self.psd_project)
        if not self.eta >= 0 or not self.lam >= 0:
            raise UsageError("eta and lam must be >= 0")
        if self.batch_size < 1 or self.steps < 0 or self.eval_every < 0 or self.checkpoint_every < 0:
            raise UsageError("batch_size must be >= 1; steps, eval_every, checkpoint_every >= 0")
        if self.loss not in LOSSES:
            raise UsageError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.map_k < 1 or self.num_candidates < self.map_k:
            raise UsageError("need map_k >= 1 and num_candidates >= map_k")
        if self.gram_reference not in ("none", "exact") and not self.gram_reference.isdigit():
            raise UsageError(f"gram_reference must be none, exact or a sample size, got {self.gram_reference!r}")

    @property
    def kind(self) -> EstimatorKind:
        return EstimatorKind(self.estimator, self.alpha, self.beta, self.psd_project)

    def tower(self, n_spaces: int) -> TowerConfig:
        return TowerConfig((self.embed_dim,) * n_spaces, self.hidden, self.dim)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return kvconfig.load(cls, path)


def loss_value_and_slope(kind: str, p, s):
    """Loss value and derivative in the prediction, elementwise."""
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if kind == "squared":
        r = p - s
        return r * r, 2.0 * r
    if kind == "logistic":
        if np.any((s != 0.0) & (s != 1.0)):
            raise DataError("logistic loss needs targets in {0, 1}")
        sign = 2.0 * s - 1.0
        m = -sign * p
        value = np.logaddexp(0.0, m)
        slope = -sign * np.exp(m - np.logaddexp(0.0, m))  # -sign * sigmoid(m)
        return value, slope
    raise UsageError(f"unknown loss {kind!r}")


@dataclass
class TrainState:
    params: ModelParams
    estimator: Estimator
    rng: np.random.Generator
    step: int = 0


@dataclass
class StepInfo:
    loss: float
    ghat: float
    update_norm: float


def new_state(config: TrainConfig, data: Dataset, prior: LowRankPrior | None = None,
              params: ModelParams | None = None) -> TrainState:
    """Initial params (drawn first from the run RNG) and an empty estimator.

    SAGram caches are filled here from a full pass at the initial params.
    """
    if len(data) == 0:
        raise UsageError("training set is empty")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(config.tower(len(data.vocab_sizes)), data.vocab_sizes, rng)
    est = Estimator(config.kind, len(data), params.config.dim, prior)
    if est.needs_init:
        log.info("SAGram: filling caches for %d examples", len(data))
        est.initialize(embed_all(params, "left", data.left), embed_all(params, "right", data.right))
    return TrainState(params, est, rng)


def batch_gradient(params: ModelParams, data: Dataset, idx, G: GramianPair, config: TrainConfig,
                   H=None, prior: LowRankPrior | None = None):
    """Mean over ``idx`` of grad [loss_i + lam * ghat_i] with the estimates held fixed.

    Returns (gradient buffer, mean loss, mean ghat, U, V) where U, V are the
    embeddings of the batch at the current params.
    """
    idx = np.asarray(idx, dtype=np.int64)
    U, tl = forward(params, "left", data.left.take(idx))
    V, tr = forward(params, "right", data.right.take(idx))
    p = np.einsum("bi,bi->b", U, V)
    value, slope = loss_value_and_slope(config.loss, p, data.targets[idx])
    grad_u = slope[:, None] * V
    grad_v = slope[:, None] * U
    if H is not None and prior is not None:
        Qb, Rb = prior.q[idx], prior.r[idx]
        ghat = gravity.ghat_p_batch(U, V, Qb, Rb, G, *H)
    else:
        ghat = gravity.ghat_batch(U, V, G)
    if config.lam != 0.0:
        if H is not None and prior is not None:
            gu, gv = gravity.ghat_p_grad_batch(U, V, Qb, Rb, G, *H)
        else:
            gu, gv = gravity.ghat_grad_batch(U, V, G)
        grad_u = grad_u + config.lam * gu
        grad_v = grad_v + config.lam * gv
    buf = params.zeros_like()
    backward(params, tl, tr, grad_u, grad_v, buf)
    inv = 1.0 / idx.size
    for a in buf.arrays():
        a *= inv
    return buf, float(np.mean(value)), float(np.mean(ghat)), U, V


def draw_batches(state: TrainState, n: int, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independent uniform draws with replacement: (B for Gramians, B' for gradients)."""
    idx_b = state.rng.integers(0, n, batch_size)
    idx_bp = state.rng.integers(0, n, batch_size)
    return idx_b, idx_bp


def train_step(state: TrainState, data: Dataset, idx_b, idx_bp, config: TrainConfig) -> StepInfo:
    # overflow shows up as a NumericalError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_step(state, data, idx_b, idx_bp, config)


def _train_step(state: TrainState, data: Dataset, idx_b, idx_bp, config: TrainConfig) -> StepInfo:
    params, est = state.params, state.estimator
    if est.needs_full_pass:
        U_all = embed_all(params, "left", data.left)
        V_all = embed_all(params, "right", data.right)
        G = est.update(np.arange(len(data)), U_all, V_all)
    else:
        idx_b = np.asarray(idx_b, dtype=np.int64)
        U_b = forward(params, "left", data.left.take(idx_b))[0]
        V_b = forward(params, "right", data.right.take(idx_b))[0]
        G = est.update(idx_b, U_b, V_b)
    grad, loss, ghat, U, V = batch_gradient(params, data, idx_bp, G, config, est.H, est.prior)
    if not grad.all_finite():
        bad = [name for name, a in zip(grad.names(), grad.arrays()) if not np.all(np.isfinite(a))]
        raise NumericalError(f"step {state.step}: non-finite gradient in {', '.join(bad)} "
                             f"(loss={loss:.6g}, gravity estimate={G.value():.6g})")
    params.axpy(-config.eta, grad)
    est.commit(idx_bp, U, V)
    state.step += 1
    update_norm = config.eta * math.sqrt(sum(float(np.sum(a * a)) for a in grad.arrays()))
    return StepInfo(loss, ghat, update_norm)


def objective(params: ModelParams, data: Dataset, config: TrainConfig, prior: LowRankPrior | None = None) -> float:
    """Full objective: mean loss + lam * gravity (with prior, lam * g^P)."""
    U = embed_all(params, "left", data.left)
    V = embed_all(params, "right", data.right)
    value, _ = loss_value_and_slope(config.loss, np.einsum("bi,bi->b", U, V), data.targets)
    if prior is None:
        g = gravity.gravity_gram(U, V)
    else:
        g = gravity.gravity_lowrank_exact(U, V, prior)[1]
    return float(np.mean(value)) + config.lam * g


# --------------------------------------------------------------------------
# run loop

@dataclass
class RunResult:
    state: TrainState
    metrics: list[dict] = field(default_factory=list)
    checkpoints: list[tuple[int, Path]] = field(default_factory=list)


def _reference(config: TrainConfig, data: Dataset, params: ModelParams, sample_idx) -> GramianPair | None:
    if config.gram_reference == "none":
        return None
    if sample_idx is None:
        U, V = embed_all(params, "left", data.left), embed_all(params, "right", data.right)
    else:
        U = embed_all(params, "left", data.left.take(sample_idx))
        V = embed_all(params, "right", data.right.take(sample_idx))
    return gravity.exact_gramians(U, V)


def save_state(path, state: TrainState, config: TrainConfig) -> None:
    meta = {
        "step": state.step,
        "estimator": state.estimator.spec.label(),
        "rng": state.rng.bit_generator.state,
        "config": kvconfig.dump(config),
    }
    checkpoint.save(path, state.params, meta, state.estimator.state_arrays())


def load_state(path, config: TrainConfig, data: Dataset, prior: LowRankPrior | None = None) -> TrainState:
    params, meta, arrays = checkpoint.load(path)
    est = Estimator(config.kind, len(data), params.config.dim, prior)
    if arrays:
        est.load_state(arrays)
    rng = np.random.default_rng()
    step = 0
    if meta:
        rng.bit_generator.state = meta["rng"]
        step = int(meta["step"])
    return TrainState(params, est, rng, step)


def run(config: TrainConfig, train: Dataset, valid: Dataset | None = None, out_dir=None,
        prior: LowRankPrior | None = None, state: TrainState | None = None) -> RunResult:
    """Train for ``config.steps`` steps, logging metrics and writing checkpoints."""
    from .evaluation import map_at_k  # evaluation imports trainer helpers

    if len(train) == 0:
        raise UsageError("training set is empty")
    state = state or new_state(config, train, prior)
    result = RunResult(state)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataError(f"{out}: cannot create output directory ({e.strerror})") from e

    eval_rng = np.random.default_rng([config.seed, 1])
    sample_idx = None
    if config.gram_reference.isdigit() and int(config.gram_reference) < len(train):
        sample_idx = np.sort(eval_rng.choice(len(train), int(config.gram_reference), replace=False))
    train_queries = _queries(train, config.eval_queries, eval_rng)
    valid_queries = _queries(valid, config.eval_queries, eval_rng) if valid is not None and len(valid) else None

    def checkpoint_now():
        if out is None:
            return
        path = out / f"ckpt_{state.step:08d}.bin"
        save_state(path, state, config)
        result.checkpoints.append((state.step, path))

    def eval_row(loss_mean, ghat_value):
        row = {"step": state.step, "loss_train": loss_mean, "gravity_est": ghat_value,
               "map_at_k_train": "", "map_at_k_valid": "", "gram_err_u": "", "gram_err_v": ""}
        seed = config.seed * 1_000_003 + state.step
        if train_queries:
            row["map_at_k_train"] = map_at_k(state.params, train_queries, train, config.map_k,
                                             config.num_candidates, seed)
        if valid_queries:
            row["map_at_k_valid"] = map_at_k(state.params, valid_queries, valid, config.map_k,
                                             config.num_candidates, seed)
        ref = _reference(config, train, state.params, sample_idx)
        if ref is not None:
            G = state.estimator.current
            row["gram_err_u"] = gravity.estimation_error(G.G_u, ref.G_u)
            row["gram_err_v"] = gravity.estimation_error(G.G_v, ref.G_v)
        result.metrics.append(row)
        log.info("step %d loss %.5g gravity %.5g map_train %s map_valid %s", state.step, loss_mean,
                 ghat_value, row["map_at_k_train"], row["map_at_k_valid"])

    checkpoint_now()
    losses: list[float] = []
    n = len(train)
    last_step = state.step + config.steps
    while state.step < last_step:
        idx_b, idx_bp = draw_batches(state, n, config.batch_size)
        info = train_step(state, train, idx_b, idx_bp, config)
        losses.append(info.loss)
        if config.eval_every and (state.step % config.eval_every == 0 or state.step == last_step):
            eval_row(float(np.mean(losses)), state.estimator.current.value())
            losses.clear()
        if config.checkpoint_every and state.step % config.checkpoint_every == 0 and state.step != last_step:
            checkpoint_now()
    if config.steps > 0:
        checkpoint_now()
    if out is not None:
        write_metrics(out / "metrics.csv", result.metrics)
        write_trajectory(out / "trajectory.txt", result.checkpoints)
    return result


def _queries(data: Dataset | None, limit: int, rng: np.random.Generator):
    if data is None:
        return None
    rel = relevant_sets(data)
    keys = sorted(rel)
    if limit and len(keys) > limit:
        keys = sorted(rng.choice(keys, limit, replace=False).tolist())
    return [(k, rel[k]) for k in keys]


def write_metrics(path, rows) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=METRICS_HEADER)
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    except OSError as e:
        raise DataError(f"{path}: cannot write metrics ({e.strerror})") from e


def write_trajectory(path, checkpoints) -> None:
    """One ``step<TAB>path`` line per checkpoint; paths relative to the file."""
    path = Path(path)
    lines = [f"{step}\t{p.name if p.parent == path.parent else p}" for step, p in checkpoints]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_trajectory(path) -> list[tuple[int, Path]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"{path}: cannot read trajectory ({e.strerror})") from e
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'step<TAB>checkpoint'")
        try:
            step = int(parts[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad step {parts[0]!r}") from None
        p = Path(parts[1])
        out.append((step, p if p.is_absolute() else path.parent / p))
    steps = [s for s, _ in out]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise DataError(f"{path}: steps must be strictly increasing")
    return out


def load_prior(path, n_expected: int | None = None) -> LowRankPrior:
    """Prior file: one line per example, ``q_1 .. q_kP<TAB>r_1 .. r_kP``."""
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise DataError(f"{path}: cannot read prior ({e.strerror})") from e
    q, r = [], []
    for lineno, line in enumerate(lines, 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'q values<TAB>r values'")
        try:
            q.append([float(x) for x in parts[0].split()])
            r.append([float(x) for x in parts[1].split()])
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
    if not q or len({len(x) for x in q + r}) != 1:
        raise DataError(f"{path}: prior rows must be nonempty and share one rank")
    if n_expected is not None and len(q) != n_expected:
        raise DataError(f"{path}: {len(q)} prior rows for {n_expected} examples")
    return LowRankPrior(np.array(q), np.array(r))
