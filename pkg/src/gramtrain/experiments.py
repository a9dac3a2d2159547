"""Desk-scale experiments comparing Gramian estimators.

Three families, each driven by a frozen dataclass config:

* ``ReplayExperiment``: train once, record a parameter trajectory, then replay
  every estimator along it and measure the normalized Frobenius error
  against the exact Gramians.
* ``MapExperiment``: train with each estimator from the same seed and compare
  final validation MAP@K.
* ``LambdaExperiment``: sweep the gravity coefficient, reporting validation
  MAP and observed / random inner-product statistics.

Everything is in memory and seeded; the scripts in ``scripts/`` only add CSV
output and printing.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, SynthSpec, split, synthetic_dataset
from .errors import UsageError
from .evaluation import gram_error_replay, pair_inner_products
from .gravity import EstimatorKind
from .model import ModelParams
from .trainer import TrainConfig, draw_batches, new_state, run, train_step

log = logging.getLogger(__name__)


def checkpoint_steps(count: int, last: int, grid: str = "uniform") -> list[int]:
    """``count`` strictly increasing steps in [1, last].

    ``uniform`` spaces them evenly and ends at ``last``. ``geometric`` starts
    with 1, 2, 3, ... and stretches geometrically toward ``last``, so the first
    checkpoints resolve the first few estimator updates.
    """
    if count < 1 or last < count:
        raise UsageError(f"need 1 <= count <= last, got count={count}, last={last}")
    if grid == "uniform":
        steps = np.round(np.linspace(last / count, last, count)).astype(int)
        return sorted(set(steps.tolist()))
    if grid != "geometric":
        raise UsageError(f"grid must be uniform or geometric, got {grid!r}")
    raw = np.geomspace(1, last, count)
    out: list[int] = []
    for c, x in enumerate(raw):
        # keep strictly increasing and leave room for the remaining checkpoints
        s = max(int(round(x)), out[-1] + 1 if out else 1)
        out.append(min(s, last - (count - 1 - c)))
    out[-1] = last
    return out


def record_trajectory(config: TrainConfig, data: Dataset, steps) -> list[tuple[int, ModelParams]]:
    """Train with ``config`` and return in-memory parameter copies at ``steps``."""
    steps = sorted(set(int(s) for s in steps))
    if not steps or steps[0] < 0:
        raise UsageError("steps must be non-negative")
    state = new_state(config, data)
    out = []
    want = iter(steps)
    nxt = next(want)
    while True:
        if state.step == nxt:
            out.append((state.step, state.params.copy()))
            nxt = next(want, None)
            if nxt is None:
                return out
        idx_b, idx_bp = draw_batches(state, len(data), config.batch_size)
        train_step(state, data, idx_b, idx_bp, config)


# --------------------------------------------------------------------------
# replay

def _replay_data() -> SynthSpec:
    return SynthSpec(n_left=2000, n_right=2000, latent_dim=8, task="regression", n_pairs=10_000, noise=0.1,
                     attribute_bins=4, seed=0)


def _replay_train() -> TrainConfig:
    return TrainConfig(estimator="sampling", eta=0.1, lam=1.0, batch_size=128, embed_dim=8, hidden=(32,), dim=16,
                       eval_every=0)


@dataclass(frozen=True)
class ReplayExperiment:
    data: SynthSpec = field(default_factory=_replay_data)
    train: TrainConfig = field(default_factory=_replay_train)
    checkpoints: int = 100
    # long enough to cover the phase where the Gramians grow and then settle
    last_step: int = 8000
    grid: str = "uniform"
    batch_sizes: tuple[int, ...] = (128, 1024)
    estimators: tuple[str, ...] = ("sampling", "sogram:0.01", "sogram:0.1", "sogram:1", "sagram:avg", "sagram:saga")
    seed: int = 0


def crossover_experiment(base: ReplayExperiment | None = None) -> ReplayExperiment:
    """SOGram at three rates on a geometric grid, so that the first decile of
    checkpoints sees the start-up bias and the last decile the variance floor."""
    base = base if base is not None else ReplayExperiment()
    return replace(base, grid="geometric", batch_sizes=base.batch_sizes[:1],
                   estimators=("sogram:0.01", "sogram:0.1", "sogram:1"))


def slow_eta_experiment(base: ReplayExperiment | None = None, factor: float = 5.0) -> ReplayExperiment:
    """The same replay with the training step size divided by ``factor``."""
    base = base if base is not None else ReplayExperiment()
    return replace(base, train=replace(base.train, eta=base.train.eta / factor), batch_sizes=base.batch_sizes[:1],
                   estimators=("sogram:0.01",))


@dataclass
class ReplayResult:
    steps: list[int]
    rows: list[dict]

    def errors(self, estimator: str, batch_size: int) -> np.ndarray:
        """Per-checkpoint error, averaged over the two sides."""
        label = EstimatorKind.parse(estimator).label()
        out = [0.5 * (r["gram_err_u"] + r["gram_err_v"]) for r in self.rows
               if r["estimator"] == label and r["batch_size"] == batch_size]
        if not out:
            raise UsageError(f"no replay rows for {estimator} at batch size {batch_size}")
        return np.array(out)

    def mean_error(self, estimator: str, batch_size: int) -> float:
        return float(self.errors(estimator, batch_size).mean())

    def decile_means(self, estimator: str, batch_size: int) -> tuple[float, float]:
        """Mean error over the first and the last tenth of the checkpoints."""
        e = self.errors(estimator, batch_size)
        m = max(1, len(e) // 10)
        return float(e[:m].mean()), float(e[-m:].mean())


def steps_to_floor(errors, factor: float = 1.5) -> int:
    """Index of the first checkpoint whose error is below ``factor`` times the
    floor, the floor being the mean over the last tenth of the checkpoints."""
    e = np.asarray(errors, dtype=float)
    floor = e[-max(1, len(e) // 10):].mean()
    return int(np.argmax(e < factor * floor))


def run_replay(exp: ReplayExperiment, data: Dataset | None = None) -> ReplayResult:
    data = data if data is not None else synthetic_dataset(exp.data)
    steps = checkpoint_steps(exp.checkpoints, exp.last_step, exp.grid)
    log.info("recording %d checkpoints over %d steps", len(steps), steps[-1])
    traj = record_trajectory(exp.train, data, steps)
    specs = [EstimatorKind.parse(s) for s in exp.estimators]
    rows = []
    for b in exp.batch_sizes:
        log.info("replaying %d estimators at batch size %d", len(specs), b)
        rows += gram_error_replay(traj, specs, data, b, exp.seed)
    return ReplayResult(steps, rows)


# --------------------------------------------------------------------------
# validation MAP

def _map_data() -> SynthSpec:
    return SynthSpec(n_left=5000, n_right=5000, latent_dim=8, positive_fraction=0.002, attribute_bins=4, seed=0)


def _map_train() -> TrainConfig:
    return TrainConfig(eta=0.02, lam=10.0, batch_size=8, steps=30_000, embed_dim=8, hidden=(), dim=16,
                       eval_every=7500, num_candidates=1000, eval_queries=1000)


@dataclass(frozen=True)
class MapExperiment:
    data: SynthSpec = field(default_factory=_map_data)
    train: TrainConfig = field(default_factory=_map_train)
    estimators: tuple[str, ...] = ("sampling", "sogram:0.01", "sogram:0.1")
    seeds: tuple[int, ...] = (0, 1, 2)


def _configure(base: TrainConfig, estimator: str, seed: int) -> TrainConfig:
    kind = EstimatorKind.parse(estimator)
    return replace(base, estimator=kind.kind, alpha=kind.alpha, beta=kind.beta, psd_project=kind.project, seed=seed)


def final_valid_map(config: TrainConfig, train: Dataset, valid: Dataset) -> tuple[float, list[dict]]:
    if not config.eval_every:
        raise UsageError("eval_every must be > 0 to report validation MAP")
    metrics = run(config, train, valid).metrics
    return float(metrics[-1]["map_at_k_valid"]), metrics


def run_map(exp: MapExperiment) -> dict[str, list[float]]:
    """Final validation MAP per estimator label, one entry per seed.

    The seed sets the data, the split and the run together, so each seed is a
    paired comparison across estimators.
    """
    out: dict[str, list[float]] = defaultdict(list)
    for seed in exp.seeds:
        data = synthetic_dataset(replace(exp.data, seed=seed))
        train, valid = split(data, exp.train.valid_fraction, seed)
        for est in exp.estimators:
            cfg = _configure(exp.train, est, seed)
            value, _ = final_valid_map(cfg, train, valid)
            log.info("seed %d %s: valid MAP %.4f", seed, est, value)
            out[est].append(value)
    return dict(out)


# --------------------------------------------------------------------------
# lambda sweep

@dataclass(frozen=True)
class LambdaExperiment:
    data: SynthSpec = field(default_factory=_map_data)
    train: TrainConfig = field(default_factory=lambda: replace(_map_train(), estimator="sogram", alpha=0.1))
    lams: tuple[float, ...] = (0.01, 10.0, 1000.0)
    num_random: int = 20_000
    seed: int = 0


@dataclass
class LambdaPoint:
    lam: float
    valid_map: float
    observed_mean: float
    random_mean: float


def run_lambda(exp: LambdaExperiment) -> list[LambdaPoint]:
    data = synthetic_dataset(replace(exp.data, seed=exp.seed))
    train, valid = split(data, exp.train.valid_fraction, exp.seed)
    out = []
    for lam in exp.lams:
        cfg = replace(exp.train, lam=lam, seed=exp.seed)
        result = run(cfg, train, valid)
        obs, rnd = pair_inner_products(result.state.params, train, exp.num_random, exp.seed)
        point = LambdaPoint(lam, float(result.metrics[-1]["map_at_k_valid"]), float(np.mean(obs)),
                            float(np.mean(rnd)))
        log.info("lam %g: %s", lam, point)
        out.append(point)
    return out
