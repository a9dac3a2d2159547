"""Datasets: TSV ingestion, seeded splits, and a planted low-rank generator.

TSV lines are ``LEFT<TAB>RIGHT<TAB>TARGET`` where LEFT and RIGHT are
comma-separated ``space:token`` pairs, e.g. ``id:p42,ngram:alpha,cat:c7``.
Feature spaces and tokens get dense indices in order of first appearance, so
identical bytes always yield identical vocabularies.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kvconfig
from .errors import DataError, UsageError
from .model import FeatureBatch, FeatureVector, encode


@dataclass(frozen=True)
class Example:
    x: FeatureVector
    y: FeatureVector
    s: float


@dataclass(frozen=True)
class Vocabulary:
    spaces: tuple[str, ...]
    tokens: tuple[dict[str, int], ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.tokens)


@dataclass
class _Universe:
    """Distinct left/right items of the full dataset; subsets share it."""

    left_items: list[FeatureVector]
    right_items: list[FeatureVector]
    vocab_sizes: tuple[int, ...]

    @cached_property
    def left_batch(self) -> FeatureBatch:
        return encode(self.left_items, self.vocab_sizes)

    @cached_property
    def right_batch(self) -> FeatureBatch:
        return encode(self.right_items, self.vocab_sizes)


@dataclass
class Dataset:
    examples: list[Example]
    vocab: Vocabulary
    split: str = "all"
    # item ids into the shared universe, one per example
    left_ids: np.ndarray = field(default=None, repr=False)
    right_ids: np.ndarray = field(default=None, repr=False)
    universe: _Universe = field(default=None, repr=False)

    def __post_init__(self):
        if self.universe is None:
            left_index: dict[FeatureVector, int] = {}
            right_index: dict[FeatureVector, int] = {}
            self.left_ids = np.array([left_index.setdefault(e.x, len(left_index)) for e in self.examples], dtype=np.int64)
            self.right_ids = np.array([right_index.setdefault(e.y, len(right_index)) for e in self.examples], dtype=np.int64)
            self.universe = _Universe(list(left_index), list(right_index), self.vocab.sizes)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return self.vocab.sizes

    @cached_property
    def targets(self) -> np.ndarray:
        return np.array([e.s for e in self.examples], dtype=np.float64)

    @cached_property
    def left(self) -> FeatureBatch:
        return self.universe.left_batch.take(self.left_ids)

    @cached_property
    def right(self) -> FeatureBatch:
        return self.universe.right_batch.take(self.right_ids)

    def subset(self, idx, split: str) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.examples[i] for i in idx], self.vocab, split,
                       self.left_ids[idx], self.right_ids[idx], self.universe)


def _parse_side(text: str, spaces: dict[str, int], vocabs: list[dict[str, int]], where: str) -> FeatureVector:
    tokens = []
    for item in text.split(","):
        item = item.strip()
        space, sep, token = item.partition(":")
        if not sep or not space or not token:
            raise DataError(f"{where}: malformed feature {item!r} (expected space:token)")
        sid = spaces.setdefault(space, len(spaces))
        if sid == len(vocabs):
            vocabs.append({})
        tokens.append((sid, vocabs[sid].setdefault(token, len(vocabs[sid]))))
    return FeatureVector.bag(tokens)


def parse_tsv(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e.strerror})") from e
    return parse_text(text, str(path))


def parse_text(text: str, source: str = "<data>") -> Dataset:
    """Parse TSV content; error messages name ``source`` and the line."""
    spaces: dict[str, int] = {}
    vocabs: list[dict[str, int]] = []
    examples = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataError(f"{where}: expected 3 tab-separated columns, got {len(cols)}")
        x = _parse_side(cols[0], spaces, vocabs, where)
        y = _parse_side(cols[1], spaces, vocabs, where)
        try:
            s = float(cols[2])
        except ValueError:
            raise DataError(f"{where}: non-numeric target {cols[2]!r}") from None
        if not np.isfinite(s):
            raise DataError(f"{where}: non-finite target")
        examples.append(Example(x, y, s))
    return Dataset(examples, Vocabulary(tuple(spaces), tuple(vocabs)))


def split_indices(n: int, valid_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted (train, valid) example indices of a seeded partition."""
    if not 0.0 < valid_fraction < 1.0:
        raise UsageError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")
    n_valid = int(round(n * valid_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_valid:]), np.sort(perm[:n_valid])


def split(dataset: Dataset, valid_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded example-level partition; both parts keep the original order."""
    train_idx, valid_idx = split_indices(len(dataset), valid_fraction, seed)
    return dataset.subset(train_idx, "train"), dataset.subset(valid_idx, "valid")


# --------------------------------------------------------------------------
# Synthetic generator

@dataclass(frozen=True)
class SynthSpec:
    n_left: int = 1000
    n_right: int = 1000
    latent_dim: int = 8
    task: str = "classification"
    # classification: pairs whose planted score exceeds the (1 - positive_fraction) quantile
    positive_fraction: float = 0.01
    # regression: n_pairs random pairs with target <a_i, b_j> + noise * N(0, 1)
    n_pairs: int = 10000
    noise: float = 0.0
    # > 0: each item also carries, for every latent coordinate d, a token in
    # feature space ``a<d>`` naming the equal-mass bin of its planted coordinate
    attribute_bins: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_left < 1 or self.n_right < 1 or self.latent_dim < 1:
            raise UsageError("corpus sizes and latent_dim must be >= 1")
        if self.task not in ("classification", "regression"):
            raise UsageError(f"task must be classification or regression, got {self.task!r}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise UsageError("positive_fraction must lie in (0, 1)")
        if self.n_pairs < 1 or self.noise < 0:
            raise UsageError("n_pairs must be >= 1 and noise >= 0")
        if self.attribute_bins < 0 or self.attribute_bins == 1:
            raise UsageError("attribute_bins must be 0 or >= 2")


def _sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@dataclass
class Planted:
    a: np.ndarray
    b: np.ndarray
    threshold: float | None = None
    bins: int = 0

    def attributes(self, side: str) -> list[str]:
        """Per-item attribute suffix (``",a0:b2,a1:b0,..."``), empty without bins."""
        X = self.a if side == "left" else self.b
        if not self.bins:
            return [""] * X.shape[0]
        both = np.concatenate([self.a.ravel(), self.b.ravel()])
        edges = np.quantile(both, np.arange(1, self.bins) / self.bins)
        B = np.searchsorted(edges, X)
        return ["".join(f",a{d}:b{v}" for d, v in enumerate(row)) for row in B]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.a, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.b, dtype="<f8").tobytes())
        return h.hexdigest()


THRESHOLD_SAMPLE = 1_000_000


def synth_rows(spec: SynthSpec) -> tuple[list[tuple[int, int, float]], Planted]:
    """Planted pairs (i, j, target) without touching the filesystem."""
    rng = np.random.default_rng(spec.seed)
    a = _sphere(rng, spec.n_left, spec.latent_dim)
    b = _sphere(rng, spec.n_right, spec.latent_dim)
    planted = Planted(a, b, bins=spec.attribute_bins)
    rows: list[tuple[int, int, float]] = []
    if spec.task == "classification":
        m = min(THRESHOLD_SAMPLE, spec.n_left * spec.n_right)
        si = rng.integers(0, spec.n_left, m)
        sj = rng.integers(0, spec.n_right, m)
        scores = np.einsum("ij,ij->i", a[si], b[sj])
        thr = float(np.quantile(scores, 1.0 - spec.positive_fraction))
        planted.threshold = thr
        chunk = max(1, 2_000_000 // spec.n_right)
        for i0 in range(0, spec.n_left, chunk):
            S = a[i0:i0 + chunk] @ b.T
            ii, jj = np.nonzero(S > thr)
            rows.extend((int(i0 + i), int(j), 1.0) for i, j in zip(ii, jj))
        if not rows:
            raise DataError("synthetic threshold produced no positive pairs")
    else:
        i = rng.integers(0, spec.n_left, spec.n_pairs)
        j = rng.integers(0, spec.n_right, spec.n_pairs)
        s = np.einsum("ij,ij->i", a[i], b[j])
        if spec.noise > 0:
            s = s + spec.noise * rng.standard_normal(spec.n_pairs)
        rows = [(int(p), int(q), float(t)) for p, q, t in zip(i, j, s)]
    return rows, planted


def format_rows(rows, planted: Planted | None = None) -> str:
    if planted is None or not planted.bins:
        return "".join(f"left:{i}\tright:{j}\t{s:.17g}\n" for i, j, s in rows)
    la, ra = planted.attributes("left"), planted.attributes("right")
    return "".join(f"left:{i}{la[i]}\tright:{j}{ra[j]}\t{s:.17g}\n" for i, j, s in rows)


def gen_synthetic(spec: SynthSpec, out_path) -> Dataset:
    """Write the TSV plus a ``<out>.manifest`` file; return the parsed dataset."""
    rows, planted = synth_rows(spec)
    out_path = Path(out_path)
    manifest = kvconfig.dump(spec) + f"n_examples = {len(rows)}\nplanted_sha256 = {planted.checksum()}\n"
    if planted.threshold is not None:
        manifest += f"threshold = {planted.threshold:.17g}\n"
    try:
        out_path.write_text(format_rows(rows, planted))
        Path(str(out_path) + ".manifest").write_text(manifest)
    except OSError as e:
        raise DataError(f"{out_path}: cannot write ({e.strerror})") from e
    return parse_tsv(out_path)


def synthetic_dataset(spec: SynthSpec) -> Dataset:
    """The dataset gen_synthetic would write, built in memory."""
    rows, planted = synth_rows(spec)
    return parse_text(format_rows(rows, planted), f"<synthetic seed {spec.seed}>")


def relevant_sets(dataset: Dataset, threshold: float = 0.0) -> dict[int, set[int]]:
    """Left item id -> set of right item ids observed with target > threshold."""
    out: dict[int, set[int]] = {}
    for li, ri, s in zip(dataset.left_ids, dataset.right_ids, dataset.targets):
        if s > threshold:
            out.setdefault(int(li), set()).add(int(ri))
    return out
