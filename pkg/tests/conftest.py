import numpy as np
import pytest

from gramtrain.data import Dataset, Example, Vocabulary
from gramtrain.model import FeatureVector, TowerConfig, init_params


def tiny_dataset(n=12, n_items=5, seed=0, spaces=2, targets=None):
    """n examples over ``n_items`` items per side; each item has an id and a tag token."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        li, ri = int(rng.integers(n_items)), int(rng.integers(n_items))
        x = FeatureVector.bag([(0, li)] + ([(1, li % 3)] if spaces > 1 else []))
        y = FeatureVector.bag([(0, n_items + ri)] + ([(1, (ri + 1) % 3)] if spaces > 1 else []))
        s = float(targets[i]) if targets is not None else float(rng.integers(0, 2))
        examples.append(Example(x, y, s))
    tokens = [{f"t{j}": j for j in range(2 * n_items)}]
    if spaces > 1:
        tokens.append({f"g{j}": j for j in range(3)})
    names = ("id", "tag")[:spaces]
    return Dataset(examples, Vocabulary(names, tuple(tokens)))


def tiny_params(vocab_sizes, embed_dim=3, hidden=(4,), dim=2, seed=0, scale=1.0):
    cfg = TowerConfig((embed_dim,) * len(vocab_sizes), tuple(hidden), dim)
    p = init_params(cfg, vocab_sizes, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for a in p.arrays():
        # nonzero biases so the tests exercise them
        a[...] = scale * rng.uniform(-1.0, 1.0, size=a.shape)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one line per criterion, repeated at the end of the run
ACCEPTANCE: dict[int, str] = {}


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
