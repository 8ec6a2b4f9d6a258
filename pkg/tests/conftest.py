from fractions import Fraction

import numpy as np
import pytest

from posittrain.datasets import digits_arrays
from posittrain.idx import write_idx


def posit_value_from_string(bits: str, es: int):
    """Independent decoder working on the bit string: sign, regime run, es bits, fraction."""
    n = len(bits)
    if set(bits) == {"0"}:
        return Fraction(0)
    if bits == "1" + "0" * (n - 1):
        return None  # NaR
    sign = 1
    if bits[0] == "1":
        sign = -1
        bits = format((1 << n) - int(bits, 2), f"0{n}b")
    body = bits[1:]
    first = body[0]
    run = len(body) - len(body.lstrip(first))
    k = run - 1 if first == "1" else -run
    rest = body[run + 1:]
    e_bits = (rest[:es]).ljust(es, "0")
    e = int(e_bits, 2) if es else 0
    f_bits = rest[es:]
    f = Fraction(int(f_bits, 2), 2 ** len(f_bits)) if f_bits else Fraction(0)
    useed = 2 ** (2 ** es)
    return sign * Fraction(useed) ** k * Fraction(2) ** e * (1 + f)


def positive_grid(n: int, es: int) -> list[Fraction]:
    return sorted(posit_value_from_string(format(b, f"0{n}b"), es) for b in range(1 << (n - 1)))


@pytest.fixture(scope="session")
def digits_small(tmp_path_factory):
    """A few hundred unshifted 8x8 digits written as IDX files."""
    out = tmp_path_factory.mktemp("digits_small")
    (xtr, ytr), (xva, yva) = digits_arrays(shifts=False)
    paths = {
        "train_images": out / "train-images", "train_labels": out / "train-labels",
        "val_images": out / "val-images", "val_labels": out / "val-labels",
    }
    write_idx(paths["train_images"], xtr[:256])
    write_idx(paths["train_labels"], ytr[:256])
    write_idx(paths["val_images"], xva[:128])
    write_idx(paths["val_labels"], yva[:128])
    return {k: str(v) for k, v in paths.items()}


TOY_TOPOLOGY = [
    {"type": "conv2d", "name": "conv1", "out_channels": 4, "kernel": 3, "stride": 2, "padding": 1},
    {"type": "batchnorm", "name": "bn1"},
    {"type": "relu", "name": "relu1"},
    {"type": "flatten", "name": "flatten"},
    {"type": "dense", "name": "fc1", "out_features": 16},
    {"type": "relu", "name": "relu2"},
    {"type": "dense", "name": "fc2", "out_features": 10},
]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
