"""Synthetic dataset generators, CSV interchange, standardization, splits.

The presets reproduce three uncertainty regimes on 2-D Gaussian mixtures:
cleanly separable classes, heavily overlapping classes (irreducible
ambiguity), and an open-set layout whose extra cluster never appears in
training. CSV is the only interchange format: header `label,f0,...,fK`,
one integer label plus float features per row.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvFormatError, DomainError, ShapeError
from .numerics import Rng, derive_seed


@dataclass
class Dataset:
    """Feature matrix plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got {self.features.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ShapeError(
                f"label count {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows")
        if self.labels.size and self.labels.min() < 0:
            raise DomainError("labels must be nonnegative")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def _component_cov_factor(cov, dim: int) -> np.ndarray:
    """Lower-triangular factor L with L L^T = covariance."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        if cov <= 0:
            raise DomainError(f"isotropic variance must be positive, got {cov}")
        return math.sqrt(float(cov)) * np.eye(dim)
    if cov.ndim == 1:
        if cov.shape[0] != dim:
            raise ShapeError(f"diagonal covariance length {cov.shape[0]} != dim {dim}")
        if np.any(cov <= 0):
            raise DomainError("diagonal covariance entries must be positive")
        return np.diag(np.sqrt(cov))
    if cov.shape != (dim, dim):
        raise ShapeError(f"covariance shape {cov.shape} != ({dim}, {dim})")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DomainError("covariance matrix is not positive-definite") from exc


def gen_mixture(components: list[tuple[int, np.ndarray, object, int]],
                seed: int, name: str = "mixture") -> Dataset:
    """Draw a labeled Gaussian mixture.

    Each component is (class label, center, covariance, count); covariance
    may be a scalar variance, a diagonal, or a full matrix. Components are
    emitted in order, deterministically under the seed.
    """
    if not components:
        raise DomainError("mixture needs at least one component")
    rng = Rng(seed)
    blocks = []
    labels = []
    dim = len(np.atleast_1d(components[0][1]))
    for label, center, cov, count in components:
        if count < 1:
            raise DomainError(f"component counts must be >= 1, got {count}")
        center = np.asarray(center, dtype=np.float64).reshape(-1)
        if center.size != dim:
            raise ShapeError(f"center length {center.size} != dim {dim}")
        factor = _component_cov_factor(cov, dim)
        z = rng.normals(count * dim).reshape(count, dim)
        blocks.append(center[None, :] + z @ factor.T)
        labels.append(np.full(count, label, dtype=np.int64))
    return Dataset(np.vstack(blocks), np.concatenate(labels), name=name)


def separable_components(n_per_class: int) -> list:
    return [
        (0, (-2.5, 0.0), 0.36, n_per_class),
        (1, (2.5, 0.0), 0.36, n_per_class),
    ]


def overlap_components(n_per_class: int, separation: float = 1.0) -> list:
    half = 0.5 * separation
    return [
        (0, (-half, 0.0), 1.0, n_per_class),
        (1, (half, 0.0), 1.0, n_per_class),
    ]


def composite_components(n_per_class: int) -> list:
    """Half of each class is cleanly separable, half sits in a shared blob."""
    tight = n_per_class // 2
    loose = n_per_class - tight
    return [
        (0, (-3.0, 0.0), 0.25, tight),
        (0, (0.0, 0.0), 1.0, loose),
        (1, (3.0, 0.0), 0.25, tight),
        (1, (0.0, 0.0), 1.0, loose),
    ]


def heldout_component(count: int) -> tuple:
    # the open-set cluster; label 0 is a placeholder, these rows are
    # out-of-set by construction
    return (0, (0.0, 2.8), 0.36, count)


PRESETS = ("separable", "overlap", "openset", "composite")


def preset_datasets(preset: str, seed: int, train_size: int,
                    test_size: int) -> dict[str, Dataset]:
    """Generate train/test (and for openset, heldout) datasets for a preset."""
    if preset not in PRESETS:
        raise DomainError(
            f"unknown preset {preset!r}; choose one of {', '.join(PRESETS)}")
    if train_size < 2 or test_size < 2:
        raise DomainError("train and test sizes must each be >= 2")
    if preset == "composite":
        make = composite_components
    elif preset == "overlap":
        make = overlap_components
    else:
        make = separable_components
    train_seed = derive_seed(seed, f"{preset}/train")
    test_seed = derive_seed(seed, f"{preset}/test")
    out = {
        "train": gen_mixture(make(train_size // 2), train_seed,
                             name=f"{preset}-train"),
        "test": gen_mixture(make(test_size // 2), test_seed,
                            name=f"{preset}-test"),
    }
    if preset == "openset":
        held_seed = derive_seed(seed, "openset/heldout")
        out["heldout"] = gen_mixture([heldout_component(test_size)], held_seed,
                                     name="openset-heldout")
    return out


def save_csv(ds: Dataset, path) -> None:
    """Write `label,f0,...,fK` rows; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ",".join(f"f{j}" for j in range(ds.dim))
        fh.write(f"label,{cols}\n")
        for label, row in zip(ds.labels, ds.features):
            fh.write(str(int(label)) + ","
                     + ",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path) -> Dataset:
    """Read a dataset CSV, validating structure line by line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or all(not line.strip() for line in lines):
        raise CsvFormatError(f"empty file: {path}")
    header = lines[0].split(",")
    if header[0] != "label" or len(header) < 2:
        raise CsvFormatError("expected header 'label,f0,...'", line=1)
    for j, name in enumerate(header[1:]):
        if name != f"f{j}":
            raise CsvFormatError(
                f"expected feature column 'f{j}', got {name!r}", line=1)
    dim = len(header) - 1
    features = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise CsvFormatError(
                f"ragged row: expected {dim + 1} cells, got {len(cells)}",
                line=lineno)
        try:
            label = int(cells[0])
        except ValueError:
            raise CsvFormatError(
                f"non-integer label {cells[0]!r}", line=lineno) from None
        if label < 0:
            raise CsvFormatError(f"negative label {label}", line=lineno)
        try:
            row = [float(c) for c in cells[1:]]
        except ValueError:
            raise CsvFormatError("non-numeric feature cell", line=lineno) from None
        labels.append(label)
        features.append(row)
    feats = np.array(features, dtype=np.float64) if features \
        else np.zeros((0, dim))
    labs = np.array(labels, dtype=np.int64)
    if labs.size:
        present = set(labs.tolist())
        missing = sorted(set(range(max(present) + 1)) - present)
        if missing:
            warnings.warn(
                f"labels imply {max(present) + 1} classes but "
                f"{missing} never occur", stacklevel=2)
    return Dataset(feats, labs, name=str(path))


@dataclass
class Standardizer:
    """Per-dimension mean/std fitted on training data only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        features = np.asarray(features, dtype=np.float64)
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        degenerate = std < 1e-12
        if np.any(degenerate):
            warnings.warn(
                f"dimensions {np.nonzero(degenerate)[0].tolist()} are "
                "constant; passing them through unscaled", stacklevel=2)
            std = np.where(degenerate, 1.0, std)
        return cls(mean, std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[1] != self.mean.shape[0]:
            raise ShapeError(
                f"standardizer fitted on {self.mean.shape[0]} dims, "
                f"got {features.shape}")
        return (features - self.mean) / self.std

    def inverse(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[1] != self.mean.shape[0]:
            raise ShapeError(
                f"standardizer fitted on {self.mean.shape[0]} dims, "
                f"got {features.shape}")
        return features * self.std + self.mean

    @property
    def log_volume_scale(self) -> float:
        """log of the Jacobian of apply(); corrects densities to input space."""
        return -float(np.sum(np.log(self.std)))


def standardize_fit(features: np.ndarray) -> Standardizer:
    return Standardizer.fit(features)


def split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive, seed-deterministic random split."""
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"split fraction must lie in (0, 1), got {fraction}")
    order = Rng(seed).permutation(ds.n_rows)
    k = int(fraction * ds.n_rows)
    first, second = order[:k], order[k:]
    return (
        Dataset(ds.features[first], ds.labels[first], name=f"{ds.name}-a"),
        Dataset(ds.features[second], ds.labels[second], name=f"{ds.name}-b"),
    )


def gen_regression_1d(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Heteroscedastic 1-D regression sample: y = sin(x) + noise.

    x is uniform on [-3, 3]; the noise is Gaussian with standard deviation
    0.1 + 0.1*|x|, so uncertainty grows away from the origin.
    """
    if n < 1:
        raise DomainError(f"sample count must be >= 1, got {n}")
    rng = Rng(seed)
    x = 6.0 * rng.uniforms(n) - 3.0
    noise = rng.normals(n) * regression_true_std(x)
    return x, np.sin(x) + noise


def regression_true_mean(x: np.ndarray) -> np.ndarray:
    return np.sin(x)


def regression_true_std(x: np.ndarray) -> np.ndarray:
    return 0.1 + 0.1 * np.abs(x)
