"""Desk-scale synthetic datasets and CSV ingestion.

Three generators cover the classification/regression spread used by the
experiment harness: interleaved half-circles (two_moons), well-separated
Gaussian clusters (gaussian_blobs), and a random linear teacher with
scalable target amplitude (random_regression). Features are standardized
per coordinate unless asked otherwise; targets keep their native scale.

The on-disk format is a UTF-8 CSV with header ``x0,...,x{d-1},y`` and a
single target column: class indices for classification, one real value
for regression.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..nets import CLASSIFICATION, REGRESSION, Dataset

KINDS = ("two_moons", "gaussian_blobs", "random_regression")


class DatasetFormatError(ValueError):
    """CSV file violates the dataset format; message carries the line."""


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = np.mean(x, axis=0)
    std = np.std(x, axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (x - mean) / std


def _two_moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, n_out)
    t_in = rng.uniform(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return x, y


def _gaussian_blobs(n: int, noise: float, rng: np.random.Generator,
                    classes: int = 3, dim: int = 2, separation: float = 4.0,
                    centers_per_class: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian clusters around a circle (or random directions for dim > 2).

    With centers_per_class > 1 the labels alternate around the circle, so
    no single hyperplane separates them and the classifier must be
    nonlinear.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if centers_per_class < 1:
        raise ValueError(f"centers_per_class must be >= 1, got {centers_per_class}")
    k = classes * centers_per_class
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(k) / k
        centers = separation * np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        directions = rng.standard_normal((k, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        centers = separation * directions
    center_idx = np.arange(n, dtype=np.int64) % k
    y = center_idx % classes
    spread = noise if noise > 0 else 1e-3
    x = centers[center_idx] + rng.normal(0.0, spread, size=(n, dim))
    return x, y


def _random_regression(n: int, noise: float, rng: np.random.Generator,
                       in_dim: int = 8, out_dim: int = 1,
                       target_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    x = rng.standard_normal((n, in_dim))
    teacher_w = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)
    teacher_b = 0.1 * rng.standard_normal(out_dim)
    y = target_scale * (x @ teacher_w + teacher_b)
    if noise > 0:
        y = y + target_scale * noise * rng.standard_normal(y.shape)
    return x, y


def generate_dataset(kind: str, n: int, noise: float, seed: int,
                     standardize: bool = True, **params) -> Dataset:
    """Deterministic synthetic dataset of the given kind.

    ``params`` are forwarded to the generator (e.g. ``classes=3`` for
    gaussian_blobs, ``in_dim``/``target_scale`` for random_regression).
    Rows are shuffled so that any prefix split is class-balanced.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "two_moons":
        x, y = _two_moons(n, noise, rng, **params)
        task = CLASSIFICATION
    elif kind == "gaussian_blobs":
        x, y = _gaussian_blobs(n, noise, rng, **params)
        task = CLASSIFICATION
    elif kind == "random_regression":
        x, y = _random_regression(n, noise, rng, **params)
        task = REGRESSION
    else:
        raise ValueError(f"unknown dataset kind: {kind!r}")
    order = rng.permutation(n)
    x = x[order]
    y = y[order]
    if standardize:
        x = _standardize(x)
    return Dataset(x, y, task)


def least_squares_accuracy(ds: Dataset) -> float:
    """Train accuracy of a closed-form one-hot least-squares classifier.

    A linearly separable dataset with margin should score near 1.0; used
    as a sanity oracle for generated classification tasks.
    """
    if ds.kind != CLASSIFICATION:
        raise ValueError("least-squares oracle is for classification datasets")
    n = len(ds)
    classes = int(np.max(ds.targets)) + 1
    x1 = np.column_stack([ds.inputs, np.ones(n)])
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), ds.targets] = 1.0
    coef, *_ = np.linalg.lstsq(x1, onehot, rcond=None)
    pred = np.argmax(x1 @ coef, axis=1)
    return float(np.mean(pred == ds.targets))


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset as CSV; regression targets must be 1-dimensional."""
    if ds.kind == REGRESSION and ds.targets.shape[1] != 1:
        raise ValueError("CSV format stores a single target column")
    d = ds.inputs.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(d)] + ["y"])
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.inputs[i]]
            if ds.kind == CLASSIFICATION:
                row.append(str(int(ds.targets[i])))
            else:
                row.append(repr(float(ds.targets[i, 0])))
            writer.writerow(row)


def load_dataset(path, kind: str | None = None) -> Dataset:
    """Read a CSV dataset, inferring the task kind unless given.

    All-integer targets load as classification; anything else as
    regression. Malformed files raise DatasetFormatError naming the
    offending line.
    """
    path = Path(path)
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = [f"x{i}" for i in range(d)] + ["y"]
        if d < 1 or header != expected:
            raise DatasetFormatError(
                f"{path}:1: bad header {header!r}, expected x0..x{{d-1}},y"
            )
        xs: list[list[float]] = []
        ys: list[float] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {d + 1} fields, found {len(row)}"
                )
            try:
                xs.append([float(v) for v in row[:d]])
                ys.append(float(row[d]))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if not xs:
        raise DatasetFormatError(f"{path}: no data rows")
    x = np.array(xs)
    y = np.array(ys)
    if kind is None:
        kind = CLASSIFICATION if np.all(y == np.round(y)) and np.all(y >= 0) else REGRESSION
    if kind == CLASSIFICATION:
        return Dataset(x, y.astype(np.int64), CLASSIFICATION)
    return Dataset(x, y.reshape(-1, 1), REGRESSION)
