"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataFormatError


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive_float(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_dataset(X, view_set: str | None = None):
    """Accept a DatasetIndex or a dataset directory."""
    from .trainer import DatasetIndex

    if isinstance(X, DatasetIndex):
        return X
    if isinstance(X, (str, Path)):
        return DatasetIndex.load(X, view_set)
    raise TypeError(f"expected a DatasetIndex or dataset path, got {type(X).__name__}")


def check_view_sets(X) -> list:
    """One or several single-object view collections."""
    from .trainer import DatasetIndex

    items = X if isinstance(X, (list, tuple)) else [X]
    out = []
    for item in items:
        if isinstance(item, (str, Path)):
            p = Path(item)
            item = DatasetIndex.load(p) if (p / "dataset.json").exists() else DatasetIndex.from_view_dirs([p])
        if not isinstance(item, DatasetIndex):
            raise TypeError(f"expected views as DatasetIndex or directory, got {type(item).__name__}")
        if item.n_instances != 1:
            raise DataFormatError("each view collection must show a single object")
        out.append(item)
    if not out:
        raise ValueError("no views given")
    return out


def check_image(img, name: str = "image") -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D or 3-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ValueError(f"resolution must look like 64x48, got {text!r}") from exc
    if w < 1 or h < 1:
        raise ValueError("resolution must be positive")
    return w, h
