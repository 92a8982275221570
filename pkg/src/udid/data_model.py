"""Dataset, contrast and parameter-stack types shared by all estimators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ValidationError

# Canonical order of the named parameter blocks in a stacked system.
STACK_ORDER = ("psi0", "psi1", "tau0", "gamma0", "alpha_or", "eta0", "alpha_ps",
               "alpha0", "tau1", "gamma1", "eta1")


def _frozen(values, dtype=float, ndim=1):
    arr = np.array(values, dtype=dtype)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 0) if arr.size == 0 else arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PanelDataset:
    """Two-period panel: outcomes before and after exposure, treatment, covariates.

    Construction only coerces shapes; call :func:`validate` to check invariants.
    """

    y0: np.ndarray
    y1: np.ndarray
    a: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "y0", _frozen(self.y0))
        object.__setattr__(self, "y1", _frozen(self.y1))
        object.__setattr__(self, "a", _frozen(self.a))
        x = np.empty((len(self.y0), 0)) if self.x is None else self.x
        object.__setattr__(self, "x", _frozen(x, ndim=2))

    @property
    def n(self) -> int:
        return len(self.y0)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return self.a == 1

    @property
    def control(self) -> np.ndarray:
        return self.a == 0

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.a == 1))

    def with_outcomes(self, y0=None, y1=None) -> "PanelDataset":
        return PanelDataset(self.y0 if y0 is None else y0, self.y1 if y1 is None else y1,
                            self.a, self.x)

    def subset(self, rows) -> "PanelDataset":
        return PanelDataset(self.y0[rows], self.y1[rows], self.a[rows], self.x[rows])


def validate(d: PanelDataset) -> PanelDataset:
    """Return ``d`` unchanged if every invariant holds, else raise ValidationError."""
    issues = []
    n = len(d.y0)
    if n == 0:
        raise ValidationError([("dataset has no units", [])])
    lengths = {"y1": len(d.y1), "a": len(d.a), "x": d.x.shape[0]}
    for name, length in lengths.items():
        if length != n:
            issues.append((f"length mismatch: {name} has {length} rows, y0 has {n}", []))
    if issues:
        raise ValidationError(issues)
    for name, values in (("y0", d.y0), ("y1", d.y1), ("a", d.a)):
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            issues.append((f"non-finite {name}", bad.tolist()))
    if d.p:
        bad = np.flatnonzero(~np.all(np.isfinite(d.x), axis=1))
        if bad.size:
            issues.append(("non-finite x", bad.tolist()))
    finite_a = np.isfinite(d.a)
    nonbinary = np.flatnonzero(finite_a & (d.a != 0) & (d.a != 1))
    if nonbinary.size:
        issues.append(("treatment is not 0/1", nonbinary.tolist()))
    if not np.any(d.a == 0):
        issues.append(("no control units", []))
    if not np.any(d.a == 1):
        issues.append(("no treated units", []))
    if issues:
        raise ValidationError(issues)
    return d


@dataclass(frozen=True)
class Contrast:
    """Map from (psi0, psi1) to the effect scale, with its exact gradient."""

    kind: str = "additive"

    def __post_init__(self):
        if self.kind not in ("additive", "multiplicative"):
            raise ValueError(f"unknown contrast {self.kind!r}")

    def value(self, psi0: float, psi1: float) -> float:
        return contrast_eval(self, psi0, psi1)[0]

    def gradient(self, psi0: float, psi1: float) -> np.ndarray:
        return np.array(contrast_eval(self, psi0, psi1)[1])


ADDITIVE = Contrast("additive")
MULTIPLICATIVE = Contrast("multiplicative")


def as_contrast(c) -> Contrast:
    return c if isinstance(c, Contrast) else Contrast(str(c))


def contrast_eval(c: Contrast, psi0: float, psi1: float):
    """Return ``(delta, (d delta/d psi0, d delta/d psi1))``."""
    c = as_contrast(c)
    if c.kind == "additive":
        return psi1 - psi0, (-1.0, 1.0)
    if psi0 == 0:
        raise ZeroDivisionError("multiplicative contrast requires psi0 != 0")
    return psi1 / psi0, (-psi1 / psi0**2, 1.0 / psi0)


class ParameterStack:
    """Immutable vector of named, contiguous parameter blocks."""

    __slots__ = ("_values", "_names", "_slices")

    def __init__(self, blocks: Mapping[str, Iterable[float]] | Iterable[tuple[str, Iterable[float]]]):
        items = blocks.items() if isinstance(blocks, Mapping) else blocks
        names, arrays = [], []
        for name, vals in items:
            if name in names:
                raise ValueError(f"duplicate parameter block {name!r}")
            names.append(name)
            arrays.append(np.atleast_1d(np.asarray(vals, dtype=float)).ravel())
        slices, start = {}, 0
        for name, arr in zip(names, arrays):
            slices[name] = slice(start, start + arr.size)
            start += arr.size
        values = np.concatenate(arrays) if arrays else np.empty(0)
        values.setflags(write=False)
        self._values, self._names, self._slices = values, tuple(names), slices

    @classmethod
    def from_vector(cls, layout: "ParameterStack", vector) -> "ParameterStack":
        vector = np.asarray(vector, dtype=float)
        if vector.size != layout.size:
            raise ValueError("vector length does not match the stack layout")
        return cls([(n, vector[layout._slices[n]]) for n in layout._names])

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def names(self) -> tuple:
        return self._names

    @property
    def size(self) -> int:
        return self._values.size

    def index(self, name: str) -> slice:
        return self._slices[name]

    def name_at(self, position: int) -> str:
        for name, sl in self._slices.items():
            if sl.start <= position < sl.stop:
                return name
        raise IndexError(position)

    def label(self, position: int) -> str:
        name = self.name_at(position)
        sl = self._slices[name]
        return name if sl.stop - sl.start == 1 else f"{name}[{position - sl.start}]"

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[self._slices[name]]

    def __contains__(self, name) -> bool:
        return name in self._slices

    def replace(self, **updates) -> "ParameterStack":
        unknown = set(updates) - set(self._names)
        if unknown:
            raise KeyError(f"unknown blocks {sorted(unknown)}")
        out = []
        for name in self._names:
            vals = np.atleast_1d(np.asarray(updates.get(name, self[name]), dtype=float)).ravel()
            if vals.size != self[name].size:
                raise ValueError(f"block {name!r} changes length")
            out.append((name, vals))
        return ParameterStack(out)

    def to_dict(self) -> dict:
        return {name: self[name].copy() for name in self._names}

    def __repr__(self):
        inner = ", ".join(f"{n}={np.array2string(self[n], precision=4)}" for n in self._names)
        return f"ParameterStack({inner})"
