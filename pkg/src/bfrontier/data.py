"""Ingestion, validation and covariate coarsening of binary-treatment micro-data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input data violates a structural requirement."""


class OverlapError(ValidationError):
    """Some covariate cell lacks treated or untreated observations."""

    def __init__(self, message: str, cell=None):
        super().__init__(message)
        self.cell = cell


def _cell_index(covariates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map each covariate row to the index of its distinct value (lexicographic order)."""
    n = covariates.shape[0]
    if covariates.shape[1] == 0:
        return np.zeros(n, dtype=np.int64), np.zeros((1, 0))
    levels, inverse = np.unique(covariates, axis=0, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64), levels


@dataclass(frozen=True)
class Dataset:
    """Outcome ``y``, binary treatment ``x`` and integer covariate cell ``w`` per record.

    ``covariates`` keeps the raw (or coarsened) covariate columns the cells were
    built from; bootstrap resamples carry them along row by row.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    covariates: np.ndarray = field(default=None)
    covariate_names: tuple[str, ...] = ()
    cell_levels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x)
        w = np.asarray(self.w, dtype=np.int64)
        if y.ndim != 1 or x.shape != y.shape or w.shape != y.shape:
            raise ValidationError("y, x and w must be 1-d arrays of equal length")
        if y.size < 2:
            raise ValidationError(f"need at least 2 observations, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise ValidationError("non-numeric outcome: outcomes must be finite reals")
        if not np.all((x == 0) | (x == 1)):
            raise ValidationError("non-binary treatment: treatment must be 0 or 1")
        cov = self.covariates
        if cov is None:
            cov = np.zeros((y.size, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x.astype(np.int8))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        check_overlap(self.x, self.w)

    @classmethod
    def from_arrays(cls, y, x, covariates=None, names: Sequence[str] | None = None) -> "Dataset":
        """Build cells from the cross-product of distinct covariate values."""
        y = np.asarray(y, dtype=float)
        if covariates is None:
            covariates = np.zeros((y.size, 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if names is None:
            names = tuple(f"w{k}" for k in range(covariates.shape[1]))
        w, levels = _cell_index(covariates)
        return cls(y, x, w, covariates, tuple(names), levels)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def cells(self) -> np.ndarray:
        return np.unique(self.w)

    def take(self, idx: np.ndarray, check: bool = True) -> "Dataset":
        """Row subset (with repetition) keeping the original cell labels."""
        sub = object.__new__(Dataset)
        for name, value in (
            ("y", self.y[idx]),
            ("x", self.x[idx]),
            ("w", self.w[idx]),
            ("covariates", self.covariates[idx]),
            ("covariate_names", self.covariate_names),
            ("cell_levels", self.cell_levels),
        ):
            object.__setattr__(sub, name, value)
        if check:
            check_overlap(sub.x, sub.w)
        return sub


def check_overlap(x: np.ndarray, w: np.ndarray, cells: np.ndarray | None = None) -> None:
    """Raise :class:`OverlapError` unless every cell has both arms represented.

    When ``cells`` is given, each listed cell must also be present at all.
    """
    ids, inv = np.unique(w, return_inverse=True)
    treated = np.bincount(inv, weights=(x == 1), minlength=ids.size)
    total = np.bincount(inv, minlength=ids.size)
    bad = (treated == 0) | (treated == total)
    if np.any(bad):
        cell = int(ids[np.argmax(bad)])
        raise OverlapError(f"overlap violated in cell {cell}", cell=cell)
    if cells is not None:
        missing = np.setdiff1d(cells, ids)
        if missing.size:
            raise OverlapError(f"overlap violated in cell {int(missing[0])} (no observations)",
                               cell=int(missing[0]))


def load_csv(path, outcome_col: str, treatment_col: str,
             covariate_cols: Sequence[str] = (), coarsening: "CoarseningSpec | None" = None
             ) -> Dataset:
    """Read a comma-separated, header-first UTF-8 file into a :class:`Dataset`.

    With ``coarsening`` the covariates are binned before cells are formed, so
    overlap is checked on the coarsened cells only.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"empty file: {path}") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ValidationError(f"empty file: {path} has no data rows")
    wanted = [outcome_col, treatment_col, *covariate_cols]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ValidationError(f"missing column(s): {', '.join(missing)}")
    pos = {c: header.index(c) for c in wanted}

    def column(name, kind):
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            raw = row[pos[name]].strip() if pos[name] < len(row) else ""
            try:
                val = float(raw)
            except ValueError:
                raise ValidationError(f"non-numeric {kind} {raw!r} in row {i + 2}") from None
            if not math.isfinite(val):
                raise ValidationError(f"non-numeric {kind} {raw!r} in row {i + 2}")
            out[i] = val
        return out

    y = column(outcome_col, "outcome")
    x = column(treatment_col, "treatment")
    if not np.all((x == 0) | (x == 1)):
        bad = x[(x != 0) & (x != 1)][0]
        raise ValidationError(f"non-binary treatment value {bad:g}")
    cov = np.column_stack([column(c, "covariate") for c in covariate_cols]) \
        if covariate_cols else np.zeros((len(rows), 0))
    names = tuple(covariate_cols)
    if coarsening is not None:
        cov = _binned(cov, names, coarsening)
    return Dataset.from_arrays(y, x.astype(np.int8), cov, names)


@dataclass(frozen=True)
class CoarseningSpec:
    """Quantile cut points per covariate name, each strictly increasing in (0, 1)."""

    cuts: Mapping[str, tuple[float, ...]]

    def __post_init__(self):
        clean = {}
        for name, taus in self.cuts.items():
            taus = tuple(float(t) for t in np.atleast_1d(taus))
            if not taus:
                raise ValidationError(f"no cut points for covariate {name!r}")
            if any(not 0.0 < t < 1.0 for t in taus):
                raise ValidationError(f"cut points for {name!r} must lie in (0, 1)")
            if any(b <= a for a, b in zip(taus, taus[1:])):
                raise ValidationError(f"cut points for {name!r} must be strictly increasing")
            clean[name] = taus
        object.__setattr__(self, "cuts", clean)


def empirical_quantile(values: np.ndarray, tau: float) -> float:
    """Left-continuous inverse of the empirical cdf: inf{v : F_n(v) >= tau}."""
    v = np.sort(np.asarray(values, dtype=float))
    k = max(int(math.ceil(tau * v.size - 1e-12)), 1)
    return float(v[k - 1])


def bin_by_quantiles(values: np.ndarray, taus: Sequence[float]) -> np.ndarray:
    """Bin index = number of empirical cut quantiles strictly below the value."""
    values = np.asarray(values, dtype=float)
    cut_values = np.array([empirical_quantile(values, t) for t in taus])
    return (values[:, None] > cut_values[None, :]).sum(axis=1)


def _binned(cov: np.ndarray, names: Sequence[str], spec: CoarseningSpec) -> np.ndarray:
    uncovered = [n for n in names if n not in spec.cuts]
    if uncovered:
        raise ValidationError(f"coarsening spec does not cover covariate(s): {', '.join(uncovered)}")
    unknown = [n for n in spec.cuts if n not in names]
    if unknown:
        raise ValidationError(f"coarsening spec names unknown covariate(s): {', '.join(unknown)}")
    if not names:
        return np.zeros((cov.shape[0], 0))
    return np.column_stack([bin_by_quantiles(cov[:, k], spec.cuts[name])
                            for k, name in enumerate(names)]).astype(float)


def coarsen(ds: Dataset, spec: CoarseningSpec) -> Dataset:
    """Replace each covariate by its quantile-bin index and rebuild cells."""
    binned = _binned(ds.covariates, ds.covariate_names, spec)
    return Dataset.from_arrays(ds.y, ds.x, binned, ds.covariate_names)


def parse_coarsening(text: str) -> CoarseningSpec:
    """Parse ``"age=0.5;hh=0.35,0.65"`` into a :class:`CoarseningSpec`."""
    cuts = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        name, _, taus = part.partition("=")
        if not taus:
            raise ValidationError(f"bad coarsening entry {part!r}; expected name=tau[,tau...]")
        try:
            cuts[name.strip()] = tuple(float(t) for t in taus.split(","))
        except ValueError:
            raise ValidationError(f"bad cut point in {part!r}") from None
    return CoarseningSpec(cuts)
