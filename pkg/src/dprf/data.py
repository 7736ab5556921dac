"""Synthetic data, CSV ingestion, preprocessing and per-group splitting."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from dprf._seeding import make_rng

__all__ = [
    "Role",
    "ColumnSchema",
    "SchemaError",
    "TableParseError",
    "SyntheticSpec",
    "Provenance",
    "Dataset",
    "RawTable",
    "PreprocessOptions",
    "PRESETS",
    "PerGroupCounts",
    "PerGroupFraction",
    "test_function",
    "gen_synthetic",
    "gen_grouped_synthetic",
    "sample_like",
    "with_label_divisor",
    "load_tabular",
    "preprocess",
    "replay",
    "split",
    "MEDICAL_SCHEMA",
    "WINE_SCHEMA",
]


class SchemaError(ValueError):
    pass


class TableParseError(ValueError):
    pass


class Role(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    LABEL = "label"
    GROUP = "group"
    IGNORE = "ignore"


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles, plus which column (if any) supplies the group tag.

    A ``GROUP`` column is used only as the tag.  To group by a column that
    is also a model input, give it a ``CATEGORICAL`` role and name it in
    ``group``.
    """

    roles: Mapping[str, Role]
    group: str | None = None

    def __post_init__(self):
        roles = {name: Role(r) for name, r in self.roles.items()}
        labels = [n for n, r in roles.items() if r is Role.LABEL]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {labels}")
        group_cols = [n for n, r in roles.items() if r is Role.GROUP]
        if len(group_cols) > 1:
            raise SchemaError(f"schema allows at most one group column, found {group_cols}")
        group = self.group
        if group_cols:
            if group is not None and group != group_cols[0]:
                raise SchemaError("group column given twice")
            group = group_cols[0]
        if group is not None and roles.get(group) not in (Role.GROUP, Role.CATEGORICAL):
            raise SchemaError(f"group column {group!r} must have role 'group' or 'categorical'")
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "group", group)

    @property
    def label(self) -> str:
        return next(n for n, r in self.roles.items() if r is Role.LABEL)

    def columns(self, role: Role) -> list[str]:
        return [n for n, r in self.roles.items() if r is role]


MEDICAL_SCHEMA = ColumnSchema({
    "age": Role.NUMERIC, "sex": Role.CATEGORICAL, "bmi": Role.NUMERIC, "children": Role.NUMERIC,
    "smoker": Role.CATEGORICAL, "region": Role.CATEGORICAL, "charges": Role.LABEL,
})

WINE_SCHEMA = ColumnSchema({
    **{c: Role.NUMERIC for c in (
        "fixed acidity", "volatile acidity", "citric acid", "residual sugar", "chlorides",
        "free sulfur dioxide", "total sulfur dioxide", "density", "pH", "sulphates", "alcohol")},
    "quality": Role.LABEL,
})


@dataclass(frozen=True)
class SyntheticSpec:
    fn: str
    d: int
    scales: Mapping = field(default_factory=lambda: {None: 1.0})


@dataclass(frozen=True)
class Provenance:
    source: str = "memory"
    feature_names: tuple = ()
    options: "PreprocessOptions | None" = None
    numeric_ranges: Mapping = field(default_factory=dict)
    group_ranges: Mapping = field(default_factory=dict)
    category_maps: Mapping = field(default_factory=dict)
    label_range: tuple | None = None
    label_divisor: float | None = None
    synthetic: SyntheticSpec | None = None


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray | None = None
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"X must be m x d and y length m, got {X.shape} and {y.shape}")
        groups = None if self.groups is None else np.asarray(self.groups)
        if groups is not None and groups.shape != (X.shape[0],):
            raise ValueError("group labels must have one entry per row")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "groups", groups)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.m

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        groups = None if self.groups is None else self.groups[idx]
        return Dataset(self.X[idx], self.y[idx], groups, self.provenance)

    def group_names(self) -> list:
        if self.groups is None:
            return []
        return sorted(set(self.groups.tolist()), key=str)

    def select_group(self, g) -> "Dataset":
        return self.take(np.flatnonzero(self.groups == g))

    @property
    def raw_labels(self) -> np.ndarray:
        div = self.provenance.label_divisor
        return self.y * div if div is not None else self.y


# ---------------------------------------------------------------- synthetic


def test_function(name: str, X) -> np.ndarray:
    """``f1(x) = sqrt(1 + ||x||_2)`` or ``f2(x) = sum_i exp(-|x_i|)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    name = name.lower()
    if name == "f1":
        return np.sqrt(1.0 + np.linalg.norm(X, axis=1))
    if name == "f2":
        return np.sum(np.exp(-np.abs(X)), axis=1)
    raise ValueError(f"unknown test function {name!r}; expected 'f1' or 'f2'")


test_function.__test__ = False


def _normalise(y: np.ndarray) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(y))
    if norm == 0:
        raise ValueError("cannot normalise an all-zero label vector")
    return y / norm, norm


def gen_synthetic(rng_seed: int, m: int, d: int, fn: str = "f1", normalize_labels: bool = True) -> Dataset:
    """``m`` points ``x ~ N(0, I_d)`` labelled by a test function."""
    if m < 1 or d < 1:
        raise ValueError("m and d must be >= 1")
    X = make_rng(rng_seed).standard_normal((m, d))
    y = test_function(fn, X)
    divisor = None
    if normalize_labels:
        y, divisor = _normalise(y)
    prov = Provenance(source=f"synthetic:{fn}", feature_names=tuple(f"x{i}" for i in range(d)),
                      label_divisor=divisor, synthetic=SyntheticSpec(fn, d))
    return Dataset(X, y, None, prov)


def gen_grouped_synthetic(
    rng_seed: int,
    sizes: Mapping,
    scales: Mapping,
    d: int,
    fn: str = "f1",
    normalize_labels: bool = True,
) -> Dataset:
    """Groups of Gaussian inputs ``x ~ scale_g N(0, I_d)``; rows ordered by group."""
    rng = make_rng(rng_seed)
    Xs, gs = [], []
    for g in sizes:
        Xs.append(scales[g] * rng.standard_normal((int(sizes[g]), d)))
        gs.extend([g] * int(sizes[g]))
    X = np.vstack(Xs)
    y = test_function(fn, X)
    divisor = None
    if normalize_labels:
        y, divisor = _normalise(y)
    prov = Provenance(source=f"synthetic-grouped:{fn}", feature_names=tuple(f"x{i}" for i in range(d)),
                      label_divisor=divisor, synthetic=SyntheticSpec(fn, d, dict(scales)))
    return Dataset(X, y, np.asarray(gs), prov)


def sample_like(ds: Dataset, rng: np.random.Generator, group=None) -> tuple[np.ndarray, float]:
    """Fresh ``(x, raw label)`` from the generator that produced ``ds``."""
    spec = ds.provenance.synthetic
    if spec is None:
        raise ValueError("dataset was not generated synthetically; supply a held-out pool instead")
    if group in spec.scales:
        scale = spec.scales[group]
    elif None in spec.scales:
        scale = spec.scales[None]
    else:
        raise ValueError(f"no generator scale recorded for group {group!r}")
    x = scale * rng.standard_normal(spec.d)
    return x, float(test_function(spec.fn, x)[0])


def with_label_divisor(ds: Dataset, divisor: float | None) -> Dataset:
    """Rescale raw labels by another dataset's divisor (e.g. test by train)."""
    raw = ds.raw_labels
    y = raw / divisor if divisor is not None else raw
    return Dataset(ds.X, y, ds.groups, replace(ds.provenance, label_divisor=divisor))


# ---------------------------------------------------------------- tabular


@dataclass(frozen=True)
class RawTable:
    columns: Mapping[str, np.ndarray]
    schema: ColumnSchema
    source: str = "memory"

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.schema.label])

    def __len__(self) -> int:
        return self.n_rows

    @property
    def groups(self) -> np.ndarray | None:
        if self.schema.group is None:
            return None
        return self.columns[self.schema.group]

    def take(self, idx) -> "RawTable":
        idx = np.asarray(idx, dtype=int)
        return RawTable({k: v[idx] for k, v in self.columns.items()}, self.schema, self.source)

    def categories(self, column: str) -> list[str]:
        return sorted(set(self.columns[column].tolist()))


def load_tabular(path, schema: ColumnSchema) -> RawTable:
    """Read a headed UTF-8 CSV into typed columns per ``schema``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TableParseError(f"{path}: file is empty") from None
        missing = [c for c in schema.roles if c not in header]
        if missing:
            raise SchemaError(
                f"{path}: schema columns {missing} not in header; header={header}, "
                f"schema={list(schema.roles)}"
            )
        pos = {c: header.index(c) for c in schema.roles if schema.roles[c] is not Role.IGNORE}
        raw = {c: [] for c in pos}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise TableParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for c, i in pos.items():
                raw[c].append(row[i].strip())
    columns = {}
    for c, values in raw.items():
        role = schema.roles[c]
        if role in (Role.NUMERIC, Role.LABEL):
            out = np.empty(len(values))
            for k, v in enumerate(values):
                try:
                    out[k] = float(v)
                except ValueError:
                    raise TableParseError(
                        f"{path}: row {k + 2}, column {c!r}: cannot parse {v!r} as a number"
                    ) from None
                if not math.isfinite(out[k]):
                    raise TableParseError(f"{path}: row {k + 2}, column {c!r}: non-finite value {v!r}")
            columns[c] = out
        else:
            columns[c] = np.asarray(values, dtype=str)
    return RawTable(columns, schema, str(path))


@dataclass(frozen=True)
class PreprocessOptions:
    one_hot: bool = True
    min_max: bool = True
    min_max_label: bool = False
    normalize_labels: bool = False
    per_group_normalize: bool = False


PRESETS = {
    # min-max on inputs and label, one-hot categoricals
    "regression": PreprocessOptions(one_hot=True, min_max=True, min_max_label=True),
    # raw numeric inputs, unit-norm labels
    "fairness-rf": PreprocessOptions(one_hot=True, min_max=False, normalize_labels=True),
    # inputs min-max scaled within each group, unit-norm labels
    "fairness-linear": PreprocessOptions(one_hot=True, min_max=False, normalize_labels=True,
                                         per_group_normalize=True),
}


def _range(values: np.ndarray) -> tuple[float, float]:
    return float(np.min(values)), float(np.max(values))


def _scale(values: np.ndarray, lo: float, hi: float, column: str) -> np.ndarray:
    if hi == lo:
        warnings.warn(f"column {column!r} is constant; min-max scaling maps it to 0", RuntimeWarning)
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def preprocess(raw: RawTable, options: PreprocessOptions | str = "regression") -> Dataset:
    """Fit preprocessing statistics on ``raw`` and transform it."""
    if isinstance(options, str):
        options = PRESETS[options]
    schema = raw.schema
    numeric = schema.columns(Role.NUMERIC)
    categorical = schema.columns(Role.CATEGORICAL)
    if categorical and not options.one_hot:
        raise ValueError(f"categorical columns {categorical} need one_hot=True")
    if options.per_group_normalize and schema.group is None:
        raise ValueError("per-group normalisation needs a group column")
    numeric_ranges = {c: _range(raw.columns[c]) for c in numeric} if options.min_max else {}
    group_ranges = {}
    if options.per_group_normalize:
        groups = raw.groups
        for g in sorted(set(groups.tolist())):
            mask = groups == g
            group_ranges[g] = {c: _range(raw.columns[c][mask]) for c in numeric}
    category_maps = {c: tuple(raw.categories(c)) for c in categorical}
    label = raw.columns[schema.label]
    label_range = _range(label) if options.min_max_label else None
    divisor = None
    if options.normalize_labels:
        y = _scale(label, *label_range, schema.label) if label_range else label
        divisor = float(np.linalg.norm(y))
        if divisor == 0:
            raise ValueError("cannot normalise an all-zero label vector")
    names = list(numeric) + [f"{c}={v}" for c in categorical for v in category_maps[c]]
    prov = Provenance(source=raw.source, feature_names=tuple(names), options=options,
                      numeric_ranges=numeric_ranges, group_ranges=group_ranges,
                      category_maps=category_maps, label_range=label_range, label_divisor=divisor)
    return replay(raw, prov)


def replay(raw: RawTable, provenance: Provenance) -> Dataset:
    """Apply recorded preprocessing (fitted elsewhere) to ``raw``; no clipping."""
    options = provenance.options or PreprocessOptions()
    schema = raw.schema
    blocks = []
    for c in schema.columns(Role.NUMERIC):
        v = raw.columns[c]
        if options.per_group_normalize:
            out = np.empty_like(v)
            groups = raw.groups
            for g in sorted(set(groups.tolist())):
                if g not in provenance.group_ranges:
                    raise ValueError(f"group {g!r} has no fitted normalisation statistics")
                mask = groups == g
                out[mask] = _scale(v[mask], *provenance.group_ranges[g][c], c)
            v = out
        elif c in provenance.numeric_ranges:
            v = _scale(v, *provenance.numeric_ranges[c], c)
        blocks.append(v[:, None])
    for c in schema.columns(Role.CATEGORICAL):
        cats = provenance.category_maps[c]
        values = raw.columns[c]
        onehot = (values[:, None] == np.asarray(cats)[None, :]).astype(float)
        unseen = sorted(set(values.tolist()) - set(cats))
        if unseen:
            warnings.warn(f"column {c!r}: unseen categories {unseen} encoded as all zeros", RuntimeWarning)
        blocks.append(onehot)
    X = np.hstack(blocks) if blocks else np.zeros((raw.n_rows, 0))
    y = raw.columns[schema.label].astype(float)
    if provenance.label_range is not None:
        y = _scale(y, *provenance.label_range, schema.label)
    if provenance.label_divisor is not None:
        y = y / provenance.label_divisor
    return Dataset(X, y, raw.groups, provenance)


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class PerGroupCounts:
    train_n: int
    test_n: int


@dataclass(frozen=True)
class PerGroupFraction:
    train_frac: float


def split(data, strategy: PerGroupCounts | PerGroupFraction, rng_seed: int = 0):
    """Per-group random split without replacement.

    Works on :class:`Dataset` and :class:`RawTable` alike; rows keep their
    original relative order inside each output.
    """
    n = len(data)
    groups = data.groups
    if groups is None:
        groups = np.zeros(n, dtype=int)
    rng = make_rng(rng_seed)
    train_idx, test_idx = [], []
    for g in sorted(set(groups.tolist()), key=str):
        idx = np.flatnonzero(groups == g)
        perm = rng.permutation(idx)
        if isinstance(strategy, PerGroupCounts):
            need = strategy.train_n + strategy.test_n
            if idx.size < need:
                raise ValueError(f"group {g!r} has {idx.size} rows but {need} were requested")
            train_idx.append(perm[: strategy.train_n])
            test_idx.append(perm[strategy.train_n: need])
        elif isinstance(strategy, PerGroupFraction):
            if not 0 < strategy.train_frac < 1:
                raise ValueError("train_frac must lie in (0, 1)")
            k = int(math.floor(strategy.train_frac * idx.size))
            if k == 0 or k == idx.size:
                raise ValueError(f"group {g!r} with {idx.size} rows cannot be split at {strategy.train_frac}")
            train_idx.append(perm[:k])
            test_idx.append(perm[k:])
        else:
            raise ValueError(f"unknown split strategy {strategy!r}")
    return data.take(np.sort(np.concatenate(train_idx))), data.take(np.sort(np.concatenate(test_idx)))
