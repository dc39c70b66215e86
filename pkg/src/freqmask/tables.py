"""Finest-level table construction, iLBA aggregation and single-cell queries."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from . import core
from .errors import (
    EmptyInputError,
    IntegrityError,
    MissingColumnError,
    NestingError,
    UnknownValueError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_KEY_THR = 100


def category_order(values: Iterable[str]) -> tuple[str, ...]:
    """Canonical order of category labels.

    Labels that all parse as integers sort numerically (so age 2 < 10);
    otherwise plain string order is used.
    """
    labels = set(values)
    try:
        return tuple(sorted(labels, key=lambda s: (int(s), s)))
    except ValueError:
        return tuple(sorted(labels))


@dataclass(frozen=True)
class HierarchySpec:
    """Hierarchical variables ordered coarse -> fine."""

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ValidationError("at least one hierarchical variable is required")
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate hierarchical variable in {self.names}")

    @classmethod
    def from_ranks(
        cls, names: Sequence[str], ranks: Optional[Sequence[int]] = None
    ) -> "HierarchySpec":
        names = tuple(names)
        if ranks is None:
            return cls(names)
        ranks = tuple(int(r) for r in ranks)
        if len(ranks) != len(names):
            raise ValidationError(
                f"hkey_rank has {len(ranks)} entries but hkey has {len(names)}"
            )
        if sorted(ranks) != list(range(1, len(names) + 1)):
            raise ValidationError(f"hkey_rank must be a permutation of 1..{len(names)}, got {ranks}")
        return cls(tuple(n for _, n in sorted(zip(ranks, names))))

    @property
    def depth(self) -> int:
        return len(self.names)

    def level_of(self, name: str) -> int:
        return self.names.index(name) + 1


@dataclass(frozen=True)
class KeySpec:
    names: tuple[str, ...]
    categories: Mapping[str, tuple[str, ...]]
    key_thr: int = DEFAULT_KEY_THR

    def __post_init__(self):
        for name in self.names:
            n = len(self.categories[name])
            if n > self.key_thr:
                raise ValidationError(f"key {name!r} has {n} categories > key_thr={self.key_thr}")


@dataclass
class MicrodataView:
    """Validated microdata restricted to the hierarchy and key columns."""

    frame: pd.DataFrame
    hierarchy: HierarchySpec
    keys: KeySpec
    hier_categories: dict[str, tuple[str, ...]]
    excluded_keys: tuple[str, ...] = ()

    @property
    def n_records(self) -> int:
        return len(self.frame)


def read_microdata(path: Union[str, Path], sep: str = ",") -> pd.DataFrame:
    return pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False)


def _check_nesting(frame: pd.DataFrame, hierarchy: HierarchySpec) -> None:
    for parent, child in zip(hierarchy.names, hierarchy.names[1:]):
        pairs = frame[[parent, child]].drop_duplicates()
        dup = pairs[child].duplicated(keep=False)
        if dup.any():
            bad = pairs[dup].sort_values([child, parent])
            unit = bad[child].iloc[0]
            parents = bad.loc[bad[child] == unit, parent].iloc[:2]
            raise NestingError(child, unit, (parents.iloc[0], parents.iloc[1]), parent)


def ingest_microdata(
    records: Union[pd.DataFrame, str, Path],
    hkey: Sequence[str],
    key: Optional[Sequence[str]] = None,
    hkey_rank: Optional[Sequence[int]] = None,
    key_thr: int = DEFAULT_KEY_THR,
    sep: str = ",",
) -> MicrodataView:
    """Validate one-row-per-person microdata for table construction.

    When ``key`` is omitted every non-hierarchical column is used. Keys with
    more than ``key_thr`` categories are dropped with a logged notice.
    """
    if not isinstance(records, pd.DataFrame):
        records = read_microdata(records, sep=sep)
    hierarchy = HierarchySpec.from_ranks(hkey, hkey_rank)
    if key is None:
        key = [c for c in records.columns if c not in hierarchy.names]
    key = tuple(key)
    overlap = set(key) & set(hierarchy.names)
    if overlap:
        raise ValidationError(f"variables used as both key and hierarchy: {sorted(overlap)}")
    missing = [c for c in (*hierarchy.names, *key) if c not in records.columns]
    if missing:
        raise MissingColumnError(f"missing column(s) in microdata: {', '.join(missing)}")
    if len(records) == 0:
        raise EmptyInputError("microdata contains no records")

    frame = records.loc[:, [*hierarchy.names, *key]].astype(str).reset_index(drop=True)
    _check_nesting(frame, hierarchy)

    hier_categories = {h: category_order(frame[h].unique()) for h in hierarchy.names}
    kept, excluded, categories = [], [], {}
    for name in key:
        cats = category_order(frame[name].unique())
        if len(cats) > key_thr:
            logger.warning(
                "key %r excluded: %d categories exceeds key_thr=%d", name, len(cats), key_thr
            )
            excluded.append(name)
            continue
        kept.append(name)
        categories[name] = cats
    frame = frame.drop(columns=excluded)
    return MicrodataView(
        frame=frame,
        hierarchy=hierarchy,
        keys=KeySpec(tuple(kept), categories, key_thr),
        hier_categories=hier_categories,
        excluded_keys=tuple(excluded),
    )


def _encode(values: pd.Series, categories: Sequence[str]) -> np.ndarray:
    codes = pd.Categorical(values, categories=list(categories)).codes
    if (codes < 0).any():
        bad = values[codes < 0].iloc[0]
        raise UnknownValueError(f"label {bad!r} not in category set of {values.name!r}")
    return codes.astype(np.int32)


@dataclass(eq=False)
class FinestTable:
    """SCA-masked finest-level table.

    ``codes`` holds one column per hierarchy level (coarse -> fine) followed
    by one column per key, each an index into the matching category tuple.
    Rows are kept in canonical order: lexicographic over those columns.
    """

    hierarchy: HierarchySpec
    keys: KeySpec
    hier_categories: dict[str, tuple[str, ...]]
    k: int
    seed: Optional[int]
    codes: np.ndarray
    true_count: np.ndarray
    masked_count: np.ndarray
    excluded_keys: tuple[str, ...] = ()

    @property
    def columns(self) -> tuple[str, ...]:
        return (*self.hierarchy.names, *self.keys.names)

    def categories_of(self, name: str) -> tuple[str, ...]:
        if name in self.hier_categories:
            return self.hier_categories[name]
        return self.keys.categories[name]

    def __len__(self) -> int:
        return len(self.true_count)

    def labels(self, name: str) -> np.ndarray:
        col = self.columns.index(name)
        return np.asarray(self.categories_of(name), dtype=object)[self.codes[:, col]]

    def rows(self) -> list[tuple]:
        """Rows as ``(*labels, true_count, masked_count)`` tuples."""
        cols = [self.labels(n) for n in self.columns]
        return [
            (*(c[i] for c in cols), int(self.true_count[i]), int(self.masked_count[i]))
            for i in range(len(self))
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FinestTable):
            return NotImplemented
        return (
            self.hierarchy == other.hierarchy
            and self.keys.names == other.keys.names
            and dict(self.keys.categories) == dict(other.keys.categories)
            and self.keys.key_thr == other.keys.key_thr
            and self.hier_categories == other.hier_categories
            and self.k == other.k
            and self.seed == other.seed
            and self.excluded_keys == other.excluded_keys
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.true_count, other.true_count)
            and np.array_equal(self.masked_count, other.masked_count)
        )

    def validate(self, allow_zero_rows: bool = False) -> None:
        """Check the stored-table invariants; raise IntegrityError on failure."""
        n = len(self.true_count)
        if self.codes.shape != (n, len(self.columns)) or len(self.masked_count) != n:
            raise IntegrityError("row arrays have inconsistent shapes")
        t, m, k = self.true_count, self.masked_count, self.k
        if not allow_zero_rows and n and t.min() < 1:
            i = int(np.argmin(t))
            raise IntegrityError(f"row {i}: true count {t[i]} < 1 (zero rows are never stored)")
        ok = np.where(t > k, m == t, (m == 0) | ((m == k) & (t >= 1)))
        ok &= t >= 0
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0])
            raise IntegrityError(
                f"row {i}: masked count {m[i]} violates the SCA rule for true count {t[i]}"
            )
        if n > 1:
            prev, nxt = self.codes[:-1], self.codes[1:]
            diff = nxt != prev
            first = np.argmax(diff, axis=1)
            has_diff = diff.any(axis=1)
            if not has_diff.all():
                i = int(np.flatnonzero(~has_diff)[0]) + 1
                raise IntegrityError(f"row {i}: duplicate cell")
            rows = np.arange(n - 1)
            if not (nxt[rows, first] > prev[rows, first]).all():
                i = int(np.flatnonzero(nxt[rows, first] <= prev[rows, first])[0]) + 1
                raise IntegrityError(f"row {i}: rows are not in canonical order")

    @classmethod
    def from_rows(
        cls,
        hierarchy: Sequence[str],
        keys: Sequence[str],
        rows: Iterable[Sequence],
        k: int = core.DEFAULT_K,
        seed: Optional[int] = None,
        key_thr: int = DEFAULT_KEY_THR,
    ) -> "FinestTable":
        """Assemble a table from explicit ``(*labels, true, masked)`` rows.

        Rows are sorted into canonical order and validated; use this for
        tables whose masks are fixed in advance.
        """
        hierarchy = HierarchySpec(tuple(hierarchy))
        keys = tuple(keys)
        names = (*hierarchy.names, *keys)
        frame = pd.DataFrame(list(rows), columns=[*names, "N", "N_masked"])
        frame[list(names)] = frame[list(names)].astype(str)
        table = _table_from_frame(frame, hierarchy, keys, k, seed, key_thr)
        table.validate()
        return table


def _table_from_frame(frame, hierarchy, keys, k, seed, key_thr, categories=None, excluded=()):
    names = (*hierarchy.names, *keys)
    if categories is None:
        categories = {n: category_order(frame[n].unique()) for n in names}
    codes = np.column_stack([_encode(frame[n], categories[n]) for n in names]) if len(frame) else np.empty((0, len(names)), np.int32)
    order = np.lexsort(codes.T[::-1]) if len(frame) else np.arange(0)
    return FinestTable(
        hierarchy=hierarchy,
        keys=KeySpec(keys, {n: categories[n] for n in keys}, key_thr),
        hier_categories={h: categories[h] for h in hierarchy.names},
        k=k,
        seed=seed,
        codes=np.ascontiguousarray(codes[order]),
        true_count=frame["N"].to_numpy(np.int64)[order],
        masked_count=frame["N_masked"].to_numpy(np.int64)[order],
        excluded_keys=tuple(excluded),
    )


def build_finest_table(
    view: MicrodataView, k: int = core.DEFAULT_K, seed: Optional[int] = None
) -> FinestTable:
    """Count observed cells and SCA-mask them in canonical row order.

    With ``seed=None`` a fresh seed is drawn and recorded on the table so the
    build can still be reproduced.
    """
    k = core.check_threshold(k)
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    names = (*view.hierarchy.names, *view.keys.names)
    cats = {**view.hier_categories, **view.keys.categories}
    codes = np.column_stack([_encode(view.frame[n], cats[n]) for n in names])

    order = np.lexsort(codes.T[::-1])
    sorted_codes = codes[order]
    boundary = np.ones(len(order), dtype=bool)
    boundary[1:] = (sorted_codes[1:] != sorted_codes[:-1]).any(axis=1)
    starts = np.flatnonzero(boundary)
    true_count = np.diff(np.append(starts, len(order))).astype(np.int64)

    rng = np.random.default_rng(seed)
    masked = core.apply_sca_array(true_count, k, rng)
    return FinestTable(
        hierarchy=view.hierarchy,
        keys=view.keys,
        hier_categories=dict(view.hier_categories),
        k=k,
        seed=seed,
        codes=np.ascontiguousarray(sorted_codes[starts]),
        true_count=true_count,
        masked_count=masked,
        excluded_keys=view.excluded_keys,
    )


# --------------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class AggregationRequest:
    hkey_level: int
    keys: tuple[str, ...] = ()

    def check(self, table: FinestTable) -> None:
        if not 1 <= self.hkey_level <= table.hierarchy.depth:
            raise UnknownValueError(
                f"hkey_level must be in 1..{table.hierarchy.depth}, got {self.hkey_level}"
            )
        for name in self.keys:
            if name not in table.keys.names:
                raise UnknownValueError(
                    f"unknown key {name!r}; table keys are {', '.join(table.keys.names)}"
                )
        if len(set(self.keys)) != len(self.keys):
            raise ValidationError(f"duplicate key in request: {self.keys}")


@dataclass
class InfoLossSummary:
    """Histogram of ``masked - true`` over released cells."""

    bins: list[tuple[int, int]]

    @classmethod
    def from_losses(cls, losses: Iterable[int]) -> "InfoLossSummary":
        counts = Counter(int(x) for x in losses)
        return cls(sorted(counts.items()))

    @property
    def total(self) -> int:
        return sum(n for _, n in self.bins)

    def rows(self) -> list[tuple[str, int, str]]:
        """``(Loss, n, perc)`` rows with a trailing Total row; perc has two decimals."""
        total = self.total
        out = []
        for loss, n in self.bins:
            perc = (Decimal(100 * n) / Decimal(total)).quantize(Decimal("0.01"), ROUND_HALF_UP)
            out.append((str(loss), n, f"{perc}"))
        out.append(("Total", total, "100.00"))
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=["Loss", "n", "perc"])

    def max_abs_loss(self) -> int:
        return max((abs(x) for x, _ in self.bins), default=0)


def info_loss_summary(rows: "AggregatedTable") -> InfoLossSummary:
    return InfoLossSummary.from_losses(rows.loss)


@dataclass
class AggregatedTable:
    """Released cells of one aggregation request plus their internal true counts.

    ``true_count`` and ``loss`` are for the trusted side only;
    :meth:`public_frame` drops them.
    """

    k: int
    hier_names: tuple[str, ...]
    key_names: tuple[str, ...]
    labels: dict[str, np.ndarray]
    true_count: np.ndarray
    masked_count: np.ndarray
    type1: np.ndarray
    type2: np.ndarray
    s0_size: np.ndarray
    sk_size: np.ndarray
    f_small: np.ndarray
    f_large: np.ndarray
    _index: Optional[dict] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.masked_count)

    @property
    def loss(self) -> np.ndarray:
        return self.masked_count - self.true_count

    @property
    def columns(self) -> tuple[str, ...]:
        return (*self.hier_names, *self.key_names)

    def group_key(self, i: int) -> tuple[str, ...]:
        return tuple(self.labels[c][i] for c in self.columns)

    def partition(self, i: int) -> core.SmallCellPartition:
        size = int(self.s0_size[i] + self.sk_size[i])
        single = None
        if size == 1:
            single = 0 if self.s0_size[i] else self.k
        return core.SmallCellPartition(
            int(self.s0_size[i]), int(self.sk_size[i]), int(self.f_small[i]),
            int(self.f_large[i]), single,
        )

    def lookup(self, hkey_value: str, key_values: Mapping[str, str]) -> Optional[int]:
        """Row index of a cell, or None when the cell was not observed."""
        if self._index is None:
            self._index = {self.group_key(i)[len(self.hier_names) - 1:]: i for i in range(len(self))}
        return self._index.get((hkey_value, *(key_values[n] for n in self.key_names)))

    def public_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({c: self.labels[c] for c in self.columns})
        frame["N_masked"] = self.masked_count
        frame["type1"] = self.type1
        frame["type2"] = self.type2
        return frame


def _group_ids(cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense ids for distinct rows of ``cols`` plus the first row of each group."""
    if cols.shape[1] == 0:
        return np.zeros(len(cols), np.int64), np.array([0])
    radix = cols.max(axis=0).astype(np.int64) + 1
    if np.sum(np.log2(radix.astype(float))) < 62:
        mult = np.cumprod(np.concatenate([[1], radix[1:][::-1]]))[::-1]
        combined = cols.astype(np.int64) @ mult
        _, first, inverse = np.unique(combined, return_index=True, return_inverse=True)
    else:
        _, first, inverse = np.unique(cols, axis=0, return_index=True, return_inverse=True)
    return inverse.ravel(), first


def aggregate_table(
    table: FinestTable, req: AggregationRequest
) -> tuple[AggregatedTable, InfoLossSummary]:
    """Mask every observed cell of a coarser table with iLBA.

    Groups are (hierarchy unit at ``req.hkey_level``, selected key values);
    output rows follow canonical order of the hierarchy path then keys.
    """
    req.check(table)
    k = table.k
    depth = req.hkey_level
    key_cols = [table.hierarchy.depth + table.keys.names.index(n) for n in req.keys]
    hier_cols = list(range(depth))
    t, m = table.true_count, table.masked_count

    n_rows = len(table)
    if n_rows == 0:
        empty = np.zeros(0, np.int64)
        agg = AggregatedTable(
            k, table.hierarchy.names[:depth], req.keys,
            {c: np.zeros(0, object) for c in (*table.hierarchy.names[:depth], *req.keys)},
            empty, empty, empty, empty, empty, empty, empty, empty,
        )
        return agg, InfoLossSummary([])

    # The level-`depth` unit determines its parents, so grouping on it suffices;
    # the parent columns are included only so output sorts canonically.
    gid, first = _group_ids(table.codes[:, [depth - 1, *key_cols]])
    n_groups = len(first)

    small = (t >= 1) & (t <= k)
    large = t > k

    def bsum(w):
        return np.bincount(gid, weights=w, minlength=n_groups).astype(np.int64)

    s0 = bsum(small & (m == 0))
    sk = bsum(small & (m == k))
    f_small = bsum(np.where(small, t, 0))
    f_large = bsum(np.where(large, t, 0))
    single = bsum(np.where(small, m, 0))
    masked_small, shift = core.ilba_arrays(s0, sk, f_small, single, k)

    rep = table.codes[first][:, [*hier_cols, *key_cols]]
    order = np.lexsort(rep.T[::-1])
    # a group made only of explicit zero rows was never observed
    order = order[(f_small + f_large)[order] > 0]
    rep = rep[order]
    names = (*table.hierarchy.names[:depth], *req.keys)
    labels = {
        name: np.asarray(table.categories_of(name), dtype=object)[rep[:, j]]
        for j, name in enumerate(names)
    }
    agg = AggregatedTable(
        k=k,
        hier_names=table.hierarchy.names[:depth],
        key_names=tuple(req.keys),
        labels=labels,
        true_count=(f_small + f_large)[order],
        masked_count=core.masked_aggregate(f_large, masked_small)[order],
        type1=(shift == core.SHIFT_UP).astype(np.int8)[order],
        type2=(shift == core.SHIFT_DOWN).astype(np.int8)[order],
        s0_size=s0[order],
        sk_size=sk[order],
        f_small=f_small[order],
        f_large=f_large[order],
    )
    return agg, info_loss_summary(agg)


# ---------------------------------------------------------------------- query


@dataclass(frozen=True)
class CellQuery:
    hkey_level: int
    hkey_value: str
    key_assignments: tuple[tuple[str, str], ...] = ()

    @classmethod
    def of(cls, hkey_level: int, hkey_value: str, **keys: str) -> "CellQuery":
        return cls(hkey_level, str(hkey_value), tuple((n, str(v)) for n, v in keys.items()))


@dataclass(frozen=True)
class QueryResult:
    masked: int
    partition: core.SmallCellPartition
    trace: core.IlbaTrace


def query_cell_trace(table: FinestTable, q: CellQuery) -> QueryResult:
    AggregationRequest(q.hkey_level, tuple(n for n, _ in q.key_assignments)).check(table)
    level_name = table.hierarchy.names[q.hkey_level - 1]
    units = table.hier_categories[level_name]
    if q.hkey_value not in units:
        raise UnknownValueError(f"unknown {level_name} unit {q.hkey_value!r}")
    selected = table.codes[:, q.hkey_level - 1] == units.index(q.hkey_value)
    for name, value in q.key_assignments:
        cats = table.keys.categories[name]
        if value not in cats:
            raise UnknownValueError(f"unknown category {value!r} for key {name!r}")
        col = table.hierarchy.depth + table.keys.names.index(name)
        selected &= table.codes[:, col] == cats.index(value)

    partition = core.partition_small_cells(
        zip(table.true_count[selected].tolist(), table.masked_count[selected].tolist()), table.k
    )
    trace = core.apply_ilba(partition, table.k)
    return QueryResult(core.masked_aggregate(partition.f_large, trace.masked_small), partition, trace)


def query_cell(table: FinestTable, q: CellQuery) -> int:
    """Masked frequency of one cell; 0 when no finest rows fall inside it."""
    return query_cell_trace(table, q).masked
