"""Seeded synthetic census-style microdata with a nested geography.

Hierarchy codes are prefix-concatenated: a unit's code is its parent's code
followed by a zero-padded child index, e.g. ``01`` -> ``0104`` -> ``010407``.
Key values are integer labels ``1..n`` drawn from a Zipf-like law whose
exponent ``skew`` controls how many sparse (small) cells appear; area sizes
follow a log-normal law so some finest units are thin.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .errors import ValidationError
from .storage import atomic_write_file

CENSUS_HIERARCHY = ("LA1", "LA2", "LA3", "OA")
CENSUS_UNITS = (1, 5, 78, 2506)
CENSUS_KEYS = {"gender": 2, "age": 18, "edu": 9, "mar": 5, "htype": 21}


@dataclass(frozen=True)
class SynthSpec:
    n_records: int = 1_000_000
    hierarchy: tuple[str, ...] = CENSUS_HIERARCHY
    units_per_level: tuple[int, ...] = CENSUS_UNITS
    key_categories: dict[str, int] = field(default_factory=lambda: dict(CENSUS_KEYS))
    skew: float = 1.5
    area_sigma: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_records < 1:
            raise ValidationError(f"record count must be >= 1, got {self.n_records}")
        if len(self.hierarchy) != len(self.units_per_level) or not self.hierarchy:
            raise ValidationError("need one unit count per hierarchy level")
        if any(u < 1 for u in self.units_per_level):
            raise ValidationError("every level needs at least one unit")
        for parent, child in zip(self.units_per_level, self.units_per_level[1:]):
            if child < parent:
                raise ValidationError(
                    f"a level cannot have fewer units than its parent ({child} < {parent})"
                )
        if any(n < 1 for n in self.key_categories.values()):
            raise ValidationError("every key needs at least one category")
        overlap = set(self.hierarchy) & set(self.key_categories)
        if overlap:
            raise ValidationError(f"names used for both hierarchy and keys: {sorted(overlap)}")
        if self.skew < 0 or self.area_sigma < 0:
            raise ValidationError("skew and area_sigma must be non-negative")


def build_geography(units_per_level: tuple[int, ...]) -> list[np.ndarray]:
    """Codes for every unit at every level; children are dealt round-robin to parents."""
    width = max(2, len(str(units_per_level[0])))
    levels = [np.array([f"{i + 1:0{width}d}" for i in range(units_per_level[0])], dtype=object)]
    parent_of = []
    for n_parent, n_child in zip(units_per_level, units_per_level[1:]):
        parent = np.arange(n_child) % n_parent
        order = np.argsort(parent, kind="stable")
        parent = parent[order]
        rank = np.arange(n_child) - np.searchsorted(parent, parent)
        width = max(2, len(str(int(np.bincount(parent).max()))))
        prev = levels[-1]
        levels.append(
            np.array([f"{prev[p]}{r + 1:0{width}d}" for p, r in zip(parent, rank)], dtype=object)
        )
        parent_of.append(parent)
    # expand to full paths for each finest unit
    paths = [levels[-1]]
    idx = np.arange(units_per_level[-1])
    for lvl in range(len(units_per_level) - 2, -1, -1):
        idx = parent_of[lvl][idx]
        paths.insert(0, levels[lvl][idx])
    return paths


def generate_synthetic(spec: SynthSpec) -> pd.DataFrame:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    paths = build_geography(spec.units_per_level)
    n_fine = spec.units_per_level[-1]

    weight = rng.lognormal(0.0, spec.area_sigma, size=n_fine)
    area = rng.choice(n_fine, size=spec.n_records, p=weight / weight.sum())
    columns = {name: paths[lvl][area] for lvl, name in enumerate(spec.hierarchy)}
    for name, n_cat in spec.key_categories.items():
        p = 1.0 / np.arange(1, n_cat + 1) ** spec.skew
        labels = rng.permutation(n_cat) + 1
        draws = rng.choice(n_cat, size=spec.n_records, p=p / p.sum())
        columns[name] = labels[draws].astype(str).astype(object)
    return pd.DataFrame(columns)


def synthetic_csv_bytes(spec: SynthSpec, sep: str = ",") -> bytes:
    buf = io.StringIO()
    generate_synthetic(spec).to_csv(buf, index=False, sep=sep, lineterminator="\n")
    return buf.getvalue().encode("utf-8")


def write_synthetic(spec: SynthSpec, path: Union[str, Path], sep: str = ",") -> Path:
    atomic_write_file(path, synthetic_csv_bytes(spec, sep))
    return Path(path)
