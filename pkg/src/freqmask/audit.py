"""Differencing-attack audit of masked releases.

The simulated attacker sees the published finest table (so it knows how many
small cells of a group were published as 0 and as K), the published
aggregate, K, and the full masking rule. It inverts the mechanism to obtain
the candidate small-cell sums, then works out which true counts each small
cell can still take.

Small-cell slots are always reported S_K slots first, then S0 slots.
"""

from __future__ import annotations

import enum
import functools
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import core
from .errors import EnumerationBudgetExceeded, UnreachableReleaseError, ValidationError
from .tables import AggregatedTable, AggregationRequest, FinestTable, aggregate_table

ENUMERATION_BUDGET = 10**7
# Vectors generated per chunk while enumerating; bounds peak memory.
_CHUNK = 1 << 20


class Mechanism(enum.Enum):
    EXACT_SUM = "exact_sum"
    NAIVE_SCA_OF_SUM = "naive_sca_of_sum"
    ILBA = "ilba"


@dataclass(frozen=True)
class AttackInstance:
    s0_size: int
    sk_size: int
    k: int
    released_small: int
    mechanism: Mechanism

    def __post_init__(self):
        if self.s0_size < 0 or self.sk_size < 0 or self.s0_size + self.sk_size < 1:
            raise ValidationError("an attack instance needs at least one small cell")


def _ilba_preimage(s0: int, sk: int, k: int, released: int) -> frozenset[int]:
    d = core.feasible_interval(s0, sk, k)
    g = np.arange(d.lower, d.upper + 1, dtype=np.int64)
    n = len(g)
    out, _ = core.ilba_arrays(
        np.full(n, s0), np.full(n, sk), g, np.full(n, 0 if s0 else k), k
    )
    return frozenset(g[out == released].tolist())


@functools.lru_cache(maxsize=65536)
def _invert_cached(s0: int, sk: int, k: int, released: int, mechanism: Mechanism) -> frozenset[int]:
    d = core.feasible_interval(s0, sk, k)
    if mechanism is Mechanism.EXACT_SUM:
        sums = frozenset([released]) if released in d else frozenset()
    elif mechanism is Mechanism.NAIVE_SCA_OF_SUM:
        sums = set()
        if released == 0:
            sums.update(g for g in d.values() if g < k)
        elif released == k:
            sums.update(g for g in d.values() if 1 <= g <= k)
        elif released > k and released in d:
            sums.add(released)
        sums = frozenset(sums)
    else:
        sums = _ilba_preimage(s0, sk, k, released)
    return sums


def invert_mechanism(inst: AttackInstance) -> frozenset[int]:
    """Small-cell sums in D that the declared mechanism could map to the release."""
    sums = _invert_cached(
        inst.s0_size, inst.sk_size, inst.k, inst.released_small, inst.mechanism
    )
    if not sums:
        raise UnreachableReleaseError(
            f"{inst.mechanism.value} cannot release {inst.released_small} for "
            f"|S0|={inst.s0_size}, |S_K|={inst.sk_size}, K={inst.k}"
        )
    return sums


@dataclass(frozen=True)
class CellFeasibility:
    """Per-slot feasible true counts given a set of candidate small-cell sums."""

    s0_size: int
    sk_size: int
    k: int
    per_slot: tuple[frozenset[int], ...]
    n_configurations: Optional[int] = None
    canonical_configurations: Optional[tuple[tuple[int, ...], ...]] = None

    @property
    def violations(self) -> tuple[int, ...]:
        """Slots whose true count is pinned to 1..K-1."""
        bad = []
        for i, feas in enumerate(self.per_slot):
            anchor = self.k if i < self.sk_size else 0
            if anchor not in feas:
                bad.append(i)
        return tuple(bad)

    @property
    def violates_sk(self) -> bool:
        return any(i < self.sk_size for i in self.violations)

    @property
    def violates_s0(self) -> bool:
        return any(i >= self.sk_size for i in self.violations)


class _Enumeration:
    """All K^|S| small-cell vectors of one partition shape, reduced to lookup tables."""

    def __init__(self, s0: int, sk: int, k: int):
        n = s0 + sk
        self.max_sum = k * sk + (k - 1) * s0
        lows = np.array([1] * sk + [0] * s0, dtype=np.int64)
        # reach[slot, value, sum]: some vector has that slot at value and that total
        self.reach = np.zeros((n, k + 1, self.max_sum + 1), dtype=bool)
        self.count = np.zeros(self.max_sum + 1, dtype=np.int64)
        self.canonical: dict[int, set[tuple[int, ...]]] = {}

        n_tail = 0
        while n_tail < n and k ** (n_tail + 1) <= _CHUNK:
            n_tail += 1
        n_head = n - n_tail
        tail = np.indices((k,) * n_tail).reshape(n_tail, -1).T + lows[n_head:]
        for head in itertools.product(range(k), repeat=n_head):
            head_vals = np.asarray(head, dtype=np.int64) + lows[:n_head]
            vecs = np.hstack([np.broadcast_to(head_vals, (len(tail), n_head)), tail])
            sums = vecs.sum(axis=1)
            self.count += np.bincount(sums, minlength=self.max_sum + 1)
            for slot in range(n):
                self.reach[slot, vecs[:, slot], sums] = True
            # one representative per orbit: each symmetric block non-increasing
            canon = np.ones(len(vecs), dtype=bool)
            for lo, hi in ((0, sk), (sk, n)):
                if hi - lo > 1:
                    canon &= (np.diff(vecs[:, lo:hi], axis=1) <= 0).all(axis=1)
            for row, total in zip(vecs[canon].tolist(), sums[canon].tolist()):
                self.canonical.setdefault(total, set()).add(tuple(row))


@functools.lru_cache(maxsize=256)
def _enumeration(s0: int, sk: int, k: int) -> _Enumeration:
    return _Enumeration(s0, sk, k)


def enumerate_feasible_cells(
    s0_size: int,
    sk_size: int,
    k: int,
    candidate_sums: Iterable[int],
    budget: int = ENUMERATION_BUDGET,
) -> CellFeasibility:
    """Brute force over every small-cell vector whose total is a candidate sum.

    S_K slots range over 1..K and S0 slots over 0..K-1, so K^|S| vectors are
    visited; beyond ``budget`` an EnumerationBudgetExceeded is raised and the
    caller should use :func:`interval_feasible_cells` instead.
    """
    n = s0_size + sk_size
    if n < 1:
        raise ValidationError("enumeration needs at least one small cell")
    if k**n > budget:
        raise EnumerationBudgetExceeded(
            f"K^|S| = {k}^{n} vectors exceeds budget {budget}; use the analytic path"
        )
    enum_ = _enumeration(s0_size, sk_size, k)
    sums = sorted(s for s in set(candidate_sums) if 0 <= s <= enum_.max_sum)
    per_slot = tuple(
        frozenset(np.flatnonzero(enum_.reach[slot][:, sums].any(axis=1)).tolist())
        for slot in range(n)
    )
    configs = sorted(
        (c for s in sums for c in enum_.canonical.get(s, ())), reverse=True
    )
    return CellFeasibility(
        s0_size,
        sk_size,
        k,
        per_slot,
        n_configurations=int(enum_.count[sums].sum()),
        canonical_configurations=tuple(configs),
    )


def interval_feasible_cells(
    s0_size: int, sk_size: int, k: int, candidate_sums: Iterable[int]
) -> CellFeasibility:
    """Per-slot feasibility without enumeration.

    Sums of independent integer ranges form a contiguous range, so slot value
    v is feasible iff some candidate g leaves ``g - v`` inside the range the
    other slots can jointly reach.
    """
    n = s0_size + sk_size
    if n < 1:
        raise ValidationError("feasibility needs at least one small cell")
    sums = sorted(set(candidate_sums))
    per_slot = []
    for slot in range(n):
        in_sk = slot < sk_size
        rest_lo = sk_size - (1 if in_sk else 0)
        rest_hi = k * (sk_size - in_sk) + (k - 1) * (s0_size - (not in_sk))
        values = range(1, k + 1) if in_sk else range(0, k)
        feas = frozenset(
            v for v in values if any(rest_lo <= g - v <= rest_hi for g in sums)
        )
        per_slot.append(feas)
    return CellFeasibility(s0_size, sk_size, k, tuple(per_slot))


@dataclass(frozen=True)
class AnalyticVerdict:
    violates_sk: bool
    violates_s0: bool
    residual: int
    residual_up: int


def analytic_violation(s0_size: int, sk_size: int, k: int, f_small: int) -> AnalyticVerdict:
    """Residual test for an attacker who learns the exact small-cell sum.

    ``residual`` is what remains after every S_K cell takes 1 and every S0
    cell takes 0; ``residual_up`` is how far the sum sits below the maximum.
    Either below K-1 pins the corresponding cells inside 1..K-1.
    """
    d = core.feasible_interval(s0_size, sk_size, k)
    if f_small not in d:
        raise ValidationError(f"f_S={f_small} outside feasible interval {d.lower}..{d.upper}")
    residual = f_small - d.lower
    residual_up = d.upper - f_small
    return AnalyticVerdict(
        violates_sk=sk_size >= 1 and residual < k - 1,
        violates_s0=s0_size >= 1 and residual_up < k - 1,
        residual=residual,
        residual_up=residual_up,
    )


@dataclass(frozen=True)
class AuditVerdict:
    candidate_sums: frozenset[int]
    per_cell_feasible: tuple[frozenset[int], ...]
    violations: tuple[int, ...]
    ambiguity: int
    method: str
    residual_low: Optional[int] = None
    residual_up: Optional[int] = None


def audit_instance(
    inst: AttackInstance, enumeration_limit: int = 10**5
) -> AuditVerdict:
    """Invert the mechanism, then project onto the small cells.

    Brute-force enumeration is used while K^|S| <= ``enumeration_limit``;
    larger groups go through :func:`interval_feasible_cells`.
    """
    sums = invert_mechanism(inst)
    n = inst.s0_size + inst.sk_size
    if inst.k**n <= enumeration_limit:
        feas = enumerate_feasible_cells(inst.s0_size, inst.sk_size, inst.k, sums)
        method = "enumeration"
    else:
        feas = interval_feasible_cells(inst.s0_size, inst.sk_size, inst.k, sums)
        method = "interval"
    r_low = r_up = None
    if inst.mechanism is Mechanism.EXACT_SUM:
        av = analytic_violation(inst.s0_size, inst.sk_size, inst.k, inst.released_small)
        r_low, r_up = av.residual, av.residual_up
    return AuditVerdict(
        candidate_sums=sums,
        per_cell_feasible=feas.per_slot,
        violations=feas.violations,
        ambiguity=len(sums),
        method=method,
        residual_low=r_low,
        residual_up=r_up,
    )


@dataclass
class CellAudit:
    group: dict[str, str]
    s0_size: int
    sk_size: int
    released: int
    released_small: int
    ambiguity: int
    violates_sk: bool
    violates_s0: bool
    method: str

    @property
    def passed(self) -> bool:
        return not (self.violates_sk or self.violates_s0)


@dataclass
class AuditReport:
    k: int
    hkey_level: int
    keys: tuple[str, ...]
    mechanism: Mechanism
    cells: list[CellAudit] = field(default_factory=list)

    @property
    def violating(self) -> list[CellAudit]:
        return [c for c in self.cells if not c.passed]

    @property
    def low_ambiguity(self) -> list[CellAudit]:
        return [c for c in self.cells if c.ambiguity < self.k]

    @property
    def passed(self) -> bool:
        return not self.violating and not self.low_ambiguity

    def summary(self) -> dict:
        return {
            "audited_cells": len(self.cells),
            "violating_cells": len(self.violating),
            "low_ambiguity_cells": len(self.low_ambiguity),
            "min_ambiguity": min((c.ambiguity for c in self.cells), default=None),
            "passed": self.passed,
        }

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "hkey_level": self.hkey_level,
            "keys": list(self.keys),
            "mechanism": self.mechanism.value,
            "cells": [{**asdict(c), "passed": c.passed} for c in self.cells],
            "summary": self.summary(),
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def naive_sca_release(agg: AggregatedTable, rng: np.random.Generator) -> np.ndarray:
    """Released small-cell sums under SCA applied directly to f_S.

    Unsafe by design; exists only so the audit can demonstrate the leak.
    """
    return core.apply_sca_array(agg.f_small, agg.k, rng)


def audit_release(
    table: FinestTable,
    req: AggregationRequest,
    mechanism: Mechanism = Mechanism.ILBA,
    seed: Optional[int] = None,
    enumeration_limit: int = 10**5,
) -> AuditReport:
    """Re-derive a release on the trusted side and attack every cell with |S| >= 2.

    Groups with at most one small cell publish nothing beyond the finest
    table and are not attacked. With ``Mechanism.NAIVE_SCA_OF_SUM`` the
    release is regenerated with naive SCA of the small-cell sum (``seed``
    drives that draw).
    """
    agg, _ = aggregate_table(table, req)
    k = table.k
    if mechanism is Mechanism.ILBA:
        released_small = agg.masked_count - agg.f_large
    elif mechanism is Mechanism.NAIVE_SCA_OF_SUM:
        released_small = naive_sca_release(agg, np.random.default_rng(seed))
    else:
        released_small = agg.f_small.copy()
    report = AuditReport(k, req.hkey_level, tuple(req.keys), mechanism)
    size = agg.s0_size + agg.sk_size
    for i in np.flatnonzero(size >= 2):
        inst = AttackInstance(
            int(agg.s0_size[i]), int(agg.sk_size[i]), k, int(released_small[i]), mechanism
        )
        verdict = audit_instance(inst, enumeration_limit)
        sk_n = inst.sk_size
        report.cells.append(
            CellAudit(
                group=dict(zip(agg.columns, agg.group_key(i))),
                s0_size=inst.s0_size,
                sk_size=sk_n,
                released=int(agg.f_large[i] + released_small[i]),
                released_small=inst.released_small,
                ambiguity=verdict.ambiguity,
                violates_sk=any(j < sk_n for j in verdict.violations),
                violates_s0=any(j >= sk_n for j in verdict.violations),
                method=verdict.method,
            )
        )
    return report
