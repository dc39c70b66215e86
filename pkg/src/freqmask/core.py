"""Integer-only masking primitives: small cell adjustment and iLBA.

Nothing in here knows about tables, files or schemas. Every function takes
plain integers (or integer numpy arrays for the vectorised variants) and is
deterministic given its inputs and, for SCA, the random generator state.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import InconsistentMaskError, PreconditionError, ValidationError

DEFAULT_K = 5


class Shift(enum.Enum):
    NONE = "none"
    TYPE1_UP = "type1"
    TYPE2_DOWN = "type2"


class Case(enum.Enum):
    EMPTY = "empty"
    SINGLETON = "singleton"
    GENERAL = "general"


# Codes used by the vectorised path; match the order of Shift above.
SHIFT_NONE, SHIFT_UP, SHIFT_DOWN = 0, 1, 2


def check_threshold(k: int) -> int:
    """Validate the anonymity threshold K and return it as an int.

    K = 2 is accepted with a warning because the loss and anonymity
    guarantees are only established for K >= 3.
    """
    if isinstance(k, bool) or int(k) != k:
        raise ValidationError(f"threshold K must be an integer, got {k!r}")
    k = int(k)
    if k < 2:
        raise ValidationError(f"threshold K must be >= 2, got {k}")
    if k == 2:
        warnings.warn("guarantees of iLBA hold for K >= 3; running with K=2", stacklevel=2)
    return k


@dataclass(frozen=True)
class ScaResult:
    masked: int
    randomized: bool


@dataclass(frozen=True)
class SmallCellPartition:
    """Small-cell summary of one group of finest-level cells.

    ``s0_size`` and ``sk_size`` count the small cells published as 0 and as K.
    ``f_small`` / ``f_large`` are the true sums over small and large cells.
    ``singleton_sca`` is the stored mask of the lone small cell when exactly
    one small cell is present, otherwise None.
    """

    s0_size: int
    sk_size: int
    f_small: int
    f_large: int
    singleton_sca: Optional[int] = None

    @property
    def size(self) -> int:
        return self.s0_size + self.sk_size


@dataclass(frozen=True)
class FeasibleInterval:
    """Closed integer range of small-cell sums consistent with the published masks."""

    lower: int
    upper: int

    def __contains__(self, value: int) -> bool:
        return self.lower <= value <= self.upper

    def __len__(self) -> int:
        return self.upper - self.lower + 1

    def values(self) -> range:
        return range(self.lower, self.upper + 1)


@dataclass(frozen=True)
class IlbaTrace:
    """Every intermediate of one iLBA evaluation.

    Only ``case``, ``shift``, ``post_processed`` and ``masked_small`` are set
    for the Empty and Singleton cases; the centre/candidate fields are None.
    """

    case: Case
    masked_small: int
    center1: Optional[int] = None
    candidate_low: Optional[int] = None
    shift: Shift = Shift.NONE
    center2: Optional[int] = None
    post_processed: bool = False

    def candidates(self, k: int) -> range:
        """Initial candidate set C (General case only)."""
        if self.candidate_low is None:
            raise PreconditionError("candidate set is only defined in the General case")
        return range(self.candidate_low, self.candidate_low + k)

    def shifted_candidates(self, k: int) -> range:
        if self.center2 is None:
            raise PreconditionError("candidate set is only defined in the General case")
        low = self.center2 - k // 2
        return range(low, low + k)


def apply_sca(f: int, k: int, rng: np.random.Generator) -> ScaResult:
    """Small cell adjustment of a single count.

    Counts above K are returned unchanged without consuming randomness.
    Counts in 0..K become K with probability f/K and 0 otherwise, which keeps
    the expectation at f. Exactly one uniform draw is taken in that branch.
    """
    if f < 0:
        raise ValidationError(f"cell count must be non-negative, got {f}")
    if f > k:
        return ScaResult(int(f), False)
    u = rng.random()
    return ScaResult(k if u < f / k else 0, True)


def apply_sca_array(counts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised SCA; draws are consumed in array order for small cells only.

    Produces the same output and leaves ``rng`` in the same state as calling
    :func:`apply_sca` on each element in turn.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise ValidationError("cell counts must be non-negative")
    masked = counts.copy()
    small = counts <= k
    n_small = int(small.sum())
    if n_small:
        u = rng.random(n_small)
        masked[small] = np.where(u < counts[small] / k, k, 0)
    return masked


def is_valid_sca_pair(true: int, masked: int, k: int) -> bool:
    if true < 0:
        return False
    if true <= k:
        return masked == 0 or (masked == k and true >= 1)
    return masked == true


def partition_small_cells(
    cells: Iterable[tuple[int, int]], k: int
) -> SmallCellPartition:
    """Split ``(true, masked)`` finest cells into S0, S_K and large cells.

    Pairs with a true count of zero are skipped: an explicit zero row carries
    the same information as an omitted one.
    """
    s0 = sk = f_small = f_large = 0
    last_small_mask = None
    for i, (true, masked) in enumerate(cells):
        if not is_valid_sca_pair(true, masked, k):
            raise InconsistentMaskError(i, true, masked, k)
        if true == 0:
            continue
        if true > k:
            f_large += true
            continue
        f_small += true
        last_small_mask = masked
        if masked == 0:
            s0 += 1
        else:
            sk += 1
    singleton = last_small_mask if s0 + sk == 1 else None
    return SmallCellPartition(s0, sk, f_small, f_large, singleton)


def feasible_interval(s0_size: int, sk_size: int, k: int) -> FeasibleInterval:
    if s0_size < 0 or sk_size < 0:
        raise ValidationError("partition sizes must be non-negative")
    if s0_size + sk_size == 0:
        raise PreconditionError("feasible interval is undefined without small cells")
    return FeasibleInterval(sk_size, k * sk_size + (k - 1) * s0_size)


def ilba_general(partition: SmallCellPartition, k: int) -> IlbaTrace:
    """Steps 1-4 of iLBA for a group with at least two small cells and f_S >= 1."""
    if partition.size < 2 or partition.f_small < 1:
        raise PreconditionError(
            f"general iLBA needs |S| >= 2 and f_S >= 1, got |S|={partition.size}, "
            f"f_S={partition.f_small}"
        )
    d = feasible_interval(partition.s0_size, partition.sk_size, k)
    f_s = partition.f_small
    if f_s not in d:
        raise PreconditionError(f"f_S={f_s} lies outside the feasible interval {d}")

    half = k // 2
    center1 = f_s - (f_s - 1) % k + half
    c_low = center1 - half
    c_high = c_low + k - 1
    if c_low < d.lower:
        shift, center2 = Shift.TYPE1_UP, center1 + k
    elif d.upper < c_high:
        shift, center2 = Shift.TYPE2_DOWN, center1 - k
    else:
        shift, center2 = Shift.NONE, center1
    post = center2 == 1 + half
    masked = k if post else center2
    return IlbaTrace(
        case=Case.GENERAL,
        masked_small=masked,
        center1=center1,
        candidate_low=c_low,
        shift=shift,
        center2=center2,
        post_processed=post,
    )


def apply_ilba(partition: SmallCellPartition, k: int) -> IlbaTrace:
    if partition.size == 0 or partition.f_small == 0:
        return IlbaTrace(Case.EMPTY, 0)
    if partition.size == 1:
        if partition.singleton_sca not in (0, k):
            raise PreconditionError(
                f"singleton partition needs a stored mask in {{0, {k}}}, "
                f"got {partition.singleton_sca!r}"
            )
        return IlbaTrace(Case.SINGLETON, partition.singleton_sca)
    return ilba_general(partition, k)


def masked_aggregate(f_large: int, masked_small: int) -> int:
    return f_large + masked_small


def ilba_arrays(
    s0_size: np.ndarray,
    sk_size: np.ndarray,
    f_small: np.ndarray,
    singleton_sca: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`apply_ilba` over many groups.

    Returns ``(masked_small, shift_code)`` where shift codes are
    SHIFT_NONE / SHIFT_UP / SHIFT_DOWN. ``singleton_sca`` is only read where
    exactly one small cell is present. Inputs are assumed consistent (f_S in D).
    """
    s0 = np.asarray(s0_size, dtype=np.int64)
    sk = np.asarray(sk_size, dtype=np.int64)
    fs = np.asarray(f_small, dtype=np.int64)
    single = np.asarray(singleton_sca, dtype=np.int64)
    size = s0 + sk
    half = k // 2

    general = (size >= 2) & (fs >= 1)
    # f_S - 1 is clamped so the modulus never sees a negative argument outside
    # the general branch; those entries are overwritten below.
    center1 = fs - np.maximum(fs - 1, 0) % k + half
    c_low = center1 - half
    c_high = c_low + k - 1
    d_low = sk
    d_high = k * sk + (k - 1) * s0
    up = c_low < d_low
    down = ~up & (d_high < c_high)
    center2 = center1 + k * up - k * down
    masked = np.where(center2 == 1 + half, k, center2)

    shift = np.where(up, SHIFT_UP, np.where(down, SHIFT_DOWN, SHIFT_NONE))
    out = np.where(general, masked, 0)
    out = np.where((size == 1) & (fs >= 1), single, out)
    shift = np.where(general, shift, SHIFT_NONE)
    return out.astype(np.int64), shift.astype(np.int8)
