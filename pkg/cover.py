#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Intervals of binary assignments in {0,1}^(T*m_u), stage-major (entry (t, j)
at index t*m_u + j), and covers of that set by disjoint intervals.

An interval is stored as a pair of bitsets: `mask` marks the fixed entries and
`values` holds their values. Bit k is entry k.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

if TYPE_CHECKING:
    from subproblem import DualSolution, InfeasibilityCertificate


class IntervalError(ValueError):
    pass


def _bits(a: Sequence[int]) -> int:
    out = 0
    for k, bit in enumerate(a):
        if bit not in (0, 1):
            raise IntervalError(f"entry {k} is {bit}, expected 0 or 1")
        out |= int(bit) << k
    return out


@dataclass(frozen=True)
class Interval:
    n: int
    mask: int = 0
    values: int = 0

    @classmethod
    def hypercube(cls, n: int) -> "Interval":
        return cls(n)

    @classmethod
    def singleton(cls, a: Sequence[int]) -> "Interval":
        a = [int(round(v)) for v in a]
        return cls(len(a), (1 << len(a)) - 1, _bits(a))

    @classmethod
    def from_bounds(cls, lower: Sequence[int], upper: Sequence[int]) -> "Interval":
        if len(lower) != len(upper):
            raise IntervalError("bound vectors differ in length")
        lo, up = _bits(lower), _bits(upper)
        if lo & ~up:
            raise IntervalError("lower bound exceeds upper bound")
        mask = ~(lo ^ up) & ((1 << len(lower)) - 1)
        return cls(len(lower), mask, lo)

    @property
    def lower(self) -> np.ndarray:
        return np.array([(self.values >> k) & 1 for k in range(self.n)], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        up = self.values | (~self.mask & ((1 << self.n) - 1))
        return np.array([(up >> k) & 1 for k in range(self.n)], dtype=float)

    @property
    def free_count(self) -> int:
        return self.n - self.mask.bit_count()

    @property
    def cardinality(self) -> int:
        return 1 << self.free_count

    def is_fixed(self, k: int) -> bool:
        return bool((self.mask >> k) & 1)

    def contains(self, a: Sequence[int]) -> bool:
        if len(a) != self.n:
            raise IntervalError(f"assignment has length {len(a)}, expected {self.n}")
        return ((_bits([int(round(v)) for v in a]) ^ self.values) & self.mask) == 0

    def intersects(self, other: "Interval") -> bool:
        return ((self.values ^ other.values) & self.mask & other.mask) == 0

    def fix(self, k: int, value: int) -> "Interval":
        if self.is_fixed(k):
            raise IntervalError(f"entry {k} already fixed")
        return Interval(self.n, self.mask | (1 << k), self.values | (int(value) << k))

    def agrees_with_first(self, v0: Sequence[int]) -> bool:
        """True iff v0 lies in the stage-0 block of the interval."""
        m = len(v0)
        low = (1 << m) - 1
        return ((_bits([int(round(v)) for v in v0]) ^ self.values) & self.mask & low) == 0

    def shifted(self, m_u: int) -> "Interval":
        """Drop stage 0, move every stage back by one, leave the last stage free."""
        return Interval(self.n, self.mask >> m_u, self.values >> m_u)

    def stage_bounds(self, T: int, m_u: int) -> Tuple[np.ndarray, np.ndarray]:
        """(lower, upper) reshaped to T x m_u."""
        return self.lower.reshape(T, m_u), self.upper.reshape(T, m_u)

    def format(self) -> str:
        lo = "".join(str(int(v)) for v in self.lower)
        up = "".join(str(int(v)) for v in self.upper)
        return f"{lo}|{up}"

    @classmethod
    def parse(cls, line: str) -> "Interval":
        lo, up = line.strip().split("|")
        return cls.from_bounds([int(c) for c in lo], [int(c) for c in up])


def contains(V: Interval, a: Sequence[int]) -> bool:
    return V.contains(a)


def branch_split(V: Interval, t: int, j: int, m_u: int) -> Tuple[Interval, Interval]:
    """Children fixing entry (t, j) to 0 and to 1."""
    k = t * m_u + j
    if k >= V.n:
        raise IntervalError(f"entry ({t}, {j}) out of range for length {V.n}")
    return V.fix(k, 0), V.fix(k, 1)


class NodeStatus(Enum):
    SOLVED_OPTIMAL = "solved-optimal"
    CUTOFF = "cutoff"
    INFEASIBLE = "infeasible"
    INHERITED_BOUND = "inherited-bound"


@dataclass
class NodeRecord:
    interval: Interval
    lower_bound: float = 0.0
    dual: Union["DualSolution", "InfeasibilityCertificate", None] = None
    status: NodeStatus = NodeStatus.INHERITED_BOUND
    created: int = 0

    @property
    def is_certified_infeasible(self) -> bool:
        return self.status == NodeStatus.INFEASIBLE


@dataclass
class Cover:
    n: int
    records: List[NodeRecord] = field(default_factory=list)

    @classmethod
    def trivial(cls, n: int) -> "Cover":
        return cls(n, [NodeRecord(Interval.hypercube(n))])

    @classmethod
    def from_intervals(cls, intervals: Iterable[Interval]) -> "Cover":
        records = [NodeRecord(V, created=i) for i, V in enumerate(intervals)]
        n = records[0].interval.n if records else 0
        return cls(n, records)

    @property
    def intervals(self) -> List[Interval]:
        return [r.interval for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def format(self) -> str:
        return "\n".join(V.format() for V in self.intervals)


def validate_cover(c: Union[Cover, Sequence[Interval]], T: int, m_u: int) -> bool:
    intervals = c.intervals if isinstance(c, Cover) else list(c)
    n = T * m_u
    if any(V.n != n for V in intervals):
        return False
    if sum(V.cardinality for V in intervals) != 1 << n:
        return False
    for i, V in enumerate(intervals):
        for W in intervals[i + 1 :]:
            if V.intersects(W):
                return False
    return True


def shift_cover(final: Cover, v0: Sequence[int], m_u: int) -> Cover:
    """Keep the intervals that agree with the applied action and shift them."""
    if len(v0) != m_u:
        raise IntervalError(f"action has length {len(v0)}, expected {m_u}")
    kept = [r for r in final.records if r.interval.agrees_with_first(v0)]
    records = [
        replace(r, interval=r.interval.shifted(m_u), created=i)
        for i, r in enumerate(kept)
    ]
    return Cover(final.n, records)


def node_for(cover: Cover, a: Sequence[int]) -> Optional[NodeRecord]:
    for r in cover.records:
        if r.interval.contains(a):
            return r
    return None


def dump_cover(cover: Cover, path: str) -> None:
    """One "lower|upper" line per interval, frontier order."""
    Path(path).write_text(cover.format() + "\n")
