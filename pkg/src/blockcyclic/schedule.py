"""Index algebra for the block-cyclic training calendar.

All indices are 1-based: cycles ``c`` in ``1..C``, blocks ``m`` in ``1..M``
and within-block iterations ``k`` in ``1..K`` with ``K = E * I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator


class ScheduleError(ValueError):
    """Raised for out-of-range coordinates, iterations or bad plans."""


@dataclass(frozen=True)
class CyclePlan:
    C: int
    M: int
    E: int
    I: int

    def __post_init__(self):
        for name in ("C", "M", "E", "I"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ScheduleError(f"{name} must be a positive integer, got {value!r}")

    @property
    def K(self) -> int:
        return self.E * self.I

    @property
    def T(self) -> int:
        return self.C * self.M * self.K

    @property
    def rounds(self) -> int:
        return self.T // self.I


@dataclass(frozen=True)
class ScheduleCoordinate:
    c: int
    m: int
    k: int


def _check_coordinate(coord: ScheduleCoordinate, plan: CyclePlan) -> None:
    if not (1 <= coord.c <= plan.C and 1 <= coord.m <= plan.M and 1 <= coord.k <= plan.K):
        raise ScheduleError(f"invalid coordinate {coord} for plan {plan}")


def _check_iteration(t: int, plan: CyclePlan) -> None:
    if not 1 <= t <= plan.T:
        raise ScheduleError(f"invalid iteration t={t}; expected 1..{plan.T}")


def flat_index(coord: ScheduleCoordinate, plan: CyclePlan) -> int:
    _check_coordinate(coord, plan)
    K = plan.K
    return (coord.c - 1) * plan.M * K + (coord.m - 1) * K + coord.k


def coordinate_of(t: int, plan: CyclePlan) -> ScheduleCoordinate:
    _check_iteration(t, plan)
    K = plan.K
    cycle, rest = divmod(t - 1, plan.M * K)
    block, k = divmod(rest, K)
    return ScheduleCoordinate(cycle + 1, block + 1, k + 1)


def is_communication_iteration(t: int, plan: CyclePlan) -> bool:
    _check_iteration(t, plan)
    return t % plan.I == 0


def next_round_new_block(t: int, plan: CyclePlan) -> bool:
    """True when the round following communication iteration ``t`` starts a new block."""
    if not is_communication_iteration(t, plan):
        raise ScheduleError(f"t={t} is not a communication iteration (I={plan.I})")
    if t >= plan.T:
        raise ScheduleError(f"t={t} is the final iteration; there is no next round")
    here, there = coordinate_of(t, plan), coordinate_of(t + 1, plan)
    return here.m != there.m or here.c != there.c


@dataclass(frozen=True)
class RoundInfo:
    """One communication round: local steps ``t - I + 1 .. t`` then aggregation at ``t``."""

    index: int  # 1-based round number
    t: int
    c: int
    m: int
    round_in_block: int  # 1..E within the current block visit
    new_block_next: bool


def rounds(plan: CyclePlan) -> Iterator[RoundInfo]:
    """All communication rounds in order (arithmetic form of the index maps above)."""
    E, M = plan.E, plan.M
    r = 0
    for c in range(1, plan.C + 1):
        for m in range(1, M + 1):
            for e in range(1, E + 1):
                r += 1
                last = e == E and not (m == M and c == plan.C)
                yield RoundInfo(r, r * plan.I, c, m, e, last)
