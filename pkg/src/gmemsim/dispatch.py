"""Thread block dispatch: interleaved baseline vs. serial per-SM queues.

Serial dispatch gives every SM a contiguous [head, tail) range of block ids,
computed once before launch so that batch boundaries are respected and the
maximum per-SM block load is minimal.  Each SM then pops ids locally and never
waits on a central dispatcher.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .batching import BatchPlan


class DispatchKind(str, Enum):
    INTERLEAVED = "interleaved"
    SERIAL = "serial"


@dataclass
class DispatchQueue:
    """Head/tail pair over the global block-id sequence; popping increments
    head until it meets tail."""

    sm_id: int
    head: int
    tail: int

    def next_block(self) -> int | None:
        if self.head >= self.tail:
            return None
        out = self.head
        self.head += 1
        return out

    @property
    def exhausted(self) -> bool:
        return self.head >= self.tail


def _batch_sizes(total_blocks: int, plan: BatchPlan | None) -> list[int]:
    if plan is None:
        return [1] * total_blocks
    sizes = [len(tb.block_ids) for tb in plan.batches]
    if sum(sizes) != total_blocks:
        raise ValueError("plan does not cover the block range")
    return sizes


def _fits(sizes: list[int], num_sms: int, cap: int) -> bool:
    runs, load = 1, 0
    for s in sizes:
        if load + s <= cap:
            load += s
        else:
            runs += 1
            load = s
            if runs > num_sms:
                return False
    return True


def partition_blocks(total_blocks: int, num_sms: int,
                     plan: BatchPlan | None = None) -> list[tuple[int, int]]:
    """Contiguous per-SM [head, tail) block ranges balanced at batch granularity.

    The split minimizes the maximum per-SM block count without cutting a batch
    in half; ties resolve by filling lower SM ids first.  If a single batch is
    larger than an even share, batch boundaries cannot balance the load and
    the split falls back to an even block-granular partition.
    """
    if num_sms < 1:
        raise ValueError("num_sms must be >= 1")
    if total_blocks == 0:
        return [(0, 0)] * num_sms
    sizes = _batch_sizes(total_blocks, plan)
    even_share = -(-total_blocks // num_sms)
    if max(sizes) > even_share:
        ranges = []
        start = 0
        for sm in range(num_sms):
            take = total_blocks // num_sms + (1 if sm < total_blocks % num_sms else 0)
            ranges.append((start, start + take))
            start += take
        return ranges
    lo, hi = max(max(sizes), even_share), total_blocks
    while lo < hi:
        mid = (lo + hi) // 2
        if _fits(sizes, num_sms, mid):
            hi = mid
        else:
            lo = mid + 1
    cap = lo
    ranges = []
    boundary, i = 0, 0
    for sm in range(num_sms):
        load = 0
        begin = boundary
        while i < len(sizes) and load + sizes[i] <= cap:
            load += sizes[i]
            boundary += sizes[i]
            i += 1
        ranges.append((begin, boundary))
    if i != len(sizes):
        raise AssertionError("batch partition failed to place every batch")
    return ranges


def make_queues(ranges: list[tuple[int, int]]) -> list[DispatchQueue]:
    return [DispatchQueue(sm, head, tail) for sm, (head, tail) in enumerate(ranges)]


class InterleavedDispatcher:
    """Baseline dispatcher: a global sequential id counter handed to whichever
    SM reports an idle slot, lowest SM id first on ties.  A seeded mode
    shuffles the per-cycle idle order instead, standing in for hardware that
    picks SMs randomly."""

    def __init__(self, total_blocks: int, seed: int | None = None):
        self.total_blocks = total_blocks
        self.next_id = 0
        self._rng = random.Random(seed) if seed is not None else None

    def order_idle_sms(self, idle_sms: list[int]) -> list[int]:
        idle = sorted(idle_sms)
        if self._rng is not None:
            self._rng.shuffle(idle)
        return idle

    def next_block(self) -> int | None:
        if self.next_id >= self.total_blocks:
            return None
        out = self.next_id
        self.next_id += 1
        return out

    @property
    def exhausted(self) -> bool:
        return self.next_id >= self.total_blocks
