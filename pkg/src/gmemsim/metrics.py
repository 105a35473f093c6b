"""Run metrics: bank-level parallelism, row-buffer hit rate, locality,
latency, stalls, and a decomposed DRAM energy estimate.

BLP is the mean, over cycles during which at least one request is in service,
of the number of banks with a request in service; a request occupies its bank
from t_issue to t_complete.  RBHR is row hits over total accesses.  Energy is
activate + read/write event energy plus background power integrated over the
run, so for a fixed access mix every extra row hit strictly removes one
activate's worth of energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .dram import EnergyParams, MemoryRequest

REPORT_SCHEMA_VERSION = 1


@dataclass
class MetricsReport:
    schema_version: int = REPORT_SCHEMA_VERSION
    workload: str = ""
    policies: dict = field(default_factory=dict)
    seed: int = 0
    cycles: int = 0
    truncated: bool = False
    warp_instructions: int = 0
    ipc_proxy: float = 0.0
    total_accesses: int = 0
    reads: int = 0
    writes: int = 0
    row_hits: int = 0
    activates: int = 0
    rbhr: float = 0.0
    blp: float = 0.0
    mean_access_delay: float = 0.0
    local_accesses: int = 0
    remote_accesses: int = 0
    local_ratio: float = 0.0
    reply_stalls: int = 0
    issue_backpressure: int = 0
    peak_window_requests: int = 0
    request_window: int = 100
    gpu_requests: int = 0
    cpu_requests: int = 0
    gpu_mean_delay: float = 0.0
    cpu_mean_delay: float = 0.0
    l1_hits: int = 0
    l1_misses: int = 0
    mpki_proxy: float = 0.0
    spilled_pages: int = 0
    pool_pages: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    degenerate: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        return MetricsReport(**json.loads(text))

    def flat(self) -> dict:
        """Single-level dict for CSV rows."""
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    out[f"{k}_{kk}"] = vv
            else:
                out[k] = v
        return out


def _merged_length(intervals: list[tuple[int, int]]) -> int:
    total, cur_lo, cur_hi = 0, None, None
    for lo, hi in sorted(intervals):
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def bank_parallelism(requests: list[MemoryRequest]) -> float:
    """Mean busy-bank count over cycles with any request in service."""
    per_bank: dict[tuple, list[tuple[int, int]]] = {}
    for r in requests:
        if r.t_issue < 0:
            continue
        per_bank.setdefault((r.pool, r.channel, r.bank), []).append(
            (r.t_issue, r.t_complete))
    if not per_bank:
        return 0.0
    busy_sum = sum(_merged_length(iv) for iv in per_bank.values())
    any_busy = _merged_length([iv for ivs in per_bank.values() for iv in ivs])
    return busy_sum / any_busy if any_busy else 0.0


def row_hit_rate(requests: list[MemoryRequest]) -> float:
    done = [r for r in requests if r.t_complete >= 0]
    if not done:
        return 0.0
    return sum(1 for r in done if r.was_hit) / len(done)


def mean_delay(requests: list[MemoryRequest], agent: str | None = None) -> float:
    done = [r for r in requests
            if r.t_complete >= 0 and (agent is None or r.agent == agent)]
    if not done:
        return 0.0
    return sum(r.t_complete - r.t_enqueue for r in done) / len(done)


def peak_request_window(requests: list[MemoryRequest], window: int = 100) -> int:
    """Largest number of requests enqueued inside any aligned window."""
    counts: dict[int, int] = {}
    for r in requests:
        counts[r.t_enqueue // window] = counts.get(r.t_enqueue // window, 0) + 1
    return max(counts.values(), default=0)


def compute_metrics(requests: list[MemoryRequest], page_table,
                    window: int = 100) -> dict:
    """DRAM-side statistics derived purely from the request log."""
    done = [r for r in requests if r.t_complete >= 0]
    hits = sum(1 for r in done if r.was_hit)
    reads = sum(1 for r in done if r.is_read)
    gpu = [r for r in done if r.agent == "gpu"]
    local = sum(
        1 for r in gpu
        if page_table.is_local(r.sm_id, _pool_of(r), r.channel, r.bank)
    )
    return {
        "total_accesses": len(done),
        "reads": reads,
        "writes": len(done) - reads,
        "row_hits": hits,
        "activates": len(done) - hits,
        "rbhr": hits / len(done) if done else 0.0,
        "blp": bank_parallelism(done),
        "mean_access_delay": mean_delay(done),
        "local_accesses": local,
        "remote_accesses": len(gpu) - local,
        "local_ratio": local / len(gpu) if gpu else 0.0,
        "gpu_requests": len(gpu),
        "cpu_requests": len(done) - len(gpu),
        "gpu_mean_delay": mean_delay(done, "gpu"),
        "cpu_mean_delay": mean_delay(done, "cpu"),
        "peak_window_requests": peak_request_window(done, window),
    }


def _pool_of(req: MemoryRequest):
    from .memmap import Pool

    return Pool(req.pool)


def energy_total(counters: dict, params: EnergyParams, runtime_cycles: int,
                 num_banks: int) -> dict:
    """Decomposed energy for one pool from its summed bank counters."""
    activate = counters.get("activates", 0) * params.e_activate
    rw = (counters.get("reads", 0) * params.e_read
          + counters.get("writes", 0) * params.e_write)
    background = num_banks * params.p_background * runtime_cycles
    return {
        "activate": activate,
        "read_write": rw,
        "background": background,
        "total": activate + rw + background,
    }
