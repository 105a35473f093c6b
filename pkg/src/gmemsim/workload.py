"""Declarative kernel and CPU-traffic descriptions and the access streams they generate.

A kernel is described by its thread hierarchy (2D grid of 2D blocks) plus one
thread-data mapping per data matrix.  No instructions are modeled; the mapping
is enough to reconstruct every memory address a thread touches.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, fields
from enum import Enum

WORKLOAD_SCHEMA_VERSION = 1


class MappingKind(str, Enum):
    """How a matrix's elements are distributed over threads.

    CLUSTERED: each block's threads cover one contiguous element range, so
    consecutive blocks walk consecutive address ranges (1D record kernels).
    INTERLEAVED: thread (tx, ty) of block (bx, by) owns the element at global
    coordinates (bx*bdim.x + tx, by*bdim.y + ty), so blocks that are neighbors
    along x interleave within the same matrix rows (2D stencil/grid kernels).
    """

    CLUSTERED = "clustered"
    INTERLEAVED = "interleaved"


@dataclass(frozen=True)
class MatrixMapping:
    base_addr: int
    element_size: int
    row_len: int
    mapping_kind: MappingKind
    accesses_per_thread: int = 1
    read_fraction: float = 1.0

    def validate(self):
        if self.base_addr < 0:
            raise ValueError("matrix base_addr must be >= 0")
        if self.element_size < 1:
            raise ValueError("matrix element_size must be >= 1")
        if self.row_len < 1:
            raise ValueError("matrix row_len must be >= 1")
        if self.accesses_per_thread < 0:
            raise ValueError("accesses_per_thread must be >= 0")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class KernelSpec:
    """Thread hierarchy plus per-matrix thread-data mappings.

    Only 1D and 2D grids/blocks are allowed; a z extent other than 1 is
    rejected by the loader.  compute_gap is the number of non-memory cycles a
    warp spends between two successive memory instructions.
    """

    name: str
    grid_dim: tuple[int, int]
    block_dim: tuple[int, int]
    warp_size: int
    matrices: tuple[MatrixMapping, ...]
    compute_gap: int = 0

    @property
    def total_blocks(self) -> int:
        return self.grid_dim[0] * self.grid_dim[1]

    @property
    def threads_per_block(self) -> int:
        return self.block_dim[0] * self.block_dim[1]

    @property
    def warps_per_block(self) -> int:
        return -(-self.threads_per_block // self.warp_size)

    @property
    def total_threads(self) -> int:
        return self.total_blocks * self.threads_per_block

    def validate(self):
        if self.grid_dim[0] < 1 or self.grid_dim[1] < 1:
            raise ValueError("grid_dim extents must be >= 1")
        if self.block_dim[0] < 1 or self.block_dim[1] < 1:
            raise ValueError("block_dim extents must be >= 1")
        if self.warp_size < 1:
            raise ValueError("warp_size must be >= 1")
        if self.compute_gap < 0:
            raise ValueError("compute_gap must be >= 0")
        for m in self.matrices:
            m.validate()
            if m.mapping_kind is MappingKind.INTERLEAVED:
                width = self.grid_dim[0] * self.block_dim[0]
                if m.row_len != width:
                    raise ValueError(
                        f"interleaved matrix row_len ({m.row_len}) must equal the "
                        f"global thread width ({width}); elements would fall "
                        "outside the matrix"
                    )


@dataclass(frozen=True)
class CpuTrafficSpec:
    """Synthetic CPU request stream: rate is requests per 1000 cycles."""

    request_rate: float
    address_region: tuple[int, int]
    rw_ratio: float = 1.0
    burstiness: int = 1
    seed: int = 0

    def validate(self):
        if self.request_rate < 0:
            raise ValueError("cpu request_rate must be >= 0")
        lo, hi = self.address_region
        if hi <= lo:
            raise ValueError("cpu address_region must be non-empty")
        if not 0.0 <= self.rw_ratio <= 1.0:
            raise ValueError("cpu rw_ratio must lie in [0, 1]")
        if self.burstiness < 1:
            raise ValueError("cpu burstiness must be >= 1")


@dataclass(frozen=True)
class AccessEvent:
    """One lane's memory access.  Lanes of the same warp instruction share an
    issue_slot; slots strictly increase along a warp's stream."""

    virtual_addr: int
    is_read: bool
    warp_id: int
    block_id: tuple[int, int, int]
    issue_slot: int
    batch_id: int = -1


@dataclass(frozen=True)
class CpuRequest:
    cycle: int
    virtual_addr: int
    is_read: bool


def enumerate_blocks(spec: KernelSpec) -> list[tuple[int, int, int]]:
    """All block ids in dispatch order: row-major with x fastest."""
    gx, gy = spec.grid_dim
    return [(x, y, 0) for y in range(gy) for x in range(gx)]


def block_linear(spec: KernelSpec, block_id: tuple[int, int, int]) -> int:
    return block_id[1] * spec.grid_dim[0] + block_id[0]


def _is_read(ordinal: int, read_fraction: float) -> bool:
    # Spread reads evenly over the access ordinals; integer math keeps the
    # pattern exact and platform independent.
    num = round(read_fraction * 1000)
    return (ordinal + 1) * num // 1000 > ordinal * num // 1000


def owned_element(spec: KernelSpec, m: MatrixMapping, block_id, tx: int, ty: int) -> int:
    """Linear index of the matrix element owned by one thread."""
    bx, by, _ = block_id
    if m.mapping_kind is MappingKind.CLUSTERED:
        blin = by * spec.grid_dim[0] + bx
        tlin = ty * spec.block_dim[0] + tx
        return blin * spec.threads_per_block + tlin
    gx = bx * spec.block_dim[0] + tx
    gy = by * spec.block_dim[1] + ty
    return gy * m.row_len + gx


def gen_block_trace(spec: KernelSpec, block_id) -> dict[int, list[AccessEvent]]:
    """Per-warp access streams for one block.

    Each thread owns exactly one element per matrix (see MappingKind) and
    accesses it accesses_per_thread times.  A warp's slot k holds one event
    per active lane; matrices contribute their slots in declaration order.
    Pure: identical output for identical inputs.
    """
    bx, by, _ = block_id
    gx, gy = spec.grid_dim
    if not (0 <= bx < gx and 0 <= by < gy):
        raise ValueError(f"block id {block_id} outside grid {spec.grid_dim}")
    blin = by * gx + bx
    bdx, bdy = spec.block_dim
    tpb = spec.threads_per_block
    warp_base = blin * spec.warps_per_block

    out: dict[int, list[AccessEvent]] = {
        warp_base + w: [] for w in range(spec.warps_per_block)
    }
    slot_offset = 0
    for m in spec.matrices:
        for a in range(m.accesses_per_thread):
            slot = slot_offset + a
            for tlin in range(tpb):
                tx, ty = tlin % bdx, tlin // bdx
                elem = owned_element(spec, m, block_id, tx, ty)
                ev = AccessEvent(
                    virtual_addr=m.base_addr + elem * m.element_size,
                    is_read=_is_read(a, m.read_fraction),
                    warp_id=warp_base + tlin // spec.warp_size,
                    block_id=(bx, by, 0),
                    issue_slot=slot,
                )
                out[ev.warp_id].append(ev)
        slot_offset += m.accesses_per_thread
    return out


def gen_cpu_traffic(spec: CpuTrafficSpec, horizon: int) -> list[CpuRequest]:
    """Reproducible pseudo-random CPU request stream over [0, horizon).

    A burst of `burstiness` back-to-back requests starts at any free cycle
    with probability rate/(1000*burstiness), giving a mean of rate/1000
    requests per cycle.  Addresses are uniform over the region at 64-byte
    granularity.  Output is a pure function of (spec, horizon).
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    spec.validate()
    if spec.request_rate == 0:
        return []
    rng = random.Random(spec.seed)
    gran = 64
    lo, hi = spec.address_region
    slots = max(1, (hi - lo) // gran)
    p_start = spec.request_rate / (1000.0 * spec.burstiness)
    out: list[CpuRequest] = []
    cycle = 0
    while cycle < horizon:
        if rng.random() < p_start:
            for k in range(spec.burstiness):
                if cycle + k >= horizon:
                    break
                addr = lo + rng.randrange(slots) * gran
                out.append(
                    CpuRequest(cycle + k, addr, rng.random() < spec.rw_ratio)
                )
            cycle += spec.burstiness
        else:
            cycle += 1
    return out


def _reject_unknown(obj: dict, allowed, where: str):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValueError(f"unknown field(s) in {where}: {sorted(unknown)}")


def _dim2(raw, where: str) -> tuple[int, int]:
    if not isinstance(raw, (list, tuple)) or len(raw) not in (1, 2, 3):
        raise ValueError(f"{where} must be a 1D or 2D extent list")
    if len(raw) == 3 and raw[2] != 1:
        raise ValueError(f"{where}: 3D shapes are not supported")
    vals = list(raw[:2]) + [1] * (2 - len(raw[:2]))
    if not all(isinstance(v, int) and v >= 1 for v in vals):
        raise ValueError(f"{where} extents must be integers >= 1")
    return (vals[0], vals[1])


def kernel_from_dict(obj: dict) -> KernelSpec:
    _reject_unknown(
        obj,
        {"name", "grid_dim", "block_dim", "warp_size", "matrices", "compute_gap"},
        "kernel",
    )
    mats = []
    for i, raw in enumerate(obj.get("matrices", [])):
        _reject_unknown(
            raw,
            {"base_addr", "element_size", "row_len", "mapping",
             "accesses_per_thread", "read_fraction"},
            f"matrices[{i}]",
        )
        try:
            kind = MappingKind(raw["mapping"])
        except ValueError:
            raise ValueError(f"matrices[{i}]: unknown mapping {raw['mapping']!r}")
        mats.append(MatrixMapping(
            base_addr=raw["base_addr"],
            element_size=raw["element_size"],
            row_len=raw["row_len"],
            mapping_kind=kind,
            accesses_per_thread=raw.get("accesses_per_thread", 1),
            read_fraction=raw.get("read_fraction", 1.0),
        ))
    spec = KernelSpec(
        name=obj.get("name", "kernel"),
        grid_dim=_dim2(obj["grid_dim"], "grid_dim"),
        block_dim=_dim2(obj["block_dim"], "block_dim"),
        warp_size=obj["warp_size"],
        matrices=tuple(mats),
        compute_gap=obj.get("compute_gap", 0),
    )
    spec.validate()
    return spec


def cpu_traffic_from_dict(obj: dict) -> CpuTrafficSpec:
    _reject_unknown(
        obj,
        {"request_rate", "address_region", "rw_ratio", "burstiness", "seed"},
        "cpu_traffic",
    )
    spec = CpuTrafficSpec(
        request_rate=obj["request_rate"],
        address_region=tuple(obj["address_region"]),
        rw_ratio=obj.get("rw_ratio", 1.0),
        burstiness=obj.get("burstiness", 1),
        seed=obj.get("seed", 0),
    )
    spec.validate()
    return spec


def load_workload(source) -> tuple[KernelSpec, CpuTrafficSpec | None]:
    """Parse a workload description from a path or a pre-parsed dict."""
    if isinstance(source, dict):
        obj = source
    else:
        with open(source) as f:
            obj = json.load(f)
    _reject_unknown(obj, {"schema_version", "kernel", "cpu_traffic"}, "workload")
    version = obj.get("schema_version", WORKLOAD_SCHEMA_VERSION)
    if version != WORKLOAD_SCHEMA_VERSION:
        raise ValueError(f"unsupported workload schema_version {version}")
    kernel = kernel_from_dict(obj["kernel"])
    cpu = None
    if obj.get("cpu_traffic") is not None:
        cpu = cpu_traffic_from_dict(obj["cpu_traffic"])
    return kernel, cpu
