"""Run configuration: policy selections plus hardware parameters.

Every run is fully determined by (config, seed).  Timing and energy numbers
are configuration defaults chosen to be representative of a GDDR-like and a
DDR-like device; they are knobs, not measured ground truth, and experiments
should treat derived energy figures as relative.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .batching import Formation
from .dispatch import DispatchKind
from .dram import Arbitration, EnergyParams, TimingParams
from .memmap import AddressLayout, PagePolicy, Pool
from .sched import SchedPolicy

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class L1Config:
    size_bytes: int = 32768
    assoc: int = 4
    line_bytes: int = 128

    def validate(self):
        if self.line_bytes < 1 or self.line_bytes & (self.line_bytes - 1):
            raise ValueError("l1 line_bytes must be a power of two")
        if self.size_bytes < 0:
            raise ValueError("l1 size_bytes must be >= 0")
        if self.size_bytes:
            if self.assoc < 1:
                raise ValueError("l1 assoc must be >= 1")
            if self.size_bytes % (self.assoc * self.line_bytes):
                raise ValueError("l1 size must be a multiple of assoc*line")


@dataclass(frozen=True)
class PoolConfig:
    layout: AddressLayout
    timing: TimingParams
    energy: EnergyParams

    def validate(self, coloring: bool = False):
        self.layout.validate(coloring=coloring)
        self.timing.validate()
        self.energy.validate()


@dataclass(frozen=True)
class ReplyConfig:
    queue_capacity: int = 64
    drain_per_cycle: int = 2
    latency: int = 2

    def validate(self):
        if self.queue_capacity < 1:
            raise ValueError("reply queue_capacity must be >= 1")
        if self.drain_per_cycle < 1:
            raise ValueError("reply drain_per_cycle must be >= 1")
        if self.latency < 0:
            raise ValueError("reply latency must be >= 0")


def default_gddr() -> PoolConfig:
    return PoolConfig(
        layout=AddressLayout(byte_offset_bits=6, column_bits=7, channel_bits=1,
                             bank_bits=4, row_bits=14, page_offset_bits=12),
        timing=TimingParams(tRCD=12, tRP=12, tCAS=12, tRC=40, tBURST=4),
        energy=EnergyParams(e_activate=15.0, e_read=4.0, e_write=4.0,
                            p_background=0.05),
    )


def default_ddr() -> PoolConfig:
    return PoolConfig(
        layout=AddressLayout(byte_offset_bits=6, column_bits=7, channel_bits=0,
                             bank_bits=3, row_bits=14, page_offset_bits=12),
        timing=TimingParams(tRCD=11, tRP=11, tCAS=11, tRC=39, tBURST=4),
        energy=EnergyParams(e_activate=10.0, e_read=3.0, e_write=3.0,
                            p_background=0.03),
    )


@dataclass(frozen=True)
class HardwareConfig:
    num_sms: int = 8
    max_blocks_per_sm: int = 8
    max_threads_per_sm: int = 1536
    running_set_warps: int = 2
    sufficient_active_threshold: int = 1
    l1: L1Config = field(default_factory=L1Config)
    gddr: PoolConfig = field(default_factory=default_gddr)
    ddr: PoolConfig = field(default_factory=default_ddr)
    reply: ReplyConfig = field(default_factory=ReplyConfig)
    mc_queue_capacity: int = 64
    starvation_cap: int = 0
    bw_ratio: tuple[int, int] = (2, 1)
    cpu_row_fraction: float = 0.5
    cpu_pool: Pool = Pool.DDR
    request_window: int = 100
    check_invariants: bool = True

    def validate(self, coloring: bool = False):
        if self.num_sms < 1:
            raise ValueError("num_sms must be >= 1")
        if self.max_blocks_per_sm < 1:
            raise ValueError("max_blocks_per_sm must be >= 1")
        if self.max_threads_per_sm < 1:
            raise ValueError("max_threads_per_sm must be >= 1")
        if self.running_set_warps < 1:
            raise ValueError("running_set_warps must be >= 1")
        if self.sufficient_active_threshold < 1:
            raise ValueError("sufficient_active_threshold must be >= 1")
        if self.mc_queue_capacity < 1:
            raise ValueError("mc_queue_capacity must be >= 1")
        if self.bw_ratio[0] < 1 or self.bw_ratio[1] < 1:
            raise ValueError("bw_ratio parts must be >= 1")
        if not 0.0 < self.cpu_row_fraction < 1.0:
            raise ValueError("cpu_row_fraction must lie strictly in (0, 1)")
        self.l1.validate()
        self.gddr.validate(coloring=coloring)
        self.ddr.validate(coloring=False)
        self.reply.validate()
        if self.gddr.layout.page_offset_bits != self.ddr.layout.page_offset_bits:
            raise ValueError("pools must share one page size")


@dataclass(frozen=True)
class RunConfig:
    workload: str | dict
    horizon: int = 1_000_000
    seed: int = 0
    dispatch: DispatchKind = DispatchKind.SERIAL
    allocator: PagePolicy = PagePolicy.COLORING
    scheduler: SchedPolicy = SchedPolicy.TBAS_E
    arbitration: Arbitration = Arbitration.FR_FCFS
    stride: int | None = None
    search_cap: int = 64
    fallback_threshold: float = 0.5
    random_dispatch_seed: int | None = None
    hardware: HardwareConfig = field(default_factory=HardwareConfig)

    @property
    def page_size(self) -> int:
        return self.hardware.gddr.layout.page_size

    def validate(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1 when given")
        coloring = self.allocator in (PagePolicy.COLORING, PagePolicy.COLORING_HETERO)
        self.hardware.validate(coloring=coloring)


def _reject_unknown(obj: dict, allowed, where: str):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValueError(f"unknown field(s) in {where}: {sorted(unknown)}")


def _layout_from_dict(obj: dict, where: str) -> AddressLayout:
    fields_ = {"byte_offset_bits", "column_bits", "channel_bits", "bank_bits",
               "row_bits", "page_offset_bits"}
    _reject_unknown(obj, fields_, where)
    missing = fields_ - set(obj)
    if missing:
        raise ValueError(f"{where}: missing field(s) {sorted(missing)}")
    return AddressLayout(**obj)


def _timing_from_dict(obj: dict, base: TimingParams, where: str) -> TimingParams:
    allowed = {"tRCD", "tRP", "tCAS", "tRC", "tBURST", "clock_period"}
    _reject_unknown(obj, allowed, where)
    vals = {k: getattr(base, k) for k in allowed}
    vals.update(obj)
    return TimingParams(**vals)


def _energy_from_dict(obj: dict, base: EnergyParams, where: str) -> EnergyParams:
    allowed = {"e_activate", "e_read", "e_write", "p_background"}
    _reject_unknown(obj, allowed, where)
    vals = {k: getattr(base, k) for k in allowed}
    vals.update(obj)
    return EnergyParams(**vals)


def _pool_from_dict(obj: dict, base: PoolConfig, where: str) -> PoolConfig:
    _reject_unknown(obj, {"layout", "timing", "energy"}, where)
    layout = base.layout
    if "layout" in obj:
        layout = _layout_from_dict(obj["layout"], f"{where}.layout")
    timing = _timing_from_dict(obj.get("timing", {}), base.timing, f"{where}.timing")
    energy = _energy_from_dict(obj.get("energy", {}), base.energy, f"{where}.energy")
    return PoolConfig(layout=layout, timing=timing, energy=energy)


def hardware_from_dict(obj: dict) -> HardwareConfig:
    base = HardwareConfig()
    allowed = {"num_sms", "max_blocks_per_sm", "max_threads_per_sm",
               "running_set_warps", "sufficient_active_threshold", "l1",
               "gddr", "ddr", "reply", "mc_queue_capacity", "starvation_cap",
               "bw_ratio", "cpu_row_fraction", "cpu_pool", "request_window",
               "check_invariants"}
    _reject_unknown(obj, allowed, "hardware")
    kw: dict = {}
    for k in ("num_sms", "max_blocks_per_sm", "max_threads_per_sm",
              "running_set_warps", "sufficient_active_threshold",
              "mc_queue_capacity", "starvation_cap", "cpu_row_fraction",
              "request_window", "check_invariants"):
        if k in obj:
            kw[k] = obj[k]
    if "l1" in obj:
        _reject_unknown(obj["l1"], {"size_bytes", "assoc", "line_bytes"}, "l1")
        l1 = {"size_bytes": base.l1.size_bytes, "assoc": base.l1.assoc,
              "line_bytes": base.l1.line_bytes}
        l1.update(obj["l1"])
        kw["l1"] = L1Config(**l1)
    if "gddr" in obj:
        kw["gddr"] = _pool_from_dict(obj["gddr"], base.gddr, "gddr")
    if "ddr" in obj:
        kw["ddr"] = _pool_from_dict(obj["ddr"], base.ddr, "ddr")
    if "reply" in obj:
        _reject_unknown(obj["reply"],
                        {"queue_capacity", "drain_per_cycle", "latency"}, "reply")
        rep = {"queue_capacity": base.reply.queue_capacity,
               "drain_per_cycle": base.reply.drain_per_cycle,
               "latency": base.reply.latency}
        rep.update(obj["reply"])
        kw["reply"] = ReplyConfig(**rep)
    if "bw_ratio" in obj:
        kw["bw_ratio"] = tuple(obj["bw_ratio"])
    if "cpu_pool" in obj:
        kw["cpu_pool"] = Pool(obj["cpu_pool"])
    return HardwareConfig(**kw)


def config_from_dict(obj: dict, base_dir: str | None = None) -> RunConfig:
    allowed = {"schema_version", "workload", "horizon", "seed", "dispatch",
               "allocator", "scheduler", "arbitration", "stride", "search_cap",
               "fallback_threshold", "random_dispatch_seed", "hardware"}
    _reject_unknown(obj, allowed, "config")
    version = obj.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema_version {version}")
    if "workload" not in obj:
        raise ValueError("config requires a workload")
    workload = obj["workload"]
    if isinstance(workload, str) and base_dir is not None \
            and not os.path.isabs(workload):
        workload = os.path.join(base_dir, workload)
    kw: dict = {"workload": workload}
    for k in ("horizon", "seed", "stride", "search_cap", "fallback_threshold",
              "random_dispatch_seed"):
        if k in obj:
            kw[k] = obj[k]
    try:
        if "dispatch" in obj:
            kw["dispatch"] = DispatchKind(obj["dispatch"])
        if "allocator" in obj:
            kw["allocator"] = PagePolicy(obj["allocator"])
        if "scheduler" in obj:
            kw["scheduler"] = SchedPolicy(obj["scheduler"])
        if "arbitration" in obj:
            kw["arbitration"] = Arbitration(obj["arbitration"])
    except ValueError as e:
        raise ValueError(f"config: {e}")
    if "hardware" in obj:
        kw["hardware"] = hardware_from_dict(obj["hardware"])
    cfg = RunConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        obj = json.load(f)
    return config_from_dict(obj, base_dir=os.path.dirname(os.path.abspath(path)))


def policies_dict(cfg: RunConfig) -> dict:
    return {
        "dispatch": cfg.dispatch.value,
        "allocator": cfg.allocator.value,
        "scheduler": cfg.scheduler.value,
        "arbitration": cfg.arbitration.value,
    }
