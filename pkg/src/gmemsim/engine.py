"""Deterministic cycle loop binding dispatch, SMs, DRAM, and the reply network.

Each cycle runs a fixed phase order: (1) dispatch fills idle SM slots, (2)
every SM's scheduler issues at most one warp instruction, with L1 lookup and
back-pressure aware request injection, (3) pending CPU traffic enters the
controller queues, (4) each channel's controller picks and issues one request,
(5) bank completions traverse the reply network subject to its drain
bandwidth, (6) counters update.  Given one config and seed the whole run is
bit-reproducible.

Cycles in which provably nothing can change (no issuable warp, no due
completion or delivery, no pending arrival) are skipped in one jump; the jump
never crosses an event boundary, so per-cycle state along the executed prefix
is identical to the unskipped loop.
"""

from __future__ import annotations

from collections import deque

from .batching import BatchPlan, form_batches, profile_stride
from .config import L1Config, RunConfig, policies_dict
from .dispatch import (DispatchKind, InterleavedDispatcher, make_queues,
                       partition_blocks)
from .dram import (CPU_AGENT, GPU_AGENT, BankState, McQueue, MemoryRequest,
                   bank_advance, mc_pick)
from .memmap import (CPU_OWNER, FrameRegion, PagePolicy, PageTable, Pool,
                     build_color_map)
from .metrics import MetricsReport, compute_metrics, energy_total
from .sched import WarpState, make_scheduler
from .workload import (enumerate_blocks, gen_block_trace, gen_cpu_traffic,
                       load_workload)


class SimulationFault(AssertionError):
    """An engine invariant broke; carries the faulting cycle."""

    def __init__(self, cycle: int, message: str):
        super().__init__(f"cycle {cycle}: {message}")
        self.cycle = cycle


class L1Cache:
    """Set-associative LRU cache keyed by (pool, line); write-through with no
    write allocation, so only read fills change its contents.  Size 0 disables
    the cache and every access misses."""

    def __init__(self, cfg: L1Config):
        self.line_bytes = cfg.line_bytes
        self.enabled = cfg.size_bytes > 0
        if self.enabled:
            self.assoc = cfg.assoc
            self.num_sets = cfg.size_bytes // (cfg.assoc * cfg.line_bytes)
            self.sets = [dict() for _ in range(self.num_sets)]

    def _set_of(self, key) -> dict:
        return self.sets[key[1] % self.num_sets]

    def lookup(self, key) -> bool:
        if not self.enabled:
            return False
        s = self._set_of(key)
        if key in s:
            s.pop(key)
            s[key] = None
            return True
        return False

    def fill(self, key):
        if not self.enabled:
            return
        s = self._set_of(key)
        if key in s:
            s.pop(key)
        s[key] = None
        if len(s) > self.assoc:
            s.pop(next(iter(s)))


class SmModel:
    def __init__(self, sm_id: int, scheduler, l1cfg: L1Config,
                 max_blocks: int, max_warps: int):
        self.sm_id = sm_id
        self.scheduler = scheduler
        self.l1 = L1Cache(l1cfg)
        self.max_blocks = max_blocks
        self.max_warps = max_warps
        self.resident_blocks: dict[int, list[WarpState]] = {}
        self.resident_warps = 0
        self.reply_queue: deque = deque()
        self.reply_overflow: deque = deque()

    def has_slot(self, warps_per_block: int) -> bool:
        return (len(self.resident_blocks) < self.max_blocks
                and self.resident_warps + warps_per_block <= self.max_warps)


class World:
    """Complete simulation state for one run."""

    def __init__(self, cfg: RunConfig, *, collect_issue_log: bool = False):
        cfg.validate()
        self.cfg = cfg
        hw = cfg.hardware
        self.kernel, self.cpu_spec = load_workload(cfg.workload)
        if hw.max_threads_per_sm // self.kernel.warp_size < self.kernel.warps_per_block:
            raise ValueError("one block's warps exceed the SM warp capacity")
        for m in self.kernel.matrices:
            if m.base_addr % cfg.page_size:
                raise ValueError(
                    f"matrix base {m.base_addr:#x} not aligned to the "
                    f"{cfg.page_size}-byte page size")

        self.plan = self._make_plan()
        self.batch_of_block = {}
        for tb in self.plan.batches:
            for b in tb.block_ids:
                self.batch_of_block[b] = tb.batch_id
        self.blocks = enumerate_blocks(self.kernel)

        region = None
        if cfg.allocator is PagePolicy.COLORING_HETERO:
            region = FrameRegion.split(hw.gddr.layout.num_rows, hw.cpu_row_fraction)
            region.validate(hw.gddr.layout.num_rows)
        self.color_map = build_color_map(hw.num_sms, hw.gddr.layout)
        self.page_table = PageTable(
            cfg.allocator,
            {Pool.GDDR: hw.gddr.layout, Pool.DDR: hw.ddr.layout},
            self.color_map, region=region, bw_ratio=hw.bw_ratio,
            cpu_pool=hw.cpu_pool,
        )

        max_warps = hw.max_threads_per_sm // self.kernel.warp_size
        self.sms = [
            SmModel(
                sm,
                make_scheduler(cfg.scheduler, capacity=hw.running_set_warps,
                               threshold=hw.sufficient_active_threshold),
                hw.l1, hw.max_blocks_per_sm, max_warps,
            )
            for sm in range(hw.num_sms)
        ]

        if cfg.dispatch is DispatchKind.SERIAL:
            ranges = partition_blocks(len(self.blocks), hw.num_sms, self.plan)
            self.queues_dispatch = make_queues(ranges)
            self.interleaver = None
        else:
            self.queues_dispatch = None
            self.interleaver = InterleavedDispatcher(
                len(self.blocks), seed=cfg.random_dispatch_seed)

        self.pools = {Pool.GDDR: hw.gddr, Pool.DDR: hw.ddr}
        self.mc_queues: dict[tuple, McQueue] = {}
        self.banks: dict[tuple, dict[int, BankState]] = {}
        for pool, pc in self.pools.items():
            for ch in range(pc.layout.num_channels):
                self.mc_queues[(pool, ch)] = McQueue(
                    capacity=hw.mc_queue_capacity,
                    arbitration=cfg.arbitration,
                    starvation_cap=hw.starvation_cap,
                )
                self.banks[(pool, ch)] = {
                    b: BankState() for b in range(pc.layout.num_banks)
                }
        self.channel_keys = sorted(self.mc_queues, key=lambda k: (k[0].value, k[1]))

        self.cpu_stream = []
        if self.cpu_spec is not None and cfg.horizon > 0:
            self.cpu_stream = gen_cpu_traffic(self.cpu_spec, cfg.horizon)
        self.cpu_next = 0
        self.cpu_deferred: deque = deque()

        self.cycle = 0
        self.dispatched = 0
        self.finished_warps = 0
        self.total_warps = len(self.blocks) * self.kernel.warps_per_block
        self.log: list[MemoryRequest] = []
        self.completions: dict[int, list] = {}
        self.busy_banks = 0
        self.in_service = 0
        self.enqueued = 0
        self.completed = 0
        self.blp_sum = 0
        self.blp_cycles = 0
        self.warp_instructions = 0
        self.l1_hits = 0
        self.l1_misses = 0
        self.issue_backpressure = 0
        self.reply_stalls = 0
        self.dispatch_log: list[tuple] = []
        self.warp_index: dict[int, WarpState] = {}
        self.issue_log: list[tuple] | None = [] if collect_issue_log else None
        self._check = hw.check_invariants
        self._line = hw.l1.line_bytes
        self._region = region

    # plan -----------------------------------------------------------------

    def _make_plan(self) -> BatchPlan:
        cfg = self.cfg
        if cfg.stride is not None:
            return form_batches(self.kernel, cfg.stride, cfg.page_size)
        stride, formation = profile_stride(
            self.kernel, cfg.page_size, search_cap=cfg.search_cap,
            fallback_threshold=cfg.fallback_threshold)
        return form_batches(self.kernel, stride, cfg.page_size, formation)

    # dispatch -------------------------------------------------------------

    def _instantiate_block(self, sm: SmModel, blin: int):
        block_id = self.blocks[blin]
        batch = self.batch_of_block[block_id]
        per_warp = gen_block_trace(self.kernel, block_id)
        warps = []
        for wid in sorted(per_warp):
            events = per_warp[wid]
            slots: list[list] = []
            for ev in events:
                if ev.issue_slot == len(slots):
                    slots.append([ev])
                else:
                    slots[ev.issue_slot].append(ev)
            w = WarpState(warp_id=wid, batch_id=batch, block_linear=blin,
                          slots=slots, ready_at=self.cycle)
            if not slots:
                w.finished = True
                self.finished_warps += 1
            warps.append(w)
        live = [w for w in warps if not w.finished]
        if live:
            sm.resident_blocks[blin] = live
            sm.resident_warps += len(live)
            for w in live:
                self.warp_index[w.warp_id] = w
                sm.scheduler.add_warp(w, self.cycle)
        self.dispatch_log.append((self.cycle, sm.sm_id, blin, batch))
        self.dispatched += 1

    def _phase_dispatch(self):
        wpb = self.kernel.warps_per_block
        if self.cfg.dispatch is DispatchKind.SERIAL:
            progress = True
            while progress:
                progress = False
                for sm in self.sms:
                    q = self.queues_dispatch[sm.sm_id]
                    if not q.exhausted and sm.has_slot(wpb):
                        blin = q.next_block()
                        self._instantiate_block(sm, blin)
                        progress = True
        else:
            progress = True
            while progress and not self.interleaver.exhausted:
                progress = False
                idle = [sm.sm_id for sm in self.sms if sm.has_slot(wpb)]
                for sm_id in self.interleaver.order_idle_sms(idle):
                    blin = self.interleaver.next_block()
                    if blin is None:
                        break
                    self._instantiate_block(self.sms[sm_id], blin)
                    progress = True

    # issue ------------------------------------------------------------------

    def _make_request(self, pool: Pool, paddr: int, is_read: bool, agent: str,
                      sm_id: int, warp_id: int, batch_id: int, line: int) -> MemoryRequest:
        layout = self.pools[pool].layout
        d = layout.decompose(paddr)
        if self._check and self._region is not None and pool is Pool.GDDR:
            lo, hi = (self._region.cpu_rows if agent == CPU_AGENT
                      else self._region.gpu_rows)
            if not lo <= d.row < hi:
                raise SimulationFault(
                    self.cycle, f"{agent} request outside its row region "
                    f"(row {d.row} not in [{lo}, {hi}))")
        return MemoryRequest(
            pool=pool.value, channel=d.channel, bank=d.bank, row=d.row,
            column=d.column, is_read=is_read, agent=agent, sm_id=sm_id,
            warp_id=warp_id, batch_id=batch_id, line_addr=line,
            t_arrival=self.cycle,
        )

    def _phase_issue(self):
        gap = self.kernel.compute_gap
        for sm in self.sms:
            warp = sm.scheduler.select_warp(self.cycle)
            if warp is None:
                continue
            slot = warp.slots[warp.next_slot]
            lines: dict[tuple, bool] = {}
            for ev in slot:
                pool, paddr = self.page_table.translate(ev.virtual_addr, sm.sm_id)
                key = (pool, paddr // self._line)
                if key not in lines:
                    lines[key] = ev.is_read
            misses = []
            for key, is_read in lines.items():
                if sm.l1.lookup(key):
                    self.l1_hits += 1
                else:
                    self.l1_misses += 1
                    misses.append((key, is_read))
            need: dict[tuple, int] = {}
            for (pool, line), _ in misses:
                layout = self.pools[pool].layout
                ch = layout.decompose(line * self._line).channel
                need[(pool, ch)] = need.get((pool, ch), 0) + 1
            if any(len(self.mc_queues[k]) + n > self.mc_queues[k].capacity
                   for k, n in need.items()):
                self.issue_backpressure += 1
                self.l1_misses -= len(misses)  # retried next cycle
                self.l1_hits -= len(lines) - len(misses)
                continue
            self.warp_instructions += 1
            if self.issue_log is not None:
                self.issue_log.append(
                    (self.cycle, sm.sm_id, warp.warp_id, warp.batch_id,
                     warp.next_slot))
            stalled = False
            for (pool, line), is_read in misses:
                req = self._make_request(
                    pool, line * self._line, is_read, GPU_AGENT, sm.sm_id,
                    warp.warp_id, warp.batch_id, line)
                if not self.mc_queues[(pool, req.channel)].enqueue(req, self.cycle):
                    raise SimulationFault(self.cycle, "queue overflow after space check")
                self.log.append(req)
                self.enqueued += 1
                if is_read:
                    warp.pending_lines.add((pool, line))
                    stalled = True
            warp.next_slot += 1
            if stalled:
                sm.scheduler.on_long_stall(warp, self.cycle)
            else:
                warp.ready_at = self.cycle + 1 + gap
            if warp.next_slot >= len(warp.slots) and not warp.pending_lines:
                self._finish_warp(sm, warp)
            if self._check:
                sm.scheduler.assert_invariants(self.cycle)

    def _finish_warp(self, sm: SmModel, warp: WarpState):
        warp.finished = True
        self.finished_warps += 1
        sm.scheduler.on_finish(warp, self.cycle)
        blk = sm.resident_blocks.get(warp.block_linear)
        if blk is not None:
            sm.resident_warps -= 1
            live = [w for w in blk if not w.finished]
            if live:
                sm.resident_blocks[warp.block_linear] = live
            else:
                del sm.resident_blocks[warp.block_linear]

    # cpu traffic ------------------------------------------------------------

    def _phase_cpu(self):
        while self.cpu_next < len(self.cpu_stream) \
                and self.cpu_stream[self.cpu_next].cycle <= self.cycle:
            self.cpu_deferred.append(self.cpu_stream[self.cpu_next])
            self.cpu_next += 1
        while self.cpu_deferred:
            ev = self.cpu_deferred[0]
            pool, paddr = self.page_table.translate(ev.virtual_addr, CPU_OWNER)
            line = paddr // self._line
            req = self._make_request(pool, line * self._line, ev.is_read,
                                     CPU_AGENT, -1, -1, -1, line)
            req.t_arrival = ev.cycle
            q = self.mc_queues[(pool, req.channel)]
            if not q.enqueue(req, self.cycle):
                break
            self.cpu_deferred.popleft()
            self.log.append(req)
            self.enqueued += 1

    # memory controllers ------------------------------------------------------

    def _phase_mc(self):
        for key in self.channel_keys:
            q = self.mc_queues[key]
            if not q.requests:
                continue
            banks = self.banks[key]
            req = mc_pick(q, banks, self.cycle)
            if req is None:
                continue
            done = bank_advance(banks[req.bank], req,
                                self.pools[key[0]].timing, self.cycle)
            self.busy_banks += 1
            self.in_service += 1
            self.completions.setdefault(done, []).append((key, req))

    # reply network ------------------------------------------------------------

    def _deliver(self, sm: SmModel, req: MemoryRequest):
        key = (Pool(req.pool), req.line_addr)
        sm.l1.fill(key)
        warp = self.warp_index.get(req.warp_id)
        if warp is None:
            return
        warp.pending_lines.discard(key)
        if not warp.pending_lines:
            if warp.next_slot >= len(warp.slots):
                self._finish_warp(sm, warp)
            else:
                warp.ready_at = self.cycle + 1 + self.kernel.compute_gap

    def _phase_reply(self):
        hw = self.cfg.hardware.reply
        for sm in self.sms:
            drained = 0
            while (sm.reply_queue and drained < hw.drain_per_cycle
                   and sm.reply_queue[0][0] <= self.cycle):
                _, req = sm.reply_queue.popleft()
                self._deliver(sm, req)
                drained += 1
            while sm.reply_overflow and len(sm.reply_queue) < hw.queue_capacity:
                req = sm.reply_overflow.popleft()
                sm.reply_queue.append((self.cycle + hw.latency, req))
        due = self.completions.pop(self.cycle, [])
        for key, req in due:
            self.busy_banks -= 1
            self.in_service -= 1
            self.completed += 1
            if req.agent == GPU_AGENT and req.is_read:
                sm = self.sms[req.sm_id]
                if len(sm.reply_queue) < hw.queue_capacity:
                    sm.reply_queue.append((self.cycle + hw.latency, req))
                else:
                    sm.reply_overflow.append(req)
        for sm in self.sms:
            self.reply_stalls += len(sm.reply_overflow)

    # main loop ------------------------------------------------------------

    def gpu_done(self) -> bool:
        if self.dispatched < len(self.blocks):
            return False
        return self.finished_warps >= self.total_warps

    def drained(self) -> bool:
        if self.in_service or self.completions:
            return False
        if any(q.requests for q in self.mc_queues.values()):
            return False
        return not any(sm.reply_queue or sm.reply_overflow for sm in self.sms)

    def done(self) -> bool:
        return self.gpu_done() and self.drained() and not self.cpu_deferred

    def _conservation_check(self):
        queued = sum(len(q) for q in self.mc_queues.values())
        waiting = sum(len(sm.reply_queue) + len(sm.reply_overflow)
                      for sm in self.sms)
        if self.enqueued != self.completed + queued + self.in_service:
            raise SimulationFault(
                self.cycle,
                f"request conservation broke: enqueued {self.enqueued} != "
                f"completed {self.completed} + queued {queued} + "
                f"in service {self.in_service} (replies waiting {waiting})")

    def step(self):
        self._phase_dispatch()
        self._phase_issue()
        self._phase_cpu()
        self._phase_mc()
        self._phase_reply()
        if self.busy_banks:
            self.blp_sum += self.busy_banks
            self.blp_cycles += 1
        if self._check:
            self._conservation_check()
        self.cycle += 1

    def _next_event_cycle(self) -> int | None:
        """Earliest future cycle at which anything can change state."""
        cand = []
        if self.completions:
            cand.append(min(self.completions))
        for sm in self.sms:
            if sm.reply_queue:
                cand.append(sm.reply_queue[0][0])
            for warps in sm.resident_blocks.values():
                for w in warps:
                    if not w.finished and not w.pending_lines \
                            and w.ready_at > self.cycle:
                        cand.append(w.ready_at)
        if self.cpu_next < len(self.cpu_stream):
            cand.append(self.cpu_stream[self.cpu_next].cycle)
        return min(cand) if cand else None

    def _can_skip(self) -> bool:
        if self.cpu_deferred or any(sm.reply_overflow for sm in self.sms):
            return False
        if any(sm.scheduler.has_issuable(self.cycle) for sm in self.sms):
            return False
        for key in self.channel_keys:
            q = self.mc_queues[key]
            if q.requests and any(self.banks[key][r.bank].ready(self.cycle)
                                  for r in q.requests):
                return False
        wpb = self.kernel.warps_per_block
        if self.dispatched < len(self.blocks) \
                and any(sm.has_slot(wpb) for sm in self.sms):
            return False
        for sm in self.sms:
            if sm.reply_queue and sm.reply_queue[0][0] <= self.cycle:
                return False
        return True

    def run(self) -> MetricsReport:
        horizon = self.cfg.horizon
        while self.cycle < horizon and not self.done():
            self.step()
            if self.cycle < horizon and not self.done() and self._can_skip():
                nxt = self._next_event_cycle()
                if nxt is not None and nxt > self.cycle:
                    jump = min(nxt, horizon) - self.cycle
                    if self.busy_banks:
                        self.blp_sum += self.busy_banks * jump
                        self.blp_cycles += jump
                    self.cycle += jump
        return self._report(truncated=not self.done())

    # reporting ---------------------------------------------------------------

    def _report(self, truncated: bool) -> MetricsReport:
        hw = self.cfg.hardware
        stats = compute_metrics(self.log, self.page_table, hw.request_window)
        report = MetricsReport(
            workload=self.kernel.name,
            policies=policies_dict(self.cfg),
            seed=self.cfg.seed,
            cycles=self.cycle,
            truncated=truncated,
            warp_instructions=self.warp_instructions,
            ipc_proxy=self.warp_instructions / self.cycle if self.cycle else 0.0,
            reply_stalls=self.reply_stalls,
            issue_backpressure=self.issue_backpressure,
            request_window=hw.request_window,
            l1_hits=self.l1_hits,
            l1_misses=self.l1_misses,
            mpki_proxy=(self.l1_misses * 1000 / self.warp_instructions
                        if self.warp_instructions else 0.0),
            spilled_pages=self.page_table.spilled_pages,
            pool_pages={p.value: n for p, n in self.page_table.pool_pages.items()},
            degenerate=not self.log,
            **stats,
        )
        energy = {"activate": 0.0, "read_write": 0.0, "background": 0.0,
                  "total": 0.0}
        for pool, pc in self.pools.items():
            counters = {"activates": 0, "reads": 0, "writes": 0}
            nbanks = 0
            for ch in range(pc.layout.num_channels):
                for bank in self.banks[(pool, ch)].values():
                    counters["activates"] += bank.activates
                    counters["reads"] += bank.reads
                    counters["writes"] += bank.writes
                    nbanks += 1
            part = energy_total(counters, pc.energy, self.cycle, nbanks)
            for k in ("activate", "read_write", "background", "total"):
                energy[k] += part[k]
            energy[f"{pool.value}_total"] = part["total"]
        report.energy = energy
        if self._check:
            self._crosscheck(report)
        return report

    def _crosscheck(self, report: MetricsReport):
        hits = sum(b.row_hits for banks in self.banks.values()
                   for b in banks.values())
        accesses = sum(b.accesses for banks in self.banks.values()
                       for b in banks.values())
        activates = sum(b.activates for banks in self.banks.values()
                        for b in banks.values())
        if activates + hits != accesses:
            raise SimulationFault(
                self.cycle, "bank counters: activates + hits != accesses")
        if hits != report.row_hits or accesses != report.total_accesses:
            raise SimulationFault(
                self.cycle, "request log disagrees with bank counters")
        blp = self.blp_sum / self.blp_cycles if self.blp_cycles else 0.0
        if abs(blp - report.blp) > 1e-9:
            raise SimulationFault(
                self.cycle,
                f"cycle-counted BLP {blp} != log-derived BLP {report.blp}")


def run(config: RunConfig, *, collect_issue_log: bool = False) -> tuple[MetricsReport, World]:
    world = World(config, collect_issue_log=collect_issue_log)
    report = world.run()
    return report, world
