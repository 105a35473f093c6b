"""Command line runner: validate configs, execute runs, profile kernels, and
sweep policy comparisons into plot-ready CSV tables.

Exit codes: 0 ok, 2 run truncated at the horizon, 3 invalid input,
4 simulation fault.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import os
import sys
import time

from .batching import (form_batches, plan_to_dict, profile_stride,
                       sharing_histogram)
from .config import config_from_dict, load_config, policies_dict
from .engine import SimulationFault, World
from .metrics import MetricsReport
from .workload import load_workload

EXIT_OK = 0
EXIT_TRUNCATED = 2
EXIT_INVALID = 3
EXIT_FAULT = 4

EXPERIMENT_SCHEMA_VERSION = 1

# metrics carried into comparison tables; ratios are taken against the
# baseline cell for each of these
SUMMARY_METRICS = ["ipc_proxy", "rbhr", "blp", "local_ratio",
                   "mean_access_delay", "reply_stalls", "energy_total",
                   "cpu_mean_delay"]


def _default_out() -> str:
    return os.environ.get("GMEMSIM_OUT", "out")


def _write_report(report: MetricsReport, path: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(report.to_json())


def _write_traces(world: World, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "requests.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pool", "channel", "bank", "row", "column", "is_read",
                    "agent", "sm_id", "warp_id", "batch_id", "t_arrival",
                    "t_enqueue", "t_issue", "t_complete", "was_hit"])
        for r in world.log:
            w.writerow([r.pool, r.channel, r.bank, r.row, r.column,
                        int(r.is_read), r.agent, r.sm_id, r.warp_id,
                        r.batch_id, r.t_arrival, r.t_enqueue, r.t_issue,
                        r.t_complete, int(r.was_hit)])
    with open(os.path.join(out_dir, "dispatch.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cycle", "sm_id", "block_linear", "batch_id"])
        w.writerows(world.dispatch_log)
    if world.issue_log is not None:
        with open(os.path.join(out_dir, "issues.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cycle", "sm_id", "warp_id", "batch_id", "slot"])
            w.writerows(world.issue_log)
    with open(os.path.join(out_dir, "pagetable.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["vpn", "pool", "channel", "bank", "row", "owner_sm"])
        w.writerows(world.page_table.dump_rows())
    with open(os.path.join(out_dir, "banks.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pool", "channel", "bank", "activates", "reads", "writes",
                    "row_hits"])
        for (pool, ch), banks in sorted(
                world.banks.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            for b, st in banks.items():
                w.writerow([pool.value, ch, b, st.activates, st.reads,
                            st.writes, st.row_hits])


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    world = World(cfg, collect_issue_log=args.trace)
    report = world.run()
    out = args.out or os.path.join(_default_out(), "report.json")
    _write_report(report, out)
    if args.trace:
        _write_traces(world, os.path.splitext(out)[0] + "_trace")
    print(f"{report.workload}: cycles={report.cycles} "
          f"ipc={report.ipc_proxy:.4f} rbhr={report.rbhr:.4f} "
          f"blp={report.blp:.4f} local={report.local_ratio:.4f} "
          f"energy={report.energy.get('total', 0.0):.1f} -> {out}")
    return EXIT_TRUNCATED if report.truncated else EXIT_OK


def cmd_profile(args) -> int:
    kernel, _ = load_workload(args.workload)
    stride, formation = profile_stride(kernel, args.page_size)
    plan = form_batches(kernel, stride, args.page_size, formation)
    hist = sharing_histogram(plan)
    if formation.value == "fallback":
        print("warning: no fixed stride suppresses page sharing well; "
              "plan marked fallback", file=sys.stderr)
    out = args.out or os.path.join(_default_out(), f"{kernel.name}_plan.json")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    payload = plan_to_dict(plan)
    payload["sharing_histogram"] = {
        "bins": {str(k): v for k, v in sorted(hist.bins.items())},
        "total_pages": hist.total_pages,
        "exclusive_fraction": hist.exclusive_fraction,
    }
    with open(out, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{kernel.name}: stride={stride} formation={formation.value} "
          f"batches={len(plan.batches)} "
          f"exclusive={hist.exclusive_fraction:.3f} -> {out}")
    return EXIT_OK


def _load_experiment(path: str) -> dict:
    with open(path) as f:
        obj = json.load(f)
    allowed = {"schema_version", "name", "base_config", "axes", "baseline",
               "out_dir", "max_cells"}
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown field(s) in experiment: {sorted(unknown)}")
    if obj.get("schema_version", EXPERIMENT_SCHEMA_VERSION) != EXPERIMENT_SCHEMA_VERSION:
        raise ValueError("unsupported experiment schema_version")
    for req in ("name", "base_config", "axes"):
        if req not in obj:
            raise ValueError(f"experiment requires {req!r}")
    obj["_dir"] = os.path.dirname(os.path.abspath(path))
    return obj


def _experiment_cells(exp: dict) -> list[dict]:
    axes = exp["axes"]
    if not isinstance(axes, dict) or not axes:
        raise ValueError("experiment axes must be a non-empty mapping")
    keys = sorted(axes)
    cells = [dict(zip(keys, combo))
             for combo in itertools.product(*(axes[k] for k in keys))]
    cap = exp.get("max_cells", 64)
    if len(cells) > cap:
        raise ValueError(f"experiment has {len(cells)} cells, cap is {cap}")
    return cells


def _cell_name(cell: dict) -> str:
    return "__".join(f"{k}-{cell[k]}" for k in sorted(cell))


def cmd_compare(args) -> int:
    exp = _load_experiment(args.experiment)
    base_path = exp["base_config"]
    if not os.path.isabs(base_path):
        base_path = os.path.join(exp["_dir"], base_path)
    with open(base_path) as f:
        base_obj = json.load(f)
    cells = _experiment_cells(exp)
    baseline_cell = exp.get("baseline") or {"scheduler": "ccws"}
    out_dir = args.out or exp.get("out_dir") or os.path.join(
        _default_out(), exp["name"])
    os.makedirs(out_dir, exist_ok=True)

    rows, failed = {}, {}
    for cell in cells:
        obj = dict(base_obj)
        obj.update(cell)
        name = _cell_name(cell)
        try:
            cfg = config_from_dict(obj, base_dir=os.path.dirname(base_path))
            world = World(cfg)
            report = world.run()
            _write_report(report, os.path.join(out_dir, f"{name}.json"))
            rows[name] = (cell, report.flat())
        except (ValueError, SimulationFault, OSError) as e:
            failed[name] = str(e)
            print(f"cell {name} failed: {e}", file=sys.stderr)

    base_name = _cell_name({k: baseline_cell[k] for k in sorted(baseline_cell)})
    if base_name not in rows:
        print(f"baseline cell {base_name} missing or failed; cannot normalize",
              file=sys.stderr)
        return EXIT_INVALID
    base_flat = rows[base_name][1]

    csv_path = os.path.join(out_dir, "summary.csv")
    cell_keys = sorted(cells[0])
    metric_keys = sorted(rows[base_name][1])
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        header = (["cell"] + cell_keys + metric_keys
                  + [f"norm_{m}" for m in SUMMARY_METRICS]
                  + ["status", "timestamp"])
        w.writerow(header)
        for name in sorted(set(rows) | set(failed)):
            if name in failed:
                w.writerow([name] + [""] * (len(header) - 3)
                           + ["failed", int(time.time())])
                continue
            cell, flat = rows[name]
            norm = []
            for m in SUMMARY_METRICS:
                base_v = base_flat.get(m, 0)
                norm.append(flat.get(m, 0) / base_v if base_v else "")
            w.writerow([name] + [cell[k] for k in cell_keys]
                       + [flat[k] for k in metric_keys] + norm
                       + ["ok", int(time.time())])
    print(f"{len(rows)} cells ok, {len(failed)} failed -> {csv_path}")
    return EXIT_OK if not failed else EXIT_FAULT


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    load_workload(cfg.workload)
    print(f"{args.config}: ok "
          f"({cfg.dispatch.value}/{cfg.allocator.value}/"
          f"{cfg.scheduler.value}/{cfg.arbitration.value})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmemsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one simulation run")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", help="report JSON path")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--trace", action="store_true",
                       help="also write request/dispatch/issue CSV traces")
    run_p.set_defaults(func=cmd_run)

    prof_p = sub.add_parser("profile", help="profile a kernel's block stride")
    prof_p.add_argument("--workload", required=True)
    prof_p.add_argument("--page-size", type=int, default=4096,
                        dest="page_size")
    prof_p.add_argument("--out", help="plan JSON path")
    prof_p.set_defaults(func=cmd_profile)

    cmp_p = sub.add_parser("compare", help="run a policy-comparison sweep")
    cmp_p.add_argument("--experiment", required=True)
    cmp_p.add_argument("--out", help="output directory")
    cmp_p.set_defaults(func=cmd_compare)

    val_p = sub.add_parser("validate", help="check a config without running")
    val_p.add_argument("--config", required=True)
    val_p.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SimulationFault as e:
        print(f"simulation fault: {e}", file=sys.stderr)
        return EXIT_FAULT
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
