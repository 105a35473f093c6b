import json
import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


def fixture_path(*parts) -> str:
    return os.path.abspath(os.path.join(FIXTURES, *parts))


def load_fixture(*parts) -> dict:
    with open(fixture_path(*parts)) as f:
        return json.load(f)


def clustered_rows_workload(accesses_per_thread=2, compute_gap=2,
                            read_fraction=1.0, base_addr=0):
    """2x2 grid of 4-thread 1D blocks over a 4x4 matrix: block i owns matrix
    row i, the first thread-data mapping shape."""
    return {
        "kernel": {
            "name": "clustered_rows",
            "grid_dim": [2, 2],
            "block_dim": [4, 1],
            "warp_size": 2,
            "compute_gap": compute_gap,
            "matrices": [
                {"base_addr": base_addr, "element_size": 4, "row_len": 4,
                 "mapping": "clustered",
                 "accesses_per_thread": accesses_per_thread,
                 "read_fraction": read_fraction},
            ],
        },
    }


def interleaved_grid_workload(accesses_per_thread=1, compute_gap=2):
    """2x2 grid of 2x2 blocks over a 4x4 matrix: each matrix row is split
    between two x-adjacent blocks, the second thread-data mapping shape."""
    return {
        "kernel": {
            "name": "interleaved_grid",
            "grid_dim": [2, 2],
            "block_dim": [2, 2],
            "warp_size": 2,
            "compute_gap": compute_gap,
            "matrices": [
                {"base_addr": 0, "element_size": 4, "row_len": 4,
                 "mapping": "interleaved",
                 "accesses_per_thread": accesses_per_thread},
            ],
        },
    }


def small_hardware(num_sms=2, banks_bits=2, channel_bits=1, page_offset=5,
                   byte_bits=2, column_bits=4, row_bits=6, l1_size=0,
                   line_bytes=8, **over):
    """Desk-scale hardware: 32-byte pages, 64-byte rows (2 pages per row)."""
    gddr_layout = {"byte_offset_bits": byte_bits, "column_bits": column_bits,
                   "channel_bits": channel_bits, "bank_bits": banks_bits,
                   "row_bits": row_bits, "page_offset_bits": page_offset}
    ddr_layout = dict(gddr_layout, channel_bits=0, bank_bits=1)
    timing = {"tRCD": 4, "tRP": 4, "tCAS": 4, "tRC": 12, "tBURST": 2}
    hw = {
        "num_sms": num_sms,
        "max_blocks_per_sm": 8,
        "max_threads_per_sm": 64,
        "l1": {"size_bytes": l1_size, "assoc": 2, "line_bytes": line_bytes},
        "gddr": {"layout": gddr_layout, "timing": dict(timing)},
        "ddr": {"layout": ddr_layout, "timing": dict(timing)},
        "reply": {"queue_capacity": 64, "drain_per_cycle": 2, "latency": 1},
    }
    hw.update(over)
    return hw


@pytest.fixture
def clustered_spec():
    from gmemsim.workload import load_workload

    kernel, _ = load_workload(clustered_rows_workload())
    return kernel


@pytest.fixture
def interleaved_spec():
    from gmemsim.workload import load_workload

    kernel, _ = load_workload(interleaved_grid_workload())
    return kernel
