"""Experiment reports, replica seed streams and an order-preserving parallel map."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


def replica_seeds(base_seed: int, count: int) -> list[int]:
    """Independent 64-bit seeds for replicas 0..count-1, derived from the base seed."""
    children = np.random.SeedSequence(int(base_seed)).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def parallel_map(fn, items, threads: int = 1) -> list:
    """map() whose output order is the input order whatever the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    n = int(v.size)
    if n == 0:
        return {"n": 0, "mean": float("nan"), "variance": float("nan"), "sd": float("nan"),
                "ci_lo": float("nan"), "ci_hi": float("nan")}
    mean = float(math.fsum(v) / n)
    var = float(np.sum((v - mean) ** 2) / (n - 1)) if n > 1 else 0.0
    sd = math.sqrt(var)
    half = 1.96 * sd / math.sqrt(n)
    return {"n": n, "mean": mean, "variance": var, "sd": sd, "ci_lo": mean - half, "ci_hi": mean + half}


@dataclass
class ExperimentReport:
    name: str
    replica_count: int = 0
    per_N: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def payload(self) -> dict:
        """Numeric content only; wall time is kept out so payloads are reproducible."""
        return {
            "name": self.name,
            "replica_count": self.replica_count,
            "per_N": {str(k): v for k, v in self.per_N.items()},
            "fitted": self.fitted,
            "provenance": self.provenance,
            "extra": self.extra,
        }

    def to_json(self, path=None, **header) -> str:
        data = dict(header)
        data.update(self.payload())
        text = json.dumps(_plain(data), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path, header_lines=()):
        cols = []
        for row in self.rows:
            for k in row:
                if k not in cols:
                    cols.append(k)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(cols)
            for row in self.rows:
                wr.writerow([_fmt(row.get(c, "")) for c in cols])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
