"""Naive-transport topology sweeps: transmission bias and redundancy.

Only timestamps matter here, so caches are replayed as timestamp matrices by
:func:`satfed.kernels.naive_replay`. Every device holds its own model from
time 0 and issues a new version once per ``version_interval`` seconds
(default: one orbit period), as if it kept training. Orbits draw their
devices independently, so devices may go uncovered when orbits * coverage < m.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .constellation import Topology, build_topology, contact_schedule
from .transport import FLOOD, OWN_ONLY, LinkBudget

SWEEP_COLUMNS = ("orbits", "coverage", "m", "seeds", "coverage_ratio", "redundancy_ratio")


@dataclass
class ReplayResult:
    transfers: int
    necessary: int
    dev_ts: np.ndarray
    sat_ts: np.ndarray

    @property
    def redundancy(self) -> float:
        return self.transfers / self.necessary if self.necessary else float("nan")

    def owner_fraction(self) -> np.ndarray:
        """Per device: fraction of the m owners present in its cache."""
        return (self.dev_ts > -np.inf).mean(axis=1)


def schedule_arrays(topo: Topology, windows, per_satellite_cache: bool = False):
    holder_of = {}
    for orb in topo.orbits:
        for s in orb.satellite_ids:
            holder_of[s] = s if per_satellite_cache else orb.orbit_id
    times = np.array([w.start for w in windows], dtype=np.float64)
    devices = np.array([w.device_id for w in windows], dtype=np.int64)
    holders = np.array([holder_of[w.satellite_id] for w in windows], dtype=np.int64)
    n_holders = (max(holder_of.values()) + 1) if holder_of else 0
    return times, devices, holders, n_holders


def replay_naive(
    topo: Topology,
    windows,
    mode: str,
    budget: Optional[LinkBudget] = None,
    per_satellite_cache: bool = False,
    version_interval: float = np.inf,
) -> ReplayResult:
    """Replay ``own-only`` or ``flood`` sessions over a contact schedule.

    Per-window budgets are uniform here: ``budget.window_remaining`` is ignored
    and each window's own duration is not consulted, so pass a budget sized
    for the contact length (or None for unlimited).
    """
    if mode not in (OWN_ONLY, FLOOD):
        raise ValueError(f"unknown naive mode {mode!r}")
    times, devices, holders, n_holders = schedule_arrays(topo, windows, per_satellite_cache)
    m = topo.m
    dev_ts = np.full((m, m), -np.inf)
    np.fill_diagonal(dev_ts, 0.0)
    sat_ts = np.full((max(n_holders, 1), m), -np.inf)
    max_up = -1 if budget is None else min(budget.max_uploads, 1 << 30)
    max_down = -1 if budget is None else min(budget.max_downloads, 1 << 30)
    code = kernels.MODE_OWN_ONLY if mode == OWN_ONLY else kernels.MODE_FLOOD
    transfers, necessary = kernels.naive_replay(times, devices, holders, dev_ts, sat_ts, code, max_up, max_down, float(version_interval))
    return ReplayResult(int(transfers), int(necessary), dev_ts, sat_ts)


def sweep_point(
    n_orbits: int,
    coverage: int,
    m: int,
    seed: int,
    *,
    periods: float = 6.0,
    orbit_period: float = 6000.0,
    contact: float = 600.0,
    sats_per_orbit: int = 2,
    version_interval: Optional[float] = None,
) -> Tuple[float, float]:
    """(own-only coverage ratio, flood redundancy ratio) for one topology draw."""
    if version_interval is None:
        version_interval = orbit_period
    topo = build_topology(m, n_orbits, coverage, sats_per_orbit, seed, repair=False)
    windows = contact_schedule(topo, orbit_period, contact, periods * orbit_period, seed + 1)
    own = replay_naive(topo, windows, OWN_ONLY, version_interval=version_interval)
    flood = replay_naive(topo, windows, FLOOD, version_interval=version_interval)
    return float(own.owner_fraction().mean()), flood.redundancy


@dataclass
class SweepRow:
    orbits: int
    coverage: int
    m: int
    seeds: int
    coverage_ratio: float
    redundancy_ratio: float


def run_topology_sweep(
    orbit_counts: Sequence[int],
    coverage_counts: Sequence[int],
    m: int,
    seed_count: int,
    *,
    base_seed: int = 0,
    **kw,
) -> List[SweepRow]:
    """Seed-averaged bias/redundancy over an (orbits x coverage) grid."""
    rows = []
    for L in orbit_counts:
        for c in coverage_counts:
            pts = [sweep_point(L, c, m, base_seed + 1000 * k, **kw) for k in range(seed_count)]
            cov, red = np.array(pts).T
            rows.append(SweepRow(int(L), int(c), m, seed_count, float(cov.mean()), float(np.nanmean(red))))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([d["orbits"], d["coverage"], d["m"], d["seeds"], repr(d["coverage_ratio"]), repr(d["redundancy_ratio"])])
    return buf.getvalue()
