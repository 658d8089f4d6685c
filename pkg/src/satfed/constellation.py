"""Orbit/device topology, satellite-network-direct relation and contact windows.

Orbital mechanics are reduced to periodic fixed-length visibility windows:
every satellite of orbit ``l`` passes over every device in ``S_l`` once per
orbit period, with a per-pair phase offset drawn from the seed.
"""
from __future__ import annotations

import heapq
import itertools
import sys
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError

# event kinds, in tiebreak order
SERVER_RECEIVE = "server-receive"
LINK_RETRY = "link-retry"
CONTACT_END = "contact-end"
CONTACT_START = "contact-start"
LOCAL_ROUND_START = "local-round-start"
EVALUATE = "evaluate"
EVENT_KINDS = (SERVER_RECEIVE, LINK_RETRY, CONTACT_END, CONTACT_START, LOCAL_ROUND_START, EVALUATE)
_KIND_RANK = {k: r for r, k in enumerate(EVENT_KINDS)}

NO_DEVICE = sys.maxsize


@dataclass(frozen=True)
class Orbit:
    orbit_id: int
    satellite_ids: Tuple[int, ...]
    covered: Tuple[int, ...]


@dataclass(frozen=True)
class Topology:
    m: int
    orbits: Tuple[Orbit, ...]
    assignment_seed: int = 0
    n_repaired: int = 0

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean (n_orbits, m) matrix; row l marks ``S_l``."""
        M = np.zeros((len(self.orbits), self.m), dtype=bool)
        for r, orb in enumerate(self.orbits):
            M[r, list(orb.covered)] = True
        return M

    @cached_property
    def satdir(self) -> np.ndarray:
        M = self.membership.astype(np.int64)
        return (M.T @ M) > 0

    @cached_property
    def orbit_of_satellite(self) -> dict:
        return {s: orb.orbit_id for orb in self.orbits for s in orb.satellite_ids}

    @property
    def satellite_ids(self) -> List[int]:
        return [s for orb in self.orbits for s in orb.satellite_ids]

    def orbits_covering(self, i: int) -> List[int]:
        return [orb.orbit_id for orb in self.orbits if i in orb.covered]


def build_topology(
    m: int,
    n_orbits: int,
    devices_per_orbit: int,
    sats_per_orbit: int = 1,
    seed: int = 0,
    *,
    repair: bool = True,
) -> Topology:
    """Draw each orbit's covered devices uniformly without replacement.

    With ``repair`` on, every device left uncovered is swapped into an orbit in
    place of a device that is covered more than once, so coverage per orbit
    stays ``devices_per_orbit`` and no device is orphaned.
    """
    if m < 1 or n_orbits < 1 or sats_per_orbit < 1:
        raise ConfigurationError("m, n_orbits and sats_per_orbit must be >= 1")
    if not 1 <= devices_per_orbit <= m:
        raise ConfigurationError(f"devices_per_orbit must lie in [1, {m}], got {devices_per_orbit}")
    if repair and n_orbits * devices_per_orbit < m:
        raise ConfigurationError(
            f"infeasible coverage: {n_orbits} orbits x {devices_per_orbit} devices < {m} devices"
        )
    rng = np.random.default_rng(seed)
    sets = [set(rng.choice(m, size=devices_per_orbit, replace=False).tolist()) for _ in range(n_orbits)]

    n_repaired = 0
    if repair:
        counts = np.zeros(m, dtype=np.int64)
        for s in sets:
            counts[list(s)] += 1
        for orphan in np.flatnonzero(counts == 0):
            # candidate slots: (orbit, device) with device covered more than once
            slots = [(l, d) for l, s in enumerate(sets) for d in sorted(s) if counts[d] > 1]
            l, d = slots[rng.integers(len(slots))]
            sets[l].remove(d)
            sets[l].add(int(orphan))
            counts[d] -= 1
            counts[orphan] += 1
            n_repaired += 1

    orbits = tuple(
        Orbit(
            orbit_id=l,
            satellite_ids=tuple(range(l * sats_per_orbit, (l + 1) * sats_per_orbit)),
            covered=tuple(sorted(int(d) for d in s)),
        )
        for l, s in enumerate(sets)
    )
    return Topology(m=m, orbits=orbits, assignment_seed=seed, n_repaired=n_repaired)


def sat_direct(topo: Topology, i: int, j: int) -> bool:
    """True iff some orbit covers both ``i`` and ``j``."""
    return bool(topo.satdir[i, j])


def satdir_set(topo: Topology, i: int) -> set:
    return set(np.flatnonzero(topo.satdir[i]).tolist())


def coverage_ratio(topo: Topology, i: int) -> float:
    """|S_i^SatDir| / m, with ``i`` itself counted."""
    return float(topo.satdir[i].sum()) / topo.m


def mean_coverage_ratio(topo: Topology) -> float:
    return float(topo.satdir.sum(axis=1).mean()) / topo.m


# ---------------------------------------------------------------- contact windows


@dataclass(frozen=True, order=True)
class ContactWindow:
    start: float
    device_id: int
    satellite_id: int
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


def contact_schedule(
    topo: Topology,
    orbit_period: float,
    contact_duration: float,
    horizon: float,
    seed: int = 0,
    *,
    random_phase: bool = True,
) -> List[ContactWindow]:
    """Periodic windows for every (satellite, covered device) pair, sorted by start."""
    if not 0 < contact_duration < orbit_period:
        raise ConfigurationError("need 0 < contact_duration < orbit_period")
    rng = np.random.default_rng(seed)
    windows = []
    for orb in topo.orbits:
        for sat in orb.satellite_ids:
            for dev in orb.covered:
                phase = float(rng.uniform(0.0, orbit_period)) if random_phase else 0.0
                start = phase
                while start < horizon:
                    dur = min(contact_duration, horizon - start)
                    windows.append(ContactWindow(start, dev, sat, dur))
                    start += orbit_period
    windows.sort()
    return windows


# ---------------------------------------------------------------- event queue


@dataclass
class Event:
    time: float
    kind: str
    device: int = NO_DEVICE
    satellite: int = -1
    payload: Any = None


class EventQueue:
    """Min-heap keyed by (time, device, satellite, kind rank, insertion order)."""

    def __init__(self):
        self._heap: list = []
        self._counter = itertools.count()

    def push(self, event: Event) -> None:
        key = (event.time, event.device, event.satellite, _KIND_RANK[event.kind], next(self._counter))
        heapq.heappush(self._heap, (key, event))

    def schedule(self, time: float, kind: str, device: int = NO_DEVICE, satellite: int = -1, payload=None) -> Event:
        ev = Event(float(time), kind, device, satellite, payload)
        self.push(ev)
        return ev

    def pop(self) -> Event:
        return heapq.heappop(self._heap)[1]

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self) -> Iterator[Event]:
        while self._heap:
            yield self.pop()


# ---------------------------------------------------------------- persistence


def dump_topology(topo: Topology, path) -> None:
    """One line per orbit: ``orbit_id dev dev ...``; a header comment carries m and the satellites."""
    spo = len(topo.orbits[0].satellite_ids) if topo.orbits else 1
    lines = [f"# m={topo.m} sats_per_orbit={spo} seed={topo.assignment_seed} repaired={topo.n_repaired}"]
    for orb in topo.orbits:
        lines.append(" ".join(str(x) for x in (orb.orbit_id, *orb.covered)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_topology(path) -> Topology:
    meta = {}
    rows = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = int(v)
            continue
        ids = [int(t) for t in line.split()]
        rows.append((ids[0], tuple(sorted(ids[1:]))))
    if "m" not in meta:
        raise ConfigurationError(f"{path}: missing '# m=...' header")
    spo = meta.get("sats_per_orbit", 1)
    orbits = tuple(
        Orbit(oid, tuple(range(oid * spo, (oid + 1) * spo)), covered) for oid, covered in rows
    )
    for orb in orbits:
        if any(not 0 <= d < meta["m"] for d in orb.covered):
            raise ConfigurationError(f"{path}: orbit {orb.orbit_id} covers a device outside [0, m)")
    return Topology(meta["m"], orbits, meta.get("seed", 0), meta.get("repaired", 0))
