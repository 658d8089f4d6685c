"""Model caches, freshness-priority queues and budgeted contact sessions.

Freshness follows ``R(t, t_now) = 1 - exp(-eta_f * (t_now - t))``: it grows
with a copy's age, so a larger value means "more in need of replacement".
A missing model is treated as uploaded at ``-inf`` and has freshness 1.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ClockSkewError, DegenerateInputError

MISSING = -math.inf
UP = "up"
DOWN = "down"
OWN_ONLY = "own-only"
FLOOD = "flood"
FRESHNESS = "freshness"
TRANSPORT_MODES = (FRESHNESS, OWN_ONLY, FLOOD)

TRANSFER_LOG_COLUMNS = ("time", "satellite", "device", "direction", "owner", "age_at_send", "completed")


@dataclass(frozen=True)
class TimestampedModel:
    """A personalised model as it circulates in the satellite network.

    ``upload_time`` is the stamp used for freshness. ``trained_at`` is the sim
    time of the last parameter change and feeds the update-speed estimate.
    """

    owner: int
    params: np.ndarray
    upload_time: float
    trained_at: Optional[float] = None

    @property
    def train_time(self) -> float:
        return self.upload_time if self.trained_at is None else self.trained_at


class ModelCache:
    """At most one model per owner; entries are only ever replaced by strictly newer copies."""

    def __init__(self, holder, capacity: Optional[int] = None):
        self.holder = holder
        self.capacity = capacity
        self.entries: Dict[int, TimestampedModel] = {}

    def __contains__(self, owner: int) -> bool:
        return owner in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, owner: int) -> Optional[TimestampedModel]:
        return self.entries.get(owner)

    def timestamp(self, owner: int) -> float:
        e = self.entries.get(owner)
        return MISSING if e is None else e.upload_time

    def owners(self) -> List[int]:
        return sorted(self.entries)

    def put(self, model: TimestampedModel) -> Tuple[bool, Optional[TimestampedModel]]:
        """Insert ``model`` if strictly newer than the held copy.

        Returns ``(accepted, previous)``.
        """
        prev = self.entries.get(model.owner)
        if prev is not None and model.upload_time <= prev.upload_time:
            return False, prev
        if prev is None and self.capacity is not None and len(self.entries) >= self.capacity:
            stalest = min(self.entries.values(), key=lambda e: (e.upload_time, e.owner))
            if model.upload_time <= stalest.upload_time:
                return False, None
            del self.entries[stalest.owner]
        self.entries[model.owner] = model
        return True, prev

    def timestamps(self) -> Dict[int, float]:
        return {j: e.upload_time for j, e in self.entries.items()}

    def copy(self) -> "ModelCache":
        c = ModelCache(self.holder, self.capacity)
        c.entries = dict(self.entries)
        return c


def freshness(t: float, t_now: float, eta_f: float) -> float:
    if eta_f <= 0:
        raise ValueError("eta_f must be positive")
    if t == MISSING:
        return 1.0
    if t > t_now:
        raise ClockSkewError(f"model stamped at {t} is newer than the clock {t_now}")
    return -math.expm1(-eta_f * (t_now - t))


@dataclass
class TransferPlan:
    upload: List[Tuple[int, float]] = field(default_factory=list)
    download: List[Tuple[int, float]] = field(default_factory=list)


def build_transfer_plan(
    dev_cache: ModelCache,
    sat_cache: ModelCache,
    t_now: float,
    eta_f: float,
    epsilon: float = 1e-9,
) -> TransferPlan:
    """Upload/download queues ordered by descending freshness difference.

    The newer side of each owner's pair is the sender. Differences at or below
    ``epsilon`` (equal timestamps included) are dropped.
    """
    plan = TransferPlan()
    for j in sorted(set(dev_cache.entries) | set(sat_cache.entries)):
        td, ts = dev_cache.timestamp(j), sat_cache.timestamp(j)
        if td == ts:
            continue
        diff = abs(freshness(td, t_now, eta_f) - freshness(ts, t_now, eta_f))
        if diff <= epsilon:
            continue
        (plan.upload if td > ts else plan.download).append((j, diff))
    plan.upload.sort(key=lambda e: (-e[1], e[0]))
    plan.download.sort(key=lambda e: (-e[1], e[0]))
    return plan


@dataclass(frozen=True)
class LinkBudget:
    uplink_rate: float  # Mbit/s
    downlink_rate: float  # Mbit/s
    model_size: float  # Mbit
    window_remaining: float  # s

    @staticmethod
    def _count(rate: float, size: float, window: float) -> int:
        if math.isinf(window) or math.isinf(rate):
            return 1 << 62
        # tolerance keeps exact ratios like 6000.0/1.0 from flooring to n-1
        return max(0, int(math.floor(rate * window / size + 1e-9)))

    @property
    def max_uploads(self) -> int:
        return self._count(self.uplink_rate, self.model_size, self.window_remaining)

    @property
    def max_downloads(self) -> int:
        return self._count(self.downlink_rate, self.model_size, self.window_remaining)

    @property
    def model_bytes(self) -> int:
        return int(round(self.model_size * 1e6 / 8))

    @classmethod
    def unlimited(cls, model_size: float = 1.0) -> "LinkBudget":
        return cls(math.inf, math.inf, model_size, math.inf)


@dataclass
class TransferRecord:
    time: float
    satellite: int
    device: int
    direction: str
    owner: int
    age_at_send: float
    completed: bool
    accepted: bool = False
    bytes: int = 0
    model: Optional[TimestampedModel] = field(default=None, repr=False)
    previous: Optional[TimestampedModel] = field(default=None, repr=False)


def _send(
    log: List[TransferRecord],
    owners: Sequence[int],
    src: ModelCache,
    dst: ModelCache,
    limit: int,
    capacity_mbit: float,
    budget: LinkBudget,
    direction: str,
    t_now: float,
    device_id: int,
    satellite_id: int,
) -> None:
    for n, j in enumerate(owners):
        model = src.get(j)
        if model is None:
            continue
        age = t_now - model.upload_time
        if n >= limit:
            # the window closes mid-transfer; the partial copy is discarded
            partial = capacity_mbit - limit * budget.model_size
            if partial > 1e-12 and not math.isinf(partial):
                log.append(
                    TransferRecord(t_now, satellite_id, device_id, direction, j, age, False,
                                   bytes=int(round(partial * 1e6 / 8)))
                )
            return
        accepted, prev = dst.put(model)
        log.append(
            TransferRecord(t_now, satellite_id, device_id, direction, j, age, True, accepted,
                           budget.model_bytes, model, prev)
        )


def execute_session(
    plan: TransferPlan,
    dev_cache: ModelCache,
    sat_cache: ModelCache,
    budget: LinkBudget,
    *,
    t_now: float = 0.0,
    device_id: int = -1,
    satellite_id: int = -1,
) -> List[TransferRecord]:
    """Run a planned session. Uplink and downlink budgets are spent independently.

    Both queues are resolved against the caches as they were when the plan was
    built, so a model uploaded in this session is never echoed back down.
    """
    log: List[TransferRecord] = []
    downloads = [(j, sat_cache.get(j)) for j, _ in plan.download]
    _send(log, [j for j, _ in plan.upload], dev_cache, sat_cache, budget.max_uploads,
          budget.uplink_rate * budget.window_remaining, budget, UP, t_now, device_id, satellite_id)
    snapshot = ModelCache(sat_cache.holder)
    snapshot.entries = {j: m for j, m in downloads if m is not None}
    _send(log, [j for j, _ in plan.download], snapshot, dev_cache, budget.max_downloads,
          budget.downlink_rate * budget.window_remaining, budget, DOWN, t_now, device_id, satellite_id)
    return log


def naive_session(
    mode: str,
    dev_cache: ModelCache,
    sat_cache: ModelCache,
    budget: LinkBudget,
    *,
    t_now: float = 0.0,
    device_id: int = -1,
    satellite_id: int = -1,
) -> List[TransferRecord]:
    """Baseline transmission without freshness filtering.

    ``own-only`` uploads just the device's own model; ``flood`` uploads the
    whole device cache in ascending owner order. Both then download what the
    satellite holds, newest first, as far as the downlink budget allows. The
    device's own model is never echoed back to it.
    """
    if mode not in (OWN_ONLY, FLOOD):
        raise ValueError(f"unknown naive mode {mode!r}")
    log: List[TransferRecord] = []
    if mode == OWN_ONLY:
        up = [device_id] if device_id in dev_cache else []
    else:
        up = dev_cache.owners()
    _send(log, up, dev_cache, sat_cache, budget.max_uploads,
          budget.uplink_rate * budget.window_remaining, budget, UP, t_now, device_id, satellite_id)
    down = sorted(sat_cache.entries.values(), key=lambda e: (-e.upload_time, e.owner))
    _send(log, [e.owner for e in down if e.owner != device_id], sat_cache, dev_cache, budget.max_downloads,
          budget.downlink_rate * budget.window_remaining, budget, DOWN, t_now, device_id, satellite_id)
    return log


def redundancy_ratio(log: Iterable[TransferRecord]) -> float:
    """Completed transfers divided by those that strictly refreshed the recipient."""
    total = necessary = 0
    for rec in log:
        if rec.completed:
            total += 1
            necessary += rec.accepted
    if total == 0:
        raise DegenerateInputError("transfer log has no completed transfers")
    if necessary == 0:
        raise DegenerateInputError("no transfer refreshed its recipient")
    return total / necessary


def write_transfer_log(records: Iterable[TransferRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRANSFER_LOG_COLUMNS)
    for r in records:
        w.writerow([repr(float(r.time)), r.satellite, r.device, r.direction, r.owner,
                    repr(float(r.age_at_send)), int(r.completed)])


def transfer_log_csv(records: Iterable[TransferRecord]) -> str:
    buf = io.StringIO()
    write_transfer_log(records, buf)
    return buf.getvalue()
