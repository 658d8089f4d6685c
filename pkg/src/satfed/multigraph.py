"""Three-relation device multigraph: similarity, connection and computation edges.

Entries carry the sim time of their last write so replicas can be merged
last-writer-wins. Entries that never received evidence keep neutral defaults
(similarity 0, connection 1, computation 1), which reduce peer guidance to an
age-weighted plain average.
"""
from __future__ import annotations

import bisect
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ClockSkewError
from .params import l2_distance, safe_cosine
from .transport import MISSING, ModelCache, TimestampedModel

log = logging.getLogger(__name__)

S_FLOOR = 1e-12
MATRICES = ("sim", "con", "cmp")


class Multigraph:
    def __init__(self, m: int, window: float = math.inf):
        self.m = m
        self.window = window
        self.sim = np.zeros((m, m))
        self.con = np.ones((m, m))
        self.cmp = np.ones((m, m))
        self.sim_at = np.full((m, m), -np.inf)
        self.con_at = np.full((m, m), -np.inf)
        self.cmp_at = np.full((m, m), -np.inf)
        # server-contact times per device, and satellite deliveries j -> i
        self.cs_events: List[List[float]] = [[] for _ in range(m)]
        self.cd_events: Dict[Tuple[int, int], List[float]] = {}

    # -- counters (pruned on read)

    def _in_window(self, events: List[float], t_now: float) -> int:
        lo = bisect.bisect_right(events, t_now - self.window)
        hi = bisect.bisect_right(events, t_now)
        return hi - lo

    def cs_count(self, i: int, t_now: float) -> int:
        return self._in_window(self.cs_events[i], t_now)

    def cd_count(self, i: int, j: int, t_now: float) -> int:
        return self._in_window(self.cd_events.get((i, j), []), t_now)

    def record_server_contact(self, i: int, t: float) -> None:
        self.cs_events[i].append(t)

    def record_delivery(self, i: int, j: int, t: float) -> None:
        self.cd_events.setdefault((i, j), []).append(t)

    # -- bookkeeping

    def copy(self) -> "Multigraph":
        g = Multigraph(self.m, self.window)
        for name in MATRICES:
            setattr(g, name, getattr(self, name).copy())
            setattr(g, name + "_at", getattr(self, name + "_at").copy())
        g.cs_events = [list(e) for e in self.cs_events]
        g.cd_events = {k: list(v) for k, v in self.cd_events.items()}
        return g

    def fragment(self, since: float) -> "Multigraph":
        """Copy holding only entries written after ``since``; the rest look unwritten."""
        g = self.copy()
        for name in MATRICES:
            stale = getattr(g, name + "_at") <= since
            getattr(g, name + "_at")[stale] = -np.inf
        return g

    def equals(self, other: "Multigraph") -> bool:
        return (
            self.m == other.m
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in MATRICES)
            and all(np.array_equal(getattr(self, n + "_at"), getattr(other, n + "_at")) for n in MATRICES)
            and self.cs_events == other.cs_events
            and {k: v for k, v in self.cd_events.items() if v} == {k: v for k, v in other.cd_events.items() if v}
        )


@dataclass
class SpeedRecord:
    """Last observed snapshot of one device's model and its update speed."""

    last_time: float = MISSING
    params: Optional[np.ndarray] = field(default=None, repr=False)
    speed: Optional[float] = None

    def observe(self, params: np.ndarray, t: float) -> bool:
        """Feed a snapshot taken at ``t``; returns True when the speed was refreshed."""
        if self.params is None:
            self.params, self.last_time = params, t
            return False
        if t <= self.last_time:
            return False
        self.speed = l2_distance(params, self.params) / (t - self.last_time)
        self.params, self.last_time = params, t
        return True


def update_similarity(
    G: Multigraph,
    i: int,
    j: int,
    v_i: TimestampedModel,
    v_j: TimestampedModel,
    tau_conf: float,
    t_now: Optional[float] = None,
) -> float:
    """Confidence-weighted EMA of the cosine between two models, written to (i, j) and (j, i)."""
    cos, ok = safe_cosine(v_i.params, v_j.params)
    if not ok:
        return float(G.sim[i, j])
    kappa = math.exp(-abs(v_i.upload_time - v_j.upload_time) / tau_conf)
    val = kappa * cos + (1.0 - kappa) * G.sim[i, j]
    t = v_i.upload_time if t_now is None else t_now
    G.sim[i, j] = G.sim[j, i] = val
    G.sim_at[i, j] = G.sim_at[j, i] = t
    return float(val)


def connection_value(G: Multigraph, i: int, j: int, lambda_con: float, t_now: float) -> float:
    return (G.cs_count(j, t_now) + lambda_con * G.cd_count(i, j, t_now)) / max(G.cs_count(i, t_now), 1)


def update_connection(G: Multigraph, i: int, j: int, lambda_con: float, t_now: float) -> float:
    val = connection_value(G, i, j, lambda_con, t_now)
    G.con[i, j] = val
    G.con_at[i, j] = t_now
    return val


def refresh_connection(G: Multigraph, lambda_con: float, t_now: float) -> None:
    """Recompute every off-diagonal connection edge from the current counters."""
    cs = np.array([G.cs_count(k, t_now) for k in range(G.m)], dtype=np.float64)
    cd = np.zeros((G.m, G.m))
    for (a, b), ev in G.cd_events.items():
        if ev:
            cd[a, b] = G._in_window(ev, t_now)
    val = (cs[None, :] + lambda_con * cd) / np.maximum(cs, 1.0)[:, None]
    off = ~np.eye(G.m, dtype=bool)
    G.con[off] = val[off]
    G.con_at[off] = t_now


def update_computation(
    G: Multigraph,
    i: int,
    j: int,
    rec_i: SpeedRecord,
    rec_j: SpeedRecord,
    t_now: float,
    s_floor: float = S_FLOOR,
) -> Optional[float]:
    """Set A_cmp(i, j) = S_j / S_i and its reciprocal; no-op until both speeds exist."""
    if rec_i.speed is None or rec_j.speed is None or i == j:
        return None
    si, sj = rec_i.speed, rec_j.speed
    G.cmp[i, j] = sj / max(si, s_floor)
    G.cmp[j, i] = si / max(sj, s_floor)
    G.cmp_at[i, j] = G.cmp_at[j, i] = t_now
    return float(G.cmp[i, j])


def dependency(G: Multigraph, i: int, j: int, alpha: float) -> float:
    return float(G.sim[i, j] + alpha * G.con[i, j])


def peer_guide(
    cache: ModelCache,
    G: Multigraph,
    t_now: float,
    alpha: float,
    tau_age: float,
    i: Optional[int] = None,
) -> Optional[np.ndarray]:
    """Normalised, age-discounted, dependency-weighted mean of the cached peer models.

    Returns None when there is no usable peer (empty cache or all weights zero).
    """
    i = cache.holder if i is None else i
    total = 0.0
    acc = None
    for j in cache.owners():
        if j == i:
            continue
        e = cache.entries[j]
        w = math.exp(-(t_now - e.upload_time) / tau_age) * max(dependency(G, i, j, alpha), 0.0)
        if w <= 0.0:
            continue
        acc = w * e.params if acc is None else acc + w * e.params
        total += w
    if acc is None or total <= 0.0:
        return None
    return acc / total


def update_scale(G: Multigraph, i: int) -> float:
    """Average of row ``i`` of the computation edges (unmeasured entries count as 1)."""
    row = G.cmp[i]
    if not np.all(np.isfinite(row)):
        return math.nan
    return float(row.mean())


def adaptive_lr(G: Multigraph, i: int, eta: float, gamma: float) -> float:
    u = update_scale(G, i)
    if not math.isfinite(u):
        return eta
    return eta * (1.0 + gamma * math.log(max(1.0, u)))


def merge_graph(base: Multigraph, delta: Multigraph, *, t_now: Optional[float] = None,
                counters_from: str = "base") -> Multigraph:
    """Per-entry last-writer-wins merge; ties keep ``base``.

    ``counters_from`` names the side whose server-contact counts are kept:
    the server's copy is authoritative, so merging a device delta into the
    server uses ``"base"`` and refreshing a device from the server uses ``"delta"``.
    """
    if base.m != delta.m:
        raise ValueError("graphs of different size")
    if t_now is not None:
        for name in MATRICES:
            if np.any(getattr(delta, name + "_at") > t_now):
                raise ClockSkewError(f"delta entry in {name} is stamped after {t_now}")
    out = base.copy()
    for name in MATRICES:
        at_b, at_d = getattr(base, name + "_at"), getattr(delta, name + "_at")
        newer = at_d > at_b
        getattr(out, name)[newer] = getattr(delta, name)[newer]
        getattr(out, name + "_at")[newer] = at_d[newer]
    if counters_from == "delta":
        out.cs_events = [list(e) for e in delta.cs_events]
    for key, ev in delta.cd_events.items():
        mine = out.cd_events.get(key, [])
        if ev and (not mine or ev[-1] > mine[-1]):
            out.cd_events[key] = list(ev)
    return out


def graph_csv(G: Multigraph, name: str) -> str:
    """CSV text for one relation (``sim``, ``con`` or ``cmp``): columns i, j, value, updated_at."""
    vals, ats = getattr(G, name), getattr(G, name + "_at")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("i", "j", "value", "updated_at"))
    for a in range(G.m):
        for b in range(G.m):
            w.writerow((a, b, repr(float(vals[a, b])), repr(float(ats[a, b]))))
    return buf.getvalue()


def write_graph_csv(G: Multigraph, out_dir) -> List[Path]:
    """Write ``A_sim.csv``, ``A_con.csv`` and ``A_cmp.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in MATRICES:
        path = out_dir / f"A_{name}.csv"
        path.write_text(graph_csv(G, name), encoding="utf-8", newline="")
        paths.append(path)
    return paths
