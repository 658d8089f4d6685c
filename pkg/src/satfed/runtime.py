"""Training protocols and the discrete-event driver.

All asynchronous methods share one timing model: every device starts a local
round every ``local_round_s`` seconds, trains as many steps as its compute
rate allows, and tries to push the resulting global-model copy to the server
at the start of the next round. Stragglers are blocked with probability
``blockage_prob`` per attempt and retry every ``retry_s``. A device that has
not heard from the server since its last round keeps training its own
global-model copy instead of restarting from a stale one.

FedAvg and Ditto run a synchronous barrier instead: the next round starts only
after every device's update has reached the server.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constellation as cst
from .data import class_means, dirichlet_partition, sample_mixture
from .errors import ConfigurationError, DivergenceError
from .multigraph import (
    Multigraph,
    SpeedRecord,
    adaptive_lr,
    merge_graph,
    peer_guide,
    refresh_connection,
    update_computation,
    update_connection,
    update_similarity,
)
from .params import Dataset, ModelSpec, accuracy, init_params, loss_and_grad
from .scenario import METHODS, Scenario
from .transport import (
    FRESHNESS,
    LinkBudget,
    ModelCache,
    TimestampedModel,
    TransferRecord,
    build_transfer_plan,
    execute_session,
    naive_session,
)

log = logging.getLogger(__name__)

PERSONALIZED = ("ditto", "ditto-async", "satfed-minus", "satfed")
SYNCHRONOUS = ("fedavg", "ditto")
SATELLITE = ("satfed-minus", "satfed")

METRIC_COLUMNS = (
    "sim_time_s", "method", "device_id", "test_accuracy", "personalized_flag",
    "terrestrial_bytes", "satellite_up_bytes", "satellite_down_bytes", "eta_effective",
)

# stream ids for seed derivation; shared by all methods so runs are paired
_TOPOLOGY, _SCHEDULE, _DATA, _PARTITION, _SPLIT, _ROLES, _INIT, _BATCH, _LINK = range(9)


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, *key]))


def _seed(master_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([master_seed, *key]).generate_state(1)[0])


@dataclass
class Hyperparams:
    eta: float = 0.05
    mu: float = 0.01
    lambda_sat: float = 0.1
    alpha: float = 0.05
    gamma: float = 1.0
    beta: float = 0.3
    R: int = 5
    batch_size: int = 16
    method: str = "satfed"
    lambda_con: float = 1.0
    tau_conf: float = 6000.0
    tau_age: float = 6000.0
    eta_f: float = 1.0 / 6000.0
    epsilon: float = 1e-9

    def __post_init__(self):
        if self.eta <= 0 or self.mu < 0 or self.lambda_sat < 0 or self.R < 1:
            raise ConfigurationError("need eta > 0, mu >= 0, lambda_sat >= 0, R >= 1")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")

    @classmethod
    def from_scenario(cls, s: Scenario, method: Optional[str] = None) -> "Hyperparams":
        return cls(
            eta=s.eta, mu=s.mu, lambda_sat=s.lambda_sat, alpha=s.alpha, gamma=s.gamma, beta=s.beta,
            R=s.local_epochs, batch_size=s.batch_size, method=method or s.method,
            lambda_con=s.lambda_con, tau_conf=s.tau_conf_resolved, tau_age=s.tau_age_resolved,
            eta_f=s.eta_f_resolved, epsilon=s.epsilon,
        )


@dataclass
class DeviceState:
    id: int
    spec: ModelSpec
    v: np.ndarray
    omega_local: np.ndarray
    train: Dataset
    test: Dataset
    compute_rate: float = 1.0  # gradient steps per simulated second
    straggler: bool = False
    blockage_prob: float = 0.0
    retry_s: float = 1800.0
    terrestrial_mbps: float = 200.0
    compute_time_s: float = 1800.0
    cache: ModelCache = None
    graph: Multigraph = None
    rng: np.random.Generator = None
    link_rng: np.random.Generator = None
    omega_latest: Optional[np.ndarray] = None
    fresh_global: bool = True
    v_trained_at: float = 0.0
    speeds: Dict[int, SpeedRecord] = field(default_factory=dict)
    eta_effective: float = math.nan
    rounds: int = 0
    pending: Optional[np.ndarray] = None
    retry_scheduled: bool = False

    def __post_init__(self):
        if self.cache is None:
            self.cache = ModelCache(self.id)
        if self.rng is None:
            self.rng = np.random.default_rng(self.id)
        if self.link_rng is None:
            self.link_rng = np.random.default_rng(10_000 + self.id)
        if self.v.shape != (self.spec.dim,) or self.omega_local.shape != (self.spec.dim,):
            raise ConfigurationError(f"device {self.id}: parameter vectors must have length {self.spec.dim}")


@dataclass
class ServerState:
    omega: np.ndarray
    beta: float = 0.3
    graph: Optional[Multigraph] = None
    lambda_con: float = 1.0
    receive_log: List[Tuple[float, int]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError("beta must lie in (0, 1]")


# ---------------------------------------------------------------- local updates


def sample_batch(dev: DeviceState, batch_size: int) -> Dataset:
    n = len(dev.train)
    if n <= batch_size:
        return dev.train
    return dev.train.subset(np.sort(dev.rng.choice(n, size=batch_size, replace=False)))


def _check_finite(vec: np.ndarray, dev: DeviceState, what: str) -> None:
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(dev.id, dev.rounds, what)


def local_update_satfed(
    dev: DeviceState,
    omega_star: np.ndarray,
    hp: Hyperparams,
    t_now: float,
    n_steps: Optional[int] = None,
    *,
    use_guide: bool = True,
    adapt_lr: bool = True,
    trace: Optional[list] = None,
) -> np.ndarray:
    """One LocalUpdate: trains the global copy and the personalised model side by side.

    Each iteration samples one batch, takes an ``eta_i`` step on the global
    copy, then an ``eta`` step on ``v`` along the supervised gradient plus the
    pulls towards the fresh global copy (``mu``) and the peer guide
    (``lambda_sat``). Returns the new global copy; ``dev.v`` is replaced.
    """
    n_steps = hp.R if n_steps is None else n_steps
    guide = None
    if use_guide and hp.lambda_sat > 0:
        guide = peer_guide(dev.cache, dev.graph, t_now, hp.alpha, hp.tau_age, i=dev.id)
    eta_i = adaptive_lr(dev.graph, dev.id, hp.eta, hp.gamma) if adapt_lr and dev.graph is not None else hp.eta
    w = np.array(omega_star, dtype=np.float64, copy=True)
    v = dev.v
    for _ in range(n_steps):
        batch = sample_batch(dev, hp.batch_size)
        _, gw = loss_and_grad(w, dev.spec, batch)
        w = w - eta_i * gw
        _, gv = loss_and_grad(v, dev.spec, batch)
        # all three terms are evaluated at the same v
        if guide is None:
            v = v - hp.eta * gv - hp.eta * hp.mu * (v - w)
        else:
            v = v - hp.eta * gv - hp.eta * hp.mu * (v - w) - hp.eta * hp.lambda_sat * (v - guide)
        _check_finite(w, dev, "global copy")
        _check_finite(v, dev, "personalised model")
        if trace is not None:
            trace.append((w.copy(), v.copy()))
    dev.v = v
    dev.eta_effective = eta_i
    return w


def local_update_ditto(dev: DeviceState, omega_star: np.ndarray, hp: Hyperparams,
                       n_steps: Optional[int] = None, trace: Optional[list] = None) -> np.ndarray:
    return local_update_satfed(dev, omega_star, hp, 0.0, n_steps, use_guide=False, adapt_lr=False, trace=trace)


def local_update_global(dev: DeviceState, omega_star: np.ndarray, hp: Hyperparams,
                        n_steps: Optional[int] = None) -> np.ndarray:
    """Plain SGD on the global copy only (FedAvg / FedAsync)."""
    n_steps = hp.R if n_steps is None else n_steps
    w = np.array(omega_star, dtype=np.float64, copy=True)
    for _ in range(n_steps):
        _, gw = loss_and_grad(w, dev.spec, sample_batch(dev, hp.batch_size))
        w = w - hp.eta * gw
        _check_finite(w, dev, "global copy")
    dev.eta_effective = hp.eta
    return w


def step_budget(dev: DeviceState, hp: Hyperparams, local_round_s: float) -> int:
    """Gradient steps a device completes in one clocked round, capped at R epochs."""
    steps = int(math.floor(dev.compute_rate * local_round_s + 1e-9))
    cap = hp.R * int(math.ceil(len(dev.train) / hp.batch_size))
    return max(1, min(steps, cap))


def iterations_for(method: str, budget: int) -> int:
    # personalised methods split the step budget between the two models
    return max(1, budget // 2) if method in PERSONALIZED else budget


# ---------------------------------------------------------------- server


def server_aggregate_async(srv: ServerState, omega_i: np.ndarray, device_id: Optional[int] = None,
                           t: float = 0.0) -> np.ndarray:
    omega_i = np.asarray(omega_i, dtype=np.float64)
    if omega_i.shape != srv.omega.shape:
        raise ConfigurationError(f"update has shape {omega_i.shape}, server model {srv.omega.shape}")
    srv.omega = srv.beta * omega_i + (1.0 - srv.beta) * srv.omega
    if not np.all(np.isfinite(srv.omega)):
        raise DivergenceError(-1 if device_id is None else device_id, len(srv.receive_log), "server aggregate")
    if device_id is not None:
        srv.receive_log.append((t, device_id))
        if srv.graph is not None:
            srv.graph.record_server_contact(device_id, t)
            refresh_connection(srv.graph, srv.lambda_con, t)
    return srv.omega


def upload_delay(dev: DeviceState, model_size_mbit: float, first_attempts: Optional[list] = None) -> float:
    """Time from the end of local compute until the update reaches the server."""
    delay = 0.0
    first = True
    while True:
        blocked = dev.straggler and dev.link_rng.random() < dev.blockage_prob
        if first and first_attempts is not None and dev.straggler:
            first_attempts.append(blocked)
        first = False
        if not blocked:
            return delay + model_size_mbit / dev.terrestrial_mbps
        delay += dev.retry_s


def run_fedavg_round(
    devices: Sequence[DeviceState],
    srv: ServerState,
    hp: Hyperparams,
    *,
    n_steps: Optional[Sequence[int]] = None,
    model_size_mbit: float = 1.0,
    first_attempts: Optional[list] = None,
) -> Tuple[np.ndarray, float]:
    """One synchronous round. Returns the new global model and the round duration.

    Every device starts from the current global model; the round lasts until the
    slowest device's update (compute plus upload, retries included) arrives.
    """
    updates, sizes, durations = [], [], []
    for k, dev in enumerate(devices):
        steps = None if n_steps is None else n_steps[k]
        if hp.method == "ditto":
            w = local_update_ditto(dev, srv.omega, hp, steps)
        else:
            w = local_update_global(dev, srv.omega, hp, steps)
        dev.omega_local = w
        updates.append(w)
        sizes.append(len(dev.train))
        durations.append(dev.compute_time_s + upload_delay(dev, model_size_mbit, first_attempts))
    weights = np.asarray(sizes, dtype=np.float64) / float(sum(sizes))
    srv.omega = np.sum([wt * u for wt, u in zip(weights, updates)], axis=0)
    return srv.omega, max(durations)


# ---------------------------------------------------------------- metrics


@dataclass
class MetricRecord:
    sim_time_s: float
    method: str
    device_id: str
    test_accuracy: float
    personalized_flag: int
    terrestrial_bytes: int
    satellite_up_bytes: int
    satellite_down_bytes: int
    eta_effective: float

    def row(self) -> list:
        return [repr(float(self.sim_time_s)), self.method, self.device_id, repr(float(self.test_accuracy)),
                self.personalized_flag, self.terrestrial_bytes, self.satellite_up_bytes,
                self.satellite_down_bytes, repr(float(self.eta_effective))]


class MetricsSeries:
    def __init__(self, records: Optional[List[MetricRecord]] = None):
        self.records: List[MetricRecord] = records or []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: MetricRecord) -> None:
        self.records.append(rec)

    def aggregate(self) -> Tuple[np.ndarray, np.ndarray]:
        """(times, mean accuracy) from the AGG rows."""
        agg = [r for r in self.records if r.device_id == "AGG"]
        return (np.array([r.sim_time_s for r in agg]), np.array([r.test_accuracy for r in agg]))

    def device_accuracies(self, t: float) -> np.ndarray:
        return np.array([r.test_accuracy for r in self.records if r.sim_time_s == t and r.device_id != "AGG"])

    def final_accuracy(self, tail: int = 1) -> float:
        """Mean of the last ``tail`` aggregate accuracies."""
        _, acc = self.aggregate()
        return float(np.mean(acc[-tail:]))

    def time_to_accuracy(self, target: float) -> float:
        times, acc = self.aggregate()
        hit = np.flatnonzero(acc >= target)
        return float(times[hit[0]]) if hit.size else math.inf

    def final_row(self, column: str) -> float:
        agg = [r for r in self.records if r.device_id == "AGG"]
        return getattr(agg[-1], column)

    def to_csv(self, fh=None, header: bool = True) -> Optional[str]:
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        if header:
            w.writerow(METRIC_COLUMNS)
        for r in self.records:
            w.writerow(r.row())
        return None if fh is not None else out.getvalue()


@dataclass
class RunTrace:
    """Optional instrumentation filled in by :func:`simulate`."""

    server: List[Tuple[float, int, np.ndarray]] = field(default_factory=list)
    eta: List[Tuple[float, int, float]] = field(default_factory=list)
    round_starts: List[Tuple[float, int]] = field(default_factory=list)
    first_attempts: List[bool] = field(default_factory=list)
    local_steps: List[Tuple[float, int, list]] = field(default_factory=list)
    record_steps: bool = False


@dataclass
class SimulationResult:
    method: str
    metrics: MetricsSeries
    transfers: List[TransferRecord]
    server: ServerState
    devices: List[DeviceState]
    topology: Optional[cst.Topology]
    trace: RunTrace


# ---------------------------------------------------------------- world construction


@dataclass
class World:
    scenario: Scenario
    topology: cst.Topology
    windows: List[cst.ContactWindow]
    shards: List[Tuple[Dataset, Dataset]]
    stragglers: np.ndarray
    compute_limited: np.ndarray
    init: np.ndarray


def device_pool(m: int, alpha: float, master_seed: int, n_classes: int = 10, n_features: int = 10,
                separation: float = 3.0, size_range: Tuple[int, int] = (150, 200)):
    """Balanced labelled pool of ``m * mean(size_range)`` samples, Dirichlet-split over ``m`` devices.

    Returns ``(X, labels, parts)``.
    """
    rng = _rng(master_seed, _DATA)
    means = class_means(n_classes, n_features, separation, rng)
    lo, hi = size_range
    n_total = int(round(m * (lo + hi) / 2))
    labels = rng.permutation(np.arange(n_total) % n_classes)
    X = sample_mixture(means, labels, rng)
    parts = dirichlet_partition(labels, alpha, m, _seed(master_seed, _PARTITION), min_samples=2)
    return X, labels, parts


def build_world(s: Scenario) -> World:
    """Everything a run needs that does not depend on the method."""
    seed = s.master_seed
    topo = cst.build_topology(s.m, s.n_orbits, s.devices_per_orbit, s.sats_per_orbit, _seed(seed, _TOPOLOGY))
    windows = cst.contact_schedule(topo, s.orbit_period_s, s.contact_s, s.horizon_s, _seed(seed, _SCHEDULE))

    X, labels, parts = device_pool(s.m, s.dirichlet_alpha, seed, s.n_classes, s.n_features,
                                   s.separation, s.samples_per_device_range)
    split_rng = _rng(seed, _SPLIT)
    shards = []
    for idx in parts:
        idx = split_rng.permutation(idx)
        n_test = min(max(1, int(round(s.test_fraction * idx.size))), idx.size - 1)
        shards.append((Dataset(X[idx[n_test:]], labels[idx[n_test:]]), Dataset(X[idx[:n_test]], labels[idx[:n_test]])))

    role_rng = _rng(seed, _ROLES)
    stragglers = np.zeros(s.m, dtype=bool)
    stragglers[role_rng.permutation(s.m)[: int(round(s.straggler_fraction * s.m))]] = True
    limited = np.zeros(s.m, dtype=bool)
    limited[role_rng.permutation(s.m)[: int(round(s.compute_limited_fraction * s.m))]] = True
    init = init_params(s.model_spec, _seed(seed, _INIT))
    return World(s, topo, windows, shards, stragglers, limited, init)


def make_devices(world: World, method: str) -> List[DeviceState]:
    s = world.scenario
    devices = []
    for i in range(s.m):
        rate = s.step_rate_per_s / (s.compute_ratio if world.compute_limited[i] else 1.0)
        dev = DeviceState(
            id=i, spec=s.model_spec, v=world.init.copy(), omega_local=world.init.copy(),
            train=world.shards[i][0], test=world.shards[i][1], compute_rate=rate,
            straggler=bool(world.stragglers[i]), blockage_prob=s.blockage_prob, retry_s=s.retry_s,
            terrestrial_mbps=s.terrestrial_mbps, compute_time_s=s.local_round_s,
            rng=_rng(s.master_seed, _BATCH, i), link_rng=_rng(s.master_seed, _LINK, i),
            omega_latest=world.init.copy(),
        )
        dev.graph = Multigraph(s.m, s.window_resolved)
        dev.eta_effective = s.eta
        devices.append(dev)
    return devices


# ---------------------------------------------------------------- simulation


class _Sim:
    def __init__(self, s: Scenario, method: str, world: World, trace: RunTrace):
        self.s = s
        self.method = method
        self.hp = Hyperparams.from_scenario(s, method)
        self.world = world
        self.trace = trace
        self.devices = make_devices(world, method)
        self.server = ServerState(world.init.copy(), s.beta, Multigraph(s.m, s.window_resolved), s.lambda_con)
        self.model_bytes = int(round(s.model_size_mbit * 1e6 / 8))
        self.terr_bytes = np.zeros(s.m, dtype=np.int64)
        self.up_bytes = np.zeros(s.m, dtype=np.int64)
        self.down_bytes = np.zeros(s.m, dtype=np.int64)
        self.transfers: List[TransferRecord] = []
        self.metrics = MetricsSeries()
        self.personalized = method in PERSONALIZED
        self.sat_caches: Dict[int, ModelCache] = {}

    # -- evaluation

    def evaluate(self, t: float, held=None) -> None:
        """Record accuracies at ``t``; ``held`` maps device id to the (v, omega) in effect."""
        accs = []
        for dev in self.devices:
            v, omega = held[dev.id] if held is not None else (dev.v, self.server.omega)
            params = v if self.personalized else omega
            acc = accuracy(params, dev.spec, dev.test)
            accs.append(acc)
            self.metrics.append(MetricRecord(
                t, self.method, str(dev.id), acc, int(self.personalized), int(self.terr_bytes[dev.id]),
                int(self.up_bytes[dev.id]), int(self.down_bytes[dev.id]), dev.eta_effective))
        self.metrics.append(MetricRecord(
            t, self.method, "AGG", float(np.mean(accs)), int(self.personalized), int(self.terr_bytes.sum()),
            int(self.up_bytes.sum()), int(self.down_bytes.sum()),
            float(np.mean([d.eta_effective for d in self.devices]))))

    def ticks(self) -> np.ndarray:
        n = int(math.floor(self.s.horizon_s / self.s.eval_interval_s + 1e-9))
        return np.arange(n + 1) * self.s.eval_interval_s

    # -- synchronous methods

    def run_sync(self) -> None:
        s, hp = self.s, self.hp
        ticks = list(self.ticks())
        t = 0.0
        while t <= s.horizon_s and ticks:
            for dev in self.devices:
                self.trace.round_starts.append((t, dev.id))
                dev.rounds += 1
            steps = [iterations_for(self.method, step_budget(d, hp, s.local_round_s)) for d in self.devices]
            # the round runs over [t, t_end); ticks inside it still see the old models
            held = {d.id: (d.v, self.server.omega) for d in self.devices}
            new_omega, duration = run_fedavg_round(
                self.devices, self.server, hp, n_steps=steps, model_size_mbit=s.model_size_mbit,
                first_attempts=self.trace.first_attempts)
            for dev in self.devices:
                dev.v_trained_at = t
                self.trace.eta.append((t, dev.id, dev.eta_effective))
            t_end = t + duration
            while ticks and ticks[0] < t_end:
                self.evaluate(ticks.pop(0), held)
            self.server.omega = new_omega
            for dev in self.devices:
                self.server.receive_log.append((t_end, dev.id))
                self.terr_bytes[dev.id] += 2 * self.model_bytes
            self.trace.server.append((t_end, -1, new_omega.copy()))
            t = t_end

    # -- asynchronous methods

    def run_async(self) -> None:
        s = self.s
        q = cst.EventQueue()
        # a round event marks the end of a round of local compute
        for dev in self.devices:
            q.schedule(s.local_round_s, cst.LOCAL_ROUND_START, dev.id)
        if self.method in SATELLITE:
            for w in self.world.windows:
                q.schedule(w.start, cst.CONTACT_START, w.device_id, w.satellite_id, w)
                q.schedule(w.end, cst.CONTACT_END, w.device_id, w.satellite_id, w)
        for tick in self.ticks():
            q.schedule(float(tick), cst.EVALUATE)
        handlers: Dict[str, Callable] = {
            cst.LOCAL_ROUND_START: self.on_round_start,
            cst.LINK_RETRY: self.on_retry,
            cst.SERVER_RECEIVE: self.on_server_receive,
            cst.CONTACT_START: self.on_contact,
            cst.CONTACT_END: lambda ev: None,
            cst.EVALUATE: lambda ev: self.evaluate(ev.time),
        }
        while q:
            ev = q.pop()
            if ev.time > s.horizon_s:
                break
            out = handlers[ev.kind](ev)
            if out:
                for follow in out:
                    q.push(follow)

    def attempt_upload(self, dev: DeviceState, t: float, first: bool):
        blocked = dev.straggler and dev.link_rng.random() < dev.blockage_prob
        if first and dev.straggler:
            self.trace.first_attempts.append(blocked)
        if blocked:
            dev.retry_scheduled = True
            return [cst.Event(t + dev.retry_s, cst.LINK_RETRY, dev.id)]
        payload = (dev.pending, dev.graph.copy() if self.method in SATELLITE else None)
        dev.pending = None
        self.terr_bytes[dev.id] += self.model_bytes
        return [cst.Event(t + self.s.model_size_mbit / dev.terrestrial_mbps, cst.SERVER_RECEIVE, dev.id, -1, payload)]

    def on_round_start(self, ev: cst.Event):
        dev, t, s = self.devices[ev.device], ev.time, self.s
        out = []
        if dev.pending is not None and not dev.retry_scheduled:
            out += self.attempt_upload(dev, t, first=True)
        base = dev.omega_latest if dev.fresh_global else dev.omega_local
        dev.fresh_global = False
        dev.rounds += 1
        self.trace.round_starts.append((t, dev.id))
        n = iterations_for(self.method, step_budget(dev, self.hp, s.local_round_s))
        steps = [] if self.trace.record_steps else None
        if self.method == "fedasync":
            w = local_update_global(dev, base, self.hp, n)
        elif self.method == "ditto-async":
            w = local_update_ditto(dev, base, self.hp, n, trace=steps)
        else:
            w = local_update_satfed(dev, base, self.hp, t, n, use_guide=self.method == "satfed", trace=steps)
        if steps is not None:
            self.trace.local_steps.append((t, dev.id, steps))
        dev.omega_local = w
        dev.pending = w
        dev.v_trained_at = t
        if self.method in SATELLITE:
            # a device always sees its own update speed
            dev.speeds.setdefault(dev.id, SpeedRecord()).observe(dev.v.copy(), t)
        self.trace.eta.append((t, dev.id, dev.eta_effective))
        nxt = t + s.local_round_s
        if nxt <= s.horizon_s:
            out.append(cst.Event(nxt, cst.LOCAL_ROUND_START, dev.id))
        return out

    def on_retry(self, ev: cst.Event):
        dev = self.devices[ev.device]
        dev.retry_scheduled = False
        if dev.pending is None:
            return None
        return self.attempt_upload(dev, ev.time, first=False)

    def on_server_receive(self, ev: cst.Event):
        dev, t = self.devices[ev.device], ev.time
        omega_i, delta = ev.payload
        srv = self.server
        if delta is not None:
            srv.graph = merge_graph(srv.graph, delta, t_now=t, counters_from="base")
        server_aggregate_async(srv, omega_i, dev.id, t)
        self.trace.server.append((t, dev.id, srv.omega.copy()))
        # reply with the fresh global model (and graph) on the same link
        dev.omega_latest = srv.omega.copy()
        dev.fresh_global = True
        self.terr_bytes[dev.id] += self.model_bytes
        if delta is not None:
            dev.graph = merge_graph(dev.graph, srv.graph, counters_from="delta")
        return None

    def sat_cache(self, satellite: int) -> ModelCache:
        key = satellite if self.s.per_satellite_cache else self.world.topology.orbit_of_satellite[satellite]
        cache = self.sat_caches.get(key)
        if cache is None:
            cache = self.sat_caches[key] = ModelCache(("sat", key))
        return cache

    def on_contact(self, ev: cst.Event):
        dev, t, s = self.devices[ev.device], ev.time, self.s
        window: cst.ContactWindow = ev.payload
        i = dev.id
        own = TimestampedModel(i, dev.v.copy(), t, dev.v_trained_at)
        dev.cache.put(own)
        sat = self.sat_cache(ev.satellite)
        budget = LinkBudget(s.up_mbps, s.down_mbps, s.model_size_mbit, window.duration)
        if s.transport_mode == FRESHNESS:
            plan = build_transfer_plan(dev.cache, sat, t, self.hp.eta_f, self.hp.epsilon)
            records = execute_session(plan, dev.cache, sat, budget, t_now=t, device_id=i, satellite_id=ev.satellite)
        else:
            records = naive_session(s.transport_mode, dev.cache, sat, budget, t_now=t, device_id=i,
                                    satellite_id=ev.satellite)
        for rec in records:
            (self.up_bytes if rec.direction == "up" else self.down_bytes)[i] += rec.bytes
            if rec.completed and rec.accepted and rec.direction == "down" and rec.owner != i:
                self.on_download(dev, rec.model, t)
        self.transfers.extend(records)
        return None

    def on_download(self, dev: DeviceState, model: TimestampedModel, t: float) -> None:
        i, j, hp = dev.id, model.owner, self.hp
        G = dev.graph
        G.record_delivery(i, j, t)
        update_similarity(G, i, j, TimestampedModel(i, dev.v, t), model, hp.tau_conf, t_now=t)
        update_connection(G, i, j, hp.lambda_con, t)
        rec_j = dev.speeds.setdefault(j, SpeedRecord())
        if rec_j.observe(model.params, model.train_time) or rec_j.speed is not None:
            update_computation(G, i, j, dev.speeds.setdefault(i, SpeedRecord()), rec_j, t)

    def run(self) -> SimulationResult:
        if self.method in SYNCHRONOUS:
            self.run_sync()
        else:
            self.run_async()
        return SimulationResult(self.method, self.metrics, self.transfers, self.server, self.devices,
                                self.world.topology, self.trace)


def simulate(s: Scenario, method: Optional[str] = None, *, world: Optional[World] = None,
             trace: Optional[RunTrace] = None) -> SimulationResult:
    """Drive one method over the scenario's horizon."""
    method = method or s.method
    if method not in METHODS:
        raise ConfigurationError(f"method: must be one of {METHODS}, got {method!r}")
    world = world or build_world(s)
    return _Sim(s, method, world, trace or RunTrace()).run()


def run_method(s: Scenario, method: Optional[str] = None) -> MetricsSeries:
    return simulate(s, method).metrics
