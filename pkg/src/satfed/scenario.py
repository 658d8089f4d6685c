"""Scenario configuration: a flat dataclass grouped into TOML sections.

Keys carry their units (``orbit_period_s``, ``up_mbps``). Optional timescales
left unset resolve from the orbit period: ``eta_f = 1/period``,
``tau_conf = tau_age = period`` and ``window_s = 3 * period``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import tomli
import tomli_w

from .errors import ConfigurationError
from .params import MODEL_KINDS, ModelSpec
from .transport import TRANSPORT_MODES

METHODS = ("fedavg", "fedasync", "ditto", "ditto-async", "satfed-minus", "satfed")


def _f(default, section, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class Scenario:
    # topology
    m: int = _f(20, "topology")
    n_orbits: int = _f(10, "topology")
    devices_per_orbit: int = _f(3, "topology")
    sats_per_orbit: int = _f(2, "topology")
    per_satellite_cache: bool = _f(False, "topology")
    # timing
    orbit_period_s: float = _f(6000.0, "timing")
    contact_s: float = _f(600.0, "timing")
    local_round_s: float = _f(1800.0, "timing")
    horizon_s: float = _f(259200.0, "timing")
    eval_interval_s: float = _f(3600.0, "timing")
    # links and heterogeneity
    up_mbps: float = _f(10.0, "links")
    down_mbps: float = _f(100.0, "links")
    model_size_mbit: float = _f(1.0, "links")
    terrestrial_mbps: float = _f(200.0, "links")
    straggler_fraction: float = _f(0.5, "links")
    blockage_prob: float = _f(0.9, "links")
    retry_s: float = _f(1800.0, "links")
    compute_limited_fraction: float = _f(0.5, "links")
    compute_ratio: float = _f(5.0, "links")
    step_rate_per_s: float = _f(0.02, "links")
    transport_mode: str = _f("freshness", "links")
    # data and model
    n_classes: int = _f(10, "data")
    n_features: int = _f(10, "data")
    samples_per_device_range: Tuple[int, int] = _f((150, 200), "data")
    dirichlet_alpha: float = _f(0.2, "data")
    test_fraction: float = _f(0.25, "data")
    separation: float = _f(3.0, "data")
    model_kind: str = _f("softmax-regression", "data")
    hidden_width: int = _f(16, "data")
    # hyperparameters
    eta: float = _f(0.05, "hyper")
    mu: float = _f(0.01, "hyper")
    lambda_sat: float = _f(0.1, "hyper")
    lambda_con: float = _f(1.0, "hyper")
    alpha: float = _f(0.05, "hyper")
    gamma: float = _f(1.0, "hyper")
    beta: float = _f(0.3, "hyper")
    local_epochs: int = _f(5, "hyper")
    batch_size: int = _f(16, "hyper")
    epsilon: float = _f(1e-9, "hyper")
    eta_f: Optional[float] = _f(None, "hyper")
    tau_conf: Optional[float] = _f(None, "hyper")
    tau_age: Optional[float] = _f(None, "hyper")
    window_s: Optional[float] = _f(None, "hyper")
    # run
    method: str = _f("satfed", "run")
    master_seed: int = _f(0, "run")

    def __post_init__(self):
        object.__setattr__(self, "samples_per_device_range", tuple(int(x) for x in self.samples_per_device_range))
        validate(self)

    # resolved timescales
    @property
    def eta_f_resolved(self) -> float:
        return self.eta_f if self.eta_f is not None else 1.0 / self.orbit_period_s

    @property
    def tau_conf_resolved(self) -> float:
        return self.tau_conf if self.tau_conf is not None else self.orbit_period_s

    @property
    def tau_age_resolved(self) -> float:
        return self.tau_age if self.tau_age is not None else self.orbit_period_s

    @property
    def window_resolved(self) -> float:
        return self.window_s if self.window_s is not None else 3.0 * self.orbit_period_s

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model_kind, self.n_features, self.n_classes, self.hidden_width)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


def _require(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ConfigurationError(f"{name}: {msg}")


def validate(s: Scenario) -> None:
    _require(s.m >= 1, "m", "must be >= 1")
    _require(s.n_orbits >= 1, "n_orbits", "must be >= 1")
    _require(1 <= s.devices_per_orbit <= s.m, "devices_per_orbit", f"must lie in [1, m={s.m}]")
    _require(s.n_orbits * s.devices_per_orbit >= s.m, "devices_per_orbit",
             "n_orbits * devices_per_orbit must cover all m devices")
    _require(s.sats_per_orbit >= 1, "sats_per_orbit", "must be >= 1")
    _require(s.orbit_period_s > 0, "orbit_period_s", "must be > 0")
    _require(0 < s.contact_s < s.orbit_period_s, "contact_s", "must lie in (0, orbit_period_s)")
    _require(s.local_round_s > 0, "local_round_s", "must be > 0")
    _require(s.horizon_s > 0, "horizon_s", "must be > 0")
    _require(s.eval_interval_s > 0, "eval_interval_s", "must be > 0")
    for name in ("up_mbps", "down_mbps", "terrestrial_mbps"):
        _require(getattr(s, name) >= 0, name, "must be >= 0")
    _require(s.terrestrial_mbps > 0, "terrestrial_mbps", "must be > 0")
    _require(s.model_size_mbit > 0, "model_size_mbit", "must be > 0")
    for name in ("straggler_fraction", "blockage_prob", "compute_limited_fraction"):
        _require(0.0 <= getattr(s, name) <= 1.0, name, "must lie in [0, 1]")
    _require(s.blockage_prob < 1.0 or s.straggler_fraction == 0.0, "blockage_prob",
             "must be < 1 when stragglers exist")
    _require(s.retry_s > 0, "retry_s", "must be > 0")
    _require(s.compute_ratio >= 1.0, "compute_ratio", "must be >= 1")
    _require(s.step_rate_per_s > 0, "step_rate_per_s", "must be > 0")
    _require(s.transport_mode in TRANSPORT_MODES, "transport_mode", f"must be one of {TRANSPORT_MODES}")
    _require(s.n_classes >= 2, "n_classes", "must be >= 2")
    _require(s.n_features >= 1, "n_features", "must be >= 1")
    lo, hi = s.samples_per_device_range
    _require(2 <= lo <= hi, "samples_per_device_range", "need 2 <= min <= max")
    _require(s.dirichlet_alpha > 0, "dirichlet_alpha", "must be > 0")
    _require(0.0 < s.test_fraction < 1.0, "test_fraction", "must lie in (0, 1)")
    _require(s.separation >= 0, "separation", "must be >= 0")
    _require(s.model_kind in MODEL_KINDS, "model_kind", f"must be one of {MODEL_KINDS}")
    _require(s.hidden_width >= 1, "hidden_width", "must be >= 1")
    _require(s.eta > 0, "eta", "must be > 0")
    for name in ("mu", "lambda_sat", "alpha", "gamma"):
        _require(getattr(s, name) >= 0, name, "must be >= 0")
    _require(s.lambda_con > 0, "lambda_con", "must be > 0")
    _require(0.0 < s.beta <= 1.0, "beta", "must lie in (0, 1]")
    _require(s.local_epochs >= 1, "local_epochs", "must be >= 1")
    _require(s.batch_size >= 1, "batch_size", "must be >= 1")
    _require(s.epsilon >= 0, "epsilon", "must be >= 0")
    for name in ("eta_f", "tau_conf", "tau_age", "window_s"):
        v = getattr(s, name)
        _require(v is None or (v > 0 and math.isfinite(v)), name, "must be a positive number when set")
    _require(s.method in METHODS, "method", f"must be one of {METHODS}")
    _require(s.master_seed >= 0, "master_seed", "must be >= 0")


def to_dict(s: Scenario) -> Dict[str, Dict[str, Any]]:
    out: Dict[str, Dict[str, Any]] = {}
    for f in dataclasses.fields(s):
        val = getattr(s, f.name)
        if val is None:
            continue
        if isinstance(val, tuple):
            val = list(val)
        out.setdefault(f.metadata["section"], {})[f.name] = val
    return out


def from_dict(d: Dict[str, Any]) -> Scenario:
    fields = {f.name: f for f in dataclasses.fields(Scenario)}
    kwargs = {}
    for section, body in d.items():
        if not isinstance(body, dict):
            raise ConfigurationError(f"top-level key {section!r} must be a [section]")
        for key, val in body.items():
            f = fields.get(key)
            if f is None:
                raise ConfigurationError(f"[{section}] {key}: unknown key")
            if f.metadata["section"] != section:
                raise ConfigurationError(f"[{section}] {key}: belongs in [{f.metadata['section']}]")
            kwargs[key] = _coerce(f, val)
    return Scenario(**kwargs)


def _coerce(f: dataclasses.Field, val):
    default = f.default
    try:
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise TypeError
            return val
        if isinstance(default, int):
            if isinstance(val, bool) or int(val) != val:
                raise TypeError
            return int(val)
        if isinstance(default, float) or default is None:
            if isinstance(val, bool):
                raise TypeError
            return float(val)
        if isinstance(default, tuple):
            return tuple(int(x) for x in val)
        if isinstance(default, str):
            if not isinstance(val, str):
                raise TypeError
            return val
    except (TypeError, ValueError):
        raise ConfigurationError(f"{f.name}: bad value {val!r}") from None
    return val


def dumps(s: Scenario) -> str:
    return tomli_w.dumps(to_dict(s))


def loads(text: str) -> Scenario:
    try:
        return from_dict(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed scenario file: {exc}") from None


def load(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"scenario file not found: {p}")
    return loads(p.read_text(encoding="utf-8"))


def save(s: Scenario, path) -> None:
    Path(path).write_text(dumps(s), encoding="utf-8")


def large_model(s: Optional[Scenario] = None) -> Scenario:
    """Transport-stress preset: a 98 MB model (784 Mbit)."""
    return (s or Scenario()).replace(model_size_mbit=784.0)


def sweep_m100(s: Optional[Scenario] = None) -> Scenario:
    """The 100-device, 10-per-orbit topology used for the naive-transport sweeps."""
    return (s or Scenario()).replace(m=100, n_orbits=50, devices_per_orbit=10)
