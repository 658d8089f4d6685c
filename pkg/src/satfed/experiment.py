"""Run scenarios end to end and write their artifacts.

Layout of ``out_dir``::

    manifest.json
    <method>/metrics.csv
    <method>/transfers.csv
    <method>/graph/A_sim.csv, A_con.csv, A_cmp.csv

The manifest holds the resolved scenario, the derived seeds and a sha256 for
every file written. It carries no wall-clock times or absolute paths, so two
runs of the same scenario and seed produce identical manifests.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from . import __version__
from ._accel import USE_NUMBA
from .errors import ConfigurationError, DivergenceError
from .multigraph import MATRICES, Multigraph, graph_csv
from .runtime import (
    _BATCH, _DATA, _INIT, _LINK, _PARTITION, _ROLES, _SCHEDULE, _SPLIT, _TOPOLOGY,
    SimulationResult, _seed, build_world, simulate,
)
from .scenario import METHODS, Scenario, load, to_dict
from .transport import transfer_log_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

_STREAMS = {
    "topology": _TOPOLOGY, "schedule": _SCHEDULE, "data": _DATA, "partition": _PARTITION,
    "split": _SPLIT, "roles": _ROLES, "init": _INIT,
}


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to a temp file in the target directory, then rename it over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def resolve_methods(method: Optional[str], s: Scenario) -> List[str]:
    if method is None:
        return [s.method]
    if method == "all":
        return list(METHODS)
    names = [m.strip() for m in method.split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise ConfigurationError(f"method: unknown {bad or method!r}; choose from {METHODS} or 'all'")
    return names


def derived_seeds(s: Scenario) -> Dict[str, object]:
    m = s.m
    return {
        "master_seed": s.master_seed,
        "streams": {name: _seed(s.master_seed, sid) for name, sid in _STREAMS.items()},
        "batch": [_seed(s.master_seed, _BATCH, i) for i in range(m)],
        "link": [_seed(s.master_seed, _LINK, i) for i in range(m)],
    }


def resolved_config(s: Scenario) -> Dict[str, object]:
    cfg = to_dict(s)
    cfg["hyper"].update(
        eta_f=s.eta_f_resolved, tau_conf=s.tau_conf_resolved,
        tau_age=s.tau_age_resolved, window_s=s.window_resolved,
    )
    return cfg


def method_artifacts(res: SimulationResult) -> Dict[str, str]:
    """Relative path -> file text for one method's outputs."""
    files = {
        f"{res.method}/metrics.csv": res.metrics.to_csv(),
        f"{res.method}/transfers.csv": transfer_log_csv(res.transfers),
    }
    graph = res.server.graph if res.server.graph is not None else Multigraph(len(res.devices), 1.0)
    for name in MATRICES:
        files[f"{res.method}/graph/A_{name}.csv"] = graph_csv(graph, name)
    return files


def write_run(out_dir: Path, s: Scenario, results: Sequence[SimulationResult]) -> Dict[str, str]:
    """Write every artifact plus the manifest; returns the file hashes."""
    hashes: Dict[str, str] = {}
    summary = {}
    for res in results:
        for rel, text in method_artifacts(res).items():
            atomic_write(out_dir / rel, text)
            hashes[rel] = sha256_text(text)
        summary[res.method] = {
            "final_accuracy": res.metrics.final_accuracy(),
            "records": len(res.metrics.records),
            "transfers": len(res.transfers),
        }
    manifest = {
        "package": "satfed",
        "version": __version__,
        "numba": USE_NUMBA,
        "methods": [r.method for r in results],
        "config": resolved_config(s),
        "seeds": derived_seeds(s),
        "summary": summary,
        "files": dict(sorted(hashes.items())),
    }
    atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return hashes


def run_scenario(s: Scenario, methods: Iterable[str]) -> List[SimulationResult]:
    world = build_world(s)
    results = []
    for m in methods:
        log.info("running %s (seed %d)", m, s.master_seed)
        results.append(simulate(s, m, world=world))
    return results


def run_experiment(scenario_path, out_dir, method: Optional[str] = None, seed: Optional[int] = None,
                   stderr=None) -> int:
    """Load a scenario, run the requested methods and write artifacts. Returns an exit code."""
    err = stderr or sys.stderr
    try:
        s = load(scenario_path)
        if seed is not None:
            if seed < 0:
                raise ConfigurationError(f"master_seed: must be >= 0, got {seed}")
            s = s.replace(master_seed=int(seed))
        methods = resolve_methods(method, s)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    try:
        results = run_scenario(s, methods)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=err)
        return EXIT_DIVERGED
    write_run(Path(out_dir), s, results)
    return EXIT_OK
