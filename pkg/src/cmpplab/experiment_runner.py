"""Declarative experiment configs, orchestration, and report persistence.

A config names a process, an observation grid, an ensemble size, a seed, and
a set of verification suites. One run simulates exactly one ensemble, feeds
it to every selected suite, and persists one JSON and one CSV report per
suite plus a manifest. Reports are pure functions of the config, so a rerun
with the same config and seed reproduces them byte for byte at any thread
count; wall-clock timing lives only in the manifest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .distributions import (
    ClaimLaw,
    Degenerate,
    DiscreteFinite,
    MixingLaw,
    claim_law_from_dict,
    claim_mean,
    law_to_dict,
    mixing_law_from_dict,
    mixing_mean,
)
from .martingale_harness import (
    compensate_ensemble,
    conditional_wald_check,
    default_functionals,
    martingale_test,
    pmf_frequency_check,
    stratified_martingale_test,
    wald_check,
    watanabe_check,
)
from .process_core import (
    MAX_EVENTS_DEFAULT,
    PATH_KINDS,
    TimeGrid,
    dump_paths_csv,
    simulate_ensemble,
)

__all__ = [
    "SCHEMA_VERSION",
    "SUITES",
    "ConfigError",
    "ExperimentConfig",
    "validate_config",
    "config_hash",
    "RunManifest",
    "run_experiment",
]

SCHEMA_VERSION = 1

# Execution order is fixed so reports and manifests are reproducible.
SUITES = (
    "martingale_M",
    "martingale_L",
    "stratified",
    "wald",
    "conditional_wald",
    "watanabe",
    "pmf_check",
)

# Suites that make sense without a mixing variable.
_RENEWAL_SUITES = {"martingale_M", "martingale_L", "watanabe"}

# Simulation namespaces: the test ensemble and the calibration ensemble used
# for functional bin edges must never share random streams.
_NS_TEST = 0
_NS_CALIBRATION = 1

_TOP_KEYS = {
    "schema_version",
    "kind",
    "mixing",
    "claims",
    "interarrival",
    "horizon",
    "grid",
    "n_paths",
    "master_seed",
    "alpha",
    "suites",
    "strata_edges",
    "wald_t",
    "pmf_t",
    "pmf_n_max",
    "conditional_u",
    "watanabe_theta0",
    "theta_blind",
    "max_events",
    "n_calibration",
    "dump_paths",
    "output_dir",
}

_MARTINGALE_SUITES = ("martingale_M", "martingale_L", "stratified")


class ConfigError(ValueError):
    """A config failed validation; violations lists every problem found."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        head = self.violations[0] if self.violations else "invalid config"
        more = len(self.violations) - 1
        super().__init__(head if more <= 0 else f"{head} (+{more} more)")


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _law_violations(prefix: str, spec, parser) -> list[str]:
    try:
        parser(spec)
    except ValueError as exc:
        msg = str(exc)
        return [msg if msg.startswith(prefix) else f"{prefix}: {msg}"]
    return []


def validate_config(raw: Mapping) -> list[str]:
    """Every violation in a raw config dict, as human-readable strings.

    An empty list means the config parses into a runnable ExperimentConfig.
    """
    if not isinstance(raw, Mapping):
        return ["config must be a JSON object"]
    v: list[str] = []
    for key in sorted(set(raw) - _TOP_KEYS):
        v.append(f"unknown config key '{key}'")

    if raw.get("schema_version") != SCHEMA_VERSION:
        v.append(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")

    kind = raw.get("kind")
    if kind not in PATH_KINDS:
        v.append(f"kind must be one of {list(PATH_KINDS)}, got {kind!r}")

    mixing = raw.get("mixing")
    if kind in ("cmpp", "cpp"):
        if mixing is None:
            v.append(f"mixing is required when kind is '{kind}'")
        else:
            v.extend(_law_violations("mixing", mixing, mixing_law_from_dict))
            if kind == "cpp" and isinstance(mixing, Mapping) and mixing.get("type") != "degenerate":
                v.append("mixing must be degenerate when kind is 'cpp'")
    elif mixing is not None:
        v.append("mixing is only valid when kind is 'cmpp' or 'cpp'")

    claims = raw.get("claims")
    if claims is None:
        v.append("claims is required")
    else:
        v.extend(_law_violations("claims", claims, claim_law_from_dict))

    interarrival = raw.get("interarrival")
    if kind == "renewal":
        if interarrival is None:
            v.append("interarrival is required when kind is 'renewal'")
        else:
            v.extend(_law_violations("interarrival", interarrival, claim_law_from_dict))
    elif interarrival is not None:
        v.append("interarrival is only valid when kind is 'renewal'")

    horizon = raw.get("horizon")
    horizon_ok = _is_num(horizon) and horizon > 0
    if not horizon_ok:
        v.append(f"horizon must be a positive finite number, got {horizon!r}")

    grid = raw.get("grid")
    grid_ok = False
    if not (isinstance(grid, (list, tuple)) and grid and all(_is_num(g) for g in grid)):
        v.append("grid must be a non-empty array of finite numbers")
    elif grid[0] != 0:
        v.append(f"grid must start at 0, got {grid[0]!r}")
    elif any(b <= a for a, b in zip(grid, grid[1:])):
        v.append("grid must be strictly increasing")
    elif horizon_ok and grid[-1] > horizon:
        v.append("grid must not extend past horizon")
    else:
        grid_ok = True

    n_paths = raw.get("n_paths")
    if not (isinstance(n_paths, int) and not isinstance(n_paths, bool) and n_paths >= 1):
        v.append(f"n_paths must be a positive integer, got {n_paths!r}")
    elif n_paths < 1000:
        v.append("n_paths must be at least 1000 for statistical suites")

    seed = raw.get("master_seed")
    if not (isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64):
        v.append(f"master_seed must be an integer in [0, 2**64), got {seed!r}")

    alpha = raw.get("alpha")
    if not (_is_num(alpha) and 0.0 < alpha < 1.0):
        v.append(f"alpha must be a number in (0, 1), got {alpha!r}")

    suites = raw.get("suites")
    suites_ok = isinstance(suites, (list, tuple)) and len(suites) > 0
    if not suites_ok:
        v.append("suites must be a non-empty array of suite names")
    else:
        for s in suites:
            if s not in SUITES:
                v.append(f"unknown suite '{s}' (valid: {', '.join(SUITES)})")
        if len(set(suites)) != len(suites):
            v.append("suites must not repeat")
        valid_suites = [s for s in suites if s in SUITES]
        if kind == "renewal":
            for s in valid_suites:
                if s not in _RENEWAL_SUITES:
                    v.append(f"suite '{s}' needs a mixing law and is not valid for kind 'renewal'")
        if "watanabe" in valid_suites and kind == "cmpp":
            deg = isinstance(mixing, Mapping) and mixing.get("type") == "degenerate"
            if not deg and raw.get("watanabe_theta0") is None:
                v.append(
                    "watanabe suite needs a degenerate mixing law, kind 'renewal', "
                    "or an explicit watanabe_theta0"
                )
        if grid_ok and len(grid) < 2:
            needs_pairs = {"martingale_M", "martingale_L", "stratified", "watanabe"}
            if any(s in needs_pairs for s in valid_suites):
                v.append("grid must contain at least one point after 0 for martingale suites")

    edges = raw.get("strata_edges")
    if edges is not None:
        if not (isinstance(edges, (list, tuple)) and all(_is_num(e) for e in edges)):
            v.append("strata_edges must be an array of finite numbers")
        elif any(e <= 0 for e in edges):
            v.append("strata_edges must be positive")
        elif any(b <= a for a, b in zip(edges, edges[1:])):
            v.append("strata_edges must be strictly increasing")

    for key in ("wald_t", "pmf_t"):
        val = raw.get(key)
        if val is not None and not (_is_num(val) and val >= 0):
            v.append(f"{key} must be a number >= 0, got {val!r}")
        elif val is not None and horizon_ok and val > horizon:
            v.append(f"{key} must not exceed horizon")

    u = raw.get("conditional_u")
    if u is not None:
        if not (_is_num(u) and u >= 0):
            v.append(f"conditional_u must be a number >= 0, got {u!r}")
        elif grid_ok and u > grid[-1]:
            v.append("conditional_u must not exceed the last grid point")

    n_max = raw.get("pmf_n_max")
    if n_max is not None and not (
        isinstance(n_max, int) and not isinstance(n_max, bool) and n_max >= 0
    ):
        v.append(f"pmf_n_max must be a non-negative integer, got {n_max!r}")

    theta0 = raw.get("watanabe_theta0")
    if theta0 is not None and not (_is_num(theta0) and theta0 > 0):
        v.append(f"watanabe_theta0 must be a positive number, got {theta0!r}")

    for key in ("theta_blind", "dump_paths"):
        val = raw.get(key)
        if val is not None and not isinstance(val, bool):
            v.append(f"{key} must be a boolean, got {val!r}")

    max_events = raw.get("max_events")
    if max_events is not None and not (
        isinstance(max_events, int) and not isinstance(max_events, bool) and max_events >= 1
    ):
        v.append(f"max_events must be a positive integer, got {max_events!r}")

    n_cal = raw.get("n_calibration")
    if n_cal is not None and not (
        isinstance(n_cal, int) and not isinstance(n_cal, bool) and n_cal >= 100
    ):
        v.append(f"n_calibration must be an integer >= 100, got {n_cal!r}")

    out = raw.get("output_dir")
    if out is not None and not (isinstance(out, str) and out):
        v.append(f"output_dir must be a non-empty string, got {out!r}")

    return v


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed, validated description of one run.

    Optional times default at construction: wald_t and pmf_t to the last grid
    point, conditional_u to the middle grid point, n_calibration to
    min(2000, n_paths).
    """

    kind: str
    claims: ClaimLaw
    horizon: float
    grid: tuple[float, ...]
    n_paths: int
    master_seed: int
    alpha: float
    suites: tuple[str, ...]
    mixing: MixingLaw | None = None
    interarrival: ClaimLaw | None = None
    strata_edges: tuple[float, ...] = ()
    wald_t: float | None = None
    pmf_t: float | None = None
    pmf_n_max: int = 8
    conditional_u: float | None = None
    watanabe_theta0: float | None = None
    theta_blind: bool = False
    max_events: int = MAX_EVENTS_DEFAULT
    n_calibration: int | None = None
    dump_paths: bool = False
    output_dir: str = "cmpplab-out"

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        object.__setattr__(self, "suites", tuple(self.suites))
        object.__setattr__(self, "strata_edges", tuple(float(e) for e in self.strata_edges))
        if self.wald_t is None:
            object.__setattr__(self, "wald_t", self.grid[-1])
        if self.pmf_t is None:
            object.__setattr__(self, "pmf_t", self.grid[-1])
        if self.conditional_u is None:
            object.__setattr__(self, "conditional_u", self.grid[len(self.grid) // 2])
        if self.n_calibration is None:
            object.__setattr__(self, "n_calibration", min(2000, int(self.n_paths)))

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        violations = validate_config(raw)
        if violations:
            raise ConfigError(violations)
        kind = raw["kind"]
        return cls(
            kind=kind,
            claims=claim_law_from_dict(raw["claims"]),
            horizon=float(raw["horizon"]),
            grid=tuple(float(g) for g in raw["grid"]),
            n_paths=int(raw["n_paths"]),
            master_seed=int(raw["master_seed"]),
            alpha=float(raw["alpha"]),
            suites=tuple(raw["suites"]),
            mixing=mixing_law_from_dict(raw["mixing"]) if kind in ("cmpp", "cpp") else None,
            interarrival=(
                claim_law_from_dict(raw["interarrival"]) if kind == "renewal" else None
            ),
            strata_edges=tuple(float(e) for e in raw.get("strata_edges") or ()),
            wald_t=None if raw.get("wald_t") is None else float(raw["wald_t"]),
            pmf_t=None if raw.get("pmf_t") is None else float(raw["pmf_t"]),
            pmf_n_max=int(raw.get("pmf_n_max", 8)),
            conditional_u=(
                None if raw.get("conditional_u") is None else float(raw["conditional_u"])
            ),
            watanabe_theta0=(
                None if raw.get("watanabe_theta0") is None else float(raw["watanabe_theta0"])
            ),
            theta_blind=bool(raw.get("theta_blind", False)),
            max_events=int(raw.get("max_events", MAX_EVENTS_DEFAULT)),
            n_calibration=(
                None if raw.get("n_calibration") is None else int(raw["n_calibration"])
            ),
            dump_paths=bool(raw.get("dump_paths", False)),
            output_dir=str(raw.get("output_dir", "cmpplab-out")),
        )

    def to_canonical_dict(self) -> dict:
        """Semantic fields only; file destinations and dump switches excluded."""
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "mixing": None if self.mixing is None else law_to_dict(self.mixing),
            "claims": law_to_dict(self.claims),
            "interarrival": (
                None if self.interarrival is None else law_to_dict(self.interarrival)
            ),
            "horizon": self.horizon,
            "grid": list(self.grid),
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "alpha": self.alpha,
            "suites": sorted(self.suites),
            "strata_edges": list(self.strata_edges),
            "wald_t": self.wald_t,
            "pmf_t": self.pmf_t,
            "pmf_n_max": self.pmf_n_max,
            "conditional_u": self.conditional_u,
            "watanabe_theta0": self.watanabe_theta0,
            "theta_blind": self.theta_blind,
            "max_events": self.max_events,
            "n_calibration": self.n_calibration,
        }


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form of the semantic fields."""
    canonical = json.dumps(config.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to audit one run and locate its reports."""

    config_hash: str
    master_seed: int
    kind: str
    n_paths: int
    software_version: str
    wall_clock_seconds: float
    suite_outcomes: dict[str, bool]
    report_paths: dict[str, dict[str, str]]
    output_dir: str
    accept: bool

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "kind": self.kind,
            "n_paths": self.n_paths,
            "software_version": self.software_version,
            "wall_clock_seconds": self.wall_clock_seconds,
            "accept": self.accept,
            "suites": {
                name: {"accept": self.suite_outcomes[name], **self.report_paths[name]}
                for name in self.suite_outcomes
            },
        }


def _write_atomic(path: Path, text: str) -> None:
    # Write-then-rename so a crash can never leave a half-written report.
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        fieldnames = list(dict.fromkeys(k for row in rows for k in row))
        writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def _resolved_strata_edges(config: ExperimentConfig) -> tuple[float, ...]:
    """Explicit edges win; a discrete mixing law defaults to atom midpoints."""
    if config.strata_edges:
        return config.strata_edges
    if isinstance(config.mixing, DiscreteFinite) and len(config.mixing.atoms) > 1:
        atoms = sorted(config.mixing.atoms)
        return tuple((a + b) / 2.0 for a, b in zip(atoms, atoms[1:]))
    return ()


def _resolved_theta0(config: ExperimentConfig) -> float:
    if config.watanabe_theta0 is not None:
        return config.watanabe_theta0
    if isinstance(config.mixing, Degenerate):
        return config.mixing.value
    if config.kind == "renewal":
        # Mean-matched nominal rate for a renewal stress case.
        return 1.0 / claim_mean(config.interarrival)
    raise ValueError("watanabe suite needs a degenerate mixing law or a nominal rate")


def run_experiment(config: ExperimentConfig, threads: int = 1) -> RunManifest:
    """Simulate one ensemble, run every selected suite, persist the reports.

    All suite results are computed before anything is written, so a failing
    suite leaves no partial output; the error message names the suite. The
    JSON and CSV reports are deterministic functions of the config.
    """
    t0 = time.perf_counter()
    threads = max(1, int(threads))
    chash = config_hash(config)

    try:
        paths = simulate_ensemble(
            config.kind,
            claims=config.claims,
            horizon=config.horizon,
            n_paths=config.n_paths,
            master_seed=config.master_seed,
            mixing=config.mixing,
            interarrival=config.interarrival,
            max_events=config.max_events,
            namespace=_NS_TEST,
            threads=threads,
        )
    except Exception as exc:
        raise RuntimeError(f"ensemble simulation failed: {exc}") from exc

    grid = TimeGrid(np.asarray(config.grid))
    mean_claim = claim_mean(config.claims)
    edges = _resolved_strata_edges(config)
    metadata = {
        "config_hash": chash,
        "master_seed": config.master_seed,
        "kind": config.kind,
        "n_paths": config.n_paths,
    }

    shared: dict = {}
    if any(s in config.suites for s in _MARTINGALE_SUITES):
        try:
            ensemble = compensate_ensemble(paths, grid, mean_claim)
            cal_paths = simulate_ensemble(
                config.kind,
                claims=config.claims,
                horizon=config.horizon,
                n_paths=config.n_calibration,
                master_seed=config.master_seed,
                mixing=config.mixing,
                interarrival=config.interarrival,
                max_events=config.max_events,
                namespace=_NS_CALIBRATION,
                threads=threads,
            )
            calibration = compensate_ensemble(cal_paths, grid, mean_claim)
            pairs = grid.adjacent_pairs()
            functionals = default_functionals(
                calibration, pairs, include_theta=not config.theta_blind
            )
            shared = {"ensemble": ensemble, "pairs": pairs, "functionals": functionals}
        except Exception as exc:
            raise RuntimeError(f"martingale preparation failed: {exc}") from exc

    results: dict[str, tuple[dict, list[dict], bool]] = {}
    for suite in (s for s in SUITES if s in config.suites):
        meta = {**metadata, "suite": suite}
        try:
            if suite in ("martingale_M", "martingale_L"):
                series = "M" if suite == "martingale_M" else "L"
                rep = martingale_test(
                    shared["ensemble"], series, shared["pairs"], shared["functionals"],
                    config.alpha, metadata=meta,
                )
                results[suite] = (rep.to_json_dict(), rep.to_csv_rows(), rep.accept)
            elif suite == "stratified":
                parts = {
                    series: stratified_martingale_test(
                        shared["ensemble"], series, shared["pairs"], shared["functionals"],
                        config.alpha, strata_edges=edges, metadata=meta,
                    )
                    for series in ("M", "L")
                }
                accept = all(r.accept for r in parts.values())
                obj = {
                    "accept": accept,
                    "strata_edges": list(edges),
                    "M": parts["M"].to_json_dict(),
                    "L": parts["L"].to_json_dict(),
                }
                rows = parts["M"].to_csv_rows() + parts["L"].to_csv_rows()
                results[suite] = (obj, rows, accept)
            elif suite == "wald":
                rep = wald_check(
                    paths, config.wald_t,
                    mean_theta=mixing_mean(config.mixing), mean_claim=mean_claim,
                    metadata=meta,
                )
                results[suite] = (rep.to_json_dict(), rep.to_csv_rows(), rep.accept)
            elif suite == "conditional_wald":
                rep = conditional_wald_check(
                    paths, grid.points[-1],
                    mean_claim=mean_claim, u=config.conditional_u, strata_edges=edges,
                    metadata=meta,
                )
                results[suite] = (rep.to_json_dict(), rep.to_csv_rows(), rep.accept)
            elif suite == "watanabe":
                rep = watanabe_check(
                    paths, grid, _resolved_theta0(config), config.alpha, metadata=meta
                )
                results[suite] = (rep.to_json_dict(), rep.to_csv_rows(), rep.accept)
            else:  # pmf_check
                rep = pmf_frequency_check(
                    paths, config.mixing, config.pmf_t,
                    range(config.pmf_n_max + 1), metadata=meta,
                )
                results[suite] = (rep.to_json_dict(), rep.to_csv_rows(), rep.accept)
        except Exception as exc:
            raise RuntimeError(f"suite '{suite}' failed: {exc}") from exc

    outdir = Path(config.output_dir)
    reports_dir = outdir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    suite_outcomes: dict[str, bool] = {}
    report_paths: dict[str, dict[str, str]] = {}
    for suite, (obj, rows, accept) in results.items():
        json_rel = f"reports/{suite}.json"
        csv_rel = f"reports/{suite}.csv"
        _write_atomic(outdir / json_rel, _json_text(obj))
        _write_atomic(outdir / csv_rel, _csv_text(rows))
        suite_outcomes[suite] = accept
        report_paths[suite] = {"report_json": json_rel, "report_csv": csv_rel}

    if config.dump_paths:
        buf = io.StringIO()
        dump_paths_csv(paths, buf)
        _write_atomic(outdir / "paths.csv", buf.getvalue())

    manifest = RunManifest(
        config_hash=chash,
        master_seed=config.master_seed,
        kind=config.kind,
        n_paths=config.n_paths,
        software_version=__version__,
        wall_clock_seconds=time.perf_counter() - t0,
        suite_outcomes=suite_outcomes,
        report_paths=report_paths,
        output_dir=str(outdir),
        accept=all(suite_outcomes.values()),
    )
    _write_atomic(outdir / "manifest.json", _json_text(manifest.to_json_dict()))
    return manifest
