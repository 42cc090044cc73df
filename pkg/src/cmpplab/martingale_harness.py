"""Compensated processes and Monte Carlo checks of their martingale structure.

The aggregate S and the count N of a compound mixed Poisson path become
martingales once compensated by the rate that drove the path:

    M_t = S_t - t * theta * E[X1]        L_t = N_t - t * theta

A martingale has E[(Z_t - Z_s) * g] = 0 for every bounded g computed from
time-s information, so each check here estimates that product over an
ensemble of independent paths for a family of functionals g and applies
z-tests with a family-wise multiple-comparison correction. Processes that
merely match the mean event frequency (deterministic interarrival renewal
paths, or a Poisson process compensated at the wrong rate) fail these tests;
the true construction passes at the nominal level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2, norm, poisson

from .distributions import MixingLaw, mixed_poisson_pmf
from .process_core import RiskPath, TimeGrid, aggregate_at, count_at

__all__ = [
    "CompensatedSeries",
    "compensate",
    "compensate_ensemble",
    "FunctionalSpec",
    "default_functionals",
    "TestCell",
    "MartingaleReport",
    "martingale_test",
    "stratified_martingale_test",
    "stratum_bins",
    "WaldReport",
    "wald_check",
    "ConditionalCell",
    "ConditionalWaldReport",
    "conditional_wald_check",
    "ChiSquareCell",
    "WatanabeReport",
    "watanabe_check",
    "PmfCell",
    "PmfReport",
    "pmf_frequency_check",
]

# Statistical checks assume the CLT kicked in; smaller ensembles are refused.
MIN_ENSEMBLE = 1000
# Strata thinner than this are reported and excluded instead of tested.
MIN_STRATUM = 100

_SERIES = ("M", "L")
_FUNCTIONAL_KINDS = ("indicator_bin", "polynomial")
_VARIABLES = ("N_s", "S_s", "theta")


@dataclass(frozen=True)
class CompensatedSeries:
    """Compensated aggregate and count of one path along an observation grid.

    The claim-mean used in the compensation is retained so that time-s values
    of the raw count and aggregate can be reconstructed exactly when the
    functionals need them.
    """

    grid: TimeGrid
    m_values: np.ndarray
    l_values: np.ndarray
    theta: float
    claim_mean: float

    def __post_init__(self) -> None:
        m = np.asarray(self.m_values, dtype=float)
        l = np.asarray(self.l_values, dtype=float)
        object.__setattr__(self, "m_values", m)
        object.__setattr__(self, "l_values", l)
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"theta must be positive and finite, got {self.theta!r}")
        if not (math.isfinite(self.claim_mean) and self.claim_mean > 0):
            raise ValueError(f"claim_mean must be positive and finite, got {self.claim_mean!r}")
        if m.shape != (len(self.grid),) or l.shape != (len(self.grid),):
            raise ValueError("series length must match the grid")
        if m[0] != 0.0 or l[0] != 0.0:
            raise ValueError("compensated series must start at 0")


def compensate(
    path: RiskPath,
    grid: TimeGrid,
    claim_mean: float,
    theta: float | None = None,
) -> CompensatedSeries:
    """Build the compensated series of one path.

    theta defaults to the rate that drove the path; passing a nominal rate
    instead compensates against a hypothesized rate, which is how a fixed
    rate claim is tested without trusting the path's own label.
    """
    th = float(path.theta if theta is None else theta)
    if not (math.isfinite(th) and th > 0):
        raise ValueError(f"theta must be positive and finite, got {theta!r}")
    if grid.points[-1] > path.horizon:
        raise ValueError("grid extends past the path horizon")
    counts = np.searchsorted(path.arrivals, grid.points, side="right")
    n_vals = counts.astype(float)
    s_vals = path._claim_prefix[counts]
    l_vals = n_vals - grid.points * th
    m_vals = s_vals - grid.points * th * claim_mean
    return CompensatedSeries(grid, m_vals, l_vals, th, float(claim_mean))


def compensate_ensemble(
    paths: Sequence[RiskPath],
    grid: TimeGrid,
    claim_mean: float,
    theta: float | None = None,
) -> list[CompensatedSeries]:
    """Compensate every path against the same grid and claim mean."""
    return [compensate(p, grid, claim_mean, theta) for p in paths]


@dataclass(frozen=True)
class FunctionalSpec:
    """A bounded functional of time-s information.

    kind 'polynomial' evaluates variable**degree (degree 0 is the constant
    1); kind 'indicator_bin' evaluates 1{lower <= variable < upper}. The
    variable is the raw count N_s, the raw aggregate S_s, or the path's rate.
    """

    kind: str
    variable: str
    degree: int = 0
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self) -> None:
        if self.kind not in _FUNCTIONAL_KINDS:
            raise ValueError(f"kind must be one of {_FUNCTIONAL_KINDS}, got {self.kind!r}")
        if self.variable not in _VARIABLES:
            raise ValueError(f"variable must be one of {_VARIABLES}, got {self.variable!r}")
        if self.kind == "polynomial":
            if not (isinstance(self.degree, int) and 0 <= self.degree <= 2):
                raise ValueError(f"degree must be an integer in [0, 2], got {self.degree!r}")
        else:
            if not (self.lower < self.upper):
                raise ValueError(
                    f"indicator bin needs lower < upper, got [{self.lower}, {self.upper})"
                )
            if not (math.isfinite(self.lower) and self.lower >= 0):
                raise ValueError(f"lower must be finite and >= 0, got {self.lower!r}")

    @property
    def label(self) -> str:
        if self.kind == "polynomial":
            return f"poly{self.degree}({self.variable})"
        return f"ind({self.variable} in [{self.lower:g},{self.upper:g}))"

    def evaluate(self, n_s: np.ndarray, s_s: np.ndarray, theta: np.ndarray) -> np.ndarray:
        v = {"N_s": n_s, "S_s": s_s, "theta": theta}[self.variable]
        if self.kind == "polynomial":
            if self.degree == 0:
                return np.ones_like(v)
            return v**self.degree
        return ((v >= self.lower) & (v < self.upper)).astype(float)


def _stack_ensemble(ensemble: Sequence[CompensatedSeries]):
    """Stack an ensemble into matrices; all series must share grid and claim mean."""
    if len(ensemble) == 0:
        raise ValueError("ensemble must be non-empty")
    grid = ensemble[0].grid.points
    cm = ensemble[0].claim_mean
    for s in ensemble:
        if not np.array_equal(s.grid.points, grid) or s.claim_mean != cm:
            raise ValueError("all series must share the same grid and claim mean")
    m = np.stack([s.m_values for s in ensemble])
    l = np.stack([s.l_values for s in ensemble])
    theta = np.array([s.theta for s in ensemble], dtype=float)
    n = l + grid[None, :] * theta[:, None]
    s_mat = m + grid[None, :] * theta[:, None] * cm
    return grid, m, l, n, s_mat, theta


def default_functionals(
    calibration: Sequence[CompensatedSeries],
    pairs: Sequence[tuple[float, float]],
    include_theta: bool = True,
) -> tuple[FunctionalSpec, ...]:
    """Fixed functional family with bin edges from a held-out ensemble.

    Edges must not be picked from the ensemble under test, or the bins become
    data-dependent and the z-tests lose their nominal level. The family is
    the constant, the time-s count, and two-bin median splits of the count,
    the aggregate, and (optionally) the rate. Splits on a variable that the
    calibration ensemble shows to be constant are dropped; bins that end up
    empty in the test ensemble are excluded at test time.
    """
    grid, _, _, n_mat, s_mat, theta = _stack_ensemble(calibration)
    idx = {float(t): i for i, t in enumerate(grid)}
    specs: list[FunctionalSpec] = [
        FunctionalSpec("polynomial", "N_s", degree=0),
        FunctionalSpec("polynomial", "N_s", degree=1),
    ]
    s_points = sorted({s for s, _ in pairs})
    for s in s_points:
        if s not in idx:
            raise ValueError(f"pair time {s!r} is not a grid point")
        col = n_mat[:, idx[s]]
        if col.max() > col.min():
            edge = math.floor(float(np.median(col))) + 0.5
            specs.append(FunctionalSpec("indicator_bin", "N_s", lower=0.0, upper=edge))
            specs.append(FunctionalSpec("indicator_bin", "N_s", lower=edge))
        col = s_mat[:, idx[s]]
        if col.max() > col.min():
            edge = float(np.median(col))
            if edge > 0.0:
                specs.append(FunctionalSpec("indicator_bin", "S_s", lower=0.0, upper=edge))
                specs.append(FunctionalSpec("indicator_bin", "S_s", lower=edge))
    if include_theta and theta.max() > theta.min():
        edge = float(np.median(theta))
        if edge > 0.0:
            specs.append(FunctionalSpec("indicator_bin", "theta", lower=0.0, upper=edge))
            specs.append(FunctionalSpec("indicator_bin", "theta", lower=edge))
    return tuple(dict.fromkeys(specs))


@dataclass(frozen=True)
class TestCell:
    """One (stratum, interval, functional) comparison in a martingale test."""

    stratum: str | None
    s: float
    t: float
    functional: str
    n: int
    estimate: float
    stderr: float
    z: float | None
    reject: bool
    excluded: bool = False
    reason: str | None = None


@dataclass(frozen=True)
class MartingaleReport:
    """Family-wise decision over all increment-times-functional comparisons."""

    series: str
    alpha: float
    n_paths: int
    n_comparisons: int
    z_threshold: float | None
    cells: tuple[TestCell, ...]
    accept: bool
    excluded_strata: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        stratified = any(c.stratum is not None for c in self.cells) or self.excluded_strata
        tree: dict = {}
        for c in self.cells:
            cell = {
                "n": c.n,
                "estimate": c.estimate,
                "stderr": c.stderr,
                "z": c.z,
                "reject": c.reject,
            }
            if c.excluded:
                cell["excluded"] = True
                cell["reason"] = c.reason
            pair_key = f"s={c.s:g},t={c.t:g}"
            if stratified:
                tree.setdefault(c.stratum, {}).setdefault(pair_key, {})[c.functional] = cell
            else:
                tree.setdefault(pair_key, {})[c.functional] = cell
        out = {
            "series": self.series,
            "alpha": self.alpha,
            "n_paths": self.n_paths,
            "n_comparisons": self.n_comparisons,
            "z_threshold": self.z_threshold,
            "accept": self.accept,
            "metadata": dict(self.metadata),
        }
        if stratified:
            out["excluded_strata"] = list(self.excluded_strata)
            out["strata"] = tree
        else:
            out["pairs"] = tree
        return out

    def to_csv_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            rows.append(
                {
                    "series": self.series,
                    "stratum": "" if c.stratum is None else c.stratum,
                    "s": c.s,
                    "t": c.t,
                    "functional": c.functional,
                    "n": c.n,
                    "estimate": c.estimate,
                    "stderr": c.stderr,
                    "z": "" if c.z is None else c.z,
                    "reject": c.reject,
                    "excluded": c.excluded,
                    "reason": c.reason or "",
                }
            )
        return rows


def _raw_cells(z_mat, n_mat, s_mat, theta, grid, pairs, functionals, stratum):
    """Estimate E[(Z_t - Z_s) * g(time-s info)] for every pair and functional."""
    idx = {float(t): i for i, t in enumerate(grid)}
    n_paths = z_mat.shape[0]
    cells = []
    for s, t in pairs:
        if s not in idx or t not in idx:
            raise ValueError(f"pair ({s}, {t}) must consist of grid points")
        if not s < t:
            raise ValueError(f"pair times must satisfy s < t, got ({s}, {t})")
        js, jt = idx[s], idx[t]
        dz = z_mat[:, jt] - z_mat[:, js]
        for f in functionals:
            g = f.evaluate(n_mat[:, js], s_mat[:, js], theta)
            if not np.any(g != 0.0):
                cells.append(
                    (stratum, s, t, f.label, n_paths, 0.0, 0.0, True, "DegenerateFunctional")
                )
                continue
            d = dz * g
            est = float(np.mean(d))
            se = float(np.std(d, ddof=1)) / math.sqrt(n_paths)
            cells.append((stratum, s, t, f.label, n_paths, est, se, False, None))
    return cells


def _finalize(series, alpha, n_paths, raw, excluded_strata, metadata) -> MartingaleReport:
    """Apply the family-wise correction and turn raw cells into a decision."""
    included = [c for c in raw if not c[7]]
    k = len(included)
    z_star = float(norm.ppf(1.0 - alpha / (2.0 * k))) if k else None
    cells = []
    for stratum, s, t, label, n, est, se, excluded, reason in raw:
        if excluded:
            cells.append(TestCell(stratum, s, t, label, n, est, se, None, False, True, reason))
            continue
        if se > 0.0:
            z = est / se
            reject = abs(z) > z_star
            cells.append(TestCell(stratum, s, t, label, n, est, se, z, reject))
        elif est == 0.0:
            # Exactly-zero increments are consistent with a martingale.
            cells.append(TestCell(stratum, s, t, label, n, est, se, 0.0, False))
        else:
            # Zero spread around a nonzero mean: certain violation, no finite z.
            cells.append(
                TestCell(
                    stratum, s, t, label, n, est, se, None, True,
                    reason="zero variance, nonzero mean",
                )
            )
    accept = not any(c.reject for c in cells)
    return MartingaleReport(
        series=series,
        alpha=alpha,
        n_paths=n_paths,
        n_comparisons=k,
        z_threshold=z_star,
        cells=tuple(cells),
        accept=accept,
        excluded_strata=tuple(excluded_strata),
        metadata=dict(metadata or {}),
    )


def _check_test_args(ensemble, pairs, functionals, alpha, min_paths):
    if len(ensemble) < min_paths:
        raise ValueError(f"ensemble must hold at least {min_paths} paths, got {len(ensemble)}")
    if not pairs:
        raise ValueError("pairs must be non-empty")
    if not functionals:
        raise ValueError("functionals must be non-empty")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def martingale_test(
    ensemble: Sequence[CompensatedSeries],
    series: str,
    pairs: Sequence[tuple[float, float]],
    functionals: Sequence[FunctionalSpec],
    alpha: float,
    metadata: dict | None = None,
    min_paths: int = MIN_ENSEMBLE,
) -> MartingaleReport:
    """Test that the chosen compensated series has mean-zero weighted increments.

    Every (pair, functional) combination yields one z-statistic; the decision
    threshold is Bonferroni-corrected over the comparisons that survive
    exclusion, so the family-wise false-rejection rate is at most alpha.
    """
    if series not in _SERIES:
        raise ValueError(f"series must be one of {_SERIES}, got {series!r}")
    _check_test_args(ensemble, pairs, functionals, alpha, min_paths)
    grid, m, l, n_mat, s_mat, theta = _stack_ensemble(ensemble)
    z_mat = m if series == "M" else l
    raw = _raw_cells(z_mat, n_mat, s_mat, theta, grid, pairs, functionals, None)
    return _finalize(series, alpha, len(ensemble), raw, (), metadata)


def stratum_bins(edges: Sequence[float]) -> tuple[tuple[float, float, str], ...]:
    """Half-open rate bins from interior breakpoints; they cover (0, inf).

    Edges (b1 < b2 < ... < bk) produce [0, b1), [b1, b2), ..., [bk, inf); no
    edges produce the single bin [0, inf).
    """
    e = [float(b) for b in edges]
    if any(b <= 0 or not math.isfinite(b) for b in e):
        raise ValueError("strata edges must be positive and finite")
    if any(b2 <= b1 for b1, b2 in zip(e, e[1:])):
        raise ValueError("strata edges must be strictly increasing")
    bounds = [0.0, *e, math.inf]
    return tuple(
        (bounds[i], bounds[i + 1], f"theta[{bounds[i]:g},{bounds[i + 1]:g})")
        for i in range(len(bounds) - 1)
    )


def stratified_martingale_test(
    ensemble: Sequence[CompensatedSeries],
    series: str,
    pairs: Sequence[tuple[float, float]],
    functionals: Sequence[FunctionalSpec],
    alpha: float,
    strata_edges: Sequence[float] = (),
    metadata: dict | None = None,
    min_paths: int = MIN_ENSEMBLE,
    min_stratum: int = MIN_STRATUM,
) -> MartingaleReport:
    """Martingale test run inside each rate stratum with one family-wise level.

    Conditioning on the stratum freezes the rate's contribution, so a mixture
    whose pooled increments look fine but whose per-rate slices drift is
    caught here. Strata holding fewer than min_stratum paths are reported in
    excluded_strata and skipped. With no edges this reduces to the pooled
    test with a stratum label attached.
    """
    if series not in _SERIES:
        raise ValueError(f"series must be one of {_SERIES}, got {series!r}")
    _check_test_args(ensemble, pairs, functionals, alpha, min_paths)
    grid, m, l, n_mat, s_mat, theta = _stack_ensemble(ensemble)
    z_mat = m if series == "M" else l
    raw = []
    skipped = []
    for lo, hi, label in stratum_bins(strata_edges):
        mask = (theta >= lo) & (theta < hi)
        count = int(np.count_nonzero(mask))
        if count < min_stratum:
            skipped.append(label)
            continue
        raw.extend(
            _raw_cells(
                z_mat[mask], n_mat[mask], s_mat[mask], theta[mask],
                grid, pairs, functionals, label,
            )
        )
    return _finalize(series, alpha, len(ensemble), raw, skipped, metadata)


@dataclass(frozen=True)
class WaldReport:
    """Mean aggregate at one time against its product-form target."""

    t: float
    target: float
    n_paths: int
    estimate: float
    stderr: float
    z: float | None
    band: float
    accept: bool
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "t": self.t,
            "target": self.target,
            "n_paths": self.n_paths,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "z": self.z,
            "band": self.band,
            "accept": self.accept,
            "metadata": dict(self.metadata),
        }

    def to_csv_rows(self) -> list[dict]:
        return [
            {
                "t": self.t,
                "target": self.target,
                "n_paths": self.n_paths,
                "estimate": self.estimate,
                "stderr": self.stderr,
                "z": "" if self.z is None else self.z,
                "band": self.band,
                "accept": self.accept,
            }
        ]


def wald_check(
    paths: Sequence[RiskPath],
    t: float,
    *,
    mean_theta: float,
    mean_claim: float,
    band: float = 4.0,
    min_paths: int = MIN_ENSEMBLE,
    metadata: dict | None = None,
) -> WaldReport:
    """Check E[S_t] = t * E[Theta] * E[X1] within a z-band.

    The mean aggregate factorizes because the claim sizes are independent of
    the driving count and the rate enters the count linearly in t.
    """
    if len(paths) < min_paths:
        raise ValueError(f"ensemble must hold at least {min_paths} paths, got {len(paths)}")
    if band <= 0:
        raise ValueError(f"band must be positive, got {band!r}")
    values = np.array([aggregate_at(p, t) for p in paths])
    n = values.size
    target = float(t) * float(mean_theta) * float(mean_claim)
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1)) / math.sqrt(n)
    diff = est - target
    if se > 0.0:
        z = diff / se
        accept = abs(z) <= band
    elif diff == 0.0:
        z = 0.0
        accept = True
    else:
        z = None
        accept = False
    return WaldReport(float(t), target, n, est, se, z, band, accept, dict(metadata or {}))


@dataclass(frozen=True)
class ConditionalCell:
    """One (stratum, conditioning event) slice of the aggregate/count identity."""

    stratum: str
    indicator: str
    n: int
    estimate: float
    stderr: float
    z: float | None
    accept: bool
    excluded: bool = False
    reason: str | None = None


@dataclass(frozen=True)
class ConditionalWaldReport:
    """Restricted mean of S_t - N_t * E[X1] over conditioning events."""

    t: float
    u: float
    band: float
    n_paths: int
    cells: tuple[ConditionalCell, ...]
    excluded_strata: tuple[str, ...]
    accept: bool
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        tree: dict = {}
        for c in self.cells:
            cell = {
                "n": c.n,
                "estimate": c.estimate,
                "stderr": c.stderr,
                "z": c.z,
                "accept": c.accept,
            }
            if c.excluded:
                cell["excluded"] = True
                cell["reason"] = c.reason
            tree.setdefault(c.stratum, {})[c.indicator] = cell
        return {
            "t": self.t,
            "u": self.u,
            "band": self.band,
            "n_paths": self.n_paths,
            "accept": self.accept,
            "excluded_strata": list(self.excluded_strata),
            "strata": tree,
            "metadata": dict(self.metadata),
        }

    def to_csv_rows(self) -> list[dict]:
        return [
            {
                "stratum": c.stratum,
                "indicator": c.indicator,
                "t": self.t,
                "u": self.u,
                "n": c.n,
                "estimate": c.estimate,
                "stderr": c.stderr,
                "z": "" if c.z is None else c.z,
                "accept": c.accept,
                "excluded": c.excluded,
                "reason": c.reason or "",
            }
            for c in self.cells
        ]


def conditional_wald_check(
    paths: Sequence[RiskPath],
    t: float,
    *,
    mean_claim: float,
    u: float | None = None,
    strata_edges: Sequence[float] = (),
    indicators: Sequence[FunctionalSpec] | None = None,
    band: float = 4.0,
    min_paths: int = MIN_ENSEMBLE,
    min_stratum: int = MIN_STRATUM,
    metadata: dict | None = None,
) -> ConditionalWaldReport:
    """Check E[(S_t - N_t * E[X1]) * 1_A] = 0 per rate stratum and event A.

    The events A are indicator functionals of time-u information with u <= t.
    On each rate slice the aggregate restricted to A must match the count
    restricted to A times the claim mean; that is the conditional version of
    the product identity, and it holds event by event, not just on average.
    """
    if len(paths) < min_paths:
        raise ValueError(f"ensemble must hold at least {min_paths} paths, got {len(paths)}")
    if band <= 0:
        raise ValueError(f"band must be positive, got {band!r}")
    t = float(t)
    u = t / 2.0 if u is None else float(u)
    if not (0.0 <= u <= t):
        raise ValueError(f"u must lie in [0, t], got {u!r}")
    if indicators is None:
        indicators = (
            FunctionalSpec("indicator_bin", "N_s", lower=0.0),
            FunctionalSpec("indicator_bin", "N_s", lower=0.0, upper=0.5),
            FunctionalSpec("indicator_bin", "N_s", lower=0.5),
        )
    theta = np.array([p.theta for p in paths])
    n_u = np.array([count_at(p, u) for p in paths], dtype=float)
    s_u = np.array([aggregate_at(p, u) for p in paths])
    n_t = np.array([count_at(p, t) for p in paths], dtype=float)
    s_t = np.array([aggregate_at(p, t) for p in paths])
    diff = s_t - n_t * float(mean_claim)

    cells = []
    skipped = []
    for lo, hi, label in stratum_bins(strata_edges):
        mask = (theta >= lo) & (theta < hi)
        count = int(np.count_nonzero(mask))
        if count < min_stratum:
            skipped.append(label)
            continue
        for ind in indicators:
            g = ind.evaluate(n_u[mask], s_u[mask], theta[mask])
            if not np.any(g != 0.0):
                cells.append(
                    ConditionalCell(
                        label, ind.label, count, 0.0, 0.0, None, True,
                        excluded=True, reason="DegenerateFunctional",
                    )
                )
                continue
            d = diff[mask] * g
            est = float(np.mean(d))
            se = float(np.std(d, ddof=1)) / math.sqrt(count)
            if se > 0.0:
                z = est / se
                cells.append(ConditionalCell(label, ind.label, count, est, se, z, abs(z) <= band))
            elif est == 0.0:
                cells.append(ConditionalCell(label, ind.label, count, est, se, 0.0, True))
            else:
                cells.append(
                    ConditionalCell(
                        label, ind.label, count, est, se, None, False,
                        reason="zero variance, nonzero mean",
                    )
                )
    accept = all(c.accept for c in cells if not c.excluded)
    return ConditionalWaldReport(
        t, u, band, len(paths), tuple(cells), tuple(skipped), accept, dict(metadata or {})
    )


@dataclass(frozen=True)
class ChiSquareCell:
    """Goodness of fit of the count at one time against a Poisson pmf."""

    t: float
    n_bins: int
    dof: int
    statistic: float
    pvalue: float
    alpha_each: float
    reject: bool


def _poisson_count_chisquare(counts: np.ndarray, mu: float, alpha_each: float, t: float,
                             min_expected: float = 5.0) -> ChiSquareCell:
    """Pooled chi-square of observed counts against Poisson(mu)."""
    n = counts.size
    # Smallest k whose tail beyond it is too thin to stand alone.
    kmax = 0
    cap = int(mu + 20.0 * math.sqrt(mu + 1.0) + 50.0)
    while n * float(poisson.sf(kmax, mu)) >= min_expected and kmax < cap:
        kmax += 1
    expected = [n * float(poisson.pmf(k, mu)) for k in range(kmax + 1)]
    expected.append(n * float(poisson.sf(kmax, mu)))
    observed = [int(np.count_nonzero(counts == k)) for k in range(kmax + 1)]
    observed.append(int(np.count_nonzero(counts > kmax)))
    # Pool left to right until every bin carries enough expected mass.
    exp_bins: list[float] = []
    obs_bins: list[int] = []
    acc_e, acc_o = 0.0, 0
    for e, o in zip(expected, observed):
        acc_e += e
        acc_o += o
        if acc_e >= min_expected:
            exp_bins.append(acc_e)
            obs_bins.append(acc_o)
            acc_e, acc_o = 0.0, 0
    if acc_e > 0.0 and exp_bins:
        exp_bins[-1] += acc_e
        obs_bins[-1] += acc_o
    if len(exp_bins) < 2:
        raise ValueError(
            f"chi-square needs at least 2 bins with expected mass >= {min_expected}; "
            f"got {len(exp_bins)} for mu={mu}, n={n}"
        )
    exp_arr = np.asarray(exp_bins)
    obs_arr = np.asarray(obs_bins, dtype=float)
    stat = float(np.sum((obs_arr - exp_arr) ** 2 / exp_arr))
    dof = len(exp_bins) - 1
    pvalue = float(chi2.sf(stat, dof))
    return ChiSquareCell(t, len(exp_bins), dof, stat, pvalue, alpha_each, pvalue < alpha_each)


@dataclass(frozen=True)
class WatanabeReport:
    """Two-part fixed-rate Poisson check: compensated-count martingale + pmf fit.

    A counting process whose compensated count N_t - t * theta0 is a
    martingale is a Poisson process with rate theta0, so passing the
    martingale part certifies the whole law; the chi-square part
    cross-checks the marginal pmf directly at each grid time.
    """

    theta0: float
    alpha: float
    martingale: MartingaleReport
    chisq: tuple[ChiSquareCell, ...]
    accept: bool
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "theta0": self.theta0,
            "alpha": self.alpha,
            "accept": self.accept,
            "martingale": self.martingale.to_json_dict(),
            "chisq": [
                {
                    "t": c.t,
                    "n_bins": c.n_bins,
                    "dof": c.dof,
                    "statistic": c.statistic,
                    "pvalue": c.pvalue,
                    "alpha_each": c.alpha_each,
                    "reject": c.reject,
                }
                for c in self.chisq
            ],
            "metadata": dict(self.metadata),
        }

    def to_csv_rows(self) -> list[dict]:
        rows = []
        for r in self.martingale.to_csv_rows():
            rows.append({"component": "martingale", **r})
        for c in self.chisq:
            rows.append(
                {
                    "component": "chisq",
                    "series": "",
                    "stratum": "",
                    "s": "",
                    "t": c.t,
                    "functional": "",
                    "n": "",
                    "estimate": c.statistic,
                    "stderr": "",
                    "z": "",
                    "reject": c.reject,
                    "excluded": False,
                    "reason": f"dof={c.dof},pvalue={c.pvalue:.6g}",
                }
            )
        return rows


def watanabe_check(
    paths: Sequence[RiskPath],
    grid: TimeGrid,
    theta0: float,
    alpha: float,
    functionals: Sequence[FunctionalSpec] | None = None,
    pairs: Sequence[tuple[float, float]] | None = None,
    min_paths: int = MIN_ENSEMBLE,
    metadata: dict | None = None,
) -> WatanabeReport:
    """Test whether the counting paths form a Poisson process with rate theta0.

    Compensates every count at the nominal theta0 (ignoring whatever rate the
    paths claim), runs the martingale test on the compensated count, and adds
    a chi-square fit of the counts against the Poisson pmf at every positive
    grid time with the level split across times.
    """
    if not (math.isfinite(theta0) and theta0 > 0):
        raise ValueError(f"theta0 must be positive and finite, got {theta0!r}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    ensemble = compensate_ensemble(paths, grid, claim_mean=1.0, theta=theta0)
    if pairs is None:
        pairs = grid.adjacent_pairs()
    if functionals is None:
        # Data-independent family: no calibration ensemble is needed for a
        # fixed-rate check, and the zero-count split is never trivial.
        functionals = (
            FunctionalSpec("polynomial", "N_s", degree=0),
            FunctionalSpec("polynomial", "N_s", degree=1),
            FunctionalSpec("indicator_bin", "N_s", lower=0.0, upper=0.5),
            FunctionalSpec("indicator_bin", "N_s", lower=0.5),
        )
    # The martingale part and the chi-square part each get half the level.
    mart = martingale_test(
        ensemble, "L", pairs, functionals, alpha / 2.0, metadata=metadata, min_paths=min_paths
    )
    ts = [float(t) for t in grid.points if t > 0.0]
    counts_by_t = {t: np.array([count_at(p, t) for p in paths]) for t in ts}
    alpha_each = alpha / 2.0 / len(ts)
    chisq = tuple(
        _poisson_count_chisquare(counts_by_t[t], theta0 * t, alpha_each, t) for t in ts
    )
    accept = mart.accept and not any(c.reject for c in chisq)
    return WatanabeReport(float(theta0), alpha, mart, chisq, accept, dict(metadata or {}))


@dataclass(frozen=True)
class PmfCell:
    """Empirical frequency of one count value against the mixture pmf."""

    n: int
    probability: float
    frequency: float
    stderr: float
    z: float | None
    accept: bool


@dataclass(frozen=True)
class PmfReport:
    """Count frequencies at one time against the mixed-Poisson pmf."""

    t: float
    band: float
    n_paths: int
    cells: tuple[PmfCell, ...]
    accept: bool
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "t": self.t,
            "band": self.band,
            "n_paths": self.n_paths,
            "accept": self.accept,
            "cells": [
                {
                    "n": c.n,
                    "probability": c.probability,
                    "frequency": c.frequency,
                    "stderr": c.stderr,
                    "z": c.z,
                    "accept": c.accept,
                }
                for c in self.cells
            ],
            "metadata": dict(self.metadata),
        }

    def to_csv_rows(self) -> list[dict]:
        return [
            {
                "t": self.t,
                "n": c.n,
                "probability": c.probability,
                "frequency": c.frequency,
                "stderr": c.stderr,
                "z": "" if c.z is None else c.z,
                "band": self.band,
                "accept": c.accept,
            }
            for c in self.cells
        ]


def pmf_frequency_check(
    paths: Sequence[RiskPath],
    mixing: MixingLaw,
    t: float,
    n_values: Sequence[int],
    band: float = 4.0,
    min_paths: int = MIN_ENSEMBLE,
    metadata: dict | None = None,
) -> PmfReport:
    """Compare empirical count frequencies at time t with the mixture pmf.

    Standard errors use the theoretical probabilities, so the bands are exact
    binomial standard deviations rather than plug-in estimates.
    """
    if len(paths) < min_paths:
        raise ValueError(f"ensemble must hold at least {min_paths} paths, got {len(paths)}")
    if band <= 0:
        raise ValueError(f"band must be positive, got {band!r}")
    counts = np.array([count_at(p, t) for p in paths])
    n_paths = counts.size
    cells = []
    for n in n_values:
        prob = mixed_poisson_pmf(mixing, t, int(n))
        freq = float(np.count_nonzero(counts == int(n))) / n_paths
        se = math.sqrt(prob * (1.0 - prob) / n_paths)
        diff = freq - prob
        if se > 0.0:
            z = diff / se
            accept = abs(z) <= band
        elif diff == 0.0:
            z = 0.0
            accept = True
        else:
            z = None
            accept = False
        cells.append(PmfCell(int(n), prob, freq, se, z, accept))
    overall = all(c.accept for c in cells)
    return PmfReport(float(t), band, n_paths, tuple(cells), overall, dict(metadata or {}))
