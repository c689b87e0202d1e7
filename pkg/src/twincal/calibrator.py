"""Field-decomposition constraints and declination minimization.

Given photoelectron moments and trial efficiencies (eta_s, eta_i), the
five moment constraints leave a one-parameter family of field models,
parameterized by the mean photon-pair number n_p:

    pair variance   var_p = cov / (eta_s eta_i)          (n_p independent)
    total per arm   tot_a = <m_a> / eta_a = n_p + <n_a>
    noise variance  var_na = <(dm_a)^2>/eta_a^2 - var_p - (1-eta_a)/eta_a^2 <m_a>

Representability of the three thermal components bounds n_p to a closed
interval: n_p < var_p (pair stays super-Poissonian), n_p <= tot_a (noise
means nonnegative), and n_p >= tot_a - var_na (noise variance at least
its mean).  Outside those bounds the constraints have no solution, which
is what carves the infeasible areas near the efficiency axes on scan
surfaces.

The declination between the synthesized photocount distribution and the
frequency-normalized histogram is minimized in two stages: a coarse
(eta_s, eta_i) grid with a golden-section search over n_p inside each
cell's feasible interval, then a Nelder-Mead refinement of all three
parameters from the best cell.  Both stages are deterministic for fixed
inputs and options, whatever the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .detector_model import (DetectorParams, ResponseMatrix, detection_matrix, jpcd,
                             photon_window_cutoff)
from .errors import (CutoffOverflow, InfeasiblePoint, NoFeasibleRegion,
                     NonpositiveCovariance, SubPoissonianComponent)
from .field_model import JointDistribution, TwinBeamModel, component_from_moments, jpnd
from .histogram_io import DarkCountRecord, PhotocountHistogram
from .moments import (KlyshkoEstimates, PhotoelectronMoments, klyshko_estimate,
                      photocount_moments, subtract_dark)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DetectorGeometry:
    """Pixel counts of the two photocathode regions."""

    pixels_s: int
    pixels_i: int

    def __post_init__(self):
        if self.pixels_s < 1 or self.pixels_i < 1:
            raise ValueError("pixel counts must be positive")


@dataclass(frozen=True)
class CandidatePoint:
    """Trial (eta_s, eta_i, mean photon-pair number)."""

    eta_s: float
    eta_i: float
    mean_pairs: float

    def __post_init__(self):
        if not (0.0 < self.eta_s <= 1.0 and 0.0 < self.eta_i <= 1.0):
            raise ValueError(f"efficiencies must be in (0, 1], got "
                             f"({self.eta_s}, {self.eta_i})")
        if self.mean_pairs <= 0.0:
            raise ValueError(f"mean_pairs must be positive, got {self.mean_pairs}")


@dataclass(frozen=True)
class CalibrationOptions:
    """Tuning knobs of the two-stage minimization; all deterministic."""

    grid_span: float = 0.5          # fractional half-width of the stage-1 grid
    grid_step: float = 0.005        # stage-1 grid step in eta
    np_rel_tol: float = 1e-4        # golden-section relative tolerance on mean_pairs
    simplex_max_iter: int = 200
    simplex_fatol: float = 1e-10
    tail_tolerance: float = 1e-5    # joint-distribution truncation budget
    max_grid: int = 512
    prob_floor: float = 1e-15       # model support floor in the declination sum
    c_max_margin: int = 10          # photocount grid: max observed + margin, capped at N
    threads: int | None = None      # worker cap; results are worker-count invariant
    grid_center: tuple[float, float] | None = None   # override baseline centering
    np_bracket: tuple[float, float] | None = None    # warm-start bracket on mean_pairs


@dataclass
class CalibrationResult:
    """Fitted point and model, with baseline estimates and diagnostics."""

    point: CandidatePoint
    model: TwinBeamModel
    declination: float
    baseline: KlyshkoEstimates
    moments: PhotoelectronMoments
    geometry: DetectorGeometry
    dark_rates: tuple[float, float]
    status: str                     # converged | boundary
    diagnostics: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_report(self) -> dict:
        m = self.moments
        return {
            "eta_s": self.point.eta_s,
            "eta_i": self.point.eta_i,
            "mean_pairs": self.point.mean_pairs,
            "field": self.model.params_dict(),
            "declination": self.declination,
            "stderr": dict(self.stderr),
            "baseline": {
                "eta_s_klyshko": self.baseline.eta_s_cov,
                "eta_i_klyshko": self.baseline.eta_i_cov,
                "eta_s_klyshko_raw": self.baseline.eta_s_raw,
                "eta_i_klyshko_raw": self.baseline.eta_i_raw,
                "stderr_eta_s_klyshko": self.baseline.stderr_eta_s_cov,
                "stderr_eta_i_klyshko": self.baseline.stderr_eta_i_cov,
            },
            "status": self.status,
            "inputs": dict(self.inputs),
            "config": dict(self.config),
            "diagnostics": dict(self.diagnostics),
            "moments": {
                "mean_s": m.mean_s, "mean_i": m.mean_i,
                "var_s": m.var_s, "var_i": m.var_i, "cov": m.cov,
                "stderr_mean_s": m.stderr_mean_s, "stderr_mean_i": m.stderr_mean_i,
                "stderr_var_s": m.stderr_var_s, "stderr_var_i": m.stderr_var_i,
                "stderr_cov": m.stderr_cov,
            },
        }


def infeasible_report(moments: PhotoelectronMoments | None, message: str,
                      inputs: dict | None = None, config: dict | None = None) -> dict:
    """Report shell for data whose entire scan grid is infeasible."""
    return {
        "eta_s": None, "eta_i": None, "mean_pairs": None,
        "field": None, "declination": None, "stderr": {},
        "baseline": {}, "status": "infeasible-everywhere",
        "inputs": dict(inputs or {}), "config": dict(config or {}),
        "diagnostics": {"message": message},
        "moments": None if moments is None else {
            "mean_s": moments.mean_s, "mean_i": moments.mean_i,
            "var_s": moments.var_s, "var_i": moments.var_i, "cov": moments.cov,
        },
    }


# --- constraint system ---------------------------------------------------


def _derived_field_moments(m: PhotoelectronMoments, eta_s: float, eta_i: float):
    """(var_p, tot_s, var_ns, tot_i, var_ni) implied by the moments at (eta_s, eta_i)."""
    var_p = m.cov / (eta_s * eta_i)
    tot_s = m.mean_s / eta_s
    tot_i = m.mean_i / eta_i
    var_ns = m.var_s / eta_s**2 - var_p - (1.0 - eta_s) / eta_s**2 * m.mean_s
    var_ni = m.var_i / eta_i**2 - var_p - (1.0 - eta_i) / eta_i**2 * m.mean_i
    return var_p, tot_s, var_ns, tot_i, var_ni


def feasible_np_interval(m: PhotoelectronMoments, eta_s: float,
                         eta_i: float) -> tuple[float, float] | None:
    """Feasible interval of the mean pair number at fixed efficiencies.

    Lower bounds come from noise representability (variance at least the
    mean), upper bounds from nonnegative noise means and from the pair
    component staying super-Poissonian (n_p < var_p; at the boundary the
    Poisson-limit encoding takes over).  The interval may collapse to a
    single point for noise-free data, so rounding-level inversions are
    tolerated.  Returns None when the constraints conflict.
    """
    if not (0.0 < eta_s <= 1.0 and 0.0 < eta_i <= 1.0):
        raise ValueError(f"efficiencies must be in (0, 1], got ({eta_s}, {eta_i})")
    if m.cov <= 0.0:
        raise NonpositiveCovariance(
            f"photoelectron covariance {m.cov:g} is not positive; no paired signal")
    var_p, tot_s, var_ns, tot_i, var_ni = _derived_field_moments(m, eta_s, eta_i)
    lo = max(0.0, tot_s - var_ns, tot_i - var_ni)
    hi = min(var_p, tot_s, tot_i)
    slack = 1e-12 * max(1.0, abs(hi))
    if hi <= 0.0 or lo > hi + slack:
        return None
    return (min(lo, hi), hi)


def _inside_interval(n_p: float, interval: tuple[float, float]) -> bool:
    slack = 1e-12 * max(1.0, abs(interval[1]))
    return interval[0] - slack <= n_p <= interval[1] + slack


def solve_field(m: PhotoelectronMoments, point: CandidatePoint) -> TwinBeamModel:
    """Field model at a candidate point of the one-parameter solution family.

    The returned model's forward moments reproduce the five input
    photoelectron moments to round-off (see
    :func:`forward_photoelectron_moments`).
    """
    interval = feasible_np_interval(m, point.eta_s, point.eta_i)
    n_p = point.mean_pairs
    if interval is None or not _inside_interval(n_p, interval):
        raise InfeasiblePoint(
            f"mean_pairs {n_p:g} outside the feasible interval "
            f"{interval} at ({point.eta_s:g}, {point.eta_i:g})")
    var_p, tot_s, var_ns, tot_i, var_ni = _derived_field_moments(m, point.eta_s, point.eta_i)
    slack = 1e-12 * max(1.0, abs(tot_s), abs(tot_i))
    mean_ns = tot_s - n_p
    mean_ni = tot_i - n_p
    if -slack <= mean_ns < 0.0:  # boundary round-off, not a violation
        mean_ns = 0.0
    if -slack <= mean_ni < 0.0:
        mean_ni = 0.0
    return TwinBeamModel(
        pair=component_from_moments(n_p, var_p),
        noise_s=component_from_moments(mean_ns, var_ns),
        noise_i=component_from_moments(mean_ni, var_ni),
    )


def forward_photoelectron_moments(model: TwinBeamModel, eta_s: float,
                                  eta_i: float) -> PhotoelectronMoments:
    """Photoelectron moments a given field model produces through detection.

    mean_a = eta_a (n_p + n_a);
    var_a  = eta_a^2 [var_p + var_na + (1-eta_a)/eta_a (n_p + n_a)];
    cov    = eta_s eta_i var_p.
    """
    n_p, var_p = model.pair.mean, model.pair.variance
    mean_ns, var_ns = model.noise_s.mean, model.noise_s.variance
    mean_ni, var_ni = model.noise_i.mean, model.noise_i.variance
    tot_s, tot_i = n_p + mean_ns, n_p + mean_ni
    return PhotoelectronMoments.from_variances(
        mean_s=eta_s * tot_s,
        mean_i=eta_i * tot_i,
        var_s=eta_s**2 * (var_p + var_ns + (1.0 - eta_s) / eta_s * tot_s),
        var_i=eta_i**2 * (var_p + var_ni + (1.0 - eta_i) / eta_i * tot_i),
        cov=eta_s * eta_i * var_p,
    )


# --- declination ----------------------------------------------------------


def declination(p_c: JointDistribution, hist: PhotocountHistogram,
                prob_floor: float = 1e-15) -> float:
    """Euclidean distance between model probabilities and histogram frequencies.

    D = sqrt( sum (p_c - f/shots)^2 ) over the union of the model support
    (entries above ``prob_floor``) and the histogram support; cells absent
    from both contribute exactly zero.
    """
    probs = p_c.probabilities
    max_s, max_i = hist.max_counts
    rows = max(probs.shape[0], max_s + 1)
    cols = max(probs.shape[1], max_i + 1)
    padded = np.zeros((rows, cols))
    padded[:probs.shape[0], :probs.shape[1]] = probs
    freq = np.zeros((rows, cols))
    for (a, b), count in hist.entries.items():
        freq[a, b] = count / hist.shots
    mask = (padded > prob_floor) | (freq > 0.0)
    diff = padded[mask] - freq[mask]
    return float(np.sqrt(np.dot(diff, diff)))


def _nelder_mead(objective, x0, fatol: float, max_iter: int, steps=None):
    """Downhill simplex stopping once an iteration improves the best value
    by less than ``fatol`` (or at ``max_iter``).  Deterministic: fixed
    per-coordinate initial perturbations (``steps``, default 5%), stable
    sorts."""
    x0 = np.asarray(x0, dtype=float)
    dim = len(x0)
    sim = [x0]
    for k in range(dim):
        vertex = x0.copy()
        if steps is not None:
            vertex[k] += steps[k]
        else:
            vertex[k] = vertex[k] * 1.05 if vertex[k] != 0.0 else 2.5e-4
        sim.append(vertex)
    sim = np.array(sim)
    values = np.array([objective(x) for x in sim])
    evals = dim + 1
    order = np.argsort(values, kind="stable")
    sim, values = sim[order], values[order]
    iterations = 0
    stalled = 0
    while iterations < max_iter:
        best_before = values[0]
        centroid = sim[:-1].mean(axis=0)
        reflected = centroid + (centroid - sim[-1])
        f_reflected = objective(reflected)
        evals += 1
        shrink = False
        if f_reflected < values[0]:
            expanded = centroid + 2.0 * (centroid - sim[-1])
            f_expanded = objective(expanded)
            evals += 1
            if f_expanded < f_reflected:
                sim[-1], values[-1] = expanded, f_expanded
            else:
                sim[-1], values[-1] = reflected, f_reflected
        elif f_reflected < values[-2]:
            sim[-1], values[-1] = reflected, f_reflected
        elif f_reflected < values[-1]:
            contracted = centroid + 0.5 * (reflected - centroid)
            f_contracted = objective(contracted)
            evals += 1
            if f_contracted <= f_reflected:
                sim[-1], values[-1] = contracted, f_contracted
            else:
                shrink = True
        else:
            contracted = centroid - 0.5 * (centroid - sim[-1])
            f_contracted = objective(contracted)
            evals += 1
            if f_contracted < values[-1]:
                sim[-1], values[-1] = contracted, f_contracted
            else:
                shrink = True
        if shrink:
            sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
            values[1:] = [objective(x) for x in sim[1:]]
            evals += dim
        order = np.argsort(values, kind="stable")
        sim, values = sim[order], values[order]
        iterations += 1
        if best_before - values[0] < fatol:
            stalled += 1
            # one stalled iteration may still recover through contraction;
            # two in a row is a converged stall
            if stalled >= 2:
                break
        else:
            stalled = 0
    return sim[0], float(values[0]), iterations, evals


def _golden_min(objective, lo: float, hi: float, rel_tol: float):
    """Deterministic golden-section minimum of a unimodal scalar function."""
    scale = max(abs(lo), abs(hi), 1e-12)
    if hi - lo <= rel_tol * scale:
        mid = 0.5 * (lo + hi)
        return mid, objective(mid)
    left = hi - _INV_PHI * (hi - lo)
    right = lo + _INV_PHI * (hi - lo)
    f_left, f_right = objective(left), objective(right)
    while hi - lo > rel_tol * scale:
        if f_left <= f_right:
            hi, right, f_right = right, left, f_left
            left = hi - _INV_PHI * (hi - lo)
            f_left = objective(left)
        else:
            lo, left, f_left = left, right, f_right
            right = lo + _INV_PHI * (hi - lo)
            f_right = objective(right)
    return (left, f_left) if f_left <= f_right else (right, f_right)


# --- objective evaluation -------------------------------------------------


@dataclass
class _CellOutcome:
    declination: float
    mean_pairs: float
    evaluations: int
    overflows: int
    max_truncation: float


class _Evaluator:
    """Declination objective over candidate points, reusing detector responses.

    Response matrices depend only on (arm, eta) within one calibration, so
    they are cached; columns are independent of the built width, keeping
    results identical however the cache grows.
    """

    def __init__(self, m: PhotoelectronMoments, hist: PhotocountHistogram,
                 geometry: DetectorGeometry, dark_rates: tuple[float, float],
                 options: CalibrationOptions):
        self.m = m
        self.hist = hist
        self.geometry = geometry
        self.dark_rates = dark_rates
        self.options = options
        max_s, max_i = hist.max_counts
        self.c_max_s = min(geometry.pixels_s, max_s + options.c_max_margin)
        self.c_max_i = min(geometry.pixels_i, max_i + options.c_max_margin)
        self._responses: dict[tuple[str, float], ResponseMatrix] = {}
        self._window_caps: dict[tuple[str, float], int] = {}

    def window_cap(self, arm: str, eta: float) -> int:
        """Photon number beyond which no photocount lands in this arm's window.

        Bursty field components can have tails no grid holds to the tail
        budget, but tail mass past this cap is invisible to the compared
        photocount cells, so the joint distribution is capped here (the
        mass is still recorded as truncated).
        """
        key = (arm, eta)
        cap = self._window_caps.get(key)
        if cap is None:
            pixels = self.geometry.pixels_s if arm == "s" else self.geometry.pixels_i
            c_max = self.c_max_s if arm == "s" else self.c_max_i
            cap = photon_window_cutoff(pixels, eta, c_max, self.options.tail_tolerance / 3.0)
            self._window_caps[key] = cap
        return cap

    def response(self, arm: str, eta: float, n_needed: int) -> ResponseMatrix:
        key = (arm, eta)
        cached = self._responses.get(key)
        if cached is not None and cached.n_max >= n_needed:
            return cached
        n_max = 64 * math.ceil((n_needed + 1) / 64)
        if cached is not None:
            n_max = max(n_max, cached.n_max)
        if arm == "s":
            det = DetectorParams(self.geometry.pixels_s, eta, self.dark_rates[0])
            c_max = self.c_max_s
        else:
            det = DetectorParams(self.geometry.pixels_i, eta, self.dark_rates[1])
            c_max = self.c_max_i
        built = detection_matrix(det, n_max, c_max)
        self._responses[key] = built
        return built

    def evaluate(self, eta_s: float, eta_i: float, n_p: float) -> tuple[float, int, float]:
        """(declination or inf, overflow flag, truncation) at one candidate point."""
        try:
            model = solve_field(self.m, CandidatePoint(eta_s, eta_i, n_p))
            cap_s = self.window_cap("s", eta_s)
            cap_i = self.window_cap("i", eta_i)
            dist = jpnd(model, self.options.tail_tolerance, self.options.max_grid,
                        component_caps=(max(cap_s, cap_i), cap_s, cap_i))
        except CutoffOverflow:
            return math.inf, 1, 0.0
        except (InfeasiblePoint, SubPoissonianComponent, ValueError):
            return math.inf, 0, 0.0
        t_s = self.response("s", eta_s, dist.cutoff_s)
        t_i = self.response("i", eta_i, dist.cutoff_i)
        p_c = jpcd(dist, t_s, t_i)
        return (declination(p_c, self.hist, self.options.prob_floor),
                0, abs(p_c.truncated_mass))

    def objective(self, x) -> float:
        eta_s, eta_i, n_p = float(x[0]), float(x[1]), float(x[2])
        if not (0.0 < eta_s <= 1.0 and 0.0 < eta_i <= 1.0 and n_p > 0.0):
            return math.inf
        return self.evaluate(eta_s, eta_i, n_p)[0]

    def cell_minimum(self, eta_s: float, eta_i: float) -> _CellOutcome | None:
        """Best declination over the feasible mean-pair interval of one cell."""
        interval = feasible_np_interval(self.m, eta_s, eta_i)
        if interval is None:
            return None
        lo, hi = interval
        if self.options.np_bracket is not None:
            lo = max(lo, self.options.np_bracket[0])
            hi = min(hi, self.options.np_bracket[1])
            if lo >= hi:
                return None
        stats = {"evals": 0, "overflows": 0, "trunc": 0.0}

        def objective(n_p: float) -> float:
            value, overflow, trunc = self.evaluate(eta_s, eta_i, n_p)
            stats["evals"] += 1
            stats["overflows"] += overflow
            stats["trunc"] = max(stats["trunc"], trunc)
            return value

        n_p, value = _golden_min(objective, lo, hi, self.options.np_rel_tol)
        if not math.isfinite(value):
            return None
        return _CellOutcome(value, n_p, stats["evals"], stats["overflows"], stats["trunc"])


def _eta_grid(center: float, span: float, step: float) -> np.ndarray:
    """Grid center*(1-span)..center*(1+span) in steps of ``step``, clipped to (0, 1]."""
    lo = center * (1.0 - span)
    hi = center * (1.0 + span)
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    values = lo + step * np.arange(count)
    return values[(values > 1e-9) & (values <= 1.0)]


def _scan_cells(evaluator: _Evaluator, etas_s: np.ndarray, etas_i: np.ndarray,
                threads: int | None):
    """Evaluate every grid cell; reduction is index-ordered, so the outcome
    is identical for any worker count."""
    cells = [(float(es), float(ei)) for es in etas_s for ei in etas_i]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda c: evaluator.cell_minimum(*c), cells))
    else:
        outcomes = [evaluator.cell_minimum(es, ei) for es, ei in cells]
    return cells, outcomes


# --- surface scan ----------------------------------------------------------


@dataclass(frozen=True)
class SurfaceCell:
    """One scan-grid cell: the inner minimum over mean_pairs, or infeasible."""

    eta_s: float
    eta_i: float
    declination: float | None
    mean_pairs: float | None

    @property
    def feasible(self) -> bool:
        return self.declination is not None


def scan_surface(m: PhotoelectronMoments, hist: PhotocountHistogram,
                 geometry: DetectorGeometry, etas_s, etas_i,
                 dark_rates: tuple[float, float] = (0.0, 0.0),
                 options: CalibrationOptions | None = None) -> list[SurfaceCell]:
    """Minimum declination over mean_pairs for each grid cell.

    Infeasible cells are data (declination None), not errors; the table is
    ready for heat-map plotting.  ``dark_rates`` are the per-pixel dark
    probabilities entering the detector response.
    """
    options = options or CalibrationOptions()
    evaluator = _Evaluator(m, hist, geometry, dark_rates, options)
    cells, outcomes = _scan_cells(evaluator, np.asarray(etas_s, dtype=float),
                                  np.asarray(etas_i, dtype=float), options.threads)
    return [
        SurfaceCell(es, ei, None, None) if outcome is None
        else SurfaceCell(es, ei, outcome.declination, outcome.mean_pairs)
        for (es, ei), outcome in zip(cells, outcomes)
    ]


def write_surface_csv(cells: list[SurfaceCell], path: str | Path) -> None:
    """Export a scan surface as ``eta_s,eta_i,D`` (empty D marks infeasible cells)."""
    lines = ["eta_s,eta_i,D"]
    for cell in cells:
        d = "" if cell.declination is None else repr(cell.declination)
        lines.append(f"{cell.eta_s!r},{cell.eta_i!r},{d}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- calibration pipeline ---------------------------------------------------


def calibrate(hist: PhotocountHistogram, dark: DarkCountRecord,
              geometry: DetectorGeometry,
              options: CalibrationOptions | None = None) -> CalibrationResult:
    """Full pipeline: moments, dark elimination, baselines, two-stage fit.

    Stage one scans an (eta_s, eta_i) grid centered on the covariance
    baseline with a golden-section search over the feasible mean-pair
    interval in each cell; stage two refines the best cell with a
    Nelder-Mead simplex.  Raises NoFeasibleRegion when no grid cell admits
    a field decomposition (NonpositiveCovariance when the data carry no
    pairing signal at all).
    """
    options = options or CalibrationOptions()
    started = time.perf_counter()
    raw = photocount_moments(hist)
    drk = photocount_moments(dark)
    m = subtract_dark(raw, drk)
    if m.cov <= 0.0:
        raise NonpositiveCovariance(
            f"photoelectron covariance {m.cov:g} is not positive; no paired signal")
    baseline = klyshko_estimate(m)
    dark_rates = (drk.mean_s / geometry.pixels_s, drk.mean_i / geometry.pixels_i)
    evaluator = _Evaluator(m, hist, geometry, dark_rates, options)

    center = options.grid_center or (baseline.eta_s_cov, baseline.eta_i_cov)
    etas_s = _eta_grid(center[0], options.grid_span, options.grid_step)
    etas_i = _eta_grid(center[1], options.grid_span, options.grid_step)
    if len(etas_s) == 0 or len(etas_i) == 0:
        raise NoFeasibleRegion("efficiency grid is empty; baseline outside (0, 1]")

    cells, outcomes = _scan_cells(evaluator, etas_s, etas_i, options.threads)
    best = None
    best_cell = None
    for (es, ei), outcome in zip(cells, outcomes):
        if outcome is None:
            continue
        # strict improvement keeps the lexicographically smallest tie
        if best is None or outcome.declination < best.declination:
            best, best_cell = outcome, (es, ei)
    if best is None:
        raise NoFeasibleRegion(
            "no grid cell admits a field decomposition "
            f"({len(cells)} cells scanned)")

    on_edge = (
        best_cell[0] in (etas_s[0], etas_s[-1])
        or best_cell[1] in (etas_i[0], etas_i[-1])
    )

    x0 = np.array([best_cell[0], best_cell[1], best.mean_pairs])
    # refine below the grid resolution: eta steps at half a cell, the pair
    # number at a few times the line-search resolution
    steps = (0.5 * options.grid_step, 0.5 * options.grid_step,
             5.0 * options.np_rel_tol * max(best.mean_pairs, 1.0))
    x_ref, f_ref, nm_iter, nm_evals = _nelder_mead(
        evaluator.objective, x0, options.simplex_fatol, options.simplex_max_iter,
        steps=steps)
    if math.isfinite(f_ref) and f_ref <= best.declination:
        point = CandidatePoint(float(x_ref[0]), float(x_ref[1]), float(x_ref[2]))
        best_value = f_ref
    else:
        point = CandidatePoint(best_cell[0], best_cell[1], best.mean_pairs)
        best_value = best.declination

    model = solve_field(m, point)
    feasible_cells = sum(1 for outcome in outcomes if outcome is not None)
    diagnostics = {
        "grid_shape": [len(etas_s), len(etas_i)],
        "grid_step": options.grid_step,
        "feasible_cells": feasible_cells,
        "infeasible_cells": len(cells) - feasible_cells,
        "grid_evaluations": sum(o.evaluations for o in outcomes if o is not None),
        "cutoff_overflows": sum(o.overflows for o in outcomes if o is not None),
        "max_truncated_mass": max((o.max_truncation for o in outcomes if o is not None),
                                  default=0.0),
        "simplex_iterations": nm_iter,
        "simplex_evaluations": nm_evals,
        "seconds": time.perf_counter() - started,
    }
    return CalibrationResult(
        point=point,
        model=model,
        declination=best_value,
        baseline=baseline,
        moments=m,
        geometry=geometry,
        dark_rates=dark_rates,
        status="boundary" if on_edge else "converged",
        diagnostics=diagnostics,
        config=_options_dict(options),
    )


def _options_dict(options: CalibrationOptions) -> dict:
    doc = asdict(options)
    doc["np_bracket"] = list(options.np_bracket) if options.np_bracket else None
    doc["grid_center"] = list(options.grid_center) if options.grid_center else None
    return doc


# --- bootstrap ---------------------------------------------------------------


@dataclass
class BootstrapResult:
    """Resampling standard errors; invalid when too many replicas fail."""

    stderr: dict
    means: dict
    replicas: int
    failures: int
    valid: bool
    degenerate: bool    # single replica: zero stderr by construction


def _resample_table(table: PhotocountHistogram, rng: np.random.Generator,
                    cls=PhotocountHistogram):
    cells = sorted(table.entries)
    counts = np.array([table.entries[c] for c in cells], dtype=float)
    drawn = rng.multinomial(table.shots, counts / counts.sum())
    entries = {cell: int(k) for cell, k in zip(cells, drawn) if k > 0}
    return cls(entries, table.shots, label=table.label + ":resampled")


def _replica_payload(args):
    (hist_entries, hist_shots, dark_entries, dark_shots, geometry, options,
     seed, index) = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    hist = _resample_table(
        PhotocountHistogram(hist_entries, hist_shots), rng, PhotocountHistogram)
    dark = _resample_table(
        DarkCountRecord(dark_entries, dark_shots), rng, DarkCountRecord)
    try:
        result = calibrate(hist, dark, geometry, options)
    except Exception:  # replica failures are counted, not fatal
        return None
    params = result.model.params_dict()
    return (result.point.eta_s, result.point.eta_i, result.point.mean_pairs,
            params["b_p"], params["M_p"], params["b_s"], params["M_s"],
            params["b_i"], params["M_i"])


_BOOTSTRAP_KEYS = ("eta_s", "eta_i", "mean_pairs", "b_p", "M_p", "b_s", "M_s",
                   "b_i", "M_i")


def bootstrap_uncertainty(hist: PhotocountHistogram, dark: DarkCountRecord,
                          geometry: DetectorGeometry, options: CalibrationOptions,
                          replicas: int = 100, seed: int = 0,
                          base: CalibrationResult | None = None,
                          workers: int | None = None) -> BootstrapResult:
    """Multinomial-resampling standard errors of the fitted parameters.

    Both the histogram and the dark record are resampled per replica and
    the calibration re-run with a warm start: the grid narrows to +-10%
    around the original optimum and the mean-pair search brackets around
    its fitted value.  Replica seeds derive from the root seed by index,
    so the result is identical for any worker count.  More than 10%
    failed replicas mark the result invalid.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if base is None:
        base = calibrate(hist, dark, geometry, options)
    warm = replace(
        options,
        grid_center=(base.point.eta_s, base.point.eta_i),
        grid_span=0.1,
        np_bracket=(0.8 * base.point.mean_pairs, 1.25 * base.point.mean_pairs),
    )
    payloads = [
        (dict(hist.entries), hist.shots, dict(dark.entries), dark.shots,
         geometry, warm, seed, k)
        for k in range(replicas)
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_replica_payload, payloads))
    else:
        rows = [_replica_payload(p) for p in payloads]

    good = np.array([r for r in rows if r is not None], dtype=float)
    failures = sum(1 for r in rows if r is None)
    if len(good) == 0:
        return BootstrapResult({}, {}, replicas, failures, valid=False,
                               degenerate=replicas == 1)
    ddof = 1 if len(good) > 1 else 0
    stds = good.std(axis=0, ddof=ddof)
    means = good.mean(axis=0)
    return BootstrapResult(
        stderr={k: float(s) for k, s in zip(_BOOTSTRAP_KEYS, stds)},
        means={k: float(v) for k, v in zip(_BOOTSTRAP_KEYS, means)},
        replicas=replicas,
        failures=failures,
        valid=failures * 10 <= replicas,
        degenerate=len(good) == 1,
    )
