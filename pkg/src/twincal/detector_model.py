"""Response of an N-pixel photon-number-resolving detector.

The detector has N identical independent pixels, detection efficiency
eta, and per-pixel per-frame dark-count probability D (so the mean dark
count is N*D).  Each incident photon is detected with probability eta
and lands on a uniformly random pixel; a frame's photocount c is the
number of pixels with at least one event.  The response probabilities
T(c, n) of c counts from n photons admit two equivalent forms:

* the inclusion-exclusion closed form

    T(c,n) = C(N,c) (1-D)^N (1-eta)^n (-1)^c
             * sum_l C(c,l) (-1)^l (1-D)^(-l) (1 + l/N * eta/(1-eta))^n

  whose alternating inner sum cancels catastrophically for large N
  (condition number ~ (c / (N * max(D, eta*n/N)))^(-c), e.g. ~1e97 at
  c=20, D=2e-5, N=16384), and

* an exact all-nonnegative decomposition over u, the number of distinct
  photon-occupied pixels:

    T(c,n) = sum_u  Q_n(u) * Binom(c - u; N - u, D)

  where Q_n(u) follows the one-step recurrence
  Q_{t+1}(u) = Q_t(u) (1 - eta (N-u)/N) + Q_t(u-1) eta (N-u+1)/N.

The nonnegative form is the production path ("stable"); the literal
alternating form ("alternating") and an adaptive arbitrary-precision
evaluation of it ("reference") are kept for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np
from scipy.special import gammaln

from .errors import DimensionMismatch, NumericalInstability
from .field_model import JointDistribution

REL_ERR_BUDGET = 1e-6     # alternating path: flagged above this relative error
ABS_ERR_FLOOR = 1e-15     # absolute error below this never flags (probability scale)
CLAMP_TOL = 1e-12         # round-off margin clamped onto [0, 1]
_TERM_EPS = 1e-14         # per-term evaluation error feeding the cancellation estimate


@dataclass(frozen=True)
class DetectorParams:
    """Pixel count N, detection efficiency eta, per-pixel dark rate D."""

    pixels: int
    efficiency: float
    dark_rate: float

    def __post_init__(self):
        if self.pixels < 1 or int(self.pixels) != self.pixels:
            raise ValueError(f"pixels must be a positive integer, got {self.pixels}")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency}")
        if not 0.0 <= self.dark_rate < 1.0:
            raise ValueError(f"dark_rate must be in [0, 1), got {self.dark_rate}")

    @property
    def mean_dark_counts(self) -> float:
        """Mean dark counts per frame, N*D."""
        return self.pixels * self.dark_rate


@dataclass(frozen=True)
class ResponseMatrix:
    """T(c, n) over c = 0..c_max, n = 0..n_max for one detector."""

    values: np.ndarray
    detector: DetectorParams
    column_tail: np.ndarray   # per-n mass sitting above c_max
    clamped: int = 0          # entries nudged onto [0, 1] from within CLAMP_TOL

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def c_max(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_max(self) -> int:
        return self.values.shape[1] - 1


def photon_window_cutoff(pixels: int, efficiency: float, c_max: int, tol: float) -> int:
    """Smallest n with P(photocount <= c_max | n photons) below ``tol``.

    Photon numbers beyond this cannot land inside a photocount window of
    size c_max (up to ``tol``), so distribution tails past it are
    invisible to a windowed comparison.  Uses the Chernoff bound
    P(Bin(n, eta) <= a) <= exp(-n KL(a/n || eta)) with a pixel-collision
    margin of 8 photons (the collision route costs an extra factor
    (c_max/pixels)^8, far below any practical ``tol``).
    """
    a = min(c_max + 8, pixels)

    def bound(n: int) -> float:
        q = a / n
        if q >= efficiency:
            return 1.0
        if efficiency >= 1.0:
            return 0.0
        kl = q * math.log(q / efficiency) + (1.0 - q) * math.log((1.0 - q) / (1.0 - efficiency))
        return math.exp(-n * kl)

    n = int(a / efficiency) + 1
    while bound(n) >= tol:
        n = max(n + 1, int(n * 1.25))
    return n


def exact_mean_counts(detector: DetectorParams, n: int | np.ndarray) -> float | np.ndarray:
    """Exact mean photocount from n photons: N (1 - (1-D)(1 - eta/N)^n).

    For N >> n this is N*D + eta*n to O(n^2 eta^2 / N); dark counts enter
    additively.
    """
    n_pix = detector.pixels
    return n_pix * (1.0 - (1.0 - detector.dark_rate)
                    * (1.0 - detector.efficiency / n_pix) ** np.asarray(n, dtype=float))


def _photon_occupancy(detector: DetectorParams, n_max: int, u_cap: int) -> np.ndarray:
    """Q[u, n] = P(u distinct photon-occupied pixels after n photons).

    Shape (u_cap + 2, n_max + 1); the last row absorbs u > u_cap, which
    can only produce photocounts above c_max and therefore only feeds the
    recorded column tail.
    """
    n_pix = detector.pixels
    u = np.arange(u_cap + 1, dtype=float)
    p_new = detector.efficiency * (n_pix - u) / n_pix
    q = np.zeros((u_cap + 2, n_max + 1))
    col = np.zeros(u_cap + 2)
    col[0] = 1.0
    q[0, 0] = 1.0
    for n in range(1, n_max + 1):
        moved = col[:u_cap + 1] * p_new
        col[:u_cap + 1] -= moved
        col[1:u_cap + 2] += moved
        q[:, n] = col
    return q


def _dark_kernel(detector: DetectorParams, c_max: int) -> np.ndarray:
    """W[c, u] = Binom(c - u; N - u, D): dark counts on the free pixels."""
    n_pix, d = detector.pixels, detector.dark_rate
    if d == 0.0:
        return np.eye(c_max + 1)
    c = np.arange(c_max + 1, dtype=float)[:, None]
    u = np.arange(c_max + 1, dtype=float)[None, :]
    k = c - u
    m = n_pix - u
    with np.errstate(invalid="ignore"):
        logw = (
            gammaln(m + 1.0) - gammaln(k + 1.0) - gammaln(m - k + 1.0)
            + k * math.log(d) + (m - k) * math.log1p(-d)
        )
    return np.where(k >= 0, np.exp(np.where(k >= 0, logw, -np.inf)), 0.0)


def _occupancy_matrix(detector: DetectorParams, n_max: int, c_max: int) -> np.ndarray:
    u_cap = min(c_max, detector.pixels)
    q = _photon_occupancy(detector, n_max, u_cap)
    w = _dark_kernel(detector, c_max)
    # fixed-order accumulation over u: every column is bit-identical no
    # matter how wide the matrix is built
    out = np.zeros((c_max + 1, n_max + 1))
    for u in range(u_cap + 1):
        out += w[:, u:u + 1] * q[u:u + 1, :]
    return out


def _alternating_matrix(detector: DetectorParams, n_max: int,
                        c_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Literal inclusion-exclusion evaluation with sign-tracked log terms.

    Per column the alternating terms are accumulated in descending
    magnitude order with Neumaier compensation.  Returns (values,
    est_abs_err) where the error estimate is the summed term magnitude
    times a per-term evaluation epsilon; cancellation shows up as the
    estimate dwarfing the value.
    """
    n_pix, eta, d = detector.pixels, detector.efficiency, detector.dark_rate
    n = np.arange(n_max + 1, dtype=float)
    log1md = math.log1p(-d)
    values = np.zeros((c_max + 1, n_max + 1))
    est = np.zeros((c_max + 1, n_max + 1))
    for c in range(c_max + 1):
        ell = np.arange(c + 1, dtype=float)
        x = 1.0 - eta * (1.0 - ell / n_pix)          # (1-eta)(1 + l/N * eta/(1-eta))
        log_binom = gammaln(c + 1.0) - gammaln(ell + 1.0) - gammaln(c - ell + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logx = np.log(x)
            logmag = (log_binom - ell * log1md)[:, None] + logx[:, None] * n[None, :]
        if eta == 1.0:
            logmag[0, :] = np.where(n == 0, log_binom[0], -np.inf)  # 0^0 = 1
        sign = np.where((c + ell.astype(int)) % 2 == 0, 1.0, -1.0)
        peak = np.max(logmag, axis=0)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        terms = sign[:, None] * np.exp(logmag - peak[None, :])
        order = np.argsort(-logmag, axis=0, kind="stable")
        terms = np.take_along_axis(terms, order, axis=0)
        total = terms[0].copy()
        comp = np.zeros(n_max + 1)
        for i in range(1, c + 1):
            t_i = terms[i]
            s_new = total + t_i
            comp += np.where(np.abs(total) >= np.abs(t_i),
                             (total - s_new) + t_i, (t_i - s_new) + total)
            total = s_new
        total = total + comp
        log_prefactor = (gammaln(n_pix + 1.0) - gammaln(c + 1.0) - gammaln(n_pix - c + 1.0)
                         + n_pix * log1md + peak)
        abs_scale = np.exp(log_prefactor) * np.abs(terms).sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            values[c] = np.where(total == 0.0, 0.0,
                                 np.sign(total) * np.exp(log_prefactor + np.log(np.abs(total))))
        est[c] = abs_scale * _TERM_EPS
    return values, est


def reference_entry(detector: DetectorParams, c: int, n: int, max_dps: int = 640) -> float:
    """Arbitrary-precision evaluation of the inclusion-exclusion form.

    Escalates the working precision until two successive evaluations
    agree to 1e-18 relative; the slow validation oracle for T(c, n).
    """
    n_pix = detector.pixels

    def evaluate(dps: int) -> mp.mpf:
        with mp.workdps(dps):
            eta = mp.mpf(detector.efficiency)
            one_minus_d = 1 - mp.mpf(detector.dark_rate)
            total = mp.mpf(0)
            for ell in range(c + 1):
                x = 1 - eta * (1 - mp.mpf(ell) / n_pix)
                term = mp.binomial(c, ell) * one_minus_d ** (-ell) * x**n
                total += term if (c + ell) % 2 == 0 else -term
            return mp.binomial(n_pix, c) * one_minus_d**n_pix * total

    dps = 40
    prev = evaluate(dps)
    while dps < max_dps:
        dps *= 2
        cur = evaluate(dps)
        if abs(cur - prev) <= mp.mpf("1e-18") * max(abs(cur), mp.mpf("1e-300")):
            return float(cur)
        prev = cur
    return float(prev)


def _clamp_unit(values: np.ndarray) -> tuple[np.ndarray, int]:
    low = (values < 0.0) & (values > -CLAMP_TOL)
    high = (values > 1.0) & (values < 1.0 + CLAMP_TOL)
    clamped = int(low.sum() + high.sum())
    if clamped:
        values = np.where(low, 0.0, np.where(high, 1.0, values))
    return values, clamped


def detection_matrix(detector: DetectorParams, n_max: int, c_max: int,
                     method: str = "stable") -> ResponseMatrix:
    """Build T(c, n) for c = 0..c_max, n = 0..n_max.

    ``method="stable"`` (default) uses the exact nonnegative occupancy
    decomposition.  ``method="alternating"`` evaluates the literal
    alternating closed form with compensated summation and raises
    NumericalInstability if cancellation leaves any entry above a 1e-6
    relative error budget (at large N that is most of the matrix, which
    is why it is not the default).  ``method="reference"`` evaluates every
    entry in adaptive arbitrary precision (slow; for validation).

    Entries within 1e-12 outside [0, 1] are clamped and counted; anything
    further out raises NumericalInstability.
    """
    if c_max > detector.pixels:
        raise ValueError(f"c_max {c_max} exceeds the pixel count {detector.pixels}")
    if c_max < 0 or n_max < 0:
        raise ValueError("c_max and n_max must be nonnegative")

    if method == "stable":
        values = _occupancy_matrix(detector, n_max, c_max)
    elif method == "alternating":
        values, est = _alternating_matrix(detector, n_max, c_max)
        bad = est > np.maximum(REL_ERR_BUDGET * np.abs(values), ABS_ERR_FLOOR)
        if bad.any():
            c_bad, n_bad = np.unravel_index(int(np.argmax(est / np.maximum(np.abs(values), ABS_ERR_FLOOR))), est.shape)
            raise NumericalInstability(
                f"alternating sum leaves {int(bad.sum())} entries above the 1e-6 relative "
                f"error budget, worst at (c={c_bad}, n={n_bad}); use the stable or "
                f"reference method", c=int(c_bad), n=int(n_bad))
    elif method == "reference":
        values = np.empty((c_max + 1, n_max + 1))
        for c in range(c_max + 1):
            for n in range(n_max + 1):
                values[c, n] = reference_entry(detector, c, n)
    else:
        raise ValueError(f"unknown method {method!r}")

    below = values < -CLAMP_TOL
    above = values > 1.0 + CLAMP_TOL
    if below.any() or above.any():
        c_bad, n_bad = np.unravel_index(int(np.argmax(np.abs(values - 0.5))), values.shape)
        raise NumericalInstability(
            f"entry T({c_bad},{n_bad}) = {values[c_bad, n_bad]:g} lies outside [0, 1] "
            f"beyond round-off", c=int(c_bad), n=int(n_bad))
    values, clamped = _clamp_unit(values)
    column_tail = 1.0 - values.sum(axis=0)
    return ResponseMatrix(values=values, detector=detector, column_tail=column_tail,
                          clamped=clamped)


def jpcd(field: JointDistribution, t_s: ResponseMatrix, t_i: ResponseMatrix) -> JointDistribution:
    """Joint photocount distribution from a photon-number distribution.

    p_c(c_s, c_i) = sum_{n_s, n_i} T_s(c_s, n_s) T_i(c_i, n_i) p(n_s, n_i)

    The response matrices must cover the field's truncation grid.  The
    output mass deficit (field truncation plus response column tails) is
    recorded as ``truncated_mass``.
    """
    if t_s.n_max < field.cutoff_s or t_i.n_max < field.cutoff_i:
        raise DimensionMismatch(
            f"response matrices cover n <= ({t_s.n_max}, {t_i.n_max}) but the field "
            f"needs ({field.cutoff_s}, {field.cutoff_i})"
        )
    left = t_s.values[:, :field.cutoff_s + 1]
    right = t_i.values[:, :field.cutoff_i + 1]
    probs = left @ field.probabilities @ right.T
    return JointDistribution(probabilities=probs, truncated_mass=1.0 - float(probs.sum()))
