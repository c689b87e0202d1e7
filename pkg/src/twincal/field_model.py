"""Multimode-thermal field components and the joint photon-number distribution.

A component with M equally populated thermal modes and b mean photons per
mode has the photon-number distribution

    p(n; M, b) = Gamma(n + M) / (n! Gamma(M)) * b^n / (1 + b)^(n + M)

with mean M*b and variance M*b*(1+b).  M is any positive real; values far
below 1 (rare, bursty components) are fully supported through log-gamma
evaluation.  Two degenerate encodings keep the moment map invertible:

* vacuum: ``mean_per_mode == 0`` (zero mean and variance),
* Poisson limit (variance == mean): ``modes == inf``, with
  ``mean_per_mode`` holding the total mean photon number.

The twin-beam field is three independent components (pairs, signal noise,
idler noise); its joint photon-number distribution is the three-fold
convolution with the pair count feeding both arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import CutoffOverflow, SubPoissonianComponent

VACUUM_TOL = 1e-12
POISSON_RTOL = 1e-9
DEFAULT_TAIL_TOLERANCE = 1e-5
DEFAULT_MAX_GRID = 512


@dataclass(frozen=True)
class FieldComponentParams:
    """Mode count M and mean photons per mode b of one thermal component."""

    modes: float
    mean_per_mode: float

    def __post_init__(self):
        if self.mean_per_mode < 0 or not math.isfinite(self.mean_per_mode):
            raise ValueError(f"mean_per_mode must be finite and >= 0, got {self.mean_per_mode}")
        if not self.is_poisson and self.modes <= 0:
            raise ValueError(f"modes must be positive, got {self.modes}")

    @classmethod
    def vacuum(cls) -> "FieldComponentParams":
        return cls(modes=1.0, mean_per_mode=0.0)

    @classmethod
    def poisson(cls, mean: float) -> "FieldComponentParams":
        return cls(modes=math.inf, mean_per_mode=mean)

    @property
    def is_poisson(self) -> bool:
        return math.isinf(self.modes)

    @property
    def is_vacuum(self) -> bool:
        return self.mean_per_mode == 0.0

    @property
    def mean(self) -> float:
        if self.is_poisson:
            return self.mean_per_mode
        return self.modes * self.mean_per_mode

    @property
    def variance(self) -> float:
        if self.is_poisson:
            return self.mean_per_mode
        return self.modes * self.mean_per_mode * (1.0 + self.mean_per_mode)


@dataclass(frozen=True)
class TwinBeamModel:
    """Three-component twin-beam field: pairs plus per-arm noise."""

    pair: FieldComponentParams
    noise_s: FieldComponentParams
    noise_i: FieldComponentParams

    @property
    def mean_pairs(self) -> float:
        return self.pair.mean

    def params_dict(self) -> dict[str, float]:
        """Flat (b_a, M_a) mapping used by reports and ground-truth sidecars."""
        return {
            "b_p": self.pair.mean_per_mode,
            "M_p": self.pair.modes,
            "b_s": self.noise_s.mean_per_mode,
            "M_s": self.noise_s.modes,
            "b_i": self.noise_i.mean_per_mode,
            "M_i": self.noise_i.modes,
        }

    @classmethod
    def from_params_dict(cls, d: dict) -> "TwinBeamModel":
        return cls(
            pair=FieldComponentParams(float(d["M_p"]), float(d["b_p"])),
            noise_s=FieldComponentParams(float(d["M_s"]), float(d["b_s"])),
            noise_i=FieldComponentParams(float(d["M_i"]), float(d["b_i"])),
        )


@dataclass(frozen=True)
class JointDistribution:
    """Dense joint distribution over (n_s, n_i) with recorded truncation."""

    probabilities: np.ndarray
    truncated_mass: float

    def __post_init__(self):
        arr = np.ascontiguousarray(self.probabilities, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "probabilities", arr)

    @property
    def cutoff_s(self) -> int:
        return self.probabilities.shape[0] - 1

    @property
    def cutoff_i(self) -> int:
        return self.probabilities.shape[1] - 1

    def marginal_s(self) -> np.ndarray:
        return self.probabilities.sum(axis=1)

    def marginal_i(self) -> np.ndarray:
        return self.probabilities.sum(axis=0)


def component_moments(params: FieldComponentParams) -> tuple[float, float]:
    """(mean, variance) of one component: (M*b, M*b*(1+b))."""
    return params.mean, params.variance


def component_from_moments(mean: float, variance: float, *, mean_tol: float = VACUUM_TOL,
                           poisson_rtol: float = POISSON_RTOL) -> FieldComponentParams:
    """Invert the moment map: b = variance/mean - 1, M = mean^2/(variance - mean).

    A mean below ``mean_tol`` with matching variance is the vacuum
    sentinel; variance equal to the mean within ``poisson_rtol``
    (relative) selects the Poisson-limit encoding, avoiding the division
    blow-up in M.  Variance below the mean beyond tolerance is not
    representable and raises SubPoissonianComponent.
    """
    if mean < 0:
        raise ValueError(f"component mean must be >= 0, got {mean}")
    if mean <= mean_tol:
        if variance <= max(mean_tol, mean):
            return FieldComponentParams.vacuum()
        if mean == 0.0:
            raise ValueError(f"zero mean with variance {variance:g} is not representable")
        # fall through: a legitimate ultra-bursty component (tiny M, huge b)
    if variance < mean * (1.0 - poisson_rtol):
        raise SubPoissonianComponent(
            f"variance {variance:g} < mean {mean:g}: no thermal representation"
        )
    if abs(variance - mean) <= poisson_rtol * mean:
        return FieldComponentParams.poisson(mean)
    return FieldComponentParams(modes=mean**2 / (variance - mean), mean_per_mode=variance / mean - 1.0)


def log_pmf_vector(params: FieldComponentParams, k_max: int) -> np.ndarray:
    """log p(n) for n = 0..k_max (``-inf`` where the mass is exactly zero)."""
    n = np.arange(k_max + 1, dtype=float)
    if params.is_vacuum:
        out = np.full(k_max + 1, -np.inf)
        out[0] = 0.0
        return out
    if params.is_poisson:
        lam = params.mean_per_mode
        return n * math.log(lam) - lam - gammaln(n + 1.0)
    m, b = params.modes, params.mean_per_mode
    return (
        gammaln(n + m) - gammaln(n + 1.0) - gammaln(m)
        + n * math.log(b) - (n + m) * math.log1p(b)
    )


def pmf_vector(params: FieldComponentParams, k_max: int) -> np.ndarray:
    """p(n) for n = 0..k_max, exponentiated once from the log domain."""
    return np.exp(log_pmf_vector(params, k_max))


def mandel_rice_pmf(n: int, params: FieldComponentParams) -> float:
    """Probability of n photons in one component."""
    if n < 0:
        raise ValueError("photon number must be nonnegative")
    if params.is_vacuum:
        return 1.0 if n == 0 else 0.0
    if params.is_poisson:
        lam = params.mean_per_mode
        return math.exp(n * math.log(lam) - lam - gammaln(n + 1.0))
    m, b = params.modes, params.mean_per_mode
    return math.exp(
        gammaln(n + m) - gammaln(n + 1.0) - gammaln(m) + n * math.log(b) - (n + m) * math.log1p(b)
    )


def component_cutoff(params: FieldComponentParams, tail: float, limit: int = 1 << 16,
                     cap: int | None = None) -> int:
    """Smallest K with cumulative mass >= 1 - tail, by direct summation.

    With ``cap`` given, the search stops there and returns ``cap`` even if
    the tail target is not met (the caller accounts for the extra mass);
    otherwise exceeding ``limit`` raises CutoffOverflow.
    """
    if params.is_vacuum:
        return 0
    target = 1.0 - tail
    hard = limit if cap is None else min(limit, cap)
    k = min(64, hard)
    while True:
        cum = np.cumsum(pmf_vector(params, k))
        idx = int(np.searchsorted(cum, target, side="left"))
        if idx < len(cum):
            return idx
        if k >= hard:
            if cap is not None:
                return hard
            raise CutoffOverflow(
                f"component (M={params.modes:g}, b={params.mean_per_mode:g}) needs a cutoff "
                f"beyond {limit} for tail {tail:g}"
            )
        k = min(hard, 2 * k)


def jpnd(model: TwinBeamModel, tail_tolerance: float = DEFAULT_TAIL_TOLERANCE,
         max_grid: int = DEFAULT_MAX_GRID,
         component_caps: tuple[int, int, int] | None = None) -> JointDistribution:
    """Joint photon-number distribution of the three-component field.

    p(n_s, n_i) = sum_n  p(n_s - n; M_s, b_s) p(n_i - n; M_i, b_i) p(n; M_p, b_p)

    Each component is truncated so its tail mass stays below
    ``tail_tolerance / 3``; the joint grid is the sum of the pair and
    per-arm noise cutoffs, and the missed mass is recorded as
    ``truncated_mass``.  The sum is evaluated by direct summation over
    the truncated grid (no FFT, so entries stay exactly nonnegative).

    ``component_caps`` optionally bounds the (pair, signal-noise,
    idler-noise) cutoffs from above.  Rare bursty components (tiny mode
    count, huge per-mode mean) have arbitrarily long tails that no fixed
    grid can hold to the tail budget; callers comparing against a finite
    photocount window may cap them at the photon number beyond which no
    photocount can land in the window, accepting the (recorded) extra
    truncated mass instead of an overflow.
    """
    if not 0.0 < tail_tolerance <= 1e-3:
        raise ValueError(f"tail_tolerance must be in (0, 1e-3], got {tail_tolerance}")
    per_component = tail_tolerance / 3.0
    caps = component_caps or (max_grid, max_grid, max_grid)
    k_pair = component_cutoff(model.pair, per_component, limit=max_grid, cap=caps[0])
    k_ns = component_cutoff(model.noise_s, per_component, limit=max_grid, cap=caps[1])
    k_ni = component_cutoff(model.noise_i, per_component, limit=max_grid, cap=caps[2])
    rows, cols = k_pair + k_ns + 1, k_pair + k_ni + 1
    if rows > max_grid or cols > max_grid:
        raise CutoffOverflow(
            f"joint grid {rows}x{cols} exceeds the configured maximum {max_grid}x{max_grid}"
        )
    w = pmf_vector(model.pair, k_pair)
    vs = pmf_vector(model.noise_s, k_ns)
    vi = pmf_vector(model.noise_i, k_ni)
    # p = A @ B with A[ns, n] = w[n] vs[ns-n] and B[n, ni] = vi[ni-n]
    a = np.zeros((rows, k_pair + 1))
    b = np.zeros((k_pair + 1, cols))
    for n in range(k_pair + 1):
        a[n:n + k_ns + 1, n] = w[n] * vs
        b[n, n:n + k_ni + 1] = vi
    probs = a @ b
    return JointDistribution(probabilities=probs, truncated_mass=1.0 - float(probs.sum()))
