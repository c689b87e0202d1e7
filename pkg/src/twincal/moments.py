"""Photocount moments, dark-count elimination, and baseline ratio estimators.

The dark correction proceeds in a fixed order: means first, then second
moments using the already-corrected means, then the cross moment.
Standard errors come from within-histogram sample variances of each
moment estimator and are propagated in quadrature; no n/(n-1) bias
correction is applied (shot counts are ~1e5, far beyond where it
matters for the quoted precision).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NegativeMeanAfterSubtraction, ZeroMeanArm
from .histogram_io import PhotocountHistogram


def _ratio_stderr(x: float, sx: float, y: float, sy: float) -> float:
    # stderr of x/y treating x and y as uncorrelated
    return math.sqrt((sx / y) ** 2 + (x * sy / y**2) ** 2)


@dataclass(frozen=True)
class RawMoments:
    """First and second sample moments of registered counts, with standard errors."""

    mean_s: float
    mean_i: float
    second_s: float
    second_i: float
    cross: float
    stderr_mean_s: float
    stderr_mean_i: float
    stderr_second_s: float
    stderr_second_i: float
    stderr_cross: float
    shots: int

    def __post_init__(self):
        for name in ("mean_s", "mean_i", "second_s", "second_i", "cross"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        # sample second moments can never undercut the squared mean
        slack = 1e-9
        if self.second_s < self.mean_s**2 - slack or self.second_i < self.mean_i**2 - slack:
            raise ValueError("second moment below squared mean")


@dataclass(frozen=True)
class PhotoelectronMoments:
    """Moments of detected photoelectrons after dark-count elimination."""

    mean_s: float
    mean_i: float
    second_s: float
    second_i: float
    cross: float
    stderr_mean_s: float = 0.0
    stderr_mean_i: float = 0.0
    stderr_second_s: float = 0.0
    stderr_second_i: float = 0.0
    stderr_cross: float = 0.0

    def __post_init__(self):
        scale = max(1.0, self.second_s, self.second_i)
        if self.var_s < -1e-9 * scale or self.var_i < -1e-9 * scale:
            raise ValueError("negative variance; moments are inconsistent")

    @property
    def var_s(self) -> float:
        return self.second_s - self.mean_s**2

    @property
    def var_i(self) -> float:
        return self.second_i - self.mean_i**2

    @property
    def cov(self) -> float:
        return self.cross - self.mean_s * self.mean_i

    @property
    def stderr_var_s(self) -> float:
        return math.hypot(self.stderr_second_s, 2 * self.mean_s * self.stderr_mean_s)

    @property
    def stderr_var_i(self) -> float:
        return math.hypot(self.stderr_second_i, 2 * self.mean_i * self.stderr_mean_i)

    @property
    def stderr_cov(self) -> float:
        return math.sqrt(
            self.stderr_cross**2
            + (self.mean_i * self.stderr_mean_s) ** 2
            + (self.mean_s * self.stderr_mean_i) ** 2
        )

    @classmethod
    def from_variances(cls, mean_s: float, mean_i: float, var_s: float, var_i: float,
                       cov: float, **stderr) -> "PhotoelectronMoments":
        """Build from (means, variances, covariance) instead of raw seconds."""
        return cls(
            mean_s=mean_s,
            mean_i=mean_i,
            second_s=var_s + mean_s**2,
            second_i=var_i + mean_i**2,
            cross=cov + mean_s * mean_i,
            **stderr,
        )


def photocount_moments(hist: PhotocountHistogram) -> RawMoments:
    """Count-weighted sample moments of a joint count table.

    Standard errors are the sample standard deviations of the per-shot
    estimators divided by sqrt(shots).
    """
    s1s = s1i = s2s = s2i = s11 = s4s = s4i = s22 = 0
    for (a, b), count in hist.entries.items():
        s1s += count * a
        s1i += count * b
        s2s += count * a * a
        s2i += count * b * b
        s11 += count * a * b
        s4s += count * a**4
        s4i += count * b**4
        s22 += count * (a * b) ** 2
    n = hist.shots
    mean_s, mean_i = s1s / n, s1i / n
    second_s, second_i, cross = s2s / n, s2i / n, s11 / n

    def se(second_of_estimator, first_of_estimator):
        return math.sqrt(max(0.0, second_of_estimator - first_of_estimator**2) / n)

    return RawMoments(
        mean_s=mean_s,
        mean_i=mean_i,
        second_s=second_s,
        second_i=second_i,
        cross=cross,
        stderr_mean_s=se(second_s, mean_s),
        stderr_mean_i=se(second_i, mean_i),
        stderr_second_s=se(s4s / n, second_s),
        stderr_second_i=se(s4i / n, second_i),
        stderr_cross=se(s22 / n, cross),
        shots=n,
    )


def subtract_dark(raw: RawMoments, dark: RawMoments) -> PhotoelectronMoments:
    """Eliminate the dark-count contribution from raw photocount moments.

    Applies, in order: m_a = c_a - d_a; then
    <m_a^2> = <c_a^2> - 2<m_a><d_a> - <d_a^2>; then
    <m_s m_i> = <c_s c_i> - <m_s><d_i> - <m_i><d_s> - <d_s d_i>.
    Standard errors propagate in quadrature through each line.
    """
    mean_s = raw.mean_s - dark.mean_s
    mean_i = raw.mean_i - dark.mean_i
    if mean_s < 0 or mean_i < 0:
        raise NegativeMeanAfterSubtraction(
            f"dark means ({dark.mean_s:g}, {dark.mean_i:g}) exceed raw means "
            f"({raw.mean_s:g}, {raw.mean_i:g})"
        )
    se_mean_s = math.hypot(raw.stderr_mean_s, dark.stderr_mean_s)
    se_mean_i = math.hypot(raw.stderr_mean_i, dark.stderr_mean_i)

    second_s = raw.second_s - 2 * mean_s * dark.mean_s - dark.second_s
    second_i = raw.second_i - 2 * mean_i * dark.mean_i - dark.second_i
    se_second_s = math.sqrt(
        raw.stderr_second_s**2
        + (2 * dark.mean_s * se_mean_s) ** 2
        + (2 * mean_s * dark.stderr_mean_s) ** 2
        + dark.stderr_second_s**2
    )
    se_second_i = math.sqrt(
        raw.stderr_second_i**2
        + (2 * dark.mean_i * se_mean_i) ** 2
        + (2 * mean_i * dark.stderr_mean_i) ** 2
        + dark.stderr_second_i**2
    )

    cross = raw.cross - mean_s * dark.mean_i - mean_i * dark.mean_s - dark.cross
    se_cross = math.sqrt(
        raw.stderr_cross**2
        + (dark.mean_i * se_mean_s) ** 2
        + (mean_s * dark.stderr_mean_i) ** 2
        + (dark.mean_s * se_mean_i) ** 2
        + (mean_i * dark.stderr_mean_s) ** 2
        + dark.stderr_cross**2
    )

    return PhotoelectronMoments(
        mean_s=mean_s,
        mean_i=mean_i,
        second_s=second_s,
        second_i=second_i,
        cross=cross,
        stderr_mean_s=se_mean_s,
        stderr_mean_i=se_mean_i,
        stderr_second_s=se_second_s,
        stderr_second_i=se_second_i,
        stderr_cross=se_cross,
    )


@dataclass(frozen=True)
class KlyshkoEstimates:
    """Baseline coincidence-ratio efficiency estimates.

    The covariance variant divides the photoelectron covariance by the
    opposite arm's mean (appropriate for pulsed multimode data); the raw
    variant divides the uncentred cross moment instead.
    """

    eta_s_cov: float
    eta_i_cov: float
    eta_s_raw: float
    eta_i_raw: float
    stderr_eta_s_cov: float
    stderr_eta_i_cov: float
    stderr_eta_s_raw: float
    stderr_eta_i_raw: float


def klyshko_estimate(m: PhotoelectronMoments) -> KlyshkoEstimates:
    """Baseline efficiency estimates from coincidence-to-singles ratios."""
    if m.mean_s <= 0 or m.mean_i <= 0:
        raise ZeroMeanArm(f"means ({m.mean_s:g}, {m.mean_i:g}) must be positive")
    return KlyshkoEstimates(
        eta_s_cov=m.cov / m.mean_i,
        eta_i_cov=m.cov / m.mean_s,
        eta_s_raw=m.cross / m.mean_i,
        eta_i_raw=m.cross / m.mean_s,
        stderr_eta_s_cov=_ratio_stderr(m.cov, m.stderr_cov, m.mean_i, m.stderr_mean_i),
        stderr_eta_i_cov=_ratio_stderr(m.cov, m.stderr_cov, m.mean_s, m.stderr_mean_s),
        stderr_eta_s_raw=_ratio_stderr(m.cross, m.stderr_cross, m.mean_i, m.stderr_mean_i),
        stderr_eta_i_raw=_ratio_stderr(m.cross, m.stderr_cross, m.mean_s, m.stderr_mean_s),
    )


def noise_corrected_klyshko(m: PhotoelectronMoments, noise_mean_s: float,
                            noise_mean_i: float) -> tuple[float, float]:
    """Diagnostic raw-ratio estimates corrected by user-supplied noise means.

    The noise means cannot be partitioned from the data themselves, so
    this is exposed only as a diagnostic, not as part of the calibration
    path.  Returns (eta_s, eta_i).
    """
    if m.mean_s <= 0 or m.mean_i <= 0:
        raise ZeroMeanArm(f"means ({m.mean_s:g}, {m.mean_i:g}) must be positive")
    return (m.cross / m.mean_i - noise_mean_s, m.cross / m.mean_s - noise_mean_i)
