"""Expected commitment error of a frequency-responsive EWH ensemble.

Over a short control window ``[t0, tf)`` the probability that a device is on
is affine in time,

    p_on(t) = p0 - (t - t0) * (alpha_on * p0 - alpha_off * (1 - p0)),

and, treating device states as independent Bernoulli(p_on) draws with i.i.d.
power ratings, the expected squared relative gap between the ensemble power
and a commitment ``Pc`` is

    E[xi^2] = N/(N-1) [1 - <P^2>/(2 Pc <P>) - p (N-1) <P>/Pc]^2
              - N/(N-1) (1 - <P^2>/(2 Pc <P>))^2 + 1.

This is convex in ``p`` and hence in ``t``, so the worst case over the window
sits at an endpoint. The commitment that equalises both endpoints is

    Pc* = <P^2>/(2 <P>) + (N-1) <P> (p_on(t0) + p_on(tf)) / 2.

Times are in minutes, alphas in 1/min, powers in kW.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .population import ControlWindow, EnsembleTrajectory, OnFractionCurve

REPORT_HEADER = ("quantity", "value")
REPORT_KEYS = (
    "p_on_t0", "p_on_tf", "alpha_on", "alpha_off", "mean_p", "mean_p2", "n", "p_star_kW", "err_t0", "err_tf",
)


class OnProbabilityClampWarning(UserWarning):
    """The affine on-probability left [0, 1] and was clamped."""


class NegativeAlphaWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OnProbabilityModel:
    p0: float
    alpha_on: float
    alpha_off: float
    window: ControlWindow = ControlWindow(0.0, 15.0)

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError(f"p0 must lie in [0, 1], got {self.p0}")
        if self.alpha_on < 0 or self.alpha_off < 0:
            raise ValueError("alpha_on and alpha_off must be non-negative")

    @property
    def slope(self) -> float:
        """d p_on / dt in 1/min."""
        return -(self.alpha_on * self.p0 - self.alpha_off * (1.0 - self.p0))

    def raw(self, t):
        """Unclamped affine value."""
        return self.p0 + (np.asarray(t, dtype=float) - self.window.t0) * self.slope

    def leaves_unit_interval(self) -> bool:
        ends = self.raw([self.window.t0, self.window.tf])
        return bool(np.any(ends < 0) or np.any(ends > 1))


def p_on(model: OnProbabilityModel, t):
    """On-probability at ``t`` (scalar or array), clamped to [0, 1] with a warning."""
    t_arr = np.asarray(t, dtype=float)
    w = model.window
    tol = 1e-9 * max(1.0, abs(w.tf))
    if np.any(t_arr < w.t0 - tol) or np.any(t_arr > w.tf + tol):
        raise ValueError(f"t outside the control window [{w.t0}, {w.tf}]")
    p = model.raw(t_arr)
    if np.any(p < 0) or np.any(p > 1):
        warnings.warn(
            "affine on-probability left [0, 1]; window too long for the single-switch model",
            OnProbabilityClampWarning,
            stacklevel=2,
        )
        p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


# ---------------------------------------------------------------------------
# Estimating alphas from simulated on-fraction curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineFit:
    p0: float
    slope: float
    intercept: float
    r2: float


@dataclass(frozen=True)
class AlphaEstimate:
    alpha_on: float | None
    alpha_off: float | None
    fits: tuple[LineFit, ...]
    notes: tuple[str, ...] = ()

    def predicted_slope(self, p0: float) -> float:
        if self.alpha_on is None or self.alpha_off is None:
            raise ValueError("both alphas are needed to predict a slope")
        return -(self.alpha_on * p0 - self.alpha_off * (1.0 - p0))


def fit_line(t, y) -> tuple[float, float, float]:
    """Ordinary least squares ``y ~ intercept + slope * t``; returns (slope, intercept, R^2)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two points to fit a line")
    tc = t - t.mean()
    slope = float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
    intercept = float(y.mean() - slope * t.mean())
    resid = y - (intercept + slope * t)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(y - y.mean(), y - y.mean()))
    # a perfectly flat, perfectly fitted line counts as R^2 = 1
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return slope, intercept, r2


def estimate_alphas(curves: Sequence[OnFractionCurve], p0s: Sequence[float] | None = None) -> AlphaEstimate:
    """Least-squares alphas from on-fraction curves with known initial fractions.

    Each curve's slope satisfies ``slope = -alpha_on p0 + alpha_off (1 - p0)``.
    With curves at two or more distinct ``p0`` both alphas are solved for (in
    the least-squares sense when over-determined). Curves only at ``p0 = 1``
    identify ``alpha_on`` alone and leave ``alpha_off`` as None.
    """
    if not curves:
        raise ValueError("no curves given")
    if p0s is None:
        p0s = [c.p0 for c in curves]
    if len(p0s) != len(curves):
        raise ValueError("one p0 per curve is required")
    fits = []
    for c, p0 in zip(curves, p0s):
        slope, icpt, r2 = fit_line(c.t, c.p_on)
        fits.append(LineFit(float(p0), slope, icpt, r2))
    p = np.array([f.p0 for f in fits])
    slopes = np.array([f.slope for f in fits])
    notes = []
    if np.all(p == p[0]):
        if p[0] != 1.0:
            raise ValueError(
                f"all curves start at p0={p[0]}; need a p0=1 curve or two distinct initial fractions"
            )
        alpha_on, alpha_off = float(-slopes.mean()), None
        notes.append("alpha_off indeterminate: only p0=1 curves given")
    else:
        A = np.column_stack([-p, 1.0 - p])
        (alpha_on, alpha_off), *_ = np.linalg.lstsq(A, slopes, rcond=None)
        alpha_on, alpha_off = float(alpha_on), float(alpha_off)
    for name, val in (("alpha_on", alpha_on), ("alpha_off", alpha_off)):
        if val is not None and val < 0:
            msg = f"estimated {name} is negative ({val:.3g})"
            notes.append(msg)
            warnings.warn(msg, NegativeAlphaWarning, stacklevel=2)
    return AlphaEstimate(alpha_on, alpha_off, tuple(fits), tuple(notes))


# ---------------------------------------------------------------------------
# Expected error and optimal commitment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerMoments:
    mean_p: float
    mean_p2: float
    n: int
    source: str = "analytic"

    def __post_init__(self):
        if not self.mean_p > 0:
            raise ValueError(f"mean power must be positive, got {self.mean_p}")
        if self.mean_p2 < self.mean_p**2 * (1 - 1e-12):
            raise ValueError("second moment below squared mean")
        if self.n < 2:
            raise ValueError(f"ensemble size must be at least 2, got {self.n}")

    @classmethod
    def from_uniform(cls, lo: float, hi: float, n: int) -> "PowerMoments":
        """Moments of P ~ U(lo, hi)."""
        return cls((lo + hi) / 2, (lo * lo + lo * hi + hi * hi) / 3, n, "analytic")

    @classmethod
    def from_samples(cls, powers, n: int | None = None) -> "PowerMoments":
        powers = np.asarray(powers, dtype=float)
        return cls(float(powers.mean()), float(np.mean(powers**2)), n if n is not None else powers.size, "empirical")


def expected_sq_error(m: PowerMoments, p, commitment: float):
    """Expected squared relative error at on-probability ``p`` (scalar or array)."""
    if not commitment > 0:
        raise ValueError(f"commitment must be positive, got {commitment}")
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0) or np.any(p_arr > 1):
        raise ValueError("on-probability must lie in [0, 1]")
    n = m.n
    c = 1.0 - m.mean_p2 / (2.0 * commitment * m.mean_p)
    k = n / (n - 1.0)
    val = k * (c - p_arr * (n - 1) * m.mean_p / commitment) ** 2 - k * c * c + 1.0
    return float(val) if val.ndim == 0 else val


def per_instant_minimizer(m: PowerMoments, p: float) -> float:
    """Commitment minimising the error at a single on-probability ``p``."""
    return m.mean_p2 / m.mean_p + (m.n - 1) * p * m.mean_p


def sup_error(m: PowerMoments, model: OnProbabilityModel, commitment: float) -> tuple[float, str]:
    """Worst-case error over the window and where it occurs (``"t0"`` or ``"tf"``; ties report ``"t0"``)."""
    e0 = expected_sq_error(m, p_on(model, model.window.t0), commitment)
    ef = expected_sq_error(m, p_on(model, model.window.tf), commitment)
    return (e0, "t0") if e0 >= ef else (ef, "tf")


def analytic_error_curve(m: PowerMoments, model: OnProbabilityModel, commitment: float, t) -> np.ndarray:
    return np.asarray(expected_sq_error(m, p_on(model, t), commitment), dtype=float)


@dataclass
class FlexibilityAssessment:
    optimal_commitment: float
    error_at_start: float
    error_at_end: float
    p_on_t0: float
    p_on_tf: float
    moments: PowerMoments
    model: OnProbabilityModel
    # False when the endpoint-equalising commitment lies outside the interval
    # spanned by the two per-endpoint minimisers (or the endpoints coincide);
    # the closed form is then not the minimax commitment
    equalizer_is_minimax: bool = True
    clamped: bool = False
    sweep: list[tuple[float, float]] | None = field(default=None)

    @property
    def sup_error(self) -> float:
        return max(self.error_at_start, self.error_at_end)


def optimal_flexibility(m: PowerMoments, model: OnProbabilityModel) -> FlexibilityAssessment:
    clamped = model.leaves_unit_interval()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OnProbabilityClampWarning)
        p0 = p_on(model, model.window.t0)
        pf = p_on(model, model.window.tf)
    if clamped:
        warnings.warn("on-probability clamped at the window end", OnProbabilityClampWarning, stacklevel=2)
    p_star = m.mean_p2 / (2.0 * m.mean_p) + (m.n - 1) * (p0 + pf) / 2.0 * m.mean_p
    lo, hi = sorted((per_instant_minimizer(m, p0), per_instant_minimizer(m, pf)))
    return FlexibilityAssessment(
        optimal_commitment=p_star,
        error_at_start=expected_sq_error(m, p0, p_star),
        error_at_end=expected_sq_error(m, pf, p_star),
        p_on_t0=p0,
        p_on_tf=pf,
        moments=m,
        model=model,
        equalizer_is_minimax=bool(p0 != pf and lo <= p_star <= hi),
        clamped=clamped,
    )


def error_sweep(m: PowerMoments, model: OnProbabilityModel, commitments) -> list[tuple[float, float]]:
    return [(float(c), sup_error(m, model, float(c))[0]) for c in commitments]


def grid_search_flexibility(m: PowerMoments, model: OnProbabilityModel, lo: float, hi: float, steps: int) -> float:
    """Brute-force minimiser of the worst-case error on ``linspace(lo, hi, steps)``."""
    if not 0 < lo < hi:
        raise ValueError(f"need 0 < lo < hi, got ({lo}, {hi})")
    if steps < 2:
        raise ValueError("need at least two grid points")
    grid = np.linspace(lo, hi, steps)
    worst = np.array([sup_error(m, model, float(c))[0] for c in grid])
    return float(grid[int(np.argmin(worst))])


def empirical_sq_error(traj: EnsembleTrajectory, commitment: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean over replications of ``((P_sigma - Pc) / Pc)^2``; returns ``(t, mean, stderr)``."""
    if not commitment > 0:
        raise ValueError(f"commitment must be positive, got {commitment}")
    xi2 = ((traj.power - commitment) / commitment) ** 2
    mean = xi2.mean(axis=0)
    r = xi2.shape[0]
    se = xi2.std(axis=0, ddof=1) / math.sqrt(r) if r > 1 else np.zeros_like(mean)
    return traj.time_grid.copy(), mean, se


# ---------------------------------------------------------------------------
# Assessment report
# ---------------------------------------------------------------------------


def assessment_rows(a: FlexibilityAssessment, extra: Sequence[tuple[str, float]] = ()) -> list[tuple[str, float]]:
    m = a.model
    rows = [
        ("p_on_t0", a.p_on_t0),
        ("p_on_tf", a.p_on_tf),
        ("alpha_on", m.alpha_on),
        ("alpha_off", m.alpha_off),
        ("mean_p", a.moments.mean_p),
        ("mean_p2", a.moments.mean_p2),
        ("n", a.moments.n),
        ("p_star_kW", a.optimal_commitment),
        ("err_t0", a.error_at_start),
        ("err_tf", a.error_at_end),
    ]
    return rows + list(extra)


def write_report_csv(rows: Sequence[tuple[str, float]], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for key, val in rows:
        w.writerow((key, repr(val) if isinstance(val, float) else str(val)))


def read_report_csv(source: IO[str]) -> dict[str, float]:
    reader = csv.reader(source)
    if tuple(next(reader, ())) != REPORT_HEADER:
        raise ValueError(f"expected header {','.join(REPORT_HEADER)!r}")
    out: dict[str, float] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"row {row_no}: expected quantity,value")
        key, val = row
        out[key] = int(val) if val.lstrip("-").isdigit() else float(val)
    return out
