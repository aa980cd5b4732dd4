"""Tests of the null hypothesis that the second mean dimension is absent.

All three statistics are built from the fitted second row effects theta2 and
their divide-by-n standard deviation sigma_hat:

* ``target_test``   Z = a' theta2 / (sqrt(n) sigma_hat), normal reference,
* ``chisq_test``    T = ||A theta2||^2 / (n sigma_hat^2), chi-square on k df,
* ``max_test``      M = max_j a_j' theta2 / sqrt(n), extreme-value reference.

``bootstrap_p`` recalibrates the first two by resampling the centered theta2
values (never the raw data rows or columns), which fixes small-n level
distortion.  ``bh_adjust`` is the step-up false-discovery-rate adjustment
used to correct families of p-values in the screening pipeline.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .directions import DirectionSet
from .errors import PreconditionError
from .numkern import chisq_sf, normal_cdf
from .rank2 import Rank2Fit
from .rng import SubstreamPool

_REDRAWS = 10  # attempts before a zero-variance resample counts as non-exceeding


@dataclass(frozen=True)
class TestOutcome:
    """One test's verdict in a flat, serializable record.

    ``p_value`` is the primary p-value; for the max test it is the
    Phi-power form and ``p_value_alt`` carries the extreme-value-limit form.
    ``gumbel_constants`` holds the (c_n, b_n) standardization pair when the
    max test produced the outcome.
    """

    method: str
    statistic: float
    p_value: float
    n: int
    k: int
    p_value_alt: float | None = None
    df: int | None = None
    gumbel_constants: tuple[float, float] | None = None
    bootstrap_B: int | None = None
    seed: int | None = None

    TSV_FIELDS = ("method", "statistic", "p_value", "p_value_alt", "df", "n", "k", "B", "seed")

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "p_value_alt": self.p_value_alt,
            "df": self.df,
            "n": self.n,
            "k": self.k,
            "B": self.bootstrap_B,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def tsv_header(cls) -> str:
        return "\t".join(cls.TSV_FIELDS)

    def to_tsv_row(self) -> str:
        rec = self.to_record()
        return "\t".join("" if rec[f] is None else f"{rec[f]}" for f in self.TSV_FIELDS)


def _rows(directions, n: int) -> np.ndarray:
    if isinstance(directions, DirectionSet):
        A = directions.vectors
    else:
        A = np.atleast_2d(np.asarray(directions, dtype=float))
    if A.shape[1] != n:
        raise ValueError(f"directions have length {A.shape[1]}, fit has n={n}")
    return A


def _single_row(a, n: int) -> np.ndarray:
    A = _rows(a, n)
    if A.shape[0] != 1:
        raise ValueError(f"expected a single direction, got {A.shape[0]} rows")
    return A[0]


def _check_fit(fit: Rank2Fit, force: bool) -> float:
    if fit.degenerate and not force:
        raise PreconditionError(
            "fit is degenerate (leading singular values tie); pass force=True to test anyway"
        )
    # second-axis variance below ~1e-12 of the first spectral level is
    # round-off from an (effectively) rank-1 matrix, not a real signal
    if fit.sigma2_hat <= 1e-12 * max(fit.eigen_est1, 0.0):
        raise PreconditionError("sigma_hat is zero (theta2 is constant); no test possible")
    return math.sqrt(fit.sigma2_hat)


def _check_norm(A: np.ndarray, n: int) -> None:
    norms2 = (A * A).sum(axis=1)
    if np.abs(norms2 - n).max() > 1e-6 * n:
        raise PreconditionError(
            "direction rows must satisfy ||a||^2 = n; run validate_directions for details"
        )


def target_test(
    fit: Rank2Fit,
    a,
    alternative: str = "two-sided",
    force: bool = False,
    check: bool = True,
) -> TestOutcome:
    """Z test of the second mean dimension along one target direction.

    ``a`` must be orthogonal to the (estimated) first-dimension mean and
    scaled to ||a||^2 = n; the caller vouches for that (see
    ``validate_directions``), though the norm is re-checked unless
    ``check=False``.  Two-sided by default.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    sigma = _check_fit(fit, force)
    row = _single_row(a, fit.n)
    if check:
        _check_norm(row[None], fit.n)
    z = float(row @ fit.theta2) / (math.sqrt(fit.n) * sigma)
    if alternative == "two-sided":
        p = 2.0 * (1.0 - normal_cdf(abs(z)))
    elif alternative == "greater":
        p = 1.0 - normal_cdf(z)
    else:
        p = normal_cdf(z)
    return TestOutcome(method="target", statistic=z, p_value=min(p, 1.0), n=fit.n, k=1)


def chisq_test(fit: Rank2Fit, A, force: bool = False, check: bool = True) -> TestOutcome:
    """Chi-square test over k mutually orthogonal directions.

    Degrees of freedom equal the number of directions.  Choosing k close to n
    piles up approximation error (at k = n-1 the statistic is identically n),
    so k > n/2 draws a warning.
    """
    sigma2 = _check_fit(fit, force) ** 2
    A = _rows(A, fit.n)
    k = A.shape[0]
    if k >= fit.n:
        raise PreconditionError(f"need k < n directions, got k={k} with n={fit.n}")
    if check:
        _check_norm(A, fit.n)
    if k > fit.n / 2:
        warnings.warn(
            f"k={k} directions with only n={fit.n} arrays; the chi-square "
            "approximation degrades as k approaches n",
            stacklevel=2,
        )
    t = float(((A @ fit.theta2) ** 2).sum()) / (fit.n * sigma2)
    return TestOutcome(
        method="chisq", statistic=t, p_value=chisq_sf(t, k), n=fit.n, k=k, df=k
    )


def _gumbel_for_count(count: int) -> tuple[float, float]:
    c = math.sqrt(2.0 * math.log(count))
    b = c - math.log(4.0 * math.pi * math.log(count)) / (2.0 * c)
    return c, b


def gumbel_constants(n: int) -> tuple[float, float]:
    """Standardizing constants (c_n, b_n) for the max-over-directions test."""
    if n < 3:
        raise PreconditionError(f"max test needs n >= 3 (c_n = 0 at n = 2), got n={n}")
    return _gumbel_for_count(n - 1)


def _phi_power_p(u: float, count: int) -> float:
    # P(max of `count` independent N(0,1) >= u) = 1 - Phi(u)^count
    phi = normal_cdf(u)
    if phi <= 0.0:
        return 1.0
    return min(max(-math.expm1(count * math.log(phi)), 0.0), 1.0)


def _gumbel_p(u: float, c: float, b: float) -> float:
    x = c * (u - b)
    try:
        return min(max(-math.expm1(-math.exp(-x)), 0.0), 1.0)
    except OverflowError:
        return 1.0


def max_test_pvalues(u: float, n: int) -> tuple[float, float]:
    """P-values for a standardized signed max statistic u = M / sigma_hat.

    Returns (phi_power, gumbel_limit): the first treats the n-1 projections
    as independent standard normals, P = 1 - Phi(u)^(n-1), and is the primary
    finite-sample approximation; the second plugs u into the limiting
    extreme-value law.
    """
    c, b = gumbel_constants(n)
    return _phi_power_p(u, n - 1), _gumbel_p(u, c, b)


def max_test(
    fit: Rank2Fit,
    A,
    orient=None,
    two_sided: bool = False,
    force: bool = False,
    check: bool = True,
) -> TestOutcome:
    """Test on the maximum projection over a full direction basis.

    Requires k = n-1 directions (a complete basis of the complement of the
    first-dimension mean).  By default the statistic is the signed maximum,
    which detects second dimensions aligned with the basis orientation; the
    primary p-value is the Phi-power form 1 - Phi(u)^(n-1) with the
    extreme-value-limit p in ``p_value_alt``.

    The fitted theta2 carries an arbitrary sign from the SVD, so the signed
    test needs an orientation: pass ``orient`` (a reference m-vector for
    phi2) and theta2 is flipped to keep phi2' orient >= 0.  When no
    meaningful orientation exists, use ``two_sided=True``: the statistic
    becomes the largest absolute projection and the p-values treat it as a
    maximum over 2(n-1) signed directions, which is sign-ambiguity-proof.
    """
    sigma = _check_fit(fit, force)
    A = _rows(A, fit.n)
    k = A.shape[0]
    if k != fit.n - 1:
        raise PreconditionError(f"max test needs k = n-1 directions, got k={k} with n={fit.n}")
    if fit.n < 3:
        raise PreconditionError(f"max test needs n >= 3, got n={fit.n}")
    if check:
        _check_norm(A, fit.n)
    theta2 = fit.theta2
    if orient is not None:
        orient = np.asarray(orient, dtype=float)
        if float(fit.phi2 @ orient) < 0.0:
            theta2 = -theta2
    proj = (A @ theta2) / math.sqrt(fit.n)
    if two_sided:
        m_stat = float(np.abs(proj).max())
        u = m_stat / sigma
        c, b = _gumbel_for_count(2 * (fit.n - 1))
        p_power = _phi_power_p(u, 2 * (fit.n - 1))
        p_gumbel = _gumbel_p(u, c, b)
    else:
        m_stat = float(proj.max())
        u = m_stat / sigma
        c, b = gumbel_constants(fit.n)
        p_power, p_gumbel = max_test_pvalues(u, fit.n)
    return TestOutcome(
        method="max",
        statistic=m_stat,
        p_value=p_power,
        p_value_alt=p_gumbel,
        gumbel_constants=(c, b),
        n=fit.n,
        k=k,
    )


def _bootstrap_count(theta2, theta2_bar, A, ref, method, seed, b_lo, b_hi) -> int:
    """Exceedance count over resamples [b_lo, b_hi).

    Each resample b draws its indices from substream (seed, b), so any
    partition over workers gives the same answer; a resample whose values
    come out constant is redrawn from its own stream (up to _REDRAWS times)
    and then counted as non-exceeding.  The statistics are evaluated with
    per-row reductions, keeping results independent of the chunk shape.
    """
    pool = SubstreamPool()
    n = theta2.shape[0]
    C = b_hi - b_lo
    idx = np.empty((C, n), dtype=np.intp)
    for j, b in enumerate(range(b_lo, b_hi)):
        idx[j] = pool.get(seed, b).integers(0, n, size=n)
    vals = theta2[idx]
    alive = vals.max(axis=1) != vals.min(axis=1)
    for j in np.nonzero(~alive)[0]:
        gen = pool.get(seed, b_lo + j)
        gen.integers(0, n, size=n)  # skip the window already drawn above
        for _ in range(_REDRAWS - 1):
            row = gen.integers(0, n, size=n)
            draw = theta2[row]
            if draw.max() != draw.min():
                vals[j] = draw
                alive[j] = True
                break
    star = vals - theta2_bar
    var = star.var(axis=1)
    var[~alive] = 1.0  # dead rows never exceed; keep the division defined
    if method == "target":
        nums = (star * A[0]).sum(axis=1) / math.sqrt(n)
        t = np.abs(nums) / np.sqrt(var)
        exceed = (t >= ref) & alive
    else:
        proj2 = ((star[:, None, :] * A[None, :, :]).sum(axis=2) ** 2).sum(axis=1)
        t = proj2 / (n * var)
        exceed = (t >= ref) & alive
    return int(exceed.sum())


def bootstrap_p(
    fit: Rank2Fit,
    directions,
    method: str = "target",
    B: int = 1000,
    seed: int = 0,
    workers: int = 1,
    force: bool = False,
    check: bool = True,
) -> TestOutcome:
    """Bootstrap-calibrated p-value for the target or chi-square test.

    Resamples the fitted theta2 values with replacement (centering by the
    original mean), recomputes the studentized statistic on each resample,
    and reports the exceedance fraction over B resamples: two-sided in |T|
    for the target test, one-sided for chi-square.  The estimate is B^-1 *
    count, which can legitimately be zero.  Deterministic given (seed, B),
    independent of ``workers``.
    """
    if method not in ("target", "chisq"):
        raise ValueError(f"method must be 'target' or 'chisq', got {method!r}")
    if B < 100:
        raise PreconditionError(f"need B >= 100 bootstrap resamples, got {B}")
    sigma = _check_fit(fit, force)
    A = _rows(directions, fit.n)
    if check:
        _check_norm(A, fit.n)
    n = fit.n
    if method == "target":
        if A.shape[0] != 1:
            raise ValueError("target bootstrap takes a single direction")
        stat = float(A[0] @ fit.theta2) / (math.sqrt(n) * sigma)
        ref = abs(stat)
    else:
        if A.shape[0] >= n:
            raise PreconditionError(f"need k < n directions, got k={A.shape[0]}")
        stat = float(((A @ fit.theta2) ** 2).sum()) / (n * fit.sigma2_hat)
        ref = stat
    theta2 = np.asarray(fit.theta2, dtype=float)
    theta2_bar = float(theta2.mean())
    workers = max(1, int(workers))
    if workers == 1:
        count = _bootstrap_count(theta2, theta2_bar, A, ref, method, seed, 0, B)
    else:
        bounds = np.linspace(0, B, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futures = [
                ex.submit(_bootstrap_count, theta2, theta2_bar, A, ref, method, seed, lo, hi)
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            count = sum(f.result() for f in futures)
    return TestOutcome(
        method=f"{method}_bootstrap",
        statistic=stat,
        p_value=count / B,
        n=n,
        k=A.shape[0],
        df=A.shape[0] if method == "chisq" else None,
        bootstrap_B=B,
        seed=seed,
    )


def bh_adjust(pvals) -> np.ndarray:
    """Step-up adjusted p-values controlling the false discovery rate.

    Sorted ascending, the i-th adjusted value is min over j >= i of
    min(1, M p_(j) / j); results map back to the input order.  Output is
    componentwise >= the raw p-values and order preserving.
    """
    p = np.asarray(pvals, dtype=float)
    if p.ndim != 1:
        raise ValueError("pvals must be a 1-D sequence")
    if p.size == 0:
        return np.array([])
    if np.any((p < 0.0) | (p > 1.0)) or not np.isfinite(p).all():
        raise ValueError("p-values must lie in [0, 1]")
    M = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * M / np.arange(1, M + 1)
    adjusted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(M)
    out[order] = adjusted
    return out
