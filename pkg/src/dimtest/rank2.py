"""Least-squares rank-2 multiplicative fit of a data matrix.

The model writes each row as theta1_i * phi1 + theta2_i * phi2 + noise with
orthonormal column-effect vectors phi1, phi2.  The least-squares solution is
read off the SVD: phi_j are the first two right singular vectors and
theta_j = Y phi_j.  Alongside the fit live the variance estimators the tests
depend on: sigma2_hat (the divide-by-n variance of theta2) and resid_sigma2
(residual Frobenius mass per cell after removing the first two components).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .numkern import DataMatrix, svd_many


@dataclass(frozen=True, eq=False)
class Rank2Fit:
    """Fitted rank-2 decomposition plus derived scalars.

    ``lambdas`` holds all m singular values (descending).  ``eigen_est1`` and
    ``eigen_est2`` are ||theta_j||^2 / n, consistent estimates of the first
    two spectral levels of the row-covariance structure; ``resid_sigma2``
    estimates the noise variance from what the two components leave behind.
    """

    n: int
    m: int
    lambdas: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    theta2_bar: float
    sigma2_hat: float
    resid_sigma2: float
    eigen_est1: float
    eigen_est2: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class BatchFit:
    """Stacked fits of B same-shape matrices (arrays share the leading axis)."""

    n: int
    m: int
    lambdas: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    theta2_bar: np.ndarray
    sigma2_hat: np.ndarray
    resid_sigma2: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return self.lambdas.shape[0]

    def fit(self, i: int) -> Rank2Fit:
        return Rank2Fit(
            n=self.n,
            m=self.m,
            lambdas=self.lambdas[i],
            phi1=self.phi1[i],
            phi2=self.phi2[i],
            theta1=self.theta1[i],
            theta2=self.theta2[i],
            theta2_bar=float(self.theta2_bar[i]),
            sigma2_hat=float(self.sigma2_hat[i]),
            resid_sigma2=float(self.resid_sigma2[i]),
            eigen_est1=float(self.lambdas[i, 0] ** 2 / self.n),
            eigen_est2=float(self.lambdas[i, 1] ** 2 / self.n),
            degenerate=bool(self.degenerate[i]),
        )


def sigma_hat2(theta2) -> float:
    """Divide-by-n variance of the second row effects: n^-1 ||theta2||^2 - mean^2.

    This population-style form (no Bessel correction) is the studentizer used
    by every test statistic.
    """
    theta2 = np.asarray(theta2, dtype=float)
    if theta2.ndim != 1 or theta2.size < 2:
        raise ValueError("theta2 must be a vector with at least 2 entries")
    return float(np.var(theta2))


def resid_sigma2(Y, fit: Rank2Fit) -> float:
    """Residual noise-variance estimate from the mass the fit leaves behind.

    Equals (n (m - 2))^-1 (||Y||_F^2 - ||Y phi1||^2 - ||Y phi2||^2), i.e. the
    trailing singular-value mass per residual cell; may round off to a tiny
    negative for exactly rank-2 input.
    """
    values = Y.values if isinstance(Y, DataMatrix) else np.asarray(Y, dtype=float)
    n, m = values.shape
    if m <= 2:
        raise ValueError(f"residual variance needs m > 2 columns, got m={m}")
    fro2 = float(np.sum(values * values))
    t1 = float(np.sum((values @ fit.phi1) ** 2))
    t2 = float(np.sum((values @ fit.phi2) ** 2))
    return (fro2 - t1 - t2) / (n * (m - 2))


def fit_rank2_many(values: np.ndarray) -> BatchFit:
    """Fit every matrix in a (B, n, m) stack through one batched SVD pass."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise ValueError(f"expected a (B, n, m) stack, got shape {values.shape}")
    B, n, m = values.shape
    if n < 3 or m < 3:
        raise ValueError(f"matrices must be at least 3x3, got {n}x{m}")
    sigma, V, degenerate = svd_many(values)
    phi1 = V[:, :, 0]
    phi2 = V[:, :, 1]
    theta1 = np.einsum("bnm,bm->bn", values, phi1)
    theta2 = np.einsum("bnm,bm->bn", values, phi2)
    theta2_bar = theta2.mean(axis=1)
    s2 = np.var(theta2, axis=1)
    fro2 = (values * values).sum(axis=(1, 2))
    resid = (fro2 - (theta1 * theta1).sum(axis=1) - (theta2 * theta2).sum(axis=1)) / (
        n * (m - 2)
    )
    return BatchFit(
        n=n,
        m=m,
        lambdas=sigma,
        phi1=phi1,
        phi2=phi2,
        theta1=theta1,
        theta2=theta2,
        theta2_bar=theta2_bar,
        sigma2_hat=s2,
        resid_sigma2=resid,
        degenerate=degenerate,
    )


def fit_rank2(Y) -> Rank2Fit:
    """Rank-2 least-squares fit of one data matrix.

    phi1/phi2 are the two leading right singular vectors (sign convention:
    largest-magnitude entry positive) and theta_j = Y phi_j.  An all-zero
    matrix is an error; a leading singular-value tie within relative 1e-8
    comes back with the ``degenerate`` flag set, and downstream tests refuse
    such fits unless forced.
    """
    values = Y.values if isinstance(Y, DataMatrix) else np.asarray(Y, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("matrix contains non-finite entries")
    batch = fit_rank2_many(values[None])
    if batch.lambdas[0, 0] == 0.0:
        raise PreconditionError("all-zero matrix has no rank-2 fit")
    return batch.fit(0)


@dataclass(frozen=True)
class ProbeContribution:
    """Five-number summary (percent) of one probe's second-dimension share."""

    label: str
    min_pct: float
    q1_pct: float
    med_pct: float
    q3_pct: float
    max_pct: float
    excluded: int = 0


@dataclass(frozen=True)
class ContributionSummary:
    probes: tuple[ProbeContribution, ...]

    HEADER = ("probe", "min_pct", "q1_pct", "med_pct", "q3_pct", "max_pct")

    def to_tsv(self) -> str:
        lines = ["\t".join(self.HEADER)]
        for p in self.probes:
            lines.append(
                "\t".join(
                    [p.label]
                    + [f"{v:.2f}" for v in (p.min_pct, p.q1_pct, p.med_pct, p.q3_pct, p.max_pct)]
                )
            )
        return "\n".join(lines) + "\n"


def contribution_summary(fit: Rank2Fit, labels=None) -> ContributionSummary:
    """Per-probe spread of |theta2_i phi2_j / (theta1_i phi1_j)| in percent.

    Cells whose first-dimension value theta1_i phi1_j is exactly zero are
    excluded from that probe's summary and counted in ``excluded``; a probe
    with no usable cells at all is an error.  Quantiles use linear
    interpolation.
    """
    m = fit.m
    if labels is None:
        labels = [f"probe_{j + 1}" for j in range(m)]
    if len(labels) != m:
        raise ValueError(f"{len(labels)} labels for {m} probes")
    first = np.outer(fit.theta1, fit.phi1)
    second = np.outer(fit.theta2, fit.phi2)
    probes = []
    for j in range(m):
        denom = first[:, j]
        ok = denom != 0.0
        excluded = int(np.sum(~ok))
        if not ok.any():
            raise PreconditionError(
                f"probe {labels[j]!r} has no nonzero first-dimension cells"
            )
        ratios = 100.0 * np.abs(second[ok, j] / denom[ok])
        qs = np.percentile(ratios, [0.0, 25.0, 50.0, 75.0, 100.0], method="linear")
        probes.append(
            ProbeContribution(
                label=str(labels[j]),
                min_pct=float(qs[0]),
                q1_pct=float(qs[1]),
                med_pct=float(qs[2]),
                q3_pct=float(qs[3]),
                max_pct=float(qs[4]),
                excluded=excluded,
            )
        )
    return ContributionSummary(probes=tuple(probes))
