"""Dense linear-algebra and special-function kernels.

Everything downstream (fitting, testing, simulation, screening) sits on the
four operations here: a cyclic Jacobi eigensolver for small symmetric
matrices, a thin SVD computed through the Gram matrix, the standard normal
CDF/quantile, and the chi-square survival function.  All functions are pure
and reentrant.

The SVD route is eigendecomposition of the m x m Gram matrix Y^T Y, which is
cheap because the number of columns (probes) is small and fixed; it also works
unchanged for wide matrices (m > n), where the trailing eigenvalues are just
zero.  Matrices larger than ``MAX_DIM`` columns are refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

MAX_DIM = 256

# Jacobi sweep controls: stop once the off-diagonal Frobenius mass falls
# below JACOBI_OFF_TOL * ||S||_F; give up after JACOBI_MAX_SWEEPS sweeps.
JACOBI_OFF_TOL = 1e-14
JACOBI_MAX_SWEEPS = 50

# sigma1 ~ sigma2 closer than this (relative) marks a fit as degenerate
DEGENERATE_RTOL = 1e-8


@dataclass(frozen=True)
class DataMatrix:
    """An n x m intensity matrix with array (row) and probe (column) labels.

    Requires n >= 3 and m >= 3 (the tests and the residual-variance estimate
    need at least that many rows and columns) and finite entries; anything
    with missing values must be rejected before it gets here.
    """

    values: np.ndarray
    row_labels: tuple[str, ...] = ()
    col_labels: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
        n, m = values.shape
        if n < 3 or m < 3:
            raise ValueError(f"matrix must be at least 3x3, got {n}x{m}")
        if m > MAX_DIM:
            raise ValueError(f"m={m} exceeds the supported maximum {MAX_DIM}")
        if not np.isfinite(values).all():
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(f"non-finite entry at row {i}, column {j}")
        object.__setattr__(self, "values", values)
        row_labels = tuple(self.row_labels) or tuple(f"array_{i + 1}" for i in range(n))
        col_labels = tuple(self.col_labels) or tuple(f"probe_{j + 1}" for j in range(m))
        if len(row_labels) != n:
            raise ValueError(f"{len(row_labels)} row labels for {n} rows")
        if len(col_labels) != m:
            raise ValueError(f"{len(col_labels)} column labels for {m} columns")
        object.__setattr__(self, "row_labels", row_labels)
        object.__setattr__(self, "col_labels", col_labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD of a data matrix.

    ``singular_values`` holds all m values, descending.  ``right_vectors``
    has the right singular vectors as columns; ``left_scores`` column j is
    Y v_j, so the j-th left singular vector is left_scores[:, j] / sigma_j
    whenever sigma_j > 0.  ``degenerate`` flags sigma1 ~ sigma2 (the leading
    subspace is not identifiable) or an all-zero input; flagged results are
    only good for diagnostics.
    """

    singular_values: np.ndarray
    right_vectors: np.ndarray
    left_scores: np.ndarray
    degenerate: bool = False


def _as_values(Y) -> np.ndarray:
    if isinstance(Y, DataMatrix):
        return Y.values
    values = np.asarray(Y, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("matrix contains non-finite entries")
    return values


def _jacobi_batch(S: np.ndarray, off_tol=JACOBI_OFF_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi on a stack of symmetric matrices, shape (B, m, m).

    Rotations run over the fixed (p, q) schedule for the whole stack; the
    per-matrix angles vanish once a matrix has converged, so finished members
    ride along unharmed.  Returns eigenvalues sorted descending and the
    accumulated orthogonal transforms (columns are eigenvectors).
    """
    S = np.array(S, dtype=float)
    B, m, _ = S.shape
    V = np.broadcast_to(np.eye(m), (B, m, m)).copy()
    if m == 1:
        return S[:, :, 0].copy(), V
    offmask = 1.0 - np.eye(m)
    fro = np.sqrt((S * S).sum(axis=(1, 2)))
    thresh = off_tol * fro
    for sweep in range(max_sweeps + 1):
        # off-diagonal mass summed directly: the trace-subtraction shortcut
        # cancels catastrophically when one eigenvalue dominates
        off = np.sqrt(((S * S) * offmask).sum(axis=(1, 2)))
        if np.all(off <= thresh):
            break
        if sweep == max_sweeps:
            raise PreconditionError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps; "
                "input is likely ill-conditioned"
            )
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = S[:, p, q].copy()
                nz = apq != 0.0
                if not nz.any():
                    continue
                theta = np.zeros(B)
                with np.errstate(over="ignore"):
                    # a denormal pivot can overflow theta to inf; the "big"
                    # branch then produces the correct vanishing rotation
                    np.divide(S[:, q, q] - S[:, p, p], 2.0 * apq, out=theta, where=nz)
                t = np.zeros(B)
                big = np.abs(theta) > 1e100
                safe = nz & ~big
                if safe.any():
                    th = theta[safe]
                    t[safe] = np.where(th >= 0.0, 1.0, -1.0) / (
                        np.abs(th) + np.sqrt(th * th + 1.0)
                    )
                huge = nz & big
                if huge.any():
                    t[huge] = 0.5 / theta[huge]
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp = c[:, None]
                sp = s[:, None]
                Sp = S[:, p, :].copy()
                Sq = S[:, q, :].copy()
                S[:, p, :] = cp * Sp - sp * Sq
                S[:, q, :] = sp * Sp + cp * Sq
                Sp = S[:, :, p].copy()
                Sq = S[:, :, q].copy()
                S[:, :, p] = cp * Sp - sp * Sq
                S[:, :, q] = sp * Sp + cp * Sq
                # the rotation zeroes (p, q) exactly in real arithmetic
                S[:, p, q] = 0.0
                S[:, q, p] = 0.0
                Vp = V[:, :, p].copy()
                Vq = V[:, :, q].copy()
                V[:, :, p] = cp * Vp - sp * Vq
                V[:, :, q] = sp * Vp + cp * Vq
    w = np.diagonal(S, axis1=1, axis2=2).copy()
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w, V


def jacobi_eigh(S):
    """Eigendecomposition of a small symmetric matrix by cyclic Jacobi.

    Returns (eigenvalues, eigenvectors) with eigenvalues descending and
    eigenvectors as orthonormal columns.  The input must be symmetric; the
    check tolerates round-off scaled by the matrix magnitude.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    m = S.shape[0]
    if m > MAX_DIM:
        raise ValueError(f"m={m} exceeds the supported maximum {MAX_DIM}")
    if not np.isfinite(S).all():
        raise ValueError("matrix contains non-finite entries")
    asym = np.abs(S - S.T).max() if m > 1 else 0.0
    if asym > 1e-9 * max(1.0, np.abs(S).max()):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:g})")
    w, V = _jacobi_batch(0.5 * (S + S.T)[None])
    return w[0], V[0]


def _orient_columns(V: np.ndarray) -> np.ndarray:
    """Fix singular-vector signs: largest-magnitude entry positive, ties to
    the lowest index.  Operates on a (B, m, m) stack in place-free fashion."""
    idx = np.argmax(np.abs(V), axis=1)
    lead = np.take_along_axis(V, idx[:, None, :], axis=1)[:, 0, :]
    signs = np.where(lead < 0.0, -1.0, 1.0)
    return V * signs[:, None, :]


def svd_many(values: np.ndarray):
    """Gram-route SVD of a stack of matrices, shape (B, n, m).

    Returns (singular_values (B, m) descending, right_vectors (B, m, m) with
    the sign convention applied, degenerate flags (B,)).  Negative Gram
    eigenvalues from round-off are clamped to zero before the square root.
    """
    values = np.asarray(values, dtype=float)
    B, n, m = values.shape
    G = values.transpose(0, 2, 1) @ values
    G = 0.5 * (G + G.transpose(0, 2, 1))
    w, V = _jacobi_batch(G)
    sigma = np.sqrt(np.clip(w, 0.0, None))
    V = _orient_columns(V)
    degenerate = (sigma[:, 0] == 0.0) | (
        sigma[:, 0] - sigma[:, 1] <= DEGENERATE_RTOL * sigma[:, 0]
    )
    return sigma, V, degenerate


def svd_thin(Y, allow_transpose: bool = True) -> SvdResult:
    """Thin SVD of a data matrix (or plain 2-D array) via the Gram matrix.

    Wide inputs (m > n) go through the same m x m Gram route, which simply
    yields zero trailing singular values; set ``allow_transpose=False`` to
    refuse them instead.  An all-zero matrix comes back flagged degenerate
    and is usable only for diagnostics.
    """
    values = _as_values(Y)
    n, m = values.shape
    if m > MAX_DIM:
        raise ValueError(f"m={m} exceeds the supported maximum {MAX_DIM}")
    if m > n and not allow_transpose:
        raise ValueError(f"matrix is wide ({n}x{m}) and transposition is disabled")
    sigma, V, degenerate = svd_many(values[None])
    return SvdResult(
        singular_values=sigma[0],
        right_vectors=V[0],
        left_scores=values @ V[0],
        degenerate=bool(degenerate[0]),
    )


# ---------------------------------------------------------------------------
# special functions

_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    """Standard normal CDF, accurate to ~1e-15 over the double range."""
    return 0.5 * math.erfc(-x / _SQRT2)


# Rational minimax coefficients for the normal quantile (Wichura's PPND16),
# split by region: central |p - 1/2| <= 0.425, then two tail regimes in
# r = sqrt(-log(min(p, 1-p))).
_PPF_A = (
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_PPF_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_PPF_C = (
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_PPF_D = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_PPF_E = (
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_PPF_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _polyval(coeffs, x):
    acc = np.zeros_like(x) + coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc


def normal_ppf(p):
    """Standard normal quantile function (inverse CDF), vectorized.

    Accepts a float or an ndarray of probabilities in (0, 1); endpoints map
    to -inf/+inf.  Relative accuracy is ~1e-15 across the open interval.
    """
    p_arr = np.asarray(p, dtype=float)
    scalar = p_arr.ndim == 0
    p_arr = np.atleast_1d(p_arr)
    if np.any((p_arr < 0.0) | (p_arr > 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    z = np.empty_like(p_arr)
    q = p_arr - 0.5
    central = np.abs(q) <= 0.425
    if central.any():
        r = 0.180625 - q[central] ** 2
        z[central] = q[central] * _polyval(_PPF_A, r) / _polyval(_PPF_B, r)
    tail = ~central
    if tail.any():
        pt = p_arr[tail]
        small = np.minimum(pt, 1.0 - pt)
        with np.errstate(divide="ignore"):
            r = np.sqrt(-np.log(small))
        zt = np.empty_like(pt)
        near = r <= 5.0
        rn = r[near] - 1.6
        zt[near] = _polyval(_PPF_C, rn) / _polyval(_PPF_D, rn)
        far = ~near
        rf = r[far] - 5.0
        with np.errstate(invalid="ignore"):  # r = inf at p in {0, 1}; patched below
            zt[far] = _polyval(_PPF_E, rf) / _polyval(_PPF_F, rf)
        zt[np.isinf(r)] = np.inf
        z[tail] = np.where(q[tail] < 0.0, -zt, zt)
    return float(z[0]) if scalar else z


_GAMMA_EPS = 1e-16
_GAMMA_MAX_ITER = 10000


def _gamma_p_series(a: float, x: float) -> float:
    # lower regularized incomplete gamma by series, valid for x < a + 1
    if x <= 0.0:
        return 0.0
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise PreconditionError("incomplete gamma series failed to converge")


def _gamma_q_contfrac(a: float, x: float) -> float:
    # upper regularized incomplete gamma by Lentz's continued fraction,
    # valid for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise PreconditionError("incomplete gamma continued fraction failed to converge")


def chisq_sf(x: float, k: int) -> float:
    """Survival function P(chi2_k >= x) for integer degrees of freedom.

    Evaluated as the regularized upper incomplete gamma Q(k/2, x/2); relative
    error is far below the 1e-10 contract for x <= 500, k <= 1024.
    """
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ValueError(f"degrees of freedom must be a positive integer, got {k!r}")
    if k > 1024:
        raise ValueError(f"k={k} exceeds the supported maximum 1024")
    x = float(x)
    if math.isnan(x) or x < 0.0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x}")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    a = 0.5 * k
    xh = 0.5 * x
    if xh < a + 1.0:
        return 1.0 - _gamma_p_series(a, xh)
    return _gamma_q_contfrac(a, xh)
