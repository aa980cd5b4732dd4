"""Construction and validation of test-direction vectors.

Every statistic downstream projects the second row effects onto one or more
direction vectors ``a`` of length n.  Valid directions satisfy three
conditions: ||a||^2 = n, mutual orthogonality within a set, and orthogonality
to the first-dimension mean (estimated group-wise when unknown).  The
asymptotic theory also wants no single entry to dominate; that "balance"
statistic max_i a_i^2 / n cannot be enforced at fixed n, so it is reported
and flagged when large.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, PreconditionError

NORM_RTOL = 1e-10
ORTH_ATOL = 1e-8
BALANCE_WARN = 0.5


@dataclass(frozen=True)
class GroupSpec:
    """Partition of the n arrays into groups, ordered by first appearance."""

    assignments: tuple[str, ...]

    def __post_init__(self):
        assignments = tuple(str(a) for a in self.assignments)
        if not assignments:
            raise ValueError("empty group assignment")
        object.__setattr__(self, "assignments", assignments)
        # singleton groups are allowed: designed contrasts (e.g. factorial
        # cells with one array each) legitimately use them
        object.__setattr__(self, "_labels", tuple(dict.fromkeys(assignments)))

    @property
    def n(self) -> int:
        return len(self.assignments)

    @property
    def p(self) -> int:
        return len(self._labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def indices(self, label: str) -> np.ndarray:
        return np.array([i for i, a in enumerate(self.assignments) if a == label])

    def expand(self, group_values) -> np.ndarray:
        """Broadcast one value per group to a full per-array n-vector."""
        group_values = np.asarray(group_values, dtype=float)
        if group_values.shape != (self.p,):
            raise ValueError(f"expected {self.p} group values, got shape {group_values.shape}")
        lookup = {lab: group_values[i] for i, lab in enumerate(self._labels)}
        return np.array([lookup[a] for a in self.assignments])


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """k direction row-vectors of length n, plus what they were built against.

    Constructors guarantee the invariants (row norms ||a||^2 = n, pairwise
    orthogonality, orthogonality to ``mu1_hat``); the constructor re-checks
    them so a hand-built set cannot silently violate the contracts.
    ``mu1_hat`` is None for sets loaded from text, which only stores rows.
    """

    vectors: np.ndarray
    mu1_hat: np.ndarray | None = None
    balance: np.ndarray = field(init=False)

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "vectors", vectors)
        k, n = vectors.shape
        if k < 1 or n < 2:
            raise ValueError(f"direction set must be k x n with n >= 2, got {vectors.shape}")
        norms2 = (vectors * vectors).sum(axis=1)
        if np.abs(norms2 - n).max() > NORM_RTOL * n * 10:
            raise ValueError("direction rows must have squared norm n")
        if k > 1:
            G = vectors @ vectors.T
            off = np.abs(G - np.diag(np.diag(G))).max()
            if off > ORTH_ATOL * n:
                raise ValueError("direction rows must be pairwise orthogonal")
        if self.mu1_hat is not None:
            mu = np.asarray(self.mu1_hat, dtype=float)
            if mu.shape != (n,):
                raise ValueError(f"mu1_hat must have length {n}")
            object.__setattr__(self, "mu1_hat", mu)
            dots = np.abs(vectors @ mu)
            if dots.max() > ORTH_ATOL * max(np.linalg.norm(mu), 1e-300) * np.sqrt(n):
                raise ValueError("direction rows must be orthogonal to mu1_hat")
        object.__setattr__(self, "balance", (vectors * vectors).max(axis=1) / n)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.vectors[i]

    def to_text(self) -> str:
        lines = [f"# n={self.n} k={self.k}"]
        for row in self.vectors:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DirectionSet":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ParseError("direction file must start with a '# n=<n> k=<k>' header")
        header = lines[0].lstrip("#").split()
        try:
            meta = dict(item.split("=") for item in header)
            n, k = int(meta["n"]), int(meta["k"])
        except (ValueError, KeyError) as exc:
            raise ParseError(f"malformed direction header {lines[0]!r}") from exc
        rows = []
        for ln in lines[1:]:
            try:
                rows.append([float(tok) for tok in ln.split()])
            except ValueError as exc:
                raise ParseError(f"malformed direction row {ln!r}") from exc
        vectors = np.array(rows, dtype=float)
        if vectors.shape != (k, n):
            raise ParseError(f"expected {k} rows of {n} values, got shape {vectors.shape}")
        return cls(vectors=vectors, mu1_hat=None)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "DirectionSet":
        return cls.from_text(Path(path).read_text())


def estimate_mu1(theta1, groups: GroupSpec, estimator: str = "median") -> np.ndarray:
    """Group-constant estimate of the first-dimension mean vector.

    Each array's entry is the group median (default) or mean of the fitted
    theta1 values over that array's group.
    """
    theta1 = np.asarray(theta1, dtype=float)
    if theta1.shape != (groups.n,):
        raise ValueError(f"theta1 has shape {theta1.shape}, groups expect {groups.n}")
    if estimator not in ("median", "mean"):
        raise ValueError(f"estimator must be 'median' or 'mean', got {estimator!r}")
    agg = np.median if estimator == "median" else np.mean
    per_group = [agg(theta1[groups.indices(lab)]) for lab in groups.labels]
    return groups.expand(per_group)


def _rescale_to_n(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    return a * (np.sqrt(n) / np.linalg.norm(a))


def _project_out(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    nb2 = float(b @ b)
    if nb2 == 0.0:
        return a
    return a - (float(a @ b) / nb2) * b


def two_group_direction(mu1_hat, groups: GroupSpec) -> DirectionSet:
    """The two-group contrast direction built from estimated group means.

    Entries are -mu_hat(group 2) on group-1 arrays and +mu_hat(group 1) on
    group-2 arrays, which is orthogonal to mu1_hat for equal group sizes; an
    explicit projection removes any residual component for unequal sizes.
    Rescaled to ||a||^2 = n.
    """
    mu1_hat = np.asarray(mu1_hat, dtype=float)
    if groups.p != 2:
        raise PreconditionError(f"two-group direction needs exactly 2 groups, got {groups.p}")
    if mu1_hat.shape != (groups.n,):
        raise ValueError(f"mu1_hat must have length {groups.n}")
    idx1 = groups.indices(groups.labels[0])
    idx2 = groups.indices(groups.labels[1])
    tol = 1e-9 * max(1.0, np.abs(mu1_hat).max())
    for idx, lab in ((idx1, groups.labels[0]), (idx2, groups.labels[1])):
        if np.abs(mu1_hat[idx] - mu1_hat[idx[0]]).max() > tol:
            raise ValueError(f"mu1_hat is not constant within group {lab!r}")
    g1, g2 = mu1_hat[idx1[0]], mu1_hat[idx2[0]]
    if g1 == 0.0 and g2 == 0.0:
        raise PreconditionError("both group means are zero; the contrast direction vanishes")
    raw = np.empty(groups.n)
    raw[idx1] = -g2
    raw[idx2] = g1
    a = _project_out(raw, mu1_hat)
    if np.linalg.norm(a) <= 1e-12 * np.linalg.norm(raw):
        raise PreconditionError("contrast direction collapses after removing the mu1 component")
    return DirectionSet(vectors=_rescale_to_n(a)[None], mu1_hat=mu1_hat)


def contrast_directions(groups: GroupSpec, contrasts, mu1_hat) -> DirectionSet:
    """Expand group-level contrasts to per-array directions.

    Each contrast (a p-vector) becomes a group-constant n-vector, is projected
    orthogonal to ``mu1_hat``, orthogonalized against the rows built before
    it, and rescaled to ||a||^2 = n.  A contrast that collapses to zero along
    the way is linearly dependent on mu1_hat or earlier contrasts: error.
    """
    mu1_hat = np.asarray(mu1_hat, dtype=float)
    contrasts = [np.asarray(c, dtype=float) for c in contrasts]
    if not contrasts:
        raise ValueError("no contrasts supplied")
    if len(contrasts) > groups.p - 1:
        raise PreconditionError(
            f"{len(contrasts)} contrasts exceed the p-1={groups.p - 1} independent group contrasts"
        )
    rows = []
    for ci, contrast in enumerate(contrasts):
        a = groups.expand(contrast)
        scale = np.linalg.norm(a)
        if scale == 0.0:
            raise PreconditionError(f"contrast {ci} is identically zero")
        a = _project_out(a, mu1_hat)
        for prev in rows:
            a = _project_out(a, prev)
        if np.linalg.norm(a) <= 1e-10 * scale:
            raise PreconditionError(
                f"contrast {ci} is linearly dependent on mu1_hat or earlier contrasts"
            )
        rows.append(_rescale_to_n(a))
    return DirectionSet(vectors=np.array(rows), mu1_hat=mu1_hat)


def hadamard_directions(n: int, k: int) -> DirectionSet:
    """The first k non-constant columns of the order-n Sylvester matrix.

    Built by iterated Kronecker products of [[1, 1], [1, -1]]; dropping the
    all-ones first column leaves n-1 mutually orthogonal +-1 contrasts, all
    orthogonal to a constant mean vector and perfectly balanced (every
    a_i^2/n = 1/n).  Requires n to be a power of two.
    """
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"Sylvester construction needs n to be a power of two, got {n}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, n-1], got k={k} for n={n}")
    H = np.array([[1.0]])
    block = np.array([[1.0, 1.0], [1.0, -1.0]])
    while H.shape[0] < n:
        H = np.kron(H, block)
    return DirectionSet(vectors=H[:, 1 : k + 1].T.copy(), mu1_hat=np.ones(n))


def complement_directions(mu1_hat, k: int | None = None) -> DirectionSet:
    """An orthogonal basis of the complement of mu1_hat, scaled to ||a||^2 = n.

    When n is a power of two and mu1_hat is constant, this delegates to the
    Sylvester construction (perfect balance); otherwise the basis comes from
    the Householder reflector that maps mu1_hat onto a coordinate axis, which
    is deterministic but can concentrate weight (watch the balance report).
    """
    mu1_hat = np.asarray(mu1_hat, dtype=float)
    n = mu1_hat.shape[0]
    if k is None:
        k = n - 1
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, n-1], got k={k} for n={n}")
    norm = np.linalg.norm(mu1_hat)
    if norm == 0.0:
        raise PreconditionError("mu1_hat is the zero vector; its complement is undefined")
    if np.all(mu1_hat == mu1_hat[0]) and (n & (n - 1)) == 0:
        ds = hadamard_directions(n, k)
        return DirectionSet(vectors=ds.vectors, mu1_hat=mu1_hat)
    u = mu1_hat / norm
    w = u.copy()
    w[0] += 1.0 if u[0] >= 0 else -1.0
    H = np.eye(n) - 2.0 * np.outer(w, w) / float(w @ w)
    return DirectionSet(vectors=H[:, 1 : k + 1].T * np.sqrt(n), mu1_hat=mu1_hat)


@dataclass(frozen=True)
class DirectionDiagnostics:
    """Per-row condition checks; purely informational."""

    norm_error: np.ndarray
    pairwise_error: float
    mu1_error: np.ndarray | None
    balance: np.ndarray
    warnings: tuple[str, ...]


def validate_directions(ds: DirectionSet) -> DirectionDiagnostics:
    """Report how well a direction set meets its conditions.

    Norm error is relative per row; pairwise error is the largest off-diagonal
    inner product scaled by n; mu1 error is scaled by ||mu1_hat|| sqrt(n); the
    balance statistic flags rows where one array carries more than half the
    weight (the asymptotics want it to vanish, which a fixed n cannot show).
    """
    A = ds.vectors
    k, n = A.shape
    norm_error = np.abs((A * A).sum(axis=1) - n) / n
    if k > 1:
        G = A @ A.T
        pairwise = float(np.abs(G - np.diag(np.diag(G))).max() / n)
    else:
        pairwise = 0.0
    mu1_error = None
    if ds.mu1_hat is not None:
        scale = max(np.linalg.norm(ds.mu1_hat) * np.sqrt(n), 1e-300)
        mu1_error = np.abs(A @ ds.mu1_hat) / scale
    warns = []
    for i, b in enumerate(ds.balance):
        if b > BALANCE_WARN:
            warns.append(f"row {i} balance {b:.3f} exceeds {BALANCE_WARN}; one array dominates")
    return DirectionDiagnostics(
        norm_error=norm_error,
        pairwise_error=pairwise,
        mu1_error=mu1_error,
        balance=ds.balance.copy(),
        warnings=tuple(warns),
    )
