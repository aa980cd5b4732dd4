"""End-to-end screening of probe-set matrix collections.

The pipeline mirrors how the tests get used on real intensity data: load a
TSV of probe-set blocks plus array/group metadata, quantile-normalize across
arrays, keep the probe sets whose second singular mass clears a threshold
(lambda2^2 / lambda1^2 > 0.1 by default), run the chosen second-dimension
test per probe set, adjust the surviving p-values for false discovery, and
emit a flat report (plus scatter coordinates for plotting).

File formats:

* matrix TSV (default ``probes-as-rows``): columns ``probeset_id``,
  ``probe_id``, then one column per array holding intensities; each probe
  set's rows are contiguous.  With ``arrays-as-rows`` the second column is
  ``array_id`` and the value columns are probes (all probe sets must then
  share one probe count).
* metadata TSV: columns ``array_id``, ``group``.
* report TSV columns: probeset_id, n, m, lambda1..lambda4, ratio, method,
  statistic, p_value, p_adjusted, selected, notes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .directions import (
    GroupSpec,
    complement_directions,
    contrast_directions,
    estimate_mu1,
    two_group_direction,
    validate_directions,
)
from .errors import ParseError, PreconditionError
from .inference import bh_adjust, bootstrap_p, chisq_test, max_test, target_test
from .numkern import DataMatrix
from .rank2 import Rank2Fit, fit_rank2
from .rng import derive_seed

DEFAULT_RATIO_THRESHOLD = 0.1

REPORT_COLUMNS = (
    "probeset_id",
    "n",
    "m",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "ratio",
    "method",
    "statistic",
    "p_value",
    "p_adjusted",
    "selected",
    "notes",
)


@dataclass(frozen=True, eq=False)
class ProbeSetRecord:
    """One probe set's matrix, with the fit attached once computed."""

    probeset_id: str
    matrix: DataMatrix
    fit: Rank2Fit | None = None
    notes: tuple[str, ...] = ()

    @property
    def ratio(self) -> float | None:
        """Second-to-first squared singular value ratio, in [0, 1]."""
        if self.fit is None or self.fit.lambdas[0] == 0.0:
            return None
        return float(self.fit.lambdas[1] ** 2 / self.fit.lambdas[0] ** 2)


@dataclass(frozen=True)
class ScreenReportRow:
    probeset_id: str
    n: int
    m: int
    lambdas: tuple[float, ...]
    ratio: float | None
    method: str
    statistic: float | None
    p_value: float | None
    p_adjusted: float | None
    selected: bool
    notes: str

    def as_record(self) -> dict:
        lam = list(self.lambdas[:4]) + [None] * max(0, 4 - len(self.lambdas))
        return {
            "probeset_id": self.probeset_id,
            "n": self.n,
            "m": self.m,
            "lambda1": lam[0],
            "lambda2": lam[1],
            "lambda3": lam[2],
            "lambda4": lam[3],
            "ratio": self.ratio,
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "p_adjusted": self.p_adjusted,
            "selected": self.selected,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class ScreenReport:
    rows: tuple[ScreenReportRow, ...]
    method: str
    alpha: float
    bh_family_size: int

    def to_tsv(self) -> str:
        lines = [
            f"# method={self.method} alpha={self.alpha} bh_family={self.bh_family_size}",
            "\t".join(REPORT_COLUMNS),
        ]
        for row in self.rows:
            rec = row.as_record()
            cells = []
            for col in REPORT_COLUMNS:
                v = rec[col]
                if v is None:
                    cells.append("")
                elif isinstance(v, bool):
                    cells.append("1" if v else "0")
                elif isinstance(v, float):
                    cells.append(f"{v:.6g}")
                else:
                    cells.append(str(v))
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv())


def _parse_float(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError as exc:
        raise ParseError(f"non-numeric value {token!r} at {where}") from exc
    if not math.isfinite(value):
        raise ParseError(f"missing or non-finite value at {where}")
    return value


def load_dataset(matrix_path, meta_path=None, orientation: str = "probes-as-rows"):
    """Read a probe-set matrix TSV (and optional group metadata).

    Returns (records, groups); ``groups`` is None when no metadata file is
    given.  Every probe set must appear as one contiguous block and share the
    array set declared in the header; missing/non-numeric cells and label
    mismatches are rejected with the offending position named.
    """
    if orientation not in ("probes-as-rows", "arrays-as-rows"):
        raise ValueError(f"unknown orientation {orientation!r}")
    matrix_path = Path(matrix_path)
    with matrix_path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{matrix_path}: empty file") from None
        if len(header) < 3:
            raise ParseError(f"{matrix_path}: need id, row-label and value columns")
        value_labels = tuple(h.strip() for h in header[2:])
        blocks: dict[str, list] = {}
        order: list[str] = []
        last_id = None
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2 + len(value_labels):
                raise ParseError(f"{matrix_path}:{lineno}: expected {2 + len(value_labels)} columns, got {len(row)}")
            ps_id, row_label = row[0].strip(), row[1].strip()
            if ps_id not in blocks:
                blocks[ps_id] = []
                order.append(ps_id)
            elif ps_id != last_id:
                raise ParseError(f"{matrix_path}:{lineno}: duplicate probe set {ps_id!r} (blocks must be contiguous)")
            values = [
                _parse_float(tok, f"{matrix_path}:{lineno} (probe set {ps_id!r}, row {row_label!r}, column {value_labels[j]!r})")
                for j, tok in enumerate(row[2:])
            ]
            blocks[ps_id].append((row_label, values))
            last_id = ps_id

    if not blocks:
        raise ParseError(f"{matrix_path}: no data rows")

    records = []
    for ps_id in order:
        rows = blocks[ps_id]
        labels = [lab for lab, _ in rows]
        if len(set(labels)) != len(labels):
            raise ParseError(f"probe set {ps_id!r} has duplicate row labels")
        block = np.array([vals for _, vals in rows])
        try:
            if orientation == "probes-as-rows":
                dm = DataMatrix(block.T, row_labels=value_labels, col_labels=tuple(labels))
            else:
                dm = DataMatrix(block, row_labels=tuple(labels), col_labels=value_labels)
        except ValueError as exc:
            raise ParseError(f"probe set {ps_id!r}: {exc}") from exc
        records.append(ProbeSetRecord(probeset_id=ps_id, matrix=dm))

    array_labels = records[0].matrix.row_labels
    for rec in records[1:]:
        if rec.matrix.row_labels != array_labels:
            raise ParseError(f"probe set {rec.probeset_id!r} has a different array set")

    groups = None
    if meta_path is not None:
        groups = load_groups(meta_path, array_labels)
    return records, groups


def load_groups(meta_path, array_labels) -> GroupSpec:
    """Read (array_id, group) metadata and align it with the matrix arrays."""
    meta_path = Path(meta_path)
    mapping: dict[str, str] = {}
    with meta_path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{meta_path}: empty file") from None
        if header[:2] != ["array_id", "group"]:
            raise ParseError(f"{meta_path}: expected header 'array_id\\tgroup'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            if len(row) < 2:
                raise ParseError(f"{meta_path}:{lineno}: expected array_id and group")
            aid = row[0].strip()
            if aid in mapping:
                raise ParseError(f"{meta_path}:{lineno}: duplicate array {aid!r}")
            mapping[aid] = row[1].strip()
    missing = [a for a in array_labels if a not in mapping]
    if missing:
        raise ParseError(f"{meta_path}: no group for arrays {missing}")
    extra = sorted(set(mapping) - set(array_labels))
    if extra:
        raise ParseError(f"{meta_path}: arrays {extra} not present in the matrix file")
    return GroupSpec(tuple(mapping[a] for a in array_labels))


def save_dataset(records, path, orientation: str = "probes-as-rows") -> None:
    """Write records back in the matrix TSV format (full float precision)."""
    records = list(records)
    if not records:
        raise ValueError("no records to save")
    path = Path(path)
    array_labels = records[0].matrix.row_labels
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        if orientation == "probes-as-rows":
            writer.writerow(["probeset_id", "probe_id", *array_labels])
            for rec in records:
                block = rec.matrix.values.T
                for j, probe in enumerate(rec.matrix.col_labels):
                    writer.writerow([rec.probeset_id, probe, *(f"{v:.17g}" for v in block[j])])
        elif orientation == "arrays-as-rows":
            writer.writerow(["probeset_id", "array_id", *records[0].matrix.col_labels])
            for rec in records:
                for i, aid in enumerate(rec.matrix.row_labels):
                    writer.writerow([rec.probeset_id, aid, *(f"{v:.17g}" for v in rec.matrix.values[i])])
        else:
            raise ValueError(f"unknown orientation {orientation!r}")


def quantile_normalize_values(columns):
    """Quantile-normalize a list of equal-length value vectors.

    Each vector's r-th order statistic becomes the mean of the r-th order
    statistics across vectors; ties within a vector get the mean of the
    reference values over their tied ranks.
    """
    cols = [np.asarray(c, dtype=float) for c in columns]
    length = cols[0].shape[0]
    if any(c.shape != (length,) for c in cols):
        raise PreconditionError("all arrays must contribute the same number of values")
    reference = np.mean([np.sort(c) for c in cols], axis=0)
    out = []
    for c in cols:
        order = np.argsort(c, kind="stable")
        result = np.empty(length)
        i = 0
        while i < length:
            j = i
            while j + 1 < length and c[order[j + 1]] == c[order[i]]:
                j += 1
            result[order[i : j + 1]] = reference[i : j + 1].mean()
            i = j + 1
        out.append(result)
    return out


def quantile_normalize(records):
    """Quantile-normalize across arrays over all pooled probe-set values.

    Every array contributes its full value vector (concatenated across probe
    sets); after normalization all arrays share one empirical distribution.
    Fits attached to the inputs are dropped since the values change.
    """
    records = list(records)
    if not records:
        return []
    array_labels = records[0].matrix.row_labels
    for rec in records[1:]:
        if rec.matrix.row_labels != array_labels:
            raise PreconditionError(
                f"probe set {rec.probeset_id!r} has a different array set; cannot pool"
            )
    pooled = np.concatenate([rec.matrix.values for rec in records], axis=1)
    normalized = np.vstack(quantile_normalize_values(list(pooled)))
    out = []
    offset = 0
    for rec in records:
        m = rec.matrix.m
        dm = DataMatrix(
            normalized[:, offset : offset + m],
            row_labels=rec.matrix.row_labels,
            col_labels=rec.matrix.col_labels,
        )
        out.append(ProbeSetRecord(probeset_id=rec.probeset_id, matrix=dm, notes=rec.notes))
        offset += m
    return out


def fit_records(records):
    """Attach rank-2 fits; unfittable or degenerate matrices get a note."""
    out = []
    for rec in records:
        if rec.fit is not None:
            out.append(rec)
            continue
        notes = rec.notes
        try:
            fit = fit_rank2(rec.matrix)
        except (PreconditionError, ValueError) as exc:
            out.append(replace(rec, fit=None, notes=notes + (f"unfittable: {exc}",)))
            continue
        if fit.degenerate:
            notes = notes + ("degenerate fit (leading singular values tie)",)
        out.append(replace(rec, fit=fit, notes=notes))
    return out


def screen(records, ratio_threshold: float = DEFAULT_RATIO_THRESHOLD, top_n: int | None = None):
    """Fit all records and keep those with lambda2^2/lambda1^2 above threshold.

    Survivors come back sorted by ratio descending (ties broken by probe-set
    id, so the order is a stable total order); ``top_n`` truncates the list.
    """
    fitted = fit_records(records)
    passing = [rec for rec in fitted if rec.ratio is not None and rec.ratio > ratio_threshold]
    passing.sort(key=lambda rec: (-rec.ratio, rec.probeset_id))
    if top_n is not None:
        passing = passing[:top_n]
    return passing


@dataclass(frozen=True)
class AnalyzeConfig:
    """How to test each screened probe set.

    ``contrasts`` are group-level vectors (length = number of groups) for the
    chi-square test; the target test with two groups builds its contrast from
    the group means of theta1.  Bootstrap calibration kicks in when
    ``bootstrap_B`` is set; each record then gets its own deterministic child
    seed derived from (seed, its index in the family).
    """

    test: str = "target"
    contrasts: tuple | None = None
    estimator: str = "median"
    bootstrap_B: int | None = None
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.test not in ("target", "chisq", "max"):
            raise ValueError(f"test must be target, chisq, or max, got {self.test!r}")
        if self.bootstrap_B is not None and self.test == "max":
            raise ValueError("bootstrap calibration covers the target and chisq tests only")

    @property
    def method_tag(self) -> str:
        return self.test + ("_bootstrap" if self.bootstrap_B else "")


def _build_directions(fit, groups, config):
    mu1_hat = estimate_mu1(fit.theta1, groups, estimator=config.estimator)
    if config.test == "max":
        return complement_directions(mu1_hat)
    if config.contrasts:
        return contrast_directions(groups, config.contrasts, mu1_hat)
    if groups.p != 2:
        raise PreconditionError(
            f"{config.test} test needs explicit contrasts when there are {groups.p} groups"
        )
    if config.test == "target":
        return two_group_direction(mu1_hat, groups)
    return contrast_directions(groups, [np.array([1.0, -1.0])], mu1_hat)


def _run_test(fit, directions, config, record_index):
    if config.bootstrap_B is not None:
        return bootstrap_p(
            fit,
            directions,
            method=config.test,
            B=config.bootstrap_B,
            seed=derive_seed(config.seed, record_index),
        )
    if config.test == "target":
        return target_test(fit, directions)
    if config.test == "chisq":
        return chisq_test(fit, directions)
    # exploratory max over a full basis: no orientation exists for real
    # data, so the sign-agnostic variant is the defensible default
    return max_test(fit, directions, two_sided=True)


def analyze(records, groups: GroupSpec, config: AnalyzeConfig = AnalyzeConfig()) -> ScreenReport:
    """Test every screened record and adjust the family for false discovery.

    Records whose test cannot run (degenerate fit, zero sigma_hat, direction
    construction failure) keep a note and an empty p-value and are excluded
    from the adjustment family; the BH family is exactly the set of rows with
    a p-value.  Rows preserve the input (screen) order.
    """
    records = fit_records(records)
    if records and groups.n != records[0].matrix.n:
        raise PreconditionError(
            f"group spec covers {groups.n} arrays but matrices have {records[0].matrix.n}"
        )
    outcomes: list = []
    for i, rec in enumerate(records):
        notes = list(rec.notes)
        if rec.fit is None:
            outcomes.append((rec, None, None, notes))
            continue
        if rec.fit.degenerate:
            notes.append("skipped: degenerate fit")
            outcomes.append((rec, None, None, notes))
            continue
        try:
            directions = _build_directions(rec.fit, groups, config)
            diag = validate_directions(directions)
            notes.extend(diag.warnings)
            outcome = _run_test(rec.fit, directions, config, i)
        except (PreconditionError, ValueError) as exc:
            notes.append(f"skipped: {exc}")
            outcomes.append((rec, None, None, notes))
            continue
        outcomes.append((rec, outcome.statistic, outcome.p_value, notes))

    pvals = [p for _, _, p, _ in outcomes if p is not None]
    adjusted = iter(bh_adjust(pvals) if pvals else [])
    rows = []
    for rec, stat, p, notes in outcomes:
        p_adj = float(next(adjusted)) if p is not None else None
        rows.append(
            ScreenReportRow(
                probeset_id=rec.probeset_id,
                n=rec.matrix.n,
                m=rec.matrix.m,
                lambdas=tuple(float(v) for v in (rec.fit.lambdas if rec.fit is not None else ())),
                ratio=rec.ratio,
                method=config.method_tag,
                statistic=stat,
                p_value=p,
                p_adjusted=p_adj,
                selected=bool(p_adj is not None and p_adj < config.alpha),
                notes="; ".join(notes),
            )
        )
    return ScreenReport(
        rows=tuple(rows),
        method=config.method_tag,
        alpha=config.alpha,
        bh_family_size=len(pvals),
    )


def emit_scatter(record: ProbeSetRecord, out_dir, groups: GroupSpec | None = None):
    """Write the fitted coordinates to arrays.tsv / probes.tsv for plotting.

    arrays.tsv columns: array_id, group, theta1, theta2 (group blank without
    metadata); probes.tsv columns: probe_id, phi1, phi2.  Values round-trip
    at full precision.
    """
    if record.fit is None:
        raise PreconditionError(f"probe set {record.probeset_id!r} has no fit to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fit = record.fit
    arrays_path = out_dir / "arrays.tsv"
    probes_path = out_dir / "probes.tsv"
    with arrays_path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["array_id", "group", "theta1", "theta2"])
        for i, aid in enumerate(record.matrix.row_labels):
            group = groups.assignments[i] if groups is not None else ""
            writer.writerow([aid, group, f"{fit.theta1[i]:.17g}", f"{fit.theta2[i]:.17g}"])
    with probes_path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["probe_id", "phi1", "phi2"])
        for j, pid in enumerate(record.matrix.col_labels):
            writer.writerow([pid, f"{fit.phi1[j]:.17g}", f"{fit.phi2[j]:.17g}"])
    return arrays_path, probes_path
