import numpy as np
import pytest

from dimtest.directions import GroupSpec
from dimtest.errors import ParseError, PreconditionError
from dimtest.numkern import DataMatrix
from dimtest.rank2 import fit_rank2
from dimtest.screenflow import (
    REPORT_COLUMNS,
    AnalyzeConfig,
    ProbeSetRecord,
    analyze,
    emit_scatter,
    fit_records,
    load_dataset,
    load_groups,
    quantile_normalize,
    quantile_normalize_values,
    save_dataset,
    screen,
)

from oracles import quantile_normalize_reference


def write_matrix(path, blocks, array_labels):
    """blocks: list of (probeset_id, probe_labels, m x n value array)."""
    lines = ["\t".join(["probeset_id", "probe_id", *array_labels])]
    for ps_id, probe_labels, block in blocks:
        for j, probe in enumerate(probe_labels):
            lines.append("\t".join([ps_id, probe, *(str(v) for v in block[j])]))
    path.write_text("\n".join(lines) + "\n")


def write_meta(path, pairs):
    lines = ["array_id\tgroup"] + [f"{a}\t{g}" for a, g in pairs]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def small_files(tmp_path):
    arrays = ("A1", "A2", "A3", "A4")
    block = np.array(
        [
            [10.0, 11.0, 9.0, 12.0],
            [20.0, 21.0, 19.0, 22.0],
            [5.0, 6.0, 4.0, 7.0],
        ]
    )
    matrix = tmp_path / "matrix.tsv"
    write_matrix(matrix, [("PS1", ("P1", "P2", "P3"), block)], arrays)
    meta = tmp_path / "meta.tsv"
    write_meta(meta, [("A1", "g1"), ("A2", "g1"), ("A3", "g2"), ("A4", "g2")])
    return matrix, meta, block


class TestLoadDataset:
    def test_smoke(self, small_files):
        matrix, meta, block = small_files
        records, groups = load_dataset(matrix, meta)
        assert len(records) == 1
        rec = records[0]
        assert rec.probeset_id == "PS1"
        assert rec.matrix.n == 4 and rec.matrix.m == 3
        assert groups.p == 2
        # probes-as-rows input: the loaded matrix is the file block transposed
        assert np.array_equal(rec.matrix.values, block.T)
        assert rec.matrix.row_labels == ("A1", "A2", "A3", "A4")
        assert rec.matrix.col_labels == ("P1", "P2", "P3")

    def test_nan_cell_named(self, tmp_path):
        matrix = tmp_path / "m.tsv"
        matrix.write_text(
            "probeset_id\tprobe_id\tA1\tA2\tA3\n"
            "PS1\tP1\t1\t2\t3\n"
            "PS1\tP2\t1\tnan\t3\n"
            "PS1\tP3\t1\t2\t3\n"
        )
        with pytest.raises(ParseError, match=r"P2.*A2"):
            load_dataset(matrix)

    def test_non_numeric_cell(self, tmp_path):
        matrix = tmp_path / "m.tsv"
        matrix.write_text(
            "probeset_id\tprobe_id\tA1\tA2\tA3\nPS1\tP1\t1\tx\t3\nPS1\tP2\t1\t2\t3\nPS1\tP3\t1\t2\t3\n"
        )
        with pytest.raises(ParseError, match="non-numeric"):
            load_dataset(matrix)

    def test_non_contiguous_duplicate(self, tmp_path):
        matrix = tmp_path / "m.tsv"
        rows = ["probeset_id\tprobe_id\tA1\tA2\tA3"]
        rows += [f"PS1\tP{j}\t1\t2\t3" for j in range(3)]
        rows += [f"PS2\tP{j}\t4\t5\t6" for j in range(3)]
        rows += ["PS1\tP9\t7\t8\t9"]
        matrix.write_text("\n".join(rows) + "\n")
        with pytest.raises(ParseError, match="duplicate probe set"):
            load_dataset(matrix)

    def test_meta_mismatch(self, small_files, tmp_path):
        matrix, _, _ = small_files
        bad = tmp_path / "bad_meta.tsv"
        write_meta(bad, [("A1", "g1"), ("A2", "g1"), ("A3", "g2")])
        with pytest.raises(ParseError, match="no group"):
            load_dataset(matrix, bad)

    def test_arrays_as_rows(self, tmp_path):
        matrix = tmp_path / "m.tsv"
        lines = ["probeset_id\tarray_id\tP1\tP2\tP3"]
        block = np.arange(12.0).reshape(4, 3) + 1
        for i in range(4):
            lines.append("\t".join(["PS1", f"A{i+1}", *(str(v) for v in block[i])]))
        matrix.write_text("\n".join(lines) + "\n")
        records, _ = load_dataset(matrix, orientation="arrays-as-rows")
        assert np.array_equal(records[0].matrix.values, block)
        assert records[0].matrix.col_labels == ("P1", "P2", "P3")

    def test_save_round_trip(self, small_files, tmp_path):
        matrix, _, _ = small_files
        records, _ = load_dataset(matrix)
        out = tmp_path / "again.tsv"
        save_dataset(records, out)
        records2, _ = load_dataset(out)
        assert np.array_equal(records2[0].matrix.values, records[0].matrix.values)


class TestQuantileNormalize:
    def test_hand_example(self):
        out = quantile_normalize_values([[1.0, 2.0, 3.0], [4.0, 6.0, 8.0]])
        assert np.array_equal(out[0], [2.5, 4.0, 5.5])
        assert np.array_equal(out[1], [2.5, 4.0, 5.5])

    def test_identical_arrays_fixed_point(self):
        v = np.array([3.0, 1.0, 2.0])
        out = quantile_normalize_values([v, v.copy()])
        assert np.array_equal(out[0], v)
        assert np.array_equal(out[1], v)

    def test_preserves_within_array_order(self):
        rng = np.random.default_rng(0)
        cols = [rng.normal(size=50) for _ in range(4)]
        out = quantile_normalize_values(cols)
        for before, after in zip(cols, out):
            assert np.array_equal(np.argsort(before, kind="stable"), np.argsort(after, kind="stable"))

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(1)
        cols = [rng.normal(size=40) * 10 + 100 for _ in range(5)]
        mine = quantile_normalize_values(cols)
        ref = quantile_normalize_reference(cols)
        for a, b in zip(mine, ref):
            assert np.allclose(a, b, atol=1e-12)

    def test_ties_get_mean_reference(self):
        out = quantile_normalize_values([[5.0, 5.0, 7.0], [1.0, 2.0, 3.0]])
        # array 1 ties at ranks 0 and 1: both get the mean of the first two
        # reference values
        ref01 = (np.mean([1.0, 5.0]) + np.mean([2.0, 5.0])) / 2
        assert out[0][0] == out[0][1] == ref01

    def test_records_share_distribution(self):
        rng = np.random.default_rng(2)
        records = [
            ProbeSetRecord(
                probeset_id=f"PS{i}",
                matrix=DataMatrix(rng.normal(size=(4, 5)) * (i + 1) + 50 * i),
            )
            for i in range(3)
        ]
        normed = quantile_normalize(records)
        pooled = np.concatenate([rec.matrix.values for rec in normed], axis=1)
        base = np.sort(pooled[0])
        for i in range(1, 4):
            assert np.allclose(np.sort(pooled[i]), base, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(PreconditionError, match="same number"):
            quantile_normalize_values([[1.0, 2.0], [1.0, 2.0, 3.0]])


def rank2_matrix(lambdas, n=20, seed=0):
    """A matrix with prescribed singular values (others zero)."""
    rng = np.random.default_rng(seed)
    m = len(lambdas)
    U, _ = np.linalg.qr(rng.normal(size=(n, m)))
    V, _ = np.linalg.qr(rng.normal(size=(m, m)))
    return U @ np.diag(lambdas) @ V.T


class TestScreen:
    def test_ratio_example(self):
        Y = rank2_matrix([3387.0, 1388.0, 361.0, 168.0])
        rec = ProbeSetRecord(probeset_id="ex", matrix=DataMatrix(Y))
        kept = screen([rec])
        assert len(kept) == 1
        assert abs(kept[0].ratio - (1388.0 / 3387.0) ** 2) < 1e-9
        assert kept[0].ratio > 0.1

    def test_rank_one_excluded(self):
        Y = rank2_matrix([1000.0, 0.0, 0.0])
        rec = ProbeSetRecord(probeset_id="r1", matrix=DataMatrix(Y))
        assert screen([rec]) == []

    def test_top_n_keeps_higher_ratio(self):
        hi = ProbeSetRecord("hi", DataMatrix(rank2_matrix([100.0, 80.0, 1.0])))
        lo = ProbeSetRecord("lo", DataMatrix(rank2_matrix([100.0, 40.0, 1.0])))
        kept = screen([lo, hi], top_n=1)
        assert [r.probeset_id for r in kept] == ["hi"]

    def test_tie_broken_by_id(self):
        Y = rank2_matrix([100.0, 60.0, 1.0])
        a = ProbeSetRecord("b_second", DataMatrix(Y))
        b = ProbeSetRecord("a_first", DataMatrix(Y.copy()))
        kept = screen([a, b])
        assert [r.probeset_id for r in kept] == ["a_first", "b_second"]


def two_group_groups(n=20):
    return GroupSpec(("g1",) * (n // 2) + ("g2",) * (n // 2))


class TestAnalyze:
    def test_two_group_target_run(self):
        rng = np.random.default_rng(3)
        records = [
            ProbeSetRecord(f"ps{i}", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))
            for i in range(5)
        ]
        report = analyze(fit_records(records), two_group_groups(), AnalyzeConfig(test="target"))
        assert len(report.rows) == 5
        assert report.bh_family_size == 5
        for row in report.rows:
            assert row.p_value is not None
            assert row.p_adjusted >= row.p_value - 1e-15
            assert row.method == "target"

    def test_sigma_zero_noted_and_excluded(self):
        rng = np.random.default_rng(4)
        good = ProbeSetRecord("good", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))
        u = np.linspace(1.0, 2.0, 20)
        v = np.array([0.5, 0.5, 0.5, 0.5])
        rank1 = ProbeSetRecord("rankone", DataMatrix(np.outer(u, v)))
        report = analyze([good, rank1], two_group_groups(), AnalyzeConfig(test="target"))
        by_id = {row.probeset_id: row for row in report.rows}
        assert by_id["rankone"].p_value is None
        assert "sigma_hat" in by_id["rankone"].notes
        assert report.bh_family_size == 1

    def test_degenerate_fit_skipped(self):
        vals = np.zeros((20, 4))
        vals[:2, 0] = [3.0, 0.0]
        vals[:2, 1] = [0.0, 3.0]
        vals[2, 2] = 1.0
        rec = ProbeSetRecord("deg", DataMatrix(vals + 0.0))
        report = analyze([rec], two_group_groups(), AnalyzeConfig(test="target"))
        assert report.rows[0].p_value is None
        assert "degenerate" in report.rows[0].notes

    def test_bh_adjustment_matches_direct(self):
        from dimtest.inference import bh_adjust

        rng = np.random.default_rng(5)
        records = [
            ProbeSetRecord(f"ps{i}", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))
            for i in range(8)
        ]
        report = analyze(records, two_group_groups(), AnalyzeConfig(test="target"))
        raw = [row.p_value for row in report.rows]
        adj = bh_adjust(raw)
        assert np.allclose([row.p_adjusted for row in report.rows], adj)

    def test_chisq_with_contrasts(self):
        rng = np.random.default_rng(6)
        groups = GroupSpec(("a",) * 5 + ("b",) * 5 + ("c",) * 5 + ("d",) * 5)
        records = [
            ProbeSetRecord(f"ps{i}", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))
            for i in range(3)
        ]
        config = AnalyzeConfig(test="chisq", contrasts=((1, 1, -1, -1), (1, -1, 1, -1)))
        report = analyze(records, groups, config)
        assert all(row.p_value is not None for row in report.rows)
        assert report.method == "chisq"

    def test_max_runs_sign_agnostic(self):
        rng = np.random.default_rng(7)
        records = [ProbeSetRecord("ps0", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))]
        report = analyze(records, two_group_groups(), AnalyzeConfig(test="max"))
        assert report.rows[0].p_value is not None

    def test_bootstrap_deterministic(self):
        rng = np.random.default_rng(8)
        records = [
            ProbeSetRecord(f"ps{i}", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))
            for i in range(3)
        ]
        config = AnalyzeConfig(test="target", bootstrap_B=200, seed=11)
        r1 = analyze(records, two_group_groups(), config)
        r2 = analyze(records, two_group_groups(), config)
        assert r1.to_tsv() == r2.to_tsv()
        assert r1.method == "target_bootstrap"

    def test_report_tsv_shape(self):
        rng = np.random.default_rng(9)
        records = [ProbeSetRecord("ps0", DataMatrix(rng.normal(size=(20, 6)) * 50 + 4000))]
        text = analyze(records, two_group_groups(), AnalyzeConfig()).to_tsv()
        lines = text.strip().splitlines()
        assert lines[0].startswith("# method=target alpha=0.05 bh_family=")
        assert lines[1].split("\t") == list(REPORT_COLUMNS)
        assert len(lines) == 3


class TestEmitScatter:
    def test_shapes_headers_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        dm = DataMatrix(rng.normal(size=(4, 3)) * 30 + 100)
        rec = fit_records([ProbeSetRecord("ps0", dm)])[0]
        groups = GroupSpec(("g1", "g1", "g2", "g2"))
        arrays_path, probes_path = emit_scatter(rec, tmp_path, groups=groups)
        array_lines = arrays_path.read_text().strip().splitlines()
        probe_lines = probes_path.read_text().strip().splitlines()
        assert array_lines[0] == "array_id\tgroup\ttheta1\ttheta2"
        assert probe_lines[0] == "probe_id\tphi1\tphi2"
        assert len(array_lines) == 5 and len(probe_lines) == 4
        theta1 = [float(l.split("\t")[2]) for l in array_lines[1:]]
        theta2 = [float(l.split("\t")[3]) for l in array_lines[1:]]
        assert np.abs(np.array(theta1) - rec.fit.theta1).max() < 1e-12
        assert np.abs(np.array(theta2) - rec.fit.theta2).max() < 1e-12
        phi1 = [float(l.split("\t")[1]) for l in probe_lines[1:]]
        assert np.abs(np.array(phi1) - rec.fit.phi1).max() < 1e-12

    def test_unfitted_rejected(self, tmp_path):
        dm = DataMatrix(np.ones((4, 3)) + np.eye(4, 3))
        with pytest.raises(PreconditionError, match="no fit"):
            emit_scatter(ProbeSetRecord("ps0", dm), tmp_path)


class TestPipelineDeterminism:
    def test_byte_identical_reports(self, tmp_path):
        from corpus import make_corpus

        records, groups, _ = make_corpus(seed=404, n_plain=6, n_structured=6, n_alt=4)
        out = []
        for _ in range(2):
            normed = quantile_normalize(records)
            kept = screen(normed)
            report = analyze(kept, groups, AnalyzeConfig(test="target", seed=1))
            out.append(report.to_tsv())
        assert out[0] == out[1]
