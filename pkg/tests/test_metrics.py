"""Metrics, RD reports, ratio diagnostics, comparison tables."""

import numpy as np
import pytest

from hyperslim.config import Config
from hyperslim.metrics import (
    CSV_HEADER,
    RDReport,
    bpp,
    compare_models,
    evaluate_model,
    psnr,
    psnr_from_mse,
    ratio_report,
    read_report_csv,
    write_report_csv,
)
from hyperslim.network import build_hyperprior, count_parameters
from hyperslim.tensor import ShapeError


class TestPsnr:
    def test_zero_db_at_mse_255_squared(self):
        assert psnr_from_mse(255.0 ** 2) == pytest.approx(0.0)

    def test_identical_images_clamp(self):
        x = np.random.default_rng(0).uniform(size=(3, 8, 8))
        assert psnr(x, x.copy()) == 100.0

    def test_unit_mse(self):
        assert psnr_from_mse(1.0) == pytest.approx(48.1308, abs=1e-4)

    def test_monotone_decreasing_in_mse(self):
        values = [psnr_from_mse(m) for m in np.logspace(-3, 4, 40)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestBpp:
    def test_basic(self):
        assert bpp(1000.0, 100, 100) == pytest.approx(0.1)

    def test_zero_bits(self):
        assert bpp(0.0, 10, 10) == 0.0

    def test_additivity(self):
        by, bz = 123.4, 56.7
        assert bpp(by, 8, 8) + bpp(bz, 8, 8) == pytest.approx(bpp(by + bz, 8, 8))

    def test_zero_pixels_rejected(self):
        with pytest.raises(ValueError):
            bpp(1.0, 0, 5)


class TestRDReportCSV:
    def _report(self):
        return RDReport("toy", 31.234567891, 0.4123456789, 0.39, 0.0223456789,
                        283523, 132400)

    def test_round_trip_at_6_decimals(self, tmp_path):
        p = tmp_path / "r.csv"
        write_report_csv([self._report()], p)
        back = read_report_csv(p)[0]
        assert back.model == "toy"
        assert back.psnr_db == pytest.approx(31.234567891, abs=5e-7)
        assert back.params_total == 283523
        # a second round trip is lossless once quantized to the format
        p2 = tmp_path / "r2.csv"
        write_report_csv([back], p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_header(self, tmp_path):
        p = tmp_path / "h.csv"
        write_report_csv([], p)
        assert p.read_text().splitlines()[0] == CSV_HEADER

    def test_missing_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("nope\n")
        with pytest.raises(ValueError):
            read_report_csv(p)


class TestEvaluateModel:
    def test_bpp_split_sums(self):
        net = build_hyperprior(Config(N=4, M=6, seed=0))
        imgs = [np.random.default_rng(k).uniform(size=(3, 64, 64)) for k in range(2)]
        rep = evaluate_model(net, imgs, "tiny")
        assert rep.bpp_total == pytest.approx(rep.bpp_y + rep.bpp_z, abs=1e-12)
        assert rep.params_total == count_parameters(net, "total")

    def test_padding_path(self):
        net = build_hyperprior(Config(N=4, M=6, seed=0))
        img = np.random.default_rng(5).uniform(size=(3, 70, 90))
        rep = evaluate_model(net, [img], "padded")
        assert np.isfinite(rep.psnr_db)
        assert rep.bpp_total > 0


class TestRatioReport:
    def test_param_ratio_matches_counter(self):
        net = build_hyperprior(Config(N=8, M=8, seed=1))
        rr = ratio_report(net)
        expected = count_parameters(net, "hyper-path") / count_parameters(net, "total")
        assert rr["hyper_param_ratio"] == pytest.approx(expected, rel=1e-12)

    def test_with_eval_set(self):
        net = build_hyperprior(Config(N=4, M=6, seed=2))
        imgs = [np.random.default_rng(9).uniform(size=(3, 64, 64))]
        rr = ratio_report(net, imgs)
        assert 0 <= rr["z_rate_ratio"] <= 1


class TestCompareModels:
    def _reports(self):
        base = RDReport("origin", 30.0, 0.50, 0.48, 0.02, 11582275, 4793600)
        pruned = RDReport("pruned", 30.0, 0.49, 0.475, 0.015, 7748000, 960000)
        return [base, pruned]

    def test_self_comparison_zero_deltas(self):
        base = self._reports()[0]
        csv_text, _ = compare_models([base, base])
        row = csv_text.splitlines()[2].split(",")
        assert float(row[4]) == 0.0 and float(row[5]) == 0.0

    def test_param_drop_rendered_with_arrow(self):
        csv_text, text = compare_models(self._reports())
        assert "7.748M/11.582M(33.1%↓)" in csv_text
        assert "33.1%↓" in text

    def test_aggregates_match_recomputation(self):
        reports = self._reports()
        csv_text, _ = compare_models(reports)
        lines = csv_text.splitlines()[1:]
        for rep, line in zip(reports, lines):
            cells = line.split(",")
            assert float(cells[1]) == pytest.approx(rep.psnr_db, abs=5e-7)
            assert float(cells[2]) == pytest.approx(rep.bpp_total, abs=5e-7)
            assert float(cells[4]) == pytest.approx(rep.psnr_db - reports[0].psnr_db, abs=1e-9)
            assert float(cells[5]) == pytest.approx(rep.bpp_total - reports[0].bpp_total, abs=1e-9)

    def test_needs_two_reports(self):
        with pytest.raises(ValueError):
            compare_models([self._reports()[0]])
