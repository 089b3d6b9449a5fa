import csv
import io
from fractions import Fraction

import numpy as np
import pytest

from fetr.attention import DCAParams, cca_pass, count_ops, criss_cross_mask
from fetr.bench import CSV_COLUMNS, MAX_DENSE_POSITIONS, nonlocal_forward, reports_to_csv, run_bench
from fetr.errors import ContractError, ResourceError
from fetr.tensor import Tensor


def params(c, seed=0, dtype=np.float64):
    return DCAParams.create(c, np.random.default_rng(seed), dtype)


class TestNonlocal:
    def test_singleton_is_value_plus_residual(self, rng):
        p = params(8)
        r = rng.standard_normal((2, 8, 1, 1))
        np.testing.assert_allclose(nonlocal_forward(r, p).data, p.v_proj(Tensor(r)).data + r, atol=1e-13)

    def test_dense_score_count(self, rng):
        with count_ops() as c:
            nonlocal_forward(rng.standard_normal((3, 8, 8, 8)), params(8))
        assert c.scores == 3 * 4096

    def test_masked_matches_criss_cross(self, rng):
        p = params(16, seed=5)
        r = Tensor(rng.standard_normal((2, 16, 5, 7)))
        masked = nonlocal_forward(r, p, mask=criss_cross_mask(5, 7)).data
        np.testing.assert_allclose(masked, cca_pass(r, p).data, rtol=0, atol=1e-8)

    def test_guard(self):
        side = int(np.sqrt(MAX_DENSE_POSITIONS)) + 1
        with pytest.raises(ResourceError, match="guard"):
            nonlocal_forward(np.zeros((1, 8, side, side)), params(8))


class TestCounters:
    def test_four_by_four(self, rng):
        r = Tensor(rng.standard_normal((1, 8, 4, 4)))
        p = params(8)
        with count_ops() as cc:
            cca_pass(r, p)
        with count_ops() as nl:
            nonlocal_forward(r, p)
        assert cc.scores / 16 == 7 and nl.scores / 16 == 16
        assert Fraction(cc.scores, nl.scores) == Fraction(7, 16)

    @pytest.mark.parametrize("b,h,w,c", [(1, 3, 5, 16), (2, 6, 4, 8), (3, 1, 7, 24)])
    def test_closed_forms(self, rng, b, h, w, c):
        p = params(c)
        cq = DCAParams.reduced_channels(c)
        with count_ops() as cc:
            cca_pass(Tensor(rng.standard_normal((b, c, h, w))), p)
        assert cc.scores == b * h * w * (h + w - 1)
        assert cc.score_macs == cq * (h + w - 1) * h * w * b
        assert cc.aggregate_macs == c * (h + w - 1) * h * w * b

    def test_counters_are_scoped(self, rng):
        r = Tensor(rng.standard_normal((1, 8, 3, 3)))
        with count_ops() as outer:
            cca_pass(r, params(8))
            with count_ops() as inner:
                cca_pass(r, params(8))
        assert outer.scores == inner.scores == 9 * 5
        with count_ops() as fresh:
            pass
        assert fresh.scores == 0


class TestRunBench:
    def test_report_fields(self):
        (rep,) = run_bench([6], channels=16, repeats=3)
        assert (rep.H, rep.W, rep.C, rep.Cprime) == (6, 6, 16, 2)
        assert rep.cc_scores == 36 * 11 and rep.nl_scores == 36**2
        assert rep.cc_macs == 2 * 11 * 36 and rep.nl_macs == 2 * 36**2
        assert rep.cc_ms > 0 and rep.nl_ms > 0

    def test_ratio_64(self):
        assert Fraction(64 * 64 * 127, 4096**2) == Fraction(127, 4096)
        assert 127 / 4096 == pytest.approx(0.031, abs=5e-4)

    def test_repeats_floor(self):
        with pytest.raises(ContractError):
            run_bench([4], repeats=2)

    def test_csv(self):
        text = reports_to_csv(run_bench([4, 5], channels=8, repeats=3))
        rows = list(csv.reader(io.StringIO(text)))
        assert tuple(rows[0]) == CSV_COLUMNS == ("H", "W", "C", "Cprime", "cc_scores", "nl_scores", "cc_macs", "nl_macs", "cc_ms", "nl_ms")
        assert [r[0] for r in rows[1:]] == ["4", "5"]
        assert int(rows[1][4]) == 16 * 7
