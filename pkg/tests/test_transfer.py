import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from langxfer.fixtures import reference_curves, reference_dt_mib
from langxfer.transfer import (PerplexityCurve, TransferEstimate, convert_units,
                               data_transfer, interp_effective, load_curve,
                               prune_non_monotone, save_curve)

# dispersion values (MB) the reference curves must reproduce at the 6 MB rung
EXPECTED_DT_MB = {
    ("en", "es"): 127.0209, ("ru", "es"): 71.18048, ("zh", "es"): 52.71371,
    ("en", "ar"): 105.931, ("ru", "ar"): 103.8057, ("zh", "ar"): 95.03516,
    ("en", "ja"): 49.80689, ("ru", "ja"): 50.13154, ("zh", "ja"): 72.85078,
}


@pytest.fixture(scope="module")
def curves():
    by_key = {}
    for c in reference_curves():
        by_key[(c.target, c.init)] = c
    return by_key


class TestPerplexityCurve:
    def test_sizes_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            PerplexityCurve("x", "scratch", [2e6, 1e6], [3.0, 2.0])

    def test_positive_perplexities(self):
        with pytest.raises(ValueError, match="positive"):
            PerplexityCurve("x", "scratch", [1e6, 2e6], [3.0, -1.0])

    def test_csv_roundtrip(self, tmp_path, curves):
        curve = curves[("es", "en")]
        path = tmp_path / "c.csv"
        save_curve(curve, path)
        loaded = load_curve(path)
        assert loaded.target == "es" and loaded.init == "en"
        assert np.array_equal(loaded.sizes, curve.sizes)
        assert np.array_equal(loaded.perplexities, curve.perplexities)


class TestPruning:
    def test_upturned_tail_is_pruned(self, curves):
        pruned, dropped = prune_non_monotone(curves[("es", "scratch")])
        assert len(pruned) == 5
        assert dropped == [(6e9, 2.668534)]

    def test_monotone_curve_untouched(self, curves):
        pruned, dropped = prune_non_monotone(curves[("ar", "scratch")])
        assert len(pruned) == 6 and dropped == []


class TestInterpEffective:
    def test_knot_query_returns_own_size(self, curves):
        scratch = curves[("es", "scratch")]
        d_e, clamped = interp_effective(9.372363, scratch)
        assert d_e == pytest.approx(19_000_000)
        assert not clamped

    def test_published_interpolation(self, curves):
        d_e, clamped = interp_effective(3.163111, curves[("es", "scratch")])
        assert d_e == pytest.approx(133_020_851, rel=1e-3)
        assert not clamped

    def test_clamping_above_range(self, curves):
        d_e, clamped = interp_effective(100.0, curves[("es", "scratch")])
        assert clamped and d_e == 6_000_000

    def test_clamping_below_range(self, curves):
        d_e, clamped = interp_effective(1.01, curves[("es", "scratch")])
        assert clamped and d_e == 600_000_000  # pruned tail: largest usable size

    def test_needs_two_points(self):
        tiny = PerplexityCurve("x", "scratch", [1e6], [5.0])
        with pytest.raises(ValueError, match="fewer than 2"):
            interp_effective(4.0, tiny)

    def test_monotone_in_query(self, curves):
        scratch = curves[("ja", "scratch")]
        queries = np.linspace(2.4, 12.0, 25)
        sizes = [interp_effective(q, scratch)[0] for q in queries]
        assert all(a >= b for a, b in zip(sizes, sizes[1:]))


class TestDataTransfer:
    def test_reproduces_published_values(self, curves):
        mib_matrix = reference_dt_mib()
        for (source, target), expected_mb in EXPECTED_DT_MB.items():
            est = data_transfer(curves[(target, "scratch")], curves[(target, source)])
            dt_bytes = est.smallest_rung["dt_bytes"]
            assert convert_units(dt_bytes, "MB") == pytest.approx(expected_mb, rel=1e-3)
            assert convert_units(dt_bytes, "MiB") == pytest.approx(
                mib_matrix[(source, target)], abs=0.15)

    def test_self_transfer_is_zero(self, curves):
        scratch = curves[("ar", "scratch")]
        mirrored = PerplexityCurve("ar", "ar", scratch.sizes, scratch.perplexities)
        est = data_transfer(scratch, mirrored)
        for rung in est.rungs:
            assert rung["dt_bytes"] == pytest.approx(0.0, abs=1e-6)

    def test_eq2_identity_exact(self, curves):
        est = data_transfer(curves[("ja", "scratch")], curves[("ja", "zh")])
        for rung in est.rungs:
            assert rung["dt_bytes"] == rung["de_bytes"] - rung["size_bytes"]

    def test_negative_transfer_flagged_not_clamped(self):
        scratch = PerplexityCurve("x", "scratch", [1e6, 2e6, 4e6], [10.0, 6.0, 3.0])
        worse = PerplexityCurve("x", "src", [2e6], [8.0])  # worse than scratch at 2e6
        est = data_transfer(scratch, worse)
        rung = est.rungs[0]
        assert rung["dt_bytes"] < 0
        assert rung["negative"]

    def test_target_mismatch_rejected(self, curves):
        with pytest.raises(ValueError, match="differ"):
            data_transfer(curves[("es", "scratch")], curves[("ar", "en")])

    def test_json_roundtrip(self, tmp_path, curves):
        est = data_transfer(curves[("es", "scratch")], curves[("es", "ru")])
        path = tmp_path / "est.json"
        est.to_json(path)
        again = TransferEstimate.from_json(path)
        assert again.source == "ru" and again.target == "es"
        assert again.rungs == est.rungs

    @given(st.floats(0.001, 1000.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_equivariance(self, k):
        scratch = PerplexityCurve("x", "scratch", np.array([1e6, 3e6, 9e6]),
                                  np.array([9.0, 5.0, 2.0]))
        fine = PerplexityCurve("x", "s", np.array([1e6, 3e6]), np.array([6.0, 3.0]))
        base = data_transfer(scratch, fine)
        scaled = data_transfer(
            PerplexityCurve("x", "scratch", scratch.sizes * k, scratch.perplexities),
            PerplexityCurve("x", "s", fine.sizes * k, fine.perplexities))
        for r_base, r_scaled in zip(base.rungs, scaled.rungs):
            assert r_scaled["dt_bytes"] == pytest.approx(r_base["dt_bytes"] * k,
                                                         rel=1e-9)
            assert r_scaled["de_bytes"] == pytest.approx(r_base["de_bytes"] * k,
                                                         rel=1e-9)


class TestConvertUnits:
    def test_published_conversions(self):
        assert convert_units(127_020_851, "MiB") == pytest.approx(121.14, abs=0.005)
        assert convert_units(127_020_851, "MB") == pytest.approx(127.02, abs=0.005)

    def test_zero(self):
        assert convert_units(0, "MB") == 0.0
        assert convert_units(0, "MiB") == 0.0

    def test_unknown_unit(self):
        with pytest.raises(ValueError, match="unknown unit"):
            convert_units(1, "GB")
