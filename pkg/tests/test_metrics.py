import json

import numpy as np
import pytest

from mrisynth.metrics import (
    MetricReport,
    MetricSummary,
    SegMaskPair,
    bootstrap_median_ci,
    dice,
    hd95,
    normalize,
)

from conftest import make_grid


def mask_grid(mask, spacing=(1.0, 1.0, 1.0)):
    return make_grid(np.asarray(mask, dtype=np.float32), spacing=spacing)


def make_pair(p, t, spacing=(1.0, 1.0, 1.0)):
    return SegMaskPair(mask_grid(p, spacing), mask_grid(t, spacing))


def brute_force_dice(p, t):
    p = np.asarray(p, dtype=bool)
    t = np.asarray(t, dtype=bool)
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / total


def brute_force_boundary(mask):
    """Explicit 6-neighbor loop; outside the array counts as background."""
    mask = np.asarray(mask, dtype=bool)
    nx, ny, nz = mask.shape
    out = np.zeros_like(mask)
    steps = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k]:
                    continue
                for di, dj, dk in steps:
                    a, b, c = i + di, j + dj, k + dk
                    inside = 0 <= a < nx and 0 <= b < ny and 0 <= c < nz
                    if not inside or not mask[a, b, c]:
                        out[i, j, k] = True
                        break
    return out


def brute_force_hd95(p, t, spacing=(1.0, 1.0, 1.0), pad_to=256, mode="union"):
    """All-pairs distances between explicitly extracted boundary sets."""
    p = np.asarray(p, dtype=bool)
    t = np.asarray(t, dtype=bool)
    if not p.any() and not t.any():
        return 0.0
    if not p.any() or not t.any():
        return float(pad_to) * float(max(spacing))
    sp = np.asarray(spacing, dtype=np.float64)
    bp = np.argwhere(brute_force_boundary(p)) * sp
    bt = np.argwhere(brute_force_boundary(t)) * sp
    d = np.sqrt(((bp[:, None, :] - bt[None, :, :]) ** 2).sum(axis=-1))
    fwd = d.min(axis=1)
    bwd = d.min(axis=0)
    if mode == "union":
        return float(np.percentile(np.concatenate([fwd, bwd]), 95.0))
    return float(max(np.percentile(fwd, 95.0), np.percentile(bwd, 95.0)))


def random_mask(rng, dims, fill=0.2):
    return (rng.random(dims) < fill).astype(np.float32)


class TestDice:
    def test_identical_masks(self, rng):
        m = random_mask(rng, (12, 12, 12))
        m[3, 3, 3] = 1.0
        assert dice(make_pair(m, m)) == 1.0

    def test_disjoint_masks(self):
        p = np.zeros((8, 8, 8), dtype=np.float32)
        t = np.zeros((8, 8, 8), dtype=np.float32)
        p[:2] = 1.0
        t[6:] = 1.0
        assert dice(make_pair(p, t)) == 0.0

    def test_half_overlap(self):
        # 16 voxels each, 8 shared: 2*8 / 32 = 0.5
        p = np.zeros((8, 8, 8), dtype=np.float32)
        t = np.zeros((8, 8, 8), dtype=np.float32)
        p[0, 0, :8] = 1.0
        p[1, 0, :8] = 1.0
        t[1, 0, :8] = 1.0
        t[2, 0, :8] = 1.0
        assert dice(make_pair(p, t)) == 0.5

    def test_both_empty_is_one(self):
        z = np.zeros((6, 6, 6), dtype=np.float32)
        assert dice(make_pair(z, z)) == 1.0

    def test_symmetry_and_brute_force(self, rng):
        for _ in range(25):
            p = random_mask(rng, (10, 9, 8))
            t = random_mask(rng, (10, 9, 8))
            pair = make_pair(p, t)
            swapped = make_pair(t, p)
            got = dice(pair)
            assert got == dice(swapped)
            assert got == brute_force_dice(p, t)

    def test_not_binary_rejected(self):
        p = np.full((4, 4, 4), 0.3, dtype=np.float32)
        t = np.zeros((4, 4, 4), dtype=np.float32)
        with pytest.raises(ValueError, match="binary"):
            make_pair(p, t)

    def test_geometry_mismatch_rejected(self):
        p = mask_grid(np.zeros((4, 4, 4), dtype=np.float32))
        t = mask_grid(np.zeros((5, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="co-registered"):
            SegMaskPair(p, t)


class TestHd95:
    def test_identical_masks_zero(self, rng):
        m = random_mask(rng, (10, 10, 10))
        m[4, 4, 4] = 1.0
        assert hd95(make_pair(m, m)) == 0.0

    def test_single_voxels_ten_apart(self):
        p = np.zeros((32, 32, 32), dtype=np.float32)
        t = np.zeros((32, 32, 32), dtype=np.float32)
        p[10, 16, 16] = 1.0
        t[20, 16, 16] = 1.0
        assert hd95(make_pair(p, t)) == pytest.approx(10.0, abs=1e-12)

    def test_empty_prediction_scores_padded_extent(self):
        p = np.zeros((16, 16, 16), dtype=np.float32)
        t = np.zeros((16, 16, 16), dtype=np.float32)
        t[8, 8, 8] = 1.0
        assert hd95(make_pair(p, t)) == 256.0
        assert hd95(make_pair(t, p)) == 256.0

    def test_both_empty_is_zero(self):
        z = np.zeros((8, 8, 8), dtype=np.float32)
        assert hd95(make_pair(z, z)) == 0.0

    def test_padded_extent_scales_with_spacing(self):
        p = np.zeros((8, 8, 8), dtype=np.float32)
        t = np.zeros((8, 8, 8), dtype=np.float32)
        t[2, 2, 2] = 1.0
        assert hd95(make_pair(p, t, spacing=(1.0, 1.0, 2.0))) == 512.0

    def test_matches_brute_force(self, rng):
        for _ in range(30):
            dims = tuple(int(rng.integers(5, 13)) for _ in range(3))
            p = random_mask(rng, dims, fill=0.15)
            t = random_mask(rng, dims, fill=0.15)
            got = hd95(make_pair(p, t))
            want = brute_force_hd95(p, t)
            assert got == pytest.approx(want, abs=1e-9)

    def test_matches_brute_force_anisotropic(self, rng):
        spacing = (1.0, 2.0, 3.5)
        for _ in range(10):
            p = random_mask(rng, (8, 8, 8), fill=0.2)
            t = random_mask(rng, (8, 8, 8), fill=0.2)
            got = hd95(make_pair(p, t, spacing=spacing))
            want = brute_force_hd95(p, t, spacing=spacing)
            assert got == pytest.approx(want, abs=1e-9)

    def test_symmetric_under_union(self, rng):
        p = random_mask(rng, (9, 9, 9), fill=0.2)
        t = random_mask(rng, (9, 9, 9), fill=0.2)
        p[4, 4, 4] = 1.0
        t[2, 2, 2] = 1.0
        assert hd95(make_pair(p, t)) == hd95(make_pair(t, p))

    def test_zero_padding_leaves_distances_unchanged(self, rng):
        # the 256-pad convention: padding with background cannot alter
        # boundary sets or their pairwise distances
        p = random_mask(rng, (10, 10, 10), fill=0.25)
        t = random_mask(rng, (10, 10, 10), fill=0.25)
        p[0, 0, 0] = 1.0
        t[9, 9, 9] = 1.0
        small = hd95(make_pair(p, t))
        big_p = np.zeros((40, 40, 40), dtype=np.float32)
        big_t = np.zeros((40, 40, 40), dtype=np.float32)
        big_p[7:17, 12:22, 3:13] = p
        big_t[7:17, 12:22, 3:13] = t
        assert hd95(make_pair(big_p, big_t)) == pytest.approx(small, abs=1e-9)

    def test_directed_max_mode(self, rng):
        for _ in range(10):
            p = random_mask(rng, (8, 8, 8), fill=0.2)
            t = random_mask(rng, (8, 8, 8), fill=0.2)
            p[1, 1, 1] = 1.0
            t[6, 6, 6] = 1.0
            got = hd95(make_pair(p, t), directed="max")
            want = brute_force_hd95(p, t, mode="max")
            assert got == pytest.approx(want, abs=1e-9)

    def test_bad_arguments(self):
        z = np.zeros((4, 4, 4), dtype=np.float32)
        pair = make_pair(z, z)
        with pytest.raises(ValueError, match="directed"):
            hd95(pair, directed="both")
        with pytest.raises(ValueError, match="pad_to"):
            hd95(pair, pad_to=0)


class TestBootstrap:
    def test_all_equal_collapses(self):
        med, lo, hi = bootstrap_median_ci([4.2] * 20, resamples=500, seed=3)
        assert (med, lo, hi) == (4.2, 4.2, 4.2)

    def test_single_value(self):
        med, lo, hi = bootstrap_median_ci([7.0], resamples=100, seed=0)
        assert (med, lo, hi) == (7.0, 7.0, 7.0)

    def test_uniform_cohort_interval(self):
        # 1..1000 cohort: asymptotic width of the 95% percentile interval
        # for the median is 2 * 1.96 / (2 f sqrt(n)) with f = 1/999,
        # about 62; an independent direct bootstrap lands there too
        vals = np.arange(1, 1001, dtype=np.float64)
        med, lo, hi = bootstrap_median_ci(vals, resamples=10_000, level=0.95,
                                          seed=0)
        assert med == 500.5
        assert lo < 500.5 < hi
        assert 50.0 < hi - lo < 72.0

        r = np.random.default_rng(99)
        meds = np.array([
            np.median(r.choice(vals, size=vals.size, replace=True))
            for _ in range(2_000)
        ])
        ind_lo, ind_hi = np.percentile(meds, [2.5, 97.5])
        assert lo == pytest.approx(ind_lo, abs=4.0)
        assert hi == pytest.approx(ind_hi, abs=4.0)

    def test_interval_narrows_with_cohort_size(self):
        base = np.random.default_rng(5).normal(10.0, 2.0, size=2000)
        widths = []
        for n in (40, 200, 1000):
            _, lo, hi = bootstrap_median_ci(base[:n], resamples=4000, seed=11)
            widths.append(hi - lo)
        assert widths[0] > widths[1] > widths[2]

    def test_deterministic_in_seed(self):
        vals = list(range(50))
        a = bootstrap_median_ci(vals, resamples=2000, seed=7)
        b = bootstrap_median_ci(vals, resamples=2000, seed=7)
        c = bootstrap_median_ci(vals, resamples=2000, seed=8)
        assert a == b
        assert a != c

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            bootstrap_median_ci([], resamples=100)
        with pytest.raises(ValueError, match="level"):
            bootstrap_median_ci([1.0], level=1.0)
        with pytest.raises(ValueError, match="resamples"):
            bootstrap_median_ci([1.0], resamples=0)
        with pytest.raises(ValueError, match="finite"):
            bootstrap_median_ci([1.0, np.nan])


class TestNormalize:
    def test_foreground_mean_zero_std_one(self, rng):
        data = np.zeros((20, 20, 20), dtype=np.float32)
        fg = rng.random((20, 20, 20)) < 0.5
        data[fg] = rng.uniform(50.0, 150.0, size=int(fg.sum())).astype(np.float32)
        out = normalize(make_grid(data))
        vals = out.data[fg]
        assert abs(float(vals.mean())) < 1e-5
        assert abs(float(vals.std()) - 1.0) < 1e-4

    def test_affine_input_invariance(self, rng):
        data = rng.uniform(0.1, 1.0, (16, 16, 16)).astype(np.float32)
        a = normalize(make_grid(data))
        b = normalize(make_grid(2.5 * data + 7.0))
        assert np.abs(a.data - b.data).max() < 1e-5

    def test_clipping_tames_outliers(self, rng):
        data = rng.uniform(1.0, 2.0, (16, 16, 16)).astype(np.float32)
        spiked = data.copy()
        spiked[0, 0, 0] = 1e6
        out = normalize(make_grid(spiked))
        assert float(out.data.max()) < 5.0

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            normalize(make_grid(np.full((4, 4, 4), 3.0, dtype=np.float32)))

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            normalize(make_grid(np.zeros((4, 4, 4), dtype=np.float32)))

    def test_unknown_method(self, rng):
        g = make_grid(rng.uniform(0, 1, (4, 4, 4)).astype(np.float32))
        with pytest.raises(ValueError, match="method"):
            normalize(g, method="landmarks")


class TestMetricReport:
    def test_from_cases_and_roundtrip(self):
        report = MetricReport.from_cases(
            ["a", "b", "c", "d"],
            [0.8, 0.85, 0.9, 0.7],
            [4.0, 3.0, 2.5, 8.0],
            resamples=2000, seed=1)
        d = json.loads(report.to_json())
        assert len(d["cases"]) == 4
        assert d["summary"]["dice"]["ci"][0] <= d["summary"]["dice"]["median"]
        assert d["summary"]["hd95_mm"]["median"] <= d["summary"]["hd95_mm"]["ci"][1]

    def test_text_table_layout(self):
        report = MetricReport.from_cases(
            ["x", "y", "z"], [0.5, 0.6, 0.7], [1.0, 2.0, 3.0],
            resamples=500, seed=2)
        text = report.to_text()
        lines = text.splitlines()
        assert lines[0] == "cases: 3"
        assert "median" in lines[2]
        assert "95% CI" in lines[3]
        assert "0.600" in lines[2]
        assert "2.00" in lines[2]

    def test_summary_invariant(self):
        with pytest.raises(ValueError, match="outside CI"):
            MetricSummary(median=1.0, ci_lo=2.0, ci_hi=3.0)

    def test_value_validation(self):
        with pytest.raises(ValueError, match="dice"):
            MetricReport.from_cases(["a"], [1.5], [1.0], resamples=100)
        with pytest.raises(ValueError, match="negative"):
            MetricReport.from_cases(["a"], [0.5], [-1.0], resamples=100)
        with pytest.raises(ValueError, match="lengths"):
            MetricReport(case_ids=("a", "b"), dice=(0.5,), hd95=(1.0, 2.0),
                         dice_summary=MetricSummary(0.5, 0.5, 0.5),
                         hd95_summary=MetricSummary(1.0, 1.0, 1.0))
