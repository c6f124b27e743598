import numpy as np
import pytest

from pointprops import properties
from pointprops.config import PropertyConfig
from pointprops.model import ModelOutput


def paper_scale_config():
    return PropertyConfig(rad=4, n_min=200, n_max=400, m_p=1.0, m_n=0.2, alpha=1.0)


def sparsity_brute_force(y, rad):
    """O(N^2) pairwise-distance reference for the local sparsity filter."""
    y = np.asarray(y, dtype=bool)
    pts = np.argwhere(y)
    s_loc = np.zeros_like(y)
    for r, c in pts:
        alone = True
        for r2, c2 in pts:
            if (r, c) != (r2, c2) and max(abs(r - r2), abs(c - c2)) <= rad:
                alone = False
                break
        s_loc[r, c] = alone
    return s_loc


class TestLocalSparsity:
    def test_single_point_satisfied(self):
        y = np.zeros((9, 9), dtype=bool)
        y[4, 6] = True
        s_loc, ok = properties.local_sparsity(y, rad=3)
        assert ok
        np.testing.assert_array_equal(s_loc, y)

    def test_two_points_at_exactly_rad_conflict(self):
        y = np.zeros((12, 12), dtype=bool)
        y[2, 2] = True
        y[2, 2 + 4] = True
        s_loc, ok = properties.local_sparsity(y, rad=4)
        assert not ok
        assert not s_loc.any()

    def test_two_points_just_outside_rad(self):
        y = np.zeros((12, 12), dtype=bool)
        y[2, 2] = True
        y[2, 7] = True
        _, ok = properties.local_sparsity(y, rad=4)
        assert ok

    def test_matches_pairwise_brute_force(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            y = rng.random((12, 12)) < 0.12
            s_loc, ok = properties.local_sparsity(y, rad=2)
            ref = sparsity_brute_force(y, rad=2)
            np.testing.assert_array_equal(s_loc, ref & y)
            assert ok == bool(np.array_equal(ref & y, y))


class TestCountSparsity:
    def test_inside_range(self):
        assert properties.count_sparsity(300, paper_scale_config()) == 1

    def test_lower_boundary_excluded(self):
        assert properties.count_sparsity(200, paper_scale_config()) == 0

    def test_just_below_upper_bound(self):
        assert properties.count_sparsity(399, paper_scale_config()) == 1

    def test_upper_boundary_excluded(self):
        assert properties.count_sparsity(400, paper_scale_config()) == 0


class TestRepeatability:
    def test_constant(self):
        assert properties.repeatability([0.5, 0.5, 0.5]) == 0.5

    def test_two_point_mean(self):
        assert properties.repeatability([0.2, 0.8]) == pytest.approx(0.5, abs=1e-15)

    def test_matches_independent_summation(self):
        rng = np.random.default_rng(7)
        draws = rng.uniform(0.01, 0.99, size=10)
        reference = sum(float(v) for v in draws) / 10.0
        assert properties.repeatability(draws) == pytest.approx(reference, abs=1e-15)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(8)
        draws = rng.uniform(0.01, 0.99, size=6)
        base = properties.repeatability(draws)
        for _ in range(20):
            assert properties.repeatability(rng.permutation(draws)) == pytest.approx(
                base, abs=1e-15
            )

    def test_validity_mask(self):
        assert properties.repeatability([0.2, 0.9, 0.8], [True, False, True]) == pytest.approx(
            0.5
        )
        with pytest.raises(ValueError):
            properties.repeatability([0.5], [False])


class TestSimilarity:
    def test_self_similarity(self):
        d = np.array([0.6, 0.8])
        assert properties.similarity(d, d) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert properties.similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_negated(self):
        d = np.array([0.6, 0.8])
        assert properties.similarity(d, -d) == pytest.approx(-1.0, abs=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            properties.similarity([1.0, 1.0], [1.0, 0.0])


def transcribe_margin(i, desc_per_image, m_p, m_n, lam):
    """Independent scalar transcription of the margin formula."""
    j_images = len(desc_per_image)
    n = len(desc_per_image[0])
    total = 0.0
    for j in range(j_images):
        for jp in range(j_images):
            if jp == j:
                continue
            pos = min(m_p, float(np.dot(desc_per_image[j][i], desc_per_image[jp][i])))
            neg = 0.0
            for ip in range(n):
                if ip == i:
                    continue
                neg += max(m_n, float(np.dot(desc_per_image[j][i], desc_per_image[jp][ip])))
            total += pos - lam / n * neg
    return total / (j_images * (j_images - 1))


def grid_scene(desc_fields):
    """Scene stub: identity correspondence, everything valid."""
    h, w = desc_fields[0].shape[:2]
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    j = len(desc_fields)

    class Scene:
        outputs = [ModelOutput(prob_map=np.full((h, w), 0.5), desc_field=f)
                   for f in desc_fields]
        map_rows = np.broadcast_to(rows, (j, h, w))
        map_cols = np.broadcast_to(cols, (j, h, w))
        valid = np.ones((j, h, w), dtype=bool)
        num_views = j

    return Scene()


class TestDiscriminabilityMargin:
    def test_orthogonal_descriptors_paper_constants(self):
        # 300 one-hot descriptors repeated in two views: positive sims 1,
        # every negative sim 0 <= m_n, so
        # h = m_p - neg_weight * m_n * 299 / 300
        cfg = paper_scale_config()
        n = 300
        eye = np.eye(n)
        h = properties.margins(n, [eye, eye], [np.ones(n, bool)] * 2, cfg)
        expected = 1.0 - 0.025 * 0.2 * 299.0 / 300.0
        np.testing.assert_allclose(h, expected, atol=1e-12)
        np.testing.assert_allclose(h, 0.9950166666666667, atol=1e-12)

    def test_identical_descriptors_paper_constants(self):
        # all similarities 1: h = m_p - neg_weight * 299 / 300
        cfg = paper_scale_config()
        n = 300
        same = np.tile(np.eye(1, 5, 0), (n, 1))
        h = properties.margins(n, [same, same], [np.ones(n, bool)] * 2, cfg)
        expected = 1.0 - 0.025 * 299.0 / 300.0
        np.testing.assert_allclose(h, expected, atol=1e-12)
        np.testing.assert_allclose(h, 0.9750833333333334, atol=1e-12)

    def test_matches_scalar_transcription(self):
        def unit(v):
            v = np.asarray(v, dtype=float)
            return v / np.linalg.norm(v)

        image1 = np.array([unit([1, 0, 0]), unit([0, 1, 0])])
        image2 = np.array([unit([1, 1, 0]), unit([0, 1, 1])])
        cfg = PropertyConfig(rad=1, n_min=0, n_max=5, m_p=0.9, m_n=0.1, neg_weight=0.7)
        h = properties.margins(2, [image1, image2], [np.ones(2, bool)] * 2, cfg)
        for i in range(2):
            ref = transcribe_margin(i, [image1, image2], 0.9, 0.1, 0.7)
            assert h[i] == pytest.approx(ref, abs=1e-12)

    def test_point_op_against_field_fixture(self):
        rng = np.random.default_rng(3)
        fields = []
        for _ in range(2):
            f = rng.normal(size=(4, 5, 3))
            f /= np.linalg.norm(f, axis=-1, keepdims=True)
            fields.append(f)
        scene = grid_scene(fields)
        yhat = np.zeros((4, 5), dtype=bool)
        yhat[0, 1] = yhat[2, 3] = yhat[3, 0] = True
        cfg = PropertyConfig(rad=1, n_min=0, n_max=5, m_p=0.9, m_n=-0.2, neg_weight=0.5)
        desc = [f[yhat] for f in fields]
        for idx, point in enumerate(np.argwhere(yhat)):
            direct = properties.discriminability_margin(tuple(point), yhat, scene, cfg)
            ref = transcribe_margin(idx, desc, 0.9, -0.2, 0.5)
            assert direct == pytest.approx(ref, abs=1e-12)

    def test_degenerate_set_rejected(self):
        cfg = paper_scale_config()
        with pytest.raises(ValueError):
            properties.margins(1, [np.eye(1)], [np.ones(1, bool)], cfg)

    def test_margin_bound(self):
        # the implemented normalizer admits at most margin_max + neg_weight*m_n/n
        rng = np.random.default_rng(11)
        cfg = PropertyConfig(rad=1, n_min=0, n_max=40, m_p=0.8, m_n=0.2, neg_weight=0.5)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            fields = []
            for _ in range(3):
                f = rng.normal(size=(n, 4))
                f /= np.linalg.norm(f, axis=-1, keepdims=True)
                fields.append(f)
            h = properties.margins(n, fields, [np.ones(n, bool)] * 3, cfg)
            bound = cfg.margin_max + cfg.neg_weight * cfg.m_n / n
            assert np.all(h <= bound + 1e-12)


class TestDiscriminabilityProb:
    def test_maximum(self):
        cfg = paper_scale_config()
        assert properties.discriminability_prob(cfg.margin_max, cfg) == pytest.approx(1.0)

    def test_unit_drop(self):
        cfg = PropertyConfig(alpha=1.0)
        value = properties.discriminability_prob(cfg.margin_max - 1.0, cfg)
        assert value == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_monotone(self):
        cfg = PropertyConfig(alpha=1.0)
        lo = properties.discriminability_prob(cfg.margin_max - 1.0, cfg)
        mid = properties.discriminability_prob(cfg.margin_max - 0.5, cfg)
        hi = properties.discriminability_prob(cfg.margin_max, cfg)
        assert lo < mid < hi

    def test_log_identity_and_range(self):
        rng = np.random.default_rng(5)
        cfg = PropertyConfig(alpha=1.7)
        h = cfg.margin_max - rng.uniform(0.0, 3.0, size=1000)
        c = properties.discriminability_prob(h, cfg)
        assert np.all((c > 0.0) & (c <= 1.0))
        np.testing.assert_allclose(np.log(c), cfg.alpha * (h - cfg.margin_max), atol=1e-12)


class TestLogLikelihoodItem:
    def test_background_point(self):
        cfg = PropertyConfig()
        value = properties.log_likelihood_item(0.0, 0.5, cfg.margin_max, cfg)
        assert value == pytest.approx(np.log(0.5), abs=1e-15)

    def test_near_zero_maximum(self):
        cfg = PropertyConfig()
        value = properties.log_likelihood_item(1.0, 1.0, cfg.margin_max, cfg)
        assert value == pytest.approx(np.log(1.0 - 1e-7), abs=1e-12)
        assert abs(value) < 1.1e-7

    def test_arithmetic_fixture(self):
        # 0.5*log(0.25) + 0.5*log(0.75) + 0.5*(-0.1), evaluated independently
        cfg = PropertyConfig(alpha=1.0)
        expected = 0.5 * np.log(0.25) + 0.5 * np.log(0.75) + 0.5 * (-0.1)
        value = properties.log_likelihood_item(0.5, 0.25, cfg.margin_max - 0.1, cfg)
        assert value == pytest.approx(expected, abs=1e-15)
        assert value == pytest.approx(-0.8869882167858358, abs=1e-12)

    def test_always_nonpositive(self):
        rng = np.random.default_rng(13)
        cfg = PropertyConfig(alpha=2.0)
        p = rng.uniform(0, 1, size=2000)
        r = rng.uniform(0, 1, size=2000)
        h = cfg.margin_max - rng.uniform(-0.5, 3.0, size=2000)  # includes overshoot
        assert np.all(properties.log_likelihood_item(p, r, h, cfg) <= 0.0)
