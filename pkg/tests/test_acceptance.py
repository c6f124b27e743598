"""Acceptance suite: one test per criterion, printing a pass/fail line each.

Criterion 6 runs a real training loop and dominates the runtime; everything
else is sub-minute. Tolerances are pinned here and nowhere else.
"""

import math
import time

import numpy as np
import pytest

from conftest import shape_scenes
from pointprops import checks, cli, em, evaluate, model, oracle, simulate
from pointprops.config import PropertyConfig, TrainConfig


def report(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line)
    assert passed, line


class TestCriterion1Counts:
    def test_counts_equal_bigint_enumeration(self):
        """Closed-form space counts match big-integer sums exactly, m <= 60."""
        start = time.perf_counter()
        rng = np.random.default_rng(11)
        bounds = [(int(lo), int(lo + step)) for lo, step in
                  zip(rng.integers(0, 40, size=20), rng.integers(2, 30, size=20))]
        mismatches = 0
        compared = 0
        for m in range(1, 61):
            for n_min, n_max in bounds:
                lo, hi = n_min + 1, min(n_max - 1, m)
                if lo > hi:
                    with pytest.raises(em.EmptySampleSpaceError):
                        em.log_count_sample_space(m, n_min, n_max)
                    continue
                total = sum(checks._comb_product(m, n) for n in range(lo, hi + 1))
                with_point = sum(checks._comb_product(m - 1, n - 1)
                                 for n in range(lo, hi + 1))
                counts = em.log_count_sample_space(m, n_min, n_max)
                expected = (total, with_point, total - with_point)
                mismatches += tuple(counts.exact) != expected
                mismatches += counts.log_total != math.log(total)
                compared += 1
        elapsed = time.perf_counter() - start
        report("1 (count oracle equivalence)",
               mismatches == 0 and elapsed < 5.0,
               f"{compared} cases, {mismatches} mismatches, {elapsed:.2f}s")


class TestCriterion2Posterior:
    def test_posterior_deviation_budget(self):
        """Closed-form posterior vs enumeration on 50 random tiny instances."""
        start = time.perf_counter()
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(50):
            approx, exact = checks.posterior_pair(checks.random_tiny_instance(rng))
            worst = max(worst, float(np.max(np.abs(approx - exact))))
        # balanced equal-rate instances: the averaging factor is exactly 1
        worst_sym = 0.0
        for _ in range(20):
            n = int(rng.integers(4, 13))
            c = float(rng.uniform(0.3, 1.0))
            inst = oracle.TinyInstance(
                r=np.full(n, 1.0 / (1.0 + c)), n_min=1, n_max=n + 2,
                c_tilde=np.full(n, c),
            )
            approx, exact = checks.posterior_pair(inst)
            worst_sym = max(worst_sym, float(np.max(np.abs(approx - exact))))
        elapsed = time.perf_counter() - start
        report("2 (posterior oracle equivalence)",
               worst <= 0.05 and worst_sym <= 1e-12 and elapsed < 30.0,
               f"max dev {worst:.4f} (<=0.05), balanced dev {worst_sym:.2e} "
               f"(<=1e-12), {elapsed:.1f}s")


class TestCriterion3Gradients:
    def test_gradient_fidelity(self):
        start = time.perf_counter()
        results = [
            checks.check_model_gradients(),
            checks.check_detector_chain(),
            checks.check_descriptor_chain(),
        ]
        elapsed = time.perf_counter() - start
        worst = max(r.deviation for r in results)
        report("3 (gradient fidelity)",
               all(r.passed for r in results) and elapsed < 60.0,
               f"worst rel err {worst:.2e} (<=1e-4), {elapsed:.1f}s")


class TestCriterion4Formulas:
    def test_margin_transcription_and_count_boundaries(self):
        from test_properties import transcribe_margin

        rng = np.random.default_rng(13)
        worst = 0.0
        for _ in range(25):
            n = int(rng.integers(2, 9))
            j_images = int(rng.integers(2, 5))
            fields = []
            for _ in range(j_images):
                f = rng.normal(size=(n, 5))
                f /= np.linalg.norm(f, axis=1, keepdims=True)
                fields.append(f)
            m_p = float(rng.uniform(0.3, 1.0))
            m_n = float(rng.uniform(-0.5, m_p - 0.1))
            lam = float(rng.uniform(0.0, 1.0))
            cfg = PropertyConfig(rad=1, n_min=0, n_max=max(n + 1, 2), m_p=m_p, m_n=m_n,
                                 neg_weight=lam)
            h = properties_margins(n, fields, cfg)
            for i in range(n):
                ref = transcribe_margin(i, fields, m_p, m_n, lam)
                worst = max(worst, abs(h[i] - ref))
        boundary_ok = True
        cfg = PropertyConfig(rad=4, n_min=200, n_max=400)
        from pointprops import properties
        boundary_ok &= properties.count_sparsity(200, cfg) == 0
        boundary_ok &= properties.count_sparsity(400, cfg) == 0
        boundary_ok &= properties.count_sparsity(201, cfg) == 1
        boundary_ok &= properties.count_sparsity(399, cfg) == 1
        report("4 (formula transcription)",
               worst <= 1e-12 and boundary_ok,
               f"max transcription dev {worst:.2e} (<=1e-12), boundaries exact")


def properties_margins(n, fields, cfg):
    from pointprops import properties

    valid = [np.ones(n, dtype=bool)] * len(fields)
    return properties.margins(n, fields, valid, cfg)


class TestCriterion5Homography:
    def test_noiseless_and_outlier_recovery(self):
        h_true = np.array([
            [0.95, 0.08, 3.0],
            [-0.06, 1.04, -2.0],
            [1.5e-4, -2.0e-4, 1.0],
        ])

        def apply_h(h, pts):
            mapped = np.hstack([pts, np.ones((len(pts), 1))]) @ h.T
            return mapped[:, :2] / mapped[:, 2:3]

        rng = np.random.default_rng(14)
        src = rng.uniform(0, 48, size=(12, 2))
        a = evaluate.PointSet(src, np.ones(12), np.eye(12))
        b = evaluate.PointSet(apply_h(h_true, src), np.ones(12), np.eye(12))
        matches = evaluate.MatchSet(np.arange(12), np.arange(12), np.ones(12))
        est = evaluate.estimate_homography(matches, a, b, seed=0)
        noiseless_err, _ = evaluate.homography_error(est, h_true, (48, 48))

        successes = 0
        for seed in range(100):
            t_rng = np.random.default_rng(2000 + seed)
            src_in = t_rng.uniform(0, 48, size=(20, 2))
            src = np.vstack([src_in, t_rng.uniform(0, 48, size=(20, 2))])
            dst = np.vstack([apply_h(h_true, src_in), t_rng.uniform(0, 48, size=(20, 2))])
            a = evaluate.PointSet(src, np.ones(40), np.eye(40))
            b = evaluate.PointSet(dst, np.ones(40), np.eye(40))
            matches = evaluate.MatchSet(np.arange(40), np.arange(40), np.ones(40))
            est = evaluate.estimate_homography(matches, a, b, seed=seed)
            err, _ = evaluate.homography_error(est, h_true, (48, 48))
            successes += err < 0.5
        report("5 (homography pipeline)",
               noiseless_err < 1e-6 and successes >= 95,
               f"noiseless corner err {noiseless_err:.2e} (<1e-6), "
               f"outlier trials {successes}/100 (>=95)")


class TestCriterion7Determinism:
    def test_checkpoints_and_metrics_reproduce(self, tmp_path):
        from pointprops import image_io

        scenes_dir = tmp_path / "scenes"
        scenes_dir.mkdir()
        for i, img in enumerate(shape_scenes(21, 3, size=24)):
            image_io.write_pnm(scenes_dir / f"s{i}.pgm", img)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "[train]\niterations = 2\nbatch_scenes = 2\ntransforms_per_scene = 2\n"
            "descriptor_dim = 4\nimage_height = 24\nimage_width = 24\nseed = 3\n"
            "[properties]\nrad = 2\nn_min = 1\nn_max = 12\nm_p = 0.9\nm_n = 0.1\n"
            "[eval]\nmax_points = 20\nransac_iters = 200\n"
        )
        checkpoints, metrics = [], []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert cli.main(["train", "--config", str(cfg), "--images",
                             str(scenes_dir), "--output", str(out)]) == 0
            assert cli.main(["eval", "--config", str(cfg),
                             "--checkpoint", str(out / "model.ckpt"),
                             "--images", str(scenes_dir), "--output",
                             str(out / "eval")]) == 0
            checkpoints.append((out / "model.ckpt").read_bytes())
            metrics.append((out / "eval" / "metrics.csv").read_bytes())
        report("7 (determinism)",
               checkpoints[0] == checkpoints[1] and metrics[0] == metrics[1],
               "checkpoints and metrics CSVs byte-identical across two runs")


class TestCriterion8Invariants:
    def test_randomized_invariant_battery(self):
        from pointprops import properties

        rng = np.random.default_rng(15)
        cases = {}

        # descriptor unit norm: every pixel of several forward passes
        params = model.init_params(5, 6)
        norm_checked = 0
        for _ in range(4):
            out = model.forward(params, rng.random((16, 20)))
            norms = np.linalg.norm(out.desc_field, axis=-1)
            assert np.all(np.abs(norms - 1.0) <= 1e-6)
            assert np.all((out.prob_map > 0) & (out.prob_map < 1))
            norm_checked += norms.size
        cases["unit-norm"] = norm_checked

        # NMS spacing of candidate masks and extracted points
        nms_checked = 0
        for _ in range(500):
            rad = int(rng.integers(1, 4))
            yhat = em.select_local_maxima(rng.random((16, 16)), rad)
            _, ok = properties.local_sparsity(yhat, rad)
            assert ok
            nms_checked += 1
        for _ in range(500):
            out = model.ModelOutput(
                prob_map=rng.random((14, 14)) * 0.98 + 0.01,
                desc_field=np.ones((14, 14, 2)) / np.sqrt(2),
            )
            pts = evaluate.extract_points(out, 0.5, 2, 10)
            for i in range(len(pts)):
                for j in range(i + 1, len(pts)):
                    assert np.max(np.abs(pts.xy[i] - pts.xy[j])) > 2
            nms_checked += 1
        cases["nms-spacing"] = nms_checked

        # posterior support: p = 0 off the candidate mask, p in [0, 1]
        post_checked = 0
        while post_checked < 1000:
            m = int(rng.integers(2, 40))
            n_min = int(rng.integers(0, 6))
            n_max = n_min + int(rng.integers(2, 20))
            try:
                counts = em.log_count_sample_space(m, n_min, n_max)
            except em.EmptySampleSpaceError:
                continue
            yhat = rng.random(8) < 0.6
            p = em.approximate_posterior(rng.uniform(0.01, 0.99, 8),
                                         rng.uniform(0.05, 1.0, 8), counts, yhat)
            assert np.all(p[~yhat] == 0.0)
            assert np.all((p >= 0.0) & (p <= 1.0))
            post_checked += 1
        cases["posterior-support"] = post_checked

        # count split identity
        split_checked = 0
        while split_checked < 1000:
            m = int(rng.integers(1, 200))
            n_min = int(rng.integers(0, 80))
            n_max = n_min + int(rng.integers(2, 80))
            try:
                counts = em.log_count_sample_space(m, n_min, n_max)
            except em.EmptySampleSpaceError:
                continue
            split = np.exp(counts.log_with_point - counts.log_total) + np.exp(
                counts.log_without_point - counts.log_total
            )
            assert abs(split - 1.0) <= 1e-9
            split_checked += 1
        cases["count-identity"] = split_checked

        # photometric range preservation
        photo_checked = 0
        for _ in range(1000):
            img = rng.random((8, 8, 3))
            spec = simulate.sample_photometric(rng, "illum_full")
            out = simulate.apply_photometric(img, spec)
            assert out.min() >= 0.0 and out.max() <= 1.0
            photo_checked += 1
        cases["photometric-range"] = photo_checked

        # homography round trips
        homo_checked = 0
        pts = rng.uniform(5, 35, size=(25, 2))
        for _ in range(1000):
            h = simulate.sample_homography(rng, 60.0, 0.12, size=(40, 40))
            fwd, _ = simulate.map_points(pts, h, (10_000, 10_000))
            back, _ = simulate.map_points(fwd, np.linalg.inv(h), (10_000, 10_000))
            assert np.max(np.abs(back - pts)) <= 1e-8
            homo_checked += 1
        cases["homography-roundtrip"] = homo_checked

        enough = all(v >= 1000 for v in cases.values())
        report("8 (invariant suite)", enough,
               ", ".join(f"{k}:{v}" for k, v in cases.items()))
