"""Self-contained validation suite: counting, posterior, expectation and
gradient checks at fixed seeds, each reporting a numeric deviation.

Driven by the ``oracle-check`` command; also reused by the test suite. The
``corrupt_counts`` hook deliberately breaks the counting path so the harness
itself can be shown to catch regressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import em, model, oracle, properties, simulate
from .config import PropertyConfig


@dataclass
class CheckResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance


def _comb_product(m: int, n: int) -> int:
    """Binomial coefficient by the iterative product rule (independent route)."""
    if n < 0 or n > m:
        return 0
    n = min(n, m - n)
    num, den = 1, 1
    for i in range(1, n + 1):
        num *= m - n + i
        den *= i
    return num // den


def _counts(m, n_min, n_max, method="auto", corrupt=False) -> em.SpaceCounts:
    counts = em.log_count_sample_space(m, n_min, n_max, method=method)
    if corrupt:
        return em.SpaceCounts(
            counts.log_total + 0.05,
            counts.log_with_point,
            counts.log_without_point,
            None,
        )
    return counts


# ---------------------------------------------------------------------------
# counting checks
# ---------------------------------------------------------------------------


def check_counts_vs_enumeration(corrupt=False) -> CheckResult:
    """Closed-form counts equal literal subset enumeration (small supports)."""
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        m = int(rng.integers(2, 15))
        n_min = int(rng.integers(0, m))
        n_max = n_min + int(rng.integers(2, 8))
        inst = oracle.TinyInstance(
            r=np.full(m, 0.5), n_min=n_min, n_max=n_max, c_tilde=np.ones(m)
        )
        space = oracle.enumerate_reduced_space(inst, np.ones(m, dtype=bool))
        try:
            counts = _counts(m, n_min, n_max, corrupt=corrupt)
        except em.EmptySampleSpaceError:
            worst = max(worst, float(len(space) != 0))
            continue
        with_point = sum(1 for mask in space if mask[0])
        enum = (len(space), with_point, len(space) - with_point)
        worst = max(worst, float(counts.exact is None or tuple(counts.exact) != enum))
        if counts.exact is not None:
            worst = max(worst, abs(counts.log_total - math.log(len(space))))
    return CheckResult("counts-vs-enumeration", worst, 0.0)


def check_counts_bigint(corrupt=False) -> CheckResult:
    """Counts for every m <= 60 equal independent big-integer binomial sums."""
    rng = np.random.default_rng(102)
    bounds = [(int(lo), int(lo) + int(step)) for lo, step in
              zip(rng.integers(0, 40, size=20), rng.integers(2, 30, size=20))]
    worst = 0.0
    for m in range(1, 61):
        for n_min, n_max in bounds:
            lo, hi = n_min + 1, min(n_max - 1, m)
            if lo > hi:
                continue
            total = sum(_comb_product(m, n) for n in range(lo, hi + 1))
            with_point = sum(_comb_product(m - 1, n - 1) for n in range(lo, hi + 1))
            counts = _counts(m, n_min, n_max, corrupt=corrupt)
            expected = (total, with_point, total - with_point)
            mismatch = counts.exact is None or tuple(counts.exact) != expected
            worst = max(worst, float(mismatch),
                        abs(counts.log_total - math.log(total)))
    return CheckResult("counts-bigint-exact", worst, 0.0)


def check_count_split_identity(corrupt=False) -> CheckResult:
    """exp(logW1) + exp(logW0) equals exp(logTotal) to 1e-9 relative."""
    worst = 0.0
    for m, n_min, n_max in [(40, 5, 20), (60, 10, 40), (300, 40, 120), (2000, 200, 400)]:
        counts = _counts(m, n_min, n_max, corrupt=corrupt)
        s = np.exp(counts.log_with_point - counts.log_total) + np.exp(
            counts.log_without_point - counts.log_total
        )
        worst = max(worst, abs(s - 1.0))
    return CheckResult("count-split-identity", worst, 1e-9)


def check_gammaln_matches_exact(corrupt=False) -> CheckResult:
    """Log-gamma counting agrees with big integers near the method switch."""
    worst = 0.0
    for m in range(30, 61, 5):
        for n_min, n_max in [(4, 12), (10, 25), (0, m + 1)]:
            a = _counts(m, n_min, n_max, method="exact", corrupt=corrupt)
            b = _counts(m, n_min, n_max, method="gammaln")
            for x, y in [
                (a.log_total, b.log_total),
                (a.log_with_point, b.log_with_point),
                (a.log_without_point, b.log_without_point),
            ]:
                if np.isinf(x) and np.isinf(y):
                    continue
                worst = max(worst, abs(x - y) / max(abs(x), 1.0))
    return CheckResult("gammaln-vs-exact", worst, 1e-9)


# ---------------------------------------------------------------------------
# posterior and expectation checks
# ---------------------------------------------------------------------------


def random_tiny_instance(rng, n_points=None) -> oracle.TinyInstance:
    """Random instance from the regime where the closed-form posterior is trusted.

    The averaging approximation behind the closed form is asymptotic in the
    candidate count: on tiny instances it stays within the 0.05 budget only
    for moderate heterogeneity and a count window at least 6 wide (measured
    worst case 0.048 over 600 instances; single-count windows with spread-out
    rates deviate by up to ~0.3 and are excluded here, mirroring the wide
    operating window of real training).
    """
    n = int(rng.integers(8, 13)) if n_points is None else n_points
    n_min = int(rng.integers(0, 3))
    n_max = n_min + 6 + int(rng.integers(0, max(n - n_min - 5, 1)))
    return oracle.TinyInstance(
        r=rng.uniform(0.4, 0.6, size=n),
        n_min=n_min,
        n_max=n_max,
        c_tilde=np.exp(rng.uniform(-0.25, 0.0, size=n)),
    )


def posterior_pair(inst: oracle.TinyInstance):
    """(approximate, exact) posterior vectors over the all-ones candidate mask."""
    n = inst.num_points
    yhat = np.ones(n, dtype=bool)
    counts = em.log_count_sample_space(n, inst.n_min, inst.n_max)
    approx = em.approximate_posterior(inst.r, inst.c_tilde, counts, yhat)
    exact = oracle.exact_posterior(inst, oracle.enumerate_reduced_space(inst, yhat))
    return approx, exact


def check_posterior_tiny() -> CheckResult:
    """Closed-form posterior within 0.05 of enumeration on 50 random instances."""
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(50):
        approx, exact = posterior_pair(random_tiny_instance(rng))
        worst = max(worst, float(np.max(np.abs(approx - exact))))
    return CheckResult("posterior-tiny-deviation", worst, 0.05)


def check_posterior_symmetric() -> CheckResult:
    """Uniform-weight instances are recovered exactly.

    The averaging factor equals 1 exactly when every feasible mask has the
    same probability, i.e. all points share one c and r = 1 / (1 + c) so
    selected and unselected states carry equal weight. (Merely equal rates
    do not suffice: two symmetric singletons with r = 0.9 give an exact
    marginal of 0.5 but a closed form of 0.9, because the with/without
    averages run over different count shells.)
    """
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(4, 13))
        n_min = int(rng.integers(0, n - 1))
        n_max = n_min + int(rng.integers(2, n + 4))
        c = float(rng.uniform(0.3, 1.0))
        inst = oracle.TinyInstance(
            r=np.full(n, 1.0 / (1.0 + c)),
            n_min=n_min,
            n_max=n_max,
            c_tilde=np.full(n, c),
        )
        try:
            approx, exact = posterior_pair(inst)
        except em.EmptySampleSpaceError:
            continue
        worst = max(worst, float(np.max(np.abs(approx - exact))))
    return CheckResult("posterior-symmetric-exact", worst, 1e-12)


def check_expectation_identities() -> CheckResult:
    """Expectation oracle: constant-c closed form and summation reordering."""
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(10):
        inst = random_tiny_instance(rng, n_points=8)
        inst = oracle.TinyInstance(
            r=inst.r, n_min=inst.n_min, n_max=inst.n_max, c_tilde=np.ones(8)
        )
        yhat = np.ones(8, dtype=bool)
        space = oracle.enumerate_reduced_space(inst, yhat)
        value = oracle.exact_expectation(inst, space)
        p = oracle.exact_posterior(inst, space)
        closed = float(np.sum(p * np.log(inst.r) + (1 - p) * np.log1p(-inst.r)))
        worst = max(worst, abs(value - closed))
        reordered = oracle.exact_expectation(inst, list(reversed(space)))
        worst = max(worst, abs(value - reordered))
    return CheckResult("expectation-identities", worst, 1e-12)


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def _relative_error(analytic: float, numeric: float) -> float:
    # both sides below central-difference resolution: a genuine zero gradient
    # (e.g. logit-shift directions nulled by the standardization)
    if max(abs(analytic), abs(numeric)) < 1e-8:
        return 0.0
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def _sample_entries(params, keys, per_layer, rng):
    for key in keys:
        size = params.weights[key].size
        for flat in rng.choice(size, size=min(per_layer, size), replace=False):
            yield key, int(flat)


def check_model_gradients(seed=106, per_layer=8, step=1e-5) -> CheckResult:
    """backward vs central differences across every layer of the toy model.

    Step 1e-5 sits in the central-difference sweet spot for float64 at this
    objective scale; larger steps occasionally straddle ReLU/max-pool kinks
    and report pure truncation error.
    """
    rng = np.random.default_rng(seed)
    params = model.init_params(seed, 4)
    for k in params.weights:
        if k.endswith("_b"):
            params.weights[k] = rng.normal(0.0, 0.05, size=params.weights[k].shape)
    image = rng.random((8, 8))
    out = model.forward(params, image)
    grad_prob = rng.normal(size=out.prob_map.shape)
    grad_desc = rng.normal(size=out.desc_field.shape)
    grads = model.backward(params, out, grad_prob, grad_desc)

    def objective(p):
        o = model.forward(p, image)
        return float((grad_prob * o.prob_map).sum() + (grad_desc * o.desc_field).sum())

    worst = 0.0
    checked = 0
    for key, flat in _sample_entries(params, sorted(params.weights), per_layer, rng):
        worst = max(worst, _relative_error(
            grads[key].ravel()[flat], _central_difference(objective, params, key, flat, step)
        ))
        checked += 1
    assert checked >= 100
    return CheckResult("grad-model-vs-fd", worst, 1e-4)


def _central_difference(objective, params, key, flat, step):
    plus = params.copy()
    plus.weights[key].ravel()[flat] += step
    minus = params.copy()
    minus.weights[key].ravel()[flat] -= step
    return (objective(plus) - objective(minus)) / (2 * step)


def toy_scene_state(seed=7, size=24, views=3):
    """A small simulated scene with its E-step state, for chain checks.

    The seed is pinned to a scene whose candidate points are co-observed
    across views with interior posteriors, so both gradient chains carry
    signal (verified: 11 candidates, p in (0.30, 0.52), nonzero hinge flow).
    """
    rng = np.random.default_rng(seed)
    image = rng.random((size, size))
    scene = simulate.make_scene(image, views, seed, 0, "illum_mild", "viewpoint_medium")
    cfg = PropertyConfig(rad=2, n_min=2, n_max=14, m_p=0.9, m_n=0.1, neg_weight=0.4,
                         alpha=1.0)
    params = model.init_params(seed + 1, 4)
    states, _ = em.e_step([scene], params, cfg)
    state = states[0]
    if state is None or state.num_selected < 5:
        raise RuntimeError("chain-check scene degenerated; adjust the fixture")
    return scene, state, params, cfg


def detector_chain_objective(params, scene, state):
    """Repeatability part of the expected log-likelihood, posteriors frozen."""
    outs = [model.forward(params, img) for img in scene.images]
    j_images = scene.num_views
    probs = np.zeros((j_images,) + state.r.shape)
    for j, out in enumerate(outs):
        probs[j] = out.prob_map[scene.map_rows[j], scene.map_cols[j]]
    observed = state.valid_count > 0
    r = np.where(scene.valid, probs, 0.0).sum(axis=0) / np.maximum(state.valid_count, 1)
    r = np.clip(r, properties.PROB_EPS, 1.0 - properties.PROB_EPS)
    items = state.p * np.log(r) + (1.0 - state.p) * np.log1p(-r)
    return float(items[observed].sum())


def descriptor_chain_objective(params, scene, state, cfg):
    """Discriminability part (sum of alpha * p * h), structure frozen."""
    outs = [model.forward(params, img) for img in scene.images]
    descriptors = []
    for j, out in enumerate(outs):
        vj = state.sel_valid[j]
        rr = np.where(vj, scene.map_rows[j][state.sel_rows, state.sel_cols], 0)
        cc = np.where(vj, scene.map_cols[j][state.sel_rows, state.sel_cols], 0)
        dj = out.desc_field[rr, cc]
        dj[~vj] = 0.0
        descriptors.append(dj)
    h = properties.margins(state.num_selected, descriptors, state.sel_valid, cfg)
    weights = cfg.alpha * state.p[state.sel_rows, state.sel_cols]
    return float((weights * h).sum())


def check_detector_chain(step=1e-5) -> CheckResult:
    scene, state, params, cfg = toy_scene_state()
    upstream = em.detector_gradient_coefficients(state, scene)
    analytic = model.zero_grads(params)
    for j in range(scene.num_views):
        zero_desc = np.zeros_like(scene.outputs[j].desc_field)
        model.accumulate_grads(
            analytic, model.backward(params, scene.outputs[j], upstream[j], zero_desc)
        )

    def objective(p):
        return detector_chain_objective(p, scene, state)

    rng = np.random.default_rng(108)
    keys = ["enc1_w", "enc2_w", "enc3_w", "enc4_w", "det1_w", "det2_w", "det2_b"]
    worst = 0.0
    for key, flat in _sample_entries(params, keys, 5, rng):
        worst = max(worst, _relative_error(
            analytic[key].ravel()[flat], _central_difference(objective, params, key, flat, step)
        ))
    return CheckResult("grad-detector-chain-vs-fd", worst, 1e-4)


def check_descriptor_chain(step=1e-5) -> CheckResult:
    scene, state, params, cfg = toy_scene_state()
    upstream = em.descriptor_field_gradients(state, scene, cfg)
    analytic = model.zero_grads(params)
    for j in range(scene.num_views):
        zero_prob = np.zeros_like(scene.outputs[j].prob_map)
        model.accumulate_grads(
            analytic, model.backward(params, scene.outputs[j], zero_prob, upstream[j])
        )

    def objective(p):
        return descriptor_chain_objective(p, scene, state, cfg)

    rng = np.random.default_rng(109)
    keys = ["enc1_w", "enc2_w", "enc3_w", "enc4_w", "desc1_w", "desc2_w", "desc2_b"]
    worst = 0.0
    for key, flat in _sample_entries(params, keys, 5, rng):
        worst = max(worst, _relative_error(
            analytic[key].ravel()[flat], _central_difference(objective, params, key, flat, step)
        ))
    return CheckResult("grad-descriptor-chain-vs-fd", worst, 1e-4)


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def run_all_checks(corrupt_counts: bool = False) -> list:
    return [
        check_counts_vs_enumeration(corrupt=corrupt_counts),
        check_counts_bigint(corrupt=corrupt_counts),
        check_count_split_identity(corrupt=corrupt_counts),
        check_gammaln_matches_exact(corrupt=corrupt_counts),
        check_posterior_tiny(),
        check_posterior_symmetric(),
        check_expectation_identities(),
        check_model_gradients(),
        check_detector_chain(),
        check_descriptor_chain(),
    ]
