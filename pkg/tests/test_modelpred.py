import numpy as np
import pytest

from dfp import lossmodel as lm
from dfp import modelpred as mp


def quadratic_params(rng, n=8, delta=1.0, lam=0.3, v_jitter=0.2):
    """Mask saturated at ~1 so the loss is exactly quadratic in the filter."""
    return lm.LossParams(
        label_fn=lm.RadialFunction(rng.standard_normal(n), delta),
        weight_fn=lm.RadialFunction(1.0 + v_jitter * rng.standard_normal(n), delta),
        mask_fn=lm.RadialFunction(np.full(n, 36.0), delta, "sigmoid"),
        lam=lam,
    )


def quadratic_instance(rng, n_samples=3, feat=(7, 7, 2), filt=(3, 3, 2), lam=0.3):
    params = quadratic_params(rng, lam=lam)
    samples = []
    for i in range(n_samples):
        x = rng.standard_normal(feat) * 0.5
        cy = rng.uniform(0, feat[0] - filt[0])
        cx = rng.uniform(0, feat[1] - filt[1])
        samples.append(lm.TrainingSample(x, (cy, cx), 1.0 if i == 0 else 0.7))
    return samples, params, filt


def conv_matrix(x, filt):
    """Explicit matrix of f -> conv_valid(x, f) with f flattened C-order."""
    kh, kw, kc = filt
    ho = x.shape[0] - kh + 1
    wo = x.shape[1] - kw + 1
    mat = np.zeros((ho * wo, kh * kw * kc))
    for i in range(ho):
        for j in range(wo):
            mat[i * wo + j] = x[i : i + kh, j : j + kw, :].ravel()
    return mat


def normal_equations(samples, params, filt):
    """Dense solve of the quadratic (mask ~ 1) problem; returns (f*, L*)."""
    p = filt[0] * filt[1] * filt[2]
    wsum = sum(s.weight for s in samples)
    a = params.lam**2 * np.eye(p)
    b = np.zeros(p)
    for smp in samples:
        c = conv_matrix(smp.features, filt)
        sshape = (smp.features.shape[0] - filt[0] + 1, smp.features.shape[1] - filt[1] + 1)
        y, v, m = lm.build_fields(params, smp.center, sshape)
        vv = (v**2).ravel() * (smp.weight / wsum)
        a += c.T @ (vv[:, None] * c)
        b += c.T @ (vv * y.ravel())
    fstar = np.linalg.solve(a, b).reshape(filt)
    return fstar, lm.loss(fstar, samples, params)


# ---------------------------------------------------------------------------
# pooling initializer


def test_roi_pool_aligned_box_is_verbatim():
    rng = np.random.default_rng(30)
    x = rng.standard_normal((9, 9, 3))
    k = 4
    r0, c0 = 2, 3
    box = (c0 + (k - 1) / 2.0, r0 + (k - 1) / 2.0, float(k), float(k))
    smp = lm.TrainingSample(x, (0.0, 0.0))
    f = mp.init_filter([smp], (k, k, 3), [box])
    assert np.allclose(f, x[r0 : r0 + k, c0 : c0 + k, :], atol=1e-12)


def test_init_filter_averages_samples():
    rng = np.random.default_rng(31)
    xs = [rng.standard_normal((8, 8, 2)) for _ in range(2)]
    box = (3.5, 3.5, 4.0, 4.0)
    singles = [
        mp.init_filter([lm.TrainingSample(x, (0.0, 0.0))], (4, 4, 2), [box]) for x in xs
    ]
    both = mp.init_filter(
        [lm.TrainingSample(x, (0.0, 0.0)) for x in xs], (4, 4, 2), [box, box]
    )
    assert np.allclose(both, 0.5 * (singles[0] + singles[1]), atol=1e-12)


def test_roi_pool_constant_region():
    x = np.full((12, 12, 1), 2.5)
    box = (5.5, 5.5, 8.0, 8.0)  # twice the filter size
    smp = lm.TrainingSample(x, (0.0, 0.0))
    f = mp.init_filter([smp], (4, 4, 1), [box])
    assert np.allclose(f, 2.5, atol=1e-12)


def test_roi_pool_rejects_degenerate_box():
    x = np.ones((8, 8, 1))
    smp = lm.TrainingSample(x, (0.0, 0.0))
    with pytest.raises(ValueError):
        mp.init_filter([smp], (4, 4, 1), [(3.0, 3.0, 0.5, 1.0)])


# ---------------------------------------------------------------------------
# steepest-descent step


def test_fixed_beta_surrogate():
    rng = np.random.default_rng(32)
    samples, params, filt = quadratic_instance(rng)
    f = rng.standard_normal(filt)
    _, alpha, _ = mp.steepest_descent_step(f, samples, params, fixed_step_beta=0.37)
    assert alpha == 0.37


def test_zero_gradient_returns_input():
    # zero features, zero labels, lambda = 0: gradient vanishes for any filter
    params = lm.LossParams(
        label_fn=lm.RadialFunction(np.zeros(6), 1.0),
        weight_fn=lm.RadialFunction(np.ones(6), 1.0),
        mask_fn=lm.RadialFunction(np.zeros(6), 1.0, "sigmoid"),
        lam=0.0,
    )
    samples = [lm.TrainingSample(np.zeros((6, 6, 1)), (2.0, 2.0))]
    rng = np.random.default_rng(33)
    f = rng.standard_normal((3, 3, 1))
    f2, alpha, _ = mp.steepest_descent_step(f, samples, params)
    assert alpha == 0.0
    assert np.array_equal(f2, f)


def test_scalar_toy_converges_in_one_step():
    # single 1x1 sample and filter with mask ~ 1: the normal equation is
    # f* = v^2 a y / (v^2 a^2 + lam^2), reached in exactly one recursion
    a, lam = 1.7, 0.4
    params = lm.LossParams(
        label_fn=lm.RadialFunction(np.full(4, 0.9), 1.0),
        weight_fn=lm.RadialFunction(np.full(4, 1.3), 1.0),
        mask_fn=lm.RadialFunction(np.full(4, 36.0), 1.0, "sigmoid"),
        lam=lam,
    )
    y0, v0 = 0.9, 1.3
    samples = [lm.TrainingSample(np.full((1, 1, 1), a), (0.0, 0.0))]
    fstar = v0**2 * a * y0 / (v0**2 * a**2 + lam**2)
    f = np.full((1, 1, 1), -2.0)
    f1, alpha, _ = mp.steepest_descent_step(f, samples, params)
    assert alpha > 0
    assert f1[0, 0, 0] == pytest.approx(fstar, rel=1e-12)


def test_exact_line_search_on_quadratics():
    rng = np.random.default_rng(34)
    for _ in range(5):
        samples, params, filt = quadratic_instance(rng)
        f = rng.standard_normal(filt)
        for _step in range(3):
            g = lm.gradient(f, samples, params)
            f1, alpha, _ = mp.steepest_descent_step(f, samples, params)
            l1 = lm.loss(f1, samples, params)
            for beta in rng.uniform(0.0, 2.0 * alpha, size=20):
                if beta == 0.0:
                    continue
                assert l1 <= lm.loss(f - beta * g, samples, params) + 1e-10
            f = f1


def test_sd_alpha_positive():
    rng = np.random.default_rng(35)
    samples, params, filt = quadratic_instance(rng)
    f = rng.standard_normal(filt)
    for _ in range(4):
        f, alpha, diag = mp.steepest_descent_step(f, samples, params)
        if diag["grad_norm"] > 0:
            assert alpha > 0


def test_singular_curvature_guard():
    class StubProb:
        lam = 0.0

        def scores(self, f):
            return []

        def loss_from_scores(self, f, s):
            return 1.0

        def gradient_from_scores(self, f, s):
            return np.ones_like(f)

        def h_norm_sq_from_scores(self, s, g):
            return 0.0

    f = np.ones((2, 2, 1))
    with pytest.raises(mp.SingularCurvatureError):
        mp.steepest_descent_step(f, [], None, prepared=StubProb())


# ---------------------------------------------------------------------------
# predictor loop


def test_predict_zero_iterations_returns_init():
    rng = np.random.default_rng(36)
    samples, params, filt = quadratic_instance(rng)
    boxes = [(2.5, 2.5, 3.0, 3.0)] * len(samples)
    f_init = mp.init_filter(samples, filt, boxes)
    f, trace = mp.predict_model(
        samples, params, 0, target_boxes=boxes, filter_shape=filt
    )
    assert np.array_equal(f, f_init)
    assert len(trace) == 1


def test_monotone_descent_on_quadratics():
    rng = np.random.default_rng(37)
    samples, params, filt = quadratic_instance(rng)
    f0 = rng.standard_normal(filt)
    f, trace = mp.predict_model(samples, params, 8, f0=f0)
    losses = trace.losses
    for i in range(len(losses) - 1):
        assert losses[i + 1] <= losses[i] + 1e-12
        if trace.records[i].grad_norm is not None and trace.records[i].grad_norm > 1e-9:
            assert losses[i + 1] < losses[i]


def test_five_steps_reach_normal_equations_optimum():
    rng = np.random.default_rng(38)
    samples, params, filt = quadratic_instance(rng, lam=0.0)
    # pick lambda so the Hessian spectrum is tight: kappa <= 1.5 makes five
    # exact line searches enough for 1e-6 relative accuracy
    fstar0, _ = normal_equations(samples, params, filt)
    p = filt[0] * filt[1] * filt[2]
    wsum = sum(s.weight for s in samples)
    m = np.zeros((p, p))
    for smp in samples:
        c = conv_matrix(smp.features, filt)
        sshape = (smp.features.shape[0] - filt[0] + 1, smp.features.shape[1] - filt[1] + 1)
        _, v, _ = lm.build_fields(params, smp.center, sshape)
        m += c.T @ (((v**2).ravel() * smp.weight / wsum)[:, None] * c)
    mu_max = float(np.linalg.eigvalsh(m).max())
    params = lm.LossParams(
        params.label_fn, params.weight_fn, params.mask_fn, lam=float(np.sqrt(2 * mu_max))
    )
    fstar, lstar = normal_equations(samples, params, filt)
    f, trace = mp.predict_model(samples, params, 5, f0=np.zeros(filt))
    assert trace.losses[-1] <= lstar * (1 + 1e-6)


def test_stationary_point_is_fixed():
    params = lm.LossParams(
        label_fn=lm.RadialFunction(np.zeros(6), 1.0),
        weight_fn=lm.RadialFunction(np.ones(6), 1.0),
        mask_fn=lm.RadialFunction(np.zeros(6), 1.0, "sigmoid"),
        lam=0.0,
    )
    samples = [lm.TrainingSample(np.zeros((6, 6, 1)), (2.0, 2.0))]
    rng = np.random.default_rng(39)
    f0 = rng.standard_normal((3, 3, 1))
    f, trace = mp.predict_model(samples, params, 4, f0=f0)
    assert np.array_equal(f, f0)
    assert len(trace) == 5
    assert all(a in (0.0, None) for a in trace.alphas)


def test_trace_length_and_filters():
    rng = np.random.default_rng(40)
    samples, params, filt = quadratic_instance(rng)
    for n_iter in (0, 1, 3, 7):
        f, trace = mp.predict_model(
            samples, params, n_iter, f0=rng.standard_normal(filt), store_filters=True
        )
        assert len(trace) == n_iter + 1
        assert all(rec.filter is not None for rec in trace.records)
        assert np.array_equal(trace.records[-1].filter, f)


# ---------------------------------------------------------------------------
# gradient-descent baseline


def test_gd_zero_step_is_identity():
    rng = np.random.default_rng(41)
    samples, params, filt = quadratic_instance(rng)
    f = rng.standard_normal(filt)
    assert np.array_equal(mp.gradient_descent_step(f, samples, params, 0.0), f)


def test_gd_matches_sd_at_sd_step():
    rng = np.random.default_rng(42)
    samples, params, filt = quadratic_instance(rng)
    f = rng.standard_normal(filt)
    f_sd, alpha, _ = mp.steepest_descent_step(f, samples, params)
    f_gd = mp.gradient_descent_step(f, samples, params, alpha)
    assert np.allclose(f_sd, f_gd, atol=1e-15)


def test_gd_coefficientwise_steps():
    rng = np.random.default_rng(43)
    samples, params, filt = quadratic_instance(rng)
    f = rng.standard_normal(filt)
    steps = np.full(filt, 0.01)
    g = lm.gradient(f, samples, params)
    assert np.allclose(
        mp.gradient_descent_step(f, samples, params, steps), f - 0.01 * g, atol=1e-14
    )
    from dfp.numerics import ShapeError

    with pytest.raises(ShapeError):
        mp.gradient_descent_step(f, samples, params, np.ones((2, 2, 1)))
