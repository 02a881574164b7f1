import numpy as np
import pytest

from dfp import numerics

BACKENDS = numerics.available_backends()


def conv_valid_ref(x, f):
    """Brute-force quadruple-loop reference convolution."""
    hx, wx, c = x.shape
    kh, kw, _ = f.shape
    out = np.zeros((hx - kh + 1, wx - kw + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            acc = 0.0
            for u in range(kh):
                for v in range(kw):
                    for k in range(c):
                        acc += x[i + u, j + v, k] * f[u, v, k]
            out[i, j] = acc
    return out


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def test_conv_scalar_product(backend):
    x = np.full((1, 1, 1), 3.0)
    f = np.full((1, 1, 1), 2.0)
    out = numerics.conv_valid(x, f, backend=backend)
    assert out.shape == (1, 1)
    assert out[0, 0] == 6.0


def test_conv_window_sum(backend):
    x = np.ones((4, 4, 1))
    f = np.ones((2, 2, 1))
    out = numerics.conv_valid(x, f, backend=backend)
    assert out.shape == (3, 3)
    assert np.all(out == 4.0)


def test_conv_matches_loop_reference(backend):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 8, 2))
    f = rng.standard_normal((4, 4, 2))
    out = numerics.conv_valid(x, f, backend=backend)
    ref = conv_valid_ref(x, f)
    assert np.allclose(out, ref, rtol=1e-12, atol=0)


def test_conv_transpose_window_sum(backend):
    x = np.ones((4, 4, 1))
    g = np.ones((3, 3))
    out = numerics.conv_transpose(x, g, (2, 2), backend=backend)
    assert out.shape == (2, 2, 1)
    assert np.all(out == 9.0)


def test_conv_transpose_one_hot_is_window(backend):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 7, 3))
    g = np.zeros((3, 4))
    g[0, 0] = 1.0
    out = numerics.conv_transpose(x, g, (4, 4), backend=backend)
    assert np.array_equal(out, x[:4, :4, :])


def test_adjoint_identity(backend):
    rng = np.random.default_rng(3)
    for _ in range(20):
        hx, wx = rng.integers(3, 10, size=2)
        kh = int(rng.integers(1, hx + 1))
        kw = int(rng.integers(1, wx + 1))
        c = int(rng.integers(1, 4))
        x = rng.standard_normal((hx, wx, c))
        f = rng.standard_normal((kh, kw, c))
        g = rng.standard_normal((hx - kh + 1, wx - kw + 1))
        lhs = numerics.dot(numerics.conv_valid(x, f, backend=backend), g)
        rhs = numerics.dot(f, numerics.conv_transpose(x, g, (kh, kw), backend=backend))
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_conv_linear_in_filter(backend):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((7, 6, 2))
    f = rng.standard_normal((3, 3, 2))
    h = rng.standard_normal((3, 3, 2))
    a, b = 0.7, -1.3
    lhs = numerics.conv_valid(x, a * f + b * h, backend=backend)
    rhs = a * numerics.conv_valid(x, f, backend=backend) + b * numerics.conv_valid(
        x, h, backend=backend
    )
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_outputs_finite(backend):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((9, 9, 4)) * 1e6
    f = rng.standard_normal((4, 4, 4)) * 1e6
    s = numerics.conv_valid(x, f, backend=backend)
    assert np.all(np.isfinite(s))
    t = numerics.conv_transpose(x, s, (4, 4), backend=backend)
    assert np.all(np.isfinite(t))


def test_conv_shape_errors():
    x = np.ones((4, 4, 2))
    with pytest.raises(numerics.ShapeError):
        numerics.conv_valid(x, np.ones((2, 2, 3)))  # channel mismatch
    with pytest.raises(numerics.ShapeError):
        numerics.conv_valid(x, np.ones((5, 2, 2)))  # filter taller than features
    with pytest.raises(numerics.ShapeError):
        numerics.conv_transpose(x, np.ones((4, 4)), (2, 2))  # wrong score shape
    with pytest.raises(numerics.ShapeError):
        numerics.conv_transpose(x, np.ones((3, 3)), (2, 2, 5))  # channel mismatch


def test_dot_and_norm():
    assert numerics.dot([1.0, 2.0], [3.0, 4.0]) == 11.0
    assert numerics.norm_sq([3.0, 4.0]) == 25.0
    rng = np.random.default_rng(6)
    a = rng.standard_normal(100)
    b = rng.standard_normal(100)
    acc = 0.0
    for ai, bi in zip(a, b):
        acc += ai * bi
    assert numerics.dot(a, b) == pytest.approx(acc, rel=1e-12)
    assert numerics.dot(a, a) == pytest.approx(numerics.norm_sq(a), rel=1e-15)


def test_dot_shape_mismatch():
    with pytest.raises(numerics.ShapeError):
        numerics.dot(np.ones(3), np.ones(4))


def test_elementwise():
    a = np.arange(6.0).reshape(2, 3)
    b = np.ones((2, 3))
    out = numerics.elementwise(lambda u, v: u * 2 + v, a, b)
    assert np.array_equal(out, a * 2 + 1)
    with pytest.raises(numerics.ShapeError):
        numerics.elementwise(lambda u, v: u + v, a, np.ones((3, 2)))


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(7)
    x = rng.standard_normal((10, 11, 3))
    f = rng.standard_normal((4, 5, 3))
    g = rng.standard_normal((7, 7))
    a = numerics.conv_valid(x, f, backend="c")
    b = numerics.conv_valid(x, f, backend="py")
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    ta = numerics.conv_transpose(x, g, (4, 5), backend="c")
    tb = numerics.conv_transpose(x, g, (4, 5), backend="py")
    assert np.allclose(ta, tb, rtol=1e-13, atol=1e-13)
