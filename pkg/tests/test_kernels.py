import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nativecritic import kernels as K
from nativecritic.kernels import Family, KernelError, KernelSpec, SingularGradientError

ALL_SPECS = [
    KernelSpec("gaussian", lengthscale=0.8),
    KernelSpec("exponential", lengthscale=1.3),
    KernelSpec("inverse_multiquadric", lengthscale=0.7, shape=1.2, beta=-1.5),
    KernelSpec("wendland", smoothness=0, support_radius=1.5),
    KernelSpec("wendland", smoothness=1, support_radius=1.5),
    KernelSpec("wendland", smoothness=2, support_radius=1.5),
    KernelSpec("sobolev_matern", smoothness=1.5, lengthscale=0.9),
    KernelSpec("sobolev_matern", smoothness=2.5, lengthscale=0.9),
    KernelSpec("sobolev_matern", smoothness=3.5, lengthscale=0.9),
]
IDS = [f"{k.family.value}-{k.smoothness:g}" for k in ALL_SPECS]


def test_values_at_known_points():
    assert K.eval(KernelSpec("gaussian"), [0.3, -0.2], [0.3, -0.2]) == 1.0
    assert K.eval(KernelSpec("exponential"), [0, 0], [1, 0]) == pytest.approx(0.36787944117144233, abs=1e-15)
    m32 = KernelSpec("sobolev_matern", smoothness=2.5)
    assert K.eval(m32, [0, 0], [1, 0]) == pytest.approx((1 + math.sqrt(3)) * math.exp(-math.sqrt(3)), rel=1e-14)
    assert K.eval(m32, [0, 0], [1, 0]) == pytest.approx(0.48335, abs=1e-5)


def test_matern_matches_bessel_form():
    from scipy.special import gamma, kv
    for k, nu in ((1.5, 0.5), (2.5, 1.5), (3.5, 2.5)):
        spec = KernelSpec("sobolev_matern", smoothness=k, lengthscale=0.7)
        for r in (0.05, 0.4, 1.3, 2.9):
            z = math.sqrt(2 * nu) * r / 0.7
            ref = 2 ** (1 - nu) / gamma(nu) * z ** nu * kv(nu, z)
            assert spec.radial(r) == pytest.approx(ref, rel=1e-11)


def test_wendland_table_against_polynomials():
    # phi_{3,1}(s) = (1-s)^4 (4s+1); phi_{3,2}(s) = (1-s)^6 (35 s^2 + 18 s + 3) / 3
    w1 = KernelSpec("wendland", smoothness=1, support_radius=2.0)
    w2 = KernelSpec("wendland", smoothness=2, support_radius=2.0)
    for r in (0.0, 0.3, 1.1, 1.99):
        s = r / 2.0
        assert w1.radial(r) == pytest.approx((1 - s) ** 4 * (4 * s + 1), abs=1e-15)
        assert w2.radial(r) == pytest.approx((1 - s) ** 6 * (35 * s * s + 18 * s + 3) / 3, abs=1e-15)


def test_gaussian_gradient_example():
    g = K.grad2(KernelSpec("gaussian"), [0, 0], [1, 0])
    np.testing.assert_allclose(g, [-2 * math.exp(-1), 0.0], atol=1e-15)
    np.testing.assert_array_equal(K.grad2(KernelSpec("gaussian"), [0.2, 0.1], [0.2, 0.1]), [0, 0])


def test_wendland_compact_support():
    w = KernelSpec("wendland", smoothness=1, support_radius=0.5)
    assert K.eval(w, [0, 0], [0.5, 0]) == 0.0
    assert K.eval(w, [0, 0], [0.4, 0.4]) == 0.0
    np.testing.assert_array_equal(K.grad2(w, [0, 0], [0.6, 0]), [0, 0])
    np.testing.assert_array_equal(K.grad2(w, [0, 0], [0.5, 0]), [0, 0])


@pytest.mark.parametrize("spec", [s for s in ALL_SPECS if s.singular_at_zero], ids=lambda s: s.family.value)
def test_singular_gradient_raises_at_coincidence(spec):
    with pytest.raises(SingularGradientError):
        K.grad2(spec, [0.1, 0.2], [0.1, 0.2])
    g = spec.grad_matrix(np.array([[0.1, 0.2], [0.5, 0.5]]), [0.1, 0.2], singular="zero")
    np.testing.assert_array_equal(g[0], [0, 0])
    assert np.all(np.isfinite(g))


def test_diagonal_bound():
    assert K.diagonal_bound(KernelSpec("gaussian")) == 1.0
    assert K.diagonal_bound(KernelSpec("inverse_multiquadric", shape=1.0, beta=-0.5)) == 1.0
    assert K.diagonal_bound(KernelSpec("inverse_multiquadric", shape=2.0, beta=-1.0)) == pytest.approx(0.5)
    w = KernelSpec("wendland", smoothness=2)
    assert K.diagonal_bound(w) == pytest.approx(math.sqrt(w.radial(0.0)))


def test_power_bound_fn_examples():
    m = KernelSpec("sobolev_matern", smoothness=2.5)
    assert K.power_bound_fn(m, 0.1) == pytest.approx(0.1 ** 1.5, rel=1e-14)
    assert K.power_bound_fn(m, 0.1) == pytest.approx(0.0316, abs=1e-4)
    w = KernelSpec("wendland", smoothness=1)
    assert K.power_bound_fn(w, 0.25) == pytest.approx(0.125, rel=1e-14)
    assert K.power_bound_fn(m, 0.37) == K.power_bound_fn(m, 0.37)
    with pytest.raises(ValueError):
        K.power_bound_fn(m, 0.0)


@pytest.mark.parametrize("spec", ALL_SPECS + [KernelSpec("gaussian", rate_constant=3.0)], ids=IDS + ["gauss-a3"])
def test_power_bound_fn_nondecreasing(spec):
    h = np.linspace(1e-3, 1.0, 400)
    vals = np.array([K.power_bound_fn(spec, x) for x in h])
    assert np.all(np.diff(vals) >= -1e-15)


@pytest.mark.parametrize("kwargs", [
    dict(family="cauchy"),
    dict(family="gaussian", lengthscale=0.0),
    dict(family="sobolev_matern", smoothness=2.0),
    dict(family="wendland", smoothness=3),
    dict(family="wendland", dim=4),
    dict(family="inverse_multiquadric", beta=0.5),
    dict(family="inverse_multiquadric", shape=-1.0),
    dict(family="gaussian", dim=0),
])
def test_invalid_specs_rejected_at_construction(kwargs):
    with pytest.raises(KernelError):
        KernelSpec(**kwargs)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        K.eval(KernelSpec("gaussian"), [0, 0, 0], [1, 0])
    with pytest.raises(ValueError):
        KernelSpec("gaussian").matrix(np.zeros((3, 3)), np.zeros((2, 2)))


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_symmetry_many_pairs(spec):
    rng = np.random.default_rng(1)
    X = rng.uniform(-2, 2, (1000, 2))
    Y = rng.uniform(-2, 2, (1000, 2))
    a = np.array([K.eval(spec, x, y) for x, y in zip(X, Y)])
    b = np.array([K.eval(spec, y, x) for x, y in zip(X, Y)])
    assert np.max(np.abs(a - b)) <= 1e-14


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_grammian_psd(spec):
    rng = np.random.default_rng(2)
    for _ in range(50):
        X = rng.uniform(-1, 1, (10, 2))
        G = spec.matrix(X, X)
        assert np.linalg.eigvalsh(G).min() >= -1e-10 * np.trace(G)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_grads_and_directional_agree(spec):
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (7, 2))
    Y = rng.uniform(-1, 1, (11, 2))
    V = rng.normal(size=(11, 2))
    G = spec.grads(X, Y, singular="zero")
    for j in range(11):
        np.testing.assert_allclose(G[:, j, :], spec.grad_matrix(X, Y[j], singular="zero"), atol=1e-15)
    np.testing.assert_allclose(spec.directional(X, Y, V, singular="zero"),
                               np.einsum("ijk,jk->ji", G, V), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 3.0), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_gaussian_gradient_is_finite_difference(ell, xy):
    spec = KernelSpec("gaussian", lengthscale=ell)
    x, y = np.array(xy[:2]), np.array(xy[2:])
    h = 1e-6
    fd = [(K.eval(spec, x, y + h * e) - K.eval(spec, x, y - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(K.grad2(spec, x, y), fd, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL_SPECS), st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
def test_kernel_bounded_by_diagonal(spec, xy):
    assert K.eval(spec, xy[:2], xy[2:]) <= K.diagonal_bound(spec) ** 2 + 1e-15


def test_family_enum_round_trip():
    for fam in Family:
        assert KernelSpec(fam.value, smoothness=1 if fam is Family.WENDLAND else 2.5).family is fam
