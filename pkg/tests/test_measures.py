"""Unit tests for atomic measures and the bounded-Lipschitz metric."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doslab import measures as M


def two_point_bruteforce(a, resolution=1e-3):
    """Oracle for dw(delta_0, delta_a): inner maximum is min(2M, L a)."""
    Ms = np.arange(0.0, 1.0 + resolution, resolution)
    return float(np.max(np.minimum(2.0 * Ms, (1.0 - Ms) * a)))


def three_point_bruteforce(resolution=1e-3):
    """Oracle for dw(Bernoulli(+-1), delta_0): inner maximum is min(2M, L)."""
    Ms = np.arange(0.0, 1.0 + resolution, resolution)
    return float(np.max(np.minimum(2.0 * Ms, 1.0 - Ms)))


@st.composite
def atomic_measures(draw):
    n = draw(st.integers(1, 5))
    locs = draw(st.lists(st.floats(-1, 1, allow_nan=False, allow_infinity=False),
                         min_size=n, max_size=n))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    w = np.asarray(raw)
    return M.make_atomic(locs, w / w.sum(), 1.0)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_make_atomic_bernoulli():
    m = M.make_atomic([-1, 1], [0.5, 0.5], C=1)
    assert np.array_equal(m.locations, [-1, 1])
    assert np.array_equal(m.weights, [0.5, 0.5])


def test_make_atomic_merges_duplicates():
    m = M.make_atomic([0, 0], [0.3, 0.7], C=1)
    assert m.n_atoms == 1
    assert m.locations[0] == 0.0 and m.weights[0] == 1.0


def test_make_atomic_sorts():
    m = M.make_atomic([1, -1], [0.5, 0.5], C=1)
    assert np.array_equal(m.locations, [-1, 1])


def test_make_atomic_errors():
    with pytest.raises(M.MeasureError):
        M.make_atomic([], [], C=1)
    with pytest.raises(M.MeasureError):
        M.make_atomic([2.0], [1.0], C=1)          # outside [-C, C]
    with pytest.raises(M.MeasureError):
        M.make_atomic([0.0, 0.5], [1.2, -0.2], C=1)  # negative weight
    with pytest.raises(M.MeasureError):
        M.make_atomic([0.0], [0.5], C=1)          # mass far from 1


def test_weights_renormalized_within_tolerance():
    m = M.make_atomic([0.0, 0.5], [0.5, 0.5 + 5e-10], C=1)
    assert abs(m.weights.sum() - 1.0) < 1e-15


def test_measure_immutable():
    m = M.bernoulli()
    with pytest.raises(ValueError):
        m.locations[0] = 5.0


# ---------------------------------------------------------------------------
# discretize_density
# ---------------------------------------------------------------------------

def test_discretize_uniform_density():
    samples = [(-1.0, 0.5), (1.0, 0.5)]
    m = M.discretize_density(samples, C=1.0, step=0.5)
    assert m.n_atoms == 4
    assert np.allclose(m.weights, 0.25)
    assert np.allclose(m.locations, [-0.75, -0.25, 0.25, 0.75])


def test_discretize_cauchy_cdf():
    xs = np.linspace(-5, 5, 2001)
    m = M.discretize_density(list(zip(xs, 1.0 / (np.pi * (1 + xs ** 2)))),
                             C=5.0, step=0.01)
    assert abs(m.weights.sum() - 1.0) < 1e-12
    # analytic CDF of the renormalized truncation is 1/2 at the center
    assert abs(m.cdf(0.0) - 0.5) < 1e-3


def test_discretize_spike():
    # spike interior to the cell [0, 0.25) -> one dominant atom
    samples = [(-1, 0.0), (0.09, 0.0), (0.1, 100.0), (0.11, 0.0), (1, 0.0)]
    m = M.discretize_density(samples, C=1.0, step=0.25)
    assert m.weights.max() > 0.99
    assert abs(m.locations[np.argmax(m.weights)] - 0.125) < 1e-12


def test_discretize_errors():
    with pytest.raises(M.MeasureError):
        M.discretize_density([(-1, 0.0), (1, 0.0)], C=1, step=0.5)
    with pytest.raises(M.MeasureError):
        M.discretize_density([(-1, 1.0), (1, 1.0)], C=1, step=0.0)


# ---------------------------------------------------------------------------
# mollify / rescale
# ---------------------------------------------------------------------------

def test_mollify_box_of_delta():
    m = M.mollify(M.point_mass(0.0), "box", 0.2)
    assert m.n_atoms == 16
    assert np.allclose(m.weights, 1.0 / 16)
    assert m.locations.min() > -0.1 and m.locations.max() < 0.1
    assert m.support_bound == pytest.approx(1.2)


def test_mollify_delta_dw_bruteforce():
    """LP value against the (M, L)-grid brute force with the cone envelope."""
    m = M.mollify(M.point_mass(0.0), "box", 0.2)
    val = M.dw(m, M.point_mass(0.0))
    Ms = np.arange(0.0, 1.0 + 1e-3, 1e-3)
    best = 0.0
    for Mv in Ms:
        L = 1.0 - Mv
        env = np.minimum(Mv, -Mv + L * np.abs(m.locations))
        best = max(best, float(m.weights @ env + Mv))
    assert val <= 0.1
    assert abs(val - best) < 2e-3


def test_mollify_bound_decreases_with_width():
    base = M.bernoulli()
    ref = M.point_mass(0.0)
    vals = []
    for eta in (0.4, 0.2, 0.1, 0.05):
        ma = M.mollify(base, "triangle", eta)
        assert M.dw(ma, base) <= max(1.0, base.support_bound) * eta + 1e-12
        vals.append(M.dw(ma, base))
    assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("kernel", M.KERNELS)
def test_mollify_kernels_mass(kernel):
    m = M.mollify(M.bernoulli(), kernel, 0.1)
    assert abs(m.weights.sum() - 1.0) < 1e-12
    with pytest.raises(M.MeasureError):
        M.mollify(M.bernoulli(), kernel, 0.0)


def test_mollify_unknown_kernel():
    with pytest.raises(M.MeasureError):
        M.mollify(M.bernoulli(), "gauss", 0.1)


def test_rescale():
    m = M.bernoulli()
    z = M.rescale(m, 0.0)
    assert z.n_atoms == 1 and z.locations[0] == 0.0
    s = M.rescale(m, 0.3)
    assert np.allclose(s.locations, [-0.3, 0.3])
    assert s.support_bound == pytest.approx(0.3)
    assert s.weights.sum() == 1.0


def test_rescale_dw_to_delta_bounded_by_lambda():
    m = M.make_atomic([-1, -0.2, 0.7], [0.2, 0.3, 0.5], C=1)
    for lam in (1.0, 0.5, 0.1):
        assert M.dw(M.rescale(m, lam), M.point_mass(0.0)) <= lam + 1e-9


# ---------------------------------------------------------------------------
# the metric
# ---------------------------------------------------------------------------

def test_dw_identical():
    m = M.make_atomic([-0.5, 0.1, 0.9], [0.3, 0.3, 0.4], C=1)
    assert M.dw(m, m) == 0.0


@pytest.mark.parametrize("a", [0.25, 1.0, 1.9])
def test_dw_two_point_closed_form(a):
    val = M.dw(M.point_mass(0.0, C=2), M.point_mass(a, C=2))
    assert val == pytest.approx(2 * a / (2 + a), abs=1e-6)
    assert val == pytest.approx(two_point_bruteforce(a), abs=2e-3)


def test_dw_bernoulli_delta():
    val = M.dw(M.bernoulli(), M.point_mass(0.0))
    assert val == pytest.approx(2.0 / 3.0, abs=1e-6)
    assert val == pytest.approx(three_point_bruteforce(), abs=2e-3)


def test_dw_bounded_by_two():
    val = M.dw(M.point_mass(-1, C=1000), M.point_mass(999, C=1000))
    assert val <= 2.0 + 1e-9


@settings(max_examples=25, deadline=None)
@given(atomic_measures(), atomic_measures())
def test_dw_symmetry(m1, m2):
    assert abs(M.dw(m1, m2) - M.dw(m2, m1)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(atomic_measures(), atomic_measures(), atomic_measures())
def test_dw_triangle_inequality(m1, m2, m3):
    assert M.dw(m1, m3) <= M.dw(m1, m2) + M.dw(m2, m3) + 1e-9


@settings(max_examples=25, deadline=None)
@given(atomic_measures())
def test_dw_identity_of_indiscernibles(m):
    assert M.dw(m, m) == 0.0
    shifted = M.make_atomic(m.locations * 0.5 + 0.25, m.weights, 1.0)
    same = (m.n_atoms == shifted.n_atoms
            and np.allclose(m.locations, shifted.locations, atol=1e-12)
            and np.allclose(m.weights, shifted.weights, atol=1e-12))
    if not same:
        assert M.dw(m, shifted) > 0.0


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

def test_descriptor_bounds():
    d1 = M.MeasurePairDescriptor("mollified-atoms", {"eta": 0.01, "support_bound": 1.0})
    assert M.dw_upper_bound(d1) == pytest.approx(0.01)
    d2 = M.MeasurePairDescriptor("absolutely-continuous", {"l1_distance": 0.2})
    assert M.dw_upper_bound(d2) == pytest.approx(0.2)
    d3 = M.MeasurePairDescriptor("point-family", {
        "weight_deltas": (0.05, -0.05), "location_deltas": (0.1, 0.0),
        "max_abs_location": 1.5})
    assert M.dw_upper_bound(d3) == pytest.approx(1.5 * 0.2)
    d4 = M.MeasurePairDescriptor("disorder-rescale", {"lambda": 0.25})
    assert M.dw_upper_bound(d4) == pytest.approx(0.25)


def test_descriptor_validation():
    with pytest.raises(M.MeasureError):
        M.MeasurePairDescriptor("unknown-kind", {})
    with pytest.raises(M.MeasureError):
        M.MeasurePairDescriptor("mollified-atoms", {})
    with pytest.raises(M.MeasureError):
        M.MeasurePairDescriptor("mollified-atoms", {"eta": -0.1})


def test_descriptor_dominates_measured_dw():
    """d_w(pair) <= analytic bound + discretization slack, per kind."""
    base = M.bernoulli()
    eta = 0.05
    pair = M.mollify(base, "triangle", eta)
    d = M.MeasurePairDescriptor("mollified-atoms",
                                {"eta": eta, "support_bound": 1.0})
    assert M.dw(pair, base) <= M.dw_upper_bound(d) + 1e-9

    # absolutely-continuous pair: uniform vs tilted uniform
    step = 0.02
    xs = np.linspace(-1, 1, 401)
    phi = np.full_like(xs, 0.5)
    phi_a = 0.5 + 0.2 * xs
    nu = M.discretize_density(list(zip(xs, phi)), 1.0, step)
    nu_a = M.discretize_density(list(zip(xs, phi_a)), 1.0, step)
    l1 = float(np.trapezoid(np.abs(phi_a - phi), xs))
    d2 = M.MeasurePairDescriptor("absolutely-continuous", {"l1_distance": l1})
    assert M.dw(nu_a, nu) <= M.dw_upper_bound(d2) + step / 2 + 1e-9

    locs = np.array([-0.8, 0.1, 0.9])
    w = np.array([0.3, 0.4, 0.3])
    nu = M.make_atomic(locs, w, 1.0)
    dloc = np.array([0.03, -0.02, 0.0])
    dwt = np.array([0.05, -0.05, 0.0])
    nu_a = M.make_atomic(locs + dloc, w + dwt, 1.0)
    d3 = M.MeasurePairDescriptor("point-family", {
        "weight_deltas": tuple(dwt), "location_deltas": tuple(dloc),
        "max_abs_location": float(np.abs(locs + dloc).max())})
    assert M.dw(nu_a, nu) <= M.dw_upper_bound(d3) + 1e-9

    mu = M.bernoulli()
    lam = 0.2
    d4 = M.MeasurePairDescriptor("disorder-rescale", {"lambda": lam})
    assert M.dw(M.rescale(mu, lam), M.point_mass(0.0)) <= M.dw_upper_bound(d4) + 1e-9


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_text_roundtrip(tmp_path):
    m = M.make_atomic([-1 / 3, 0.123456789012345, 0.9], [0.25, 0.5, 0.25], C=1)
    path = tmp_path / "m.msr"
    M.save(m, path)
    back = M.load(path)
    assert np.array_equal(back.locations, m.locations)
    assert np.array_equal(back.weights, m.weights)
    assert back.support_bound == m.support_bound
    text = M.to_text(m)
    assert text.startswith("support_bound 1\n")
    assert "atom" in text


def test_from_text_errors():
    with pytest.raises(M.MeasureError):
        M.from_text("atom 0.0 1.0\n")       # missing header
    with pytest.raises(M.MeasureError):
        M.from_text("support_bound 1\nbogus line\n")


def test_sampling_deterministic():
    m = M.bernoulli()
    a = m.sample(9, 2, np.arange(64))
    b = m.sample(9, 2, np.arange(64))
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {-1.0, 1.0}
