import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thermocontact import nonlocal_kernel as nk
from thermocontact.discretization import assemble, build_unit_square_mesh
from thermocontact.physics import default_material

from oracles import dense_resum


@pytest.fixture(scope="module")
def kernel():
    forms = assemble(build_unit_square_mesh(6), default_material())
    return forms, nk.kernel_matrix(forms.surface_x, forms.m_surf, 0.25)


def test_kernel_shape_and_positivity(kernel):
    forms, W = kernel
    S = len(forms.surface_x)
    assert W.shape == (S, S)
    assert np.all(W > 0)
    assert np.allclose(W / forms.m_surf[None, :], (W / forms.m_surf[None, :]).T)
    with pytest.raises(ValueError):
        nk.kernel_matrix(forms.surface_x, forms.m_surf, 0.0)


def test_advance_matches_dense_resummation(kernel):
    forms, W = kernel
    rng = np.random.default_rng(2)
    etas = [rng.random(len(forms.surface_x)) for _ in range(7)]
    h = nk.HistoryAccumulator.zeros(len(etas[0]))
    for e in etas:
        h = nk.advance(h, W, e, 0.05)
    assert np.allclose(h.acc, dense_resum(W, etas, 0.05), rtol=1e-14, atol=1e-15)
    assert h.t_now == pytest.approx(0.35)


def test_constant_traction_growth(kernel):
    forms, W = kernel
    S = len(forms.surface_x)
    h = nk.HistoryAccumulator.zeros(S)
    dt, eta = 0.1, 2.0
    h1 = nk.advance(h, W, np.full(S, eta), dt)
    # mean growth equals dt * mean(w) * eta * |Gamma_c| with |Gamma_c| = 1
    wbar = forms.m_surf @ (W @ np.ones(S)) / forms.m_surf.sum()
    assert forms.m_surf @ h1.acc == pytest.approx(dt * wbar * eta * 1.0, rel=1e-14)


def test_advance_requires_positive_step(kernel):
    forms, W = kernel
    with pytest.raises(ValueError):
        nk.advance(nk.HistoryAccumulator.zeros(len(forms.surface_x)), W, np.ones(len(forms.surface_x)), 0.0)


@given(st.integers(1, 30), st.floats(0.001, 0.1), st.integers(0, 1000))
def test_bound_by_cauchy_schwarz(steps, dt, seed):
    # |R(t)| <= sqrt(t) max_i ||w_i||_{L2} ||eta||_{L2(0,t;L2)}
    forms = assemble(build_unit_square_mesh(4), default_material())
    W = nk.kernel_matrix(forms.surface_x, forms.m_surf, 0.25)
    rng = np.random.default_rng(seed)
    S = len(forms.surface_x)
    h = nk.HistoryAccumulator.zeros(S)
    sq = 0.0
    for _ in range(steps):
        e = rng.random(S)
        h = nk.advance(h, W, e, dt)
        sq += dt * float(forms.m_surf @ e ** 2)
    wn = np.sqrt(np.max((W / forms.m_surf[None, :]) ** 2 @ forms.m_surf))
    bound = np.sqrt(h.t_now) * wn * np.sqrt(sq)
    assert np.max(nk.eval_R_magnitude(h.acc)) <= 1.05 * bound


def test_equicontinuity_in_time(kernel):
    forms, W = kernel
    S = len(forms.surface_x)
    h = nk.HistoryAccumulator.zeros(S)
    e = np.ones(S)
    prev = h.acc
    for _ in range(10):
        h = nk.advance(h, W, e, 0.01)
        assert np.max(np.abs(h.acc - prev)) <= 0.01 * np.max(W.sum(axis=1)) * 1.0 + 1e-15
        prev = h.acc


def test_eval_R_direction():
    R = nk.eval_R(np.array([1.0, -2.0]), (1.0, 0.0))
    assert R.shape == (2, 2)
    assert np.array_equal(R[:, 1], np.zeros(2))
    assert np.array_equal(nk.eval_R_magnitude(np.array([1.0, -2.0])), np.array([1.0, 2.0]))
