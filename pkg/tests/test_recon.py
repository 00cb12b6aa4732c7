import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homocontact.assembly import GAUSS_POINTS, Laminate, MicrostructureSpec, gauss_gradients, sample_coefficient
from homocontact.cell import corrector_gradient_at, solve_correctors
from homocontact.mesh import build_domain_mesh, locate_cell
from homocontact.recon import reconstruct, write_gradients


@pytest.fixture(scope="module")
def laminate8():
    return solve_correctors(Laminate(), 8)


@pytest.fixture(scope="module")
def inclusion8():
    return solve_correctors(MicrostructureSpec(), 8)


def _fine_gauss_points(mesh):
    origin = mesh.node_coords[mesh.elements[:, 0]]
    return origin[:, None, :] + GAUSS_POINTS[None] * mesh.h


def test_zero_correctors_give_plain_gradient():
    corr = solve_correctors(MicrostructureSpec(1.0, 1.0), 8)
    mesh = build_domain_mesh(2, 8)
    u = np.random.default_rng(0).standard_normal(mesh.n_nodes)
    np.testing.assert_allclose(reconstruct(u, corr, mesh, 2), gauss_gradients(mesh, u), atol=1e-12)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_laminate_linear_field(laminate8, N):
    mesh = build_domain_mesh(N, 8)
    u = mesh.node_coords[:, 0].copy()
    g = reconstruct(u, laminate8, mesh, N)
    field = sample_coefficient(Laminate(), mesh, N)
    d1 = g[..., 0]
    np.testing.assert_allclose(d1[field == 1.0], 4 / 3, atol=1e-10)
    np.testing.assert_allclose(d1[field == 2.0], 2 / 3, atol=1e-10)
    np.testing.assert_allclose(field[:, None] * d1, 4 / 3, atol=1e-10)
    np.testing.assert_allclose(g[..., 1], 0.0, atol=1e-10)


def _interface_jumps(M, corrected=True):
    corr = solve_correctors(Laminate(), M)
    N = 2
    mesh = build_domain_mesh(N, M)
    x, y = mesh.node_coords.T
    u = np.sin(np.pi * x) * (1 + y) + x * y
    g = reconstruct(u, corr, mesh, N) if corrected else gauss_gradients(mesh, u)
    field = sample_coefficient(Laminate(), mesh, N)
    flux = (field[:, None] * g[..., 0]).reshape(N * M, N * M, 4)
    kap = field.reshape(N * M, N * M)
    across, within = [], []
    for c in range(N * M - 1):
        # right-hand Gauss points of column c against left-hand ones of column c + 1
        jump = np.abs(flux[:, c, [1, 3]] - flux[:, c + 1, [0, 2]]).max()
        (across if kap[0, c] != kap[0, c + 1] else within).append(jump)
    return max(across), max(within)


def test_laminate_flux_continuity():
    jumps = [_interface_jumps(M) for M in (8, 16, 32)]
    across = np.array([a for a, _ in jumps])
    # first order in h, and no worse than between neighbours of the same phase
    assert np.all(across[:-1] / across[1:] >= 1.8)
    for a, w in jumps:
        assert a <= 1.1 * w
    plain, _ = _interface_jumps(32, corrected=False)
    assert across[-1] < 0.5 * plain


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**31))
def test_linearity(inclusion8, a, b, seed):
    mesh = build_domain_mesh(2, 8)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, mesh.n_nodes))
    lhs = reconstruct(a * u + b * v, inclusion8, mesh, 2)
    rhs = a * reconstruct(u, inclusion8, mesh, 2) + b * reconstruct(v, inclusion8, mesh, 2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 50)


def test_periodic_in_congruent_cells(inclusion8):
    N, M = 3, 8
    mesh = build_domain_mesh(N, M)
    x, y = mesh.node_coords.T
    u = 2.0 * x - 0.5 * y  # constant gradient everywhere
    g = reconstruct(u, inclusion8, mesh, N).reshape(N, M, N, M, 4, 2)
    for cy in range(N):
        for cx in range(N):
            np.testing.assert_allclose(g[cy, :, cx], g[0, :, 0], rtol=0, atol=1e-12)


def test_matches_pointwise_corrector_gradient(inclusion8):
    N = 2
    mesh = build_domain_mesh(N, 8)
    u = np.random.default_rng(3).standard_normal(mesh.n_nodes)
    gu = gauss_gradients(mesh, u)
    pts = _fine_gauss_points(mesh)
    _, y = locate_cell(pts.reshape(-1, 2), N)
    D = corrector_gradient_at(inclusion8, y).reshape(mesh.n_elements, 4, 2, 2)
    expected = gu + np.einsum("eqil,eql->eqi", D, gu)
    np.testing.assert_allclose(reconstruct(u, inclusion8, mesh, N), expected, atol=1e-12)


def test_finite(inclusion8):
    mesh = build_domain_mesh(2, 8)
    u = np.random.default_rng(1).standard_normal(mesh.n_nodes)
    assert np.all(np.isfinite(reconstruct(u, inclusion8, mesh, 2)))


def test_resolution_mismatch(inclusion8):
    mesh = build_domain_mesh(2, 4)
    with pytest.raises(ValueError):
        reconstruct(np.zeros(mesh.n_nodes), inclusion8, mesh, 2)


def test_write_gradients():
    grad = np.arange(16.0).reshape(2, 4, 2)
    buf = io.StringIO()
    write_gradients(grad, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "element,gauss,dx,dy"
    assert lines[-1] == "1,3,14,15"
