import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn, random_radial_operator
from rare.operators import (
    DenseOperator,
    MeasurementOperator,
    SamplingPattern,
    adjoint_apply,
    datafid_gradient,
    forward_apply,
    operator_norm_estimate,
    pseudoinverse_recon,
    radial_density_weights,
)
from rare.simulation import synth_coil_maps


def brute_force_nudft(x, coords, maps):
    """Literal triple loop over samples and pixels."""
    n_phases, nx, ny = x.shape
    out = np.zeros((n_phases, maps.shape[0], coords.shape[1]), dtype=complex)
    px = np.arange(nx) - nx // 2
    py = np.arange(ny) - ny // 2
    for t in range(n_phases):
        for i in range(maps.shape[0]):
            z = maps[i] * x[t]
            for j, (kx, ky) in enumerate(coords[t]):
                acc = 0j
                for a in range(nx):
                    for b in range(ny):
                        acc += z[a, b] * np.exp(-2j * np.pi * (kx * px[a] + ky * py[b]))
                out[t, i, j] = acc / np.sqrt(nx * ny)
    return out


def materialize(op):
    n = int(np.prod(op.image_shape))
    cols = []
    for k in range(n):
        e = np.zeros(n, dtype=complex)
        e[k] = 1
        cols.append(op.forward(e.reshape(op.image_shape)).ravel())
    return np.array(cols).T


def test_zero_image_gives_zero_samples(rng):
    op = random_radial_operator(rng)
    assert np.all(forward_apply(op, np.zeros(op.image_shape)) == 0)
    assert np.all(adjoint_apply(op, np.zeros(op.data_shape)) == 0)


def test_delta_spectrum_on_full_grid():
    op = MeasurementOperator(SamplingPattern.full_grid((8, 8)), (8, 8))
    x = np.zeros((1, 8, 8), complex)
    x[0, 4, 4] = 1  # centred origin
    y = op.forward(x)
    np.testing.assert_allclose(np.abs(y), 1 / 8, rtol=1e-14)
    np.testing.assert_allclose(y, 1 / 8, atol=1e-14)


def test_forward_matches_brute_force(rng):
    op = random_radial_operator(rng, n=8, spokes=3, readout=8)
    x = crandn(rng, 1, 8, 8)
    ref = brute_force_nudft(x, op.pattern.coords, op.coil_maps)
    got = op.forward(x)
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-10


def test_multicoil_forward_matches_brute_force(rng):
    op = random_radial_operator(rng, n=6, n_phases=2, spokes=2, readout=6, n_coils=3)
    x = crandn(rng, 2, 6, 6)
    ref = brute_force_nudft(x, op.pattern.coords, op.coil_maps)
    assert np.linalg.norm(op.forward(x) - ref) / np.linalg.norm(ref) <= 1e-10


def test_adjoint_of_dc_sample_is_constant():
    pattern = SamplingPattern(np.zeros((1, 1, 2)), np.ones((1, 1)))
    op = MeasurementOperator(pattern, (4, 4))
    img = op.adjoint(np.ones((1, 1, 1)))
    np.testing.assert_allclose(img, np.full((1, 4, 4), 0.25), atol=1e-15)


@pytest.mark.parametrize("n_coils,mode", [(1, "direct"), (4, "direct"), (2, "gridding")])
def test_adjoint_identity(rng, n_coils, mode):
    op = random_radial_operator(rng, n=12, n_phases=2, spokes=4, readout=12,
                                n_coils=n_coils, mode=mode)
    for _ in range(10):
        x = crandn(rng, *op.image_shape)
        y = crandn(rng, *op.data_shape)
        hx = op.forward(x)
        lhs = np.vdot(y, hx)
        rhs = np.vdot(op.adjoint(y), x)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(hx) * np.linalg.norm(y)


@settings(max_examples=25, deadline=None)
@given(alpha=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       seed=st.integers(0, 2**31 - 1))
def test_linearity(alpha, seed):
    rng = np.random.default_rng(seed)
    op = random_radial_operator(rng, n=8, spokes=3, readout=8)
    x1, x2 = crandn(rng, 1, 8, 8), crandn(rng, 1, 8, 8)
    lhs = op.forward(alpha * x1 + x2)
    rhs = alpha * op.forward(x1) + op.forward(x2)
    scale = abs(alpha) * np.linalg.norm(op.forward(x1)) + np.linalg.norm(op.forward(x2))
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * scale


def test_pseudoinverse_exact_on_full_grid(rng):
    op = MeasurementOperator(SamplingPattern.full_grid((8, 6), n_phases=3), (8, 6))
    x = crandn(rng, 3, 8, 6)
    rec = pseudoinverse_recon(op, op.forward(x))
    assert np.linalg.norm(rec - x) / np.linalg.norm(x) <= 1e-10
    assert np.all(pseudoinverse_recon(op, np.zeros(op.data_shape)) == 0)


def test_pseudoinverse_matches_weighted_adjoint_oracle(rng):
    # independent route: brute-force adjoint of the weighted samples, then coil normalisation
    n = 10
    op = random_radial_operator(rng, n=n, n_phases=1, spokes=2, readout=10, n_coils=2)
    x = crandn(rng, 1, n, n)
    y = op.forward(x)
    yw = y * op.pattern.weights[:, None, :]
    px = np.arange(n) - n // 2
    k = op.pattern.coords[0]
    ref = np.zeros((n, n), complex)
    for i in range(op.n_coils):
        img = np.zeros((n, n), complex)
        for j in range(k.shape[0]):
            img += yw[0, i, j] * np.exp(2j * np.pi * (k[j, 0] * px[:, None] + k[j, 1] * px[None, :]))
        ref += np.conj(op.coil_maps[i]) * img / n
    ref /= np.sum(np.abs(op.coil_maps) ** 2, axis=0)
    got = op.pseudoinverse(y)[0]
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-10


def test_gradient_zero_at_consistent_point_and_minus_adjoint_at_zero(rng):
    op = random_radial_operator(rng)
    x = crandn(rng, *op.image_shape)
    y = op.forward(x)
    assert np.linalg.norm(datafid_gradient(op, x, y)) <= 1e-12 * np.linalg.norm(x)
    np.testing.assert_allclose(datafid_gradient(op, np.zeros_like(x), y), -op.adjoint(y))


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        for unit, part in ((1.0, "real"), (1j, "imag")):
            xp = x.copy()
            xm = x.copy()
            xp[idx] += h * unit
            xm[idx] -= h * unit
            d = (f(xp) - f(xm)) / (2 * h)
            g[idx] += d if part == "real" else 1j * d
    return g


def test_gradient_matches_finite_differences(rng):
    op = random_radial_operator(rng, n=6, n_phases=2, spokes=2, readout=6, n_coils=2)
    x = crandn(rng, *op.image_shape)
    y = crandn(rng, *op.data_shape)

    def f(v):
        r = op.forward(v) - y
        return 0.5 * np.vdot(r, r).real

    g = datafid_gradient(op, x, y)
    num = fd_gradient(f, x)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) <= 1e-5


def test_norm_estimate_identity_and_mask():
    full = MeasurementOperator(SamplingPattern.full_grid((8, 8)), (8, 8))
    assert abs(operator_norm_estimate(full) - 1) <= 1e-8
    mask = np.zeros((1, 8, 8), bool)
    mask[0, ::3, :] = True
    sub = MeasurementOperator(SamplingPattern.cartesian(mask), (8, 8))
    assert abs(operator_norm_estimate(sub) - 1) <= 1e-8


def test_norm_estimate_matches_dense_svd(rng):
    op = random_radial_operator(rng, n=8, spokes=3, readout=8, n_coils=2)
    H = materialize(op)
    sigma = np.linalg.svd(H, compute_uv=False)[0]
    est = operator_norm_estimate(op, iters=500, seed=3)
    assert abs(est - sigma**2) / sigma**2 <= 1e-6
    assert est == operator_norm_estimate(op, iters=500, seed=3)


def test_norm_estimate_of_zero_operator_is_zero():
    op = DenseOperator(np.zeros((3, 4)), (1, 2, 2))
    assert operator_norm_estimate(op) == 0.0


def test_gridding_agrees_with_direct(rng):
    direct = random_radial_operator(np.random.default_rng(5), n=32, n_phases=1, spokes=16, readout=32)
    grid = MeasurementOperator(direct.pattern, (32, 32), mode="gridding")
    x = crandn(rng, 1, 32, 32)
    a, b = direct.forward(x), grid.forward(x)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-3
    y = crandn(rng, *direct.data_shape)
    a, b = direct.adjoint(y), grid.adjoint(y)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-3


def test_dense_operator_matches_materialized(rng):
    op = random_radial_operator(rng, n=4, spokes=2, readout=4)
    dense = DenseOperator(materialize(op), op.image_shape)
    x = crandn(rng, *op.image_shape)
    np.testing.assert_allclose(dense.forward(x).ravel(), op.forward(x).ravel(), atol=1e-12)
    y = crandn(rng, *dense.data_shape)
    np.testing.assert_allclose(np.vdot(y, dense.forward(x)), np.vdot(dense.adjoint(y), x))


def test_radial_density_weights_cover_disc():
    n, spokes, readout = 32, 64, 64
    t = (np.arange(readout) - readout // 2) / readout
    ang = np.pi * np.arange(spokes) / spokes
    coords = np.stack([np.outer(np.cos(ang), t), np.outer(np.sin(ang), t)], -1).reshape(1, -1, 2)
    w = radial_density_weights(coords, spokes, readout, n * n)
    # total area is the disc of radius 1/2 in units of grid cells, up to the one-sided edge sample
    assert abs(w.sum() - np.pi / 4 * n * n) / (np.pi / 4 * n * n) < 0.01
    assert np.all(w > 0)


@pytest.mark.parametrize(
    "coords,weights",
    [
        (np.zeros((1, 0, 2)), np.ones((1, 0))),
        (np.full((1, 2, 2), 0.5), np.ones((1, 2))),
        (np.zeros((1, 2, 2)), np.zeros((1, 2))),
        (np.zeros((2, 2)), np.ones((2,))),
    ],
)
def test_invalid_patterns_rejected(coords, weights):
    with pytest.raises(ValueError):
        SamplingPattern(coords, weights)


def test_shape_and_finiteness_errors(rng):
    op = random_radial_operator(rng)
    with pytest.raises(ValueError):
        op.forward(np.zeros((1, 7, 8)))
    bad = np.zeros(op.image_shape, complex)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        op.forward(bad)
    with pytest.raises(ValueError):
        op.adjoint(np.zeros((1, 1, 5)))


def test_dead_coil_pixel_rejected():
    maps = synth_coil_maps(2, (8, 8), seed=0)
    maps[:, 3, 3] = 0
    with pytest.raises(ValueError):
        MeasurementOperator(SamplingPattern.full_grid((8, 8)), (8, 8), maps)
