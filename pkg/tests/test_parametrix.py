import numpy as np
import pytest

from microloc.grids import GridSpec, sample_on
from microloc.metric import identity_field
from microloc.parametrix import (EllipticSymbol, PatchRejectedError,
                                 bandwise_inverse, build_parametrix,
                                 covered_xi_mask, gaussian_wavepacket,
                                 parametrix_residual)
from microloc.partition import build_partition, localizer_symbol

G = GridSpec(dim=1, half_width=np.pi, n_grid=64)
MET = identity_field(1)


def _bracket_sq(grid):
    return sample_on(grid, lambda x, xi: 1.0 + xi ** 2 + 0.0 * x)


def _elliptic(grid, c0=0.4):
    return EllipticSymbol(symbol=_bracket_sq(grid), m2=2, c0=c0,
                          big_c0=4.0, big_r=1.0, metric=MET)


def test_bandwise_inverse_values():
    part = build_partition(MET, 2, 4)
    p = _elliptic(G)
    q = bandwise_inverse(p, part, 0, 3, G)
    lam = localizer_symbol(part, 0, 3, G)
    sup = np.abs(lam.values) > 0.0
    assert np.abs(q.values[~sup]).max() == 0.0
    assert np.abs(q.values[sup]
                  - lam.values[sup] / p.symbol.values[sup]).max() < 1e-14


def test_ellipticity_floor_rejection():
    part = build_partition(MET, 2, 4)
    # c0 large enough that 0.5 c0 (1+|xi|)^2 exceeds 1+xi^2 on the patch
    p = _elliptic(G, c0=10.0)
    with pytest.raises(PatchRejectedError):
        bandwise_inverse(p, part, 0, 3, G)
    with pytest.raises(PatchRejectedError):
        build_parametrix(p, part, 1, np.ones(G.n_grid), np.ones(G.n_grid), G)


def test_build_parametrix_order_validation():
    part = build_partition(MET, 2, 4)
    p = _elliptic(G)
    ones = np.ones(G.n_grid)
    with pytest.raises(ValueError):
        build_parametrix(p, part, 0, ones, ones, G)
    with pytest.raises(ValueError):
        build_parametrix(p, part, 4, ones, ones, G)


def test_covered_xi_mask_identity():
    part = build_partition(MET, 2, 4)
    mask = covered_xi_mask(part, G, [2, 3, 4])
    xi = G.xi_axis()
    at = dict(zip(xi.astype(int), mask))
    assert at[10] and at[8] and at[-10]
    assert not at[2]        # band 1 would be active but is not built
    assert not at[31]       # band 5 would be active but is not built
    assert not at[0]


def test_gaussian_wavepacket_localization():
    u = gaussian_wavepacket(G, 0.5, 10.0, 0.4)
    x = G.x_axis()
    assert np.abs(u[np.argmax(np.abs(u))]) == np.abs(u).max()
    assert x[np.argmax(np.abs(u))] == pytest.approx(0.5, abs=G.dx)
    spec = np.abs(np.fft.fftshift(np.fft.fft(u)))
    assert G.xi_axis()[np.argmax(spec)] == pytest.approx(10.0, abs=G.dxi)


def test_residual_rejects_uncovered_test_function():
    part = build_partition(MET, 2, 4)
    p = _elliptic(G)
    ones = np.ones(G.n_grid)
    px = build_parametrix(p, part, 1, ones, ones, G)
    bad = gaussian_wavepacket(G, 0.0, 1.0, 0.5)  # centered off the coverage
    rep = parametrix_residual(px, p, [bad, np.zeros(G.n_grid)], G)
    assert len(rep["rejected"]) == 2
    assert "frequency" in rep["rejected"][0]["reason"]
    assert np.isnan(rep["max_rel_error"])


def test_parametrix_inverts_multiplier_symbol():
    part = build_partition(MET, 1, 5, low_freq_cap=True)
    p = _elliptic(G)
    ones = np.ones(G.n_grid)
    px = build_parametrix(p, part, 1, ones, ones, G)
    tests = [gaussian_wavepacket(G, 0.0, s * 14.0, 0.55) for s in (-1, 1)]
    rep = parametrix_residual(px, p, tests, G)
    assert not rep["rejected"]
    assert rep["max_rel_error"] < 1e-6
    assert not px.excluded
    assert px.covered_bands == [1, 2, 3, 4, 5]
