import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_ctx
from ramanpair.schmidt import (
    QuadratureGrid, SchmidtReport, apodization_transform, energy_matrix, purity_energy,
    purity_momentum, purity_rho_oracle, purity_total, refine_until_converged, schmidt_from_matrix,
    total_matrix,
)


def _rand(rng, m, n, rank=None):
    if rank is None:
        return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    u = rng.standard_normal((m, rank)) + 1j * rng.standard_normal((m, rank))
    v = rng.standard_normal((rank, n)) + 1j * rng.standard_normal((rank, n))
    return u @ v


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(2, 200), st.integers(0, 2**31 - 1))
def test_svd_matches_density_oracle(m, n, seed):
    M = _rand(np.random.default_rng(seed), m, n)
    lam = schmidt_from_matrix(M)
    assert abs(np.sum(lam**2) - purity_rho_oracle(M)) < 1e-10
    assert abs(lam.sum() - 1) < 1e-12 and np.all(np.diff(lam) <= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(2, 60), st.integers(0, 2**31 - 1),
       st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3))
def test_scaling_and_transpose_invariance(m, n, seed, c):
    M = _rand(np.random.default_rng(seed), m, n)
    p = np.sum(schmidt_from_matrix(M) ** 2)
    assert abs(np.sum(schmidt_from_matrix(c * M) ** 2) - p) < 1e-12
    assert abs(np.sum(schmidt_from_matrix(M.T) ** 2) - p) < 1e-12


def test_factorable_kernel_is_pure():
    rng = np.random.default_rng(7)
    M = np.outer(rng.standard_normal(50) + 1j * rng.standard_normal(50), rng.standard_normal(300))
    lam = schmidt_from_matrix(M)
    assert lam.size == 1 and abs(np.sum(lam**2) - 1) < 1e-10


def test_report_invariants_and_json_round_trip():
    rep = SchmidtReport(np.array([0.5, 0.3, 0.2]), 0.38, {"n_nu": 3})
    assert rep.mode_number == pytest.approx(1 / 0.38) and rep.g2_predicted == pytest.approx(1.38)
    back = SchmidtReport.from_dict(json.loads(rep.to_json()))
    assert np.array_equal(back.schmidt_coefficients, rep.schmidt_coefficients) and back.purity == rep.purity
    with pytest.raises(ValueError):
        SchmidtReport(np.array([0.2, 0.8]), 0.68, {})
    with pytest.raises(ValueError):
        SchmidtReport(np.array([0.5, 0.4]), 0.41, {})


def test_grid_defaults_and_refinement_steps():
    ctx = make_ctx(7)
    g = QuadratureGrid().resolved(ctx)
    assert g.window_nu == pytest.approx(5 * (ctx.medium.linewidth + 2 * ctx.pump.sigma))
    nu, w = g.nu_axis()
    assert np.all(w > 0) and w.sum() == pytest.approx(2 * g.window_nu)
    g1 = g.refined(1)
    assert (g1.n_nu, g1.n_delta, g1.n_z) == (511, 511, 72)
    g2 = g1.refined(2)
    assert g2.window_nu == pytest.approx(1.5 * g.window_nu)
    assert (g2.nu_axis()[0][1] - g2.nu_axis()[0][0]) == pytest.approx(g1.nu_axis()[0][1] - g1.nu_axis()[0][0], rel=1e-12)


def test_energy_limits():
    ctx = make_ctx(7)
    sharp = ctx.replace(medium=ctx.medium.replace(linewidth=ctx.pump.sigma / 1e3))
    # continuum value 1 - Gamma/(sigma sqrt(pi)) ~ 0.99944; the 256 grid alone gives 0.9987
    rep = refine_until_converged(sharp, tol=1e-3, kind="energy")
    assert rep.converged and rep.purity > 0.999
    G = ctx.medium.linewidth
    mono = make_ctx(fwhm=G / 1e3)
    g = QuadratureGrid(200, 200, 1)
    rep = purity_energy(mono, g)
    M, _ = energy_matrix(mono, g)
    assert abs(rep.purity - purity_rho_oracle(M)) < 1e-8
    assert rep.purity < 0.2


def test_momentum_dispersionless_is_pure():
    from ramanpair.experiments import dispersionless
    ctx = make_ctx(7)
    flat = ctx.replace(medium=dispersionless(ctx.medium))
    assert purity_momentum(flat, QuadratureGrid(128, 128)).purity > 0.999


def test_zero_length_limit_single_node():
    ctx = make_ctx(7)
    g = QuadratureGrid(128, 128, 1)
    pt = purity_total(ctx, g, method="svd").purity
    pe = purity_energy(ctx, g).purity
    assert abs(pt - pe) < 1e-6


@pytest.mark.parametrize("mode,kw", [("forward", {}), ("backward", {}), ("offaxis", {"phi": 1.0, "fresnel": 1.0}),
                                     ("collinear", {"fresnel": 0.1})])
def test_solver_matches_kernel_built_matrix(mode, kw):
    ctx = make_ctx(7, mode, **kw)
    g = QuadratureGrid(48, 40, 24)
    assert purity_total(ctx, g, method="svd").purity == pytest.approx(purity_rho_oracle(total_matrix(ctx, g)), abs=1e-10)


@pytest.mark.parametrize("mode,kw", [("forward", {}), ("collinear", {"fresnel": 0.1}), ("offaxis", {"phi": 2.5, "fresnel": 1.0})])
def test_closed_form_z_matches_svd(mode, kw):
    ctx = make_ctx(7, mode, **kw)
    g = QuadratureGrid(128, 128, 48)
    a = purity_total(ctx, g, method="auto").purity
    b = purity_total(ctx, g, method="closed_form_z").purity
    assert abs(a - b) < 2e-5 * a


def test_global_phase_does_not_change_purity():
    ctx = make_ctx(7)
    M = total_matrix(ctx, QuadratureGrid(40, 32, 16))
    p = np.sum(schmidt_from_matrix(M) ** 2)
    assert abs(np.sum(schmidt_from_matrix(np.exp(0.7j) * M) ** 2) - p) < 1e-12


def test_apodization_transform_sinc_and_filon():
    ctx = make_ctx(7)
    T, info = apodization_transform(ctx, 5e4)
    q = np.array([0.0, 100.0, 785.0, 3e4])
    assert np.allclose(T(q), ctx.L * np.sinc(q * ctx.L / (2 * np.pi)))
    c3 = make_ctx(7, "collinear", fresnel=0.1)
    T3, info = apodization_transform(c3, 2e4)
    assert info["transform"] == "filon_fft"
    from ramanpair.jointamp import alpha_collinear
    x, w = np.polynomial.legendre.leggauss(400)
    Z = info["support"]
    z, w = x * Z, w * Z
    a = alpha_collinear(c3, z) / alpha_collinear(c3, 0.0)
    for qq in (0.0, 700.0, 5e3, 1.9e4):
        ref = np.sum(w * a * np.cos(qq * z))
        assert T3(qq) == pytest.approx(ref, rel=1e-5, abs=1e-7 * np.sum(w * a))


def test_refinement_terminates_quickly_on_smooth_case():
    ctx = make_ctx(fwhm=make_ctx().medium.linewidth)
    rep = refine_until_converged(ctx, tol=1e-3)
    assert rep.converged and len(rep.refinement_history) <= 3
    p = [h[1] for h in rep.refinement_history]
    assert abs(p[-1] - p[-2]) < 1e-3 * p[-1]


def test_refinement_budget_exhaustion_flags_unconverged():
    ctx = make_ctx(20)
    rep = refine_until_converged(ctx, QuadratureGrid(16, 16, 8), tol=1e-12, max_refinements=1)
    assert not rep.converged and len(rep.refinement_history) == 2
    with pytest.raises(ValueError):
        refine_until_converged(ctx, tol=0)
