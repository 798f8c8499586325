"""Operator assembly identities against quadrature-level oracles."""

import numpy as np
import pytest
import scipy.io
import scipy.sparse.linalg as spla

from penflow.assembly import (
    apply_dirichlet,
    assemble_convection,
    assemble_fluctuation_rhs,
    assemble_forcing,
    assemble_static,
    build_step_matrix,
    constrain_rhs,
    constrain_system,
    export_matrix_market,
)
from penflow.fem import (
    interpolate,
    velocity_at_quadrature,
    velocity_gradient_at_quadrature,
    zero_field,
)


def trilinear_oracle(space, w, v, z):
    """Skew-symmetrized convection form evaluated directly at quadrature.

    Independent of the matrix assembly path: fields are evaluated at the
    quadrature points and the two convective integrals are combined by
    explicit summation.
    """
    wq = velocity_at_quadrature(space, w.coefficients)
    vq = velocity_at_quadrature(space, v.coefficients)
    zq = velocity_at_quadrature(space, z.coefficients)
    gv = velocity_gradient_at_quadrature(space, v.coefficients)
    gz = velocity_gradient_at_quadrature(space, z.coefficients)
    conv_v = np.einsum("eqd,eqcd->eqc", wq, gv)  # (w . grad) v
    conv_z = np.einsum("eqd,eqcd->eqc", wq, gz)
    first = (space.wdet * np.einsum("eqc,eqc->eq", conv_v, zq)).sum()
    second = (space.wdet * np.einsum("eqc,eqc->eq", conv_z, vq)).sum()
    return 0.5 * (first - second)


def test_velocity_mass_integrates_constants(ops4, square4):
    u = interpolate(square4, lambda x, y: (np.ones_like(x), 0 * x), "velocity")
    assert u.coefficients @ ops4.M @ u.coefficients == pytest.approx(
        1.0, abs=1e-12)
    both = interpolate(square4, lambda x, y: (0 * x + 1, 0 * x + 1), "velocity")
    assert both.coefficients @ ops4.M @ both.coefficients == pytest.approx(
        2.0, abs=1e-12)


def test_stiffness_kills_constants(ops4, square4):
    u = interpolate(square4, lambda x, y: (0 * x + 2, 0 * x - 3), "velocity")
    assert np.abs(ops4.K @ u.coefficients).max() < 1e-10


def test_pressure_mass_linear_moment(ops4, square4):
    p = interpolate(square4, lambda x, y: x, "pressure")
    assert p.coefficients @ ops4.Mp @ p.coefficients == pytest.approx(
        1.0 / 3.0, abs=1e-10)


def test_divergence_operator_on_exact_fields(ops4, square4):
    rigid = interpolate(square4, lambda x, y: (-y, x), "velocity")
    assert np.abs(ops4.B @ rigid.coefficients).max() < 1e-13
    shear = interpolate(square4, lambda x, y: (x, 0 * y), "velocity")
    ones = np.ones(square4.n_pressure)
    assert np.abs(ops4.B @ shear.coefficients - ops4.Mp @ ones).max() < 1e-13


def test_convection_zero_wind(ops4, square4):
    N = assemble_convection(square4, zero_field(square4, "velocity"))
    assert np.abs(N.data).max() == 0.0 if N.nnz else True


def test_convection_antisymmetric_random(square4):
    rng = np.random.default_rng(7)
    w = zero_field(square4, "velocity")
    w.coefficients[:] = rng.standard_normal(square4.n_velocity)
    N = assemble_convection(square4, w)
    scale = spla.norm(N) + 1.0
    for _ in range(5):
        v = rng.standard_normal(square4.n_velocity)
        z = rng.standard_normal(square4.n_velocity)
        vnorm = np.linalg.norm(v)
        assert abs(v @ N @ v) <= 1e-12 * scale * vnorm * vnorm
        assert abs(v @ N @ z + z @ N @ v) <= 1e-12 * scale * np.linalg.norm(
            z) * vnorm


def test_trilinear_hand_value(square8):
    # w=(1,0), v1=(x,0), v2=(y,0): the first integral is int y = 1/2,
    # the second vanishes, so the skew form equals 1/4.
    w = interpolate(square8, lambda x, y: (0 * x + 1, 0 * x), "velocity")
    v1 = interpolate(square8, lambda x, y: (x, 0 * x), "velocity")
    v2 = interpolate(square8, lambda x, y: (y, 0 * x), "velocity")
    N = assemble_convection(square8, w)
    assert v2.coefficients @ N @ v1.coefficients == pytest.approx(
        0.25, abs=1e-10)
    assert trilinear_oracle(square8, w, v1, v2) == pytest.approx(
        0.25, abs=1e-12)


def test_convection_matches_quadrature_oracle(square4):
    rng = np.random.default_rng(21)
    for _ in range(4):
        fields = []
        for _k in range(3):
            f = zero_field(square4, "velocity")
            f.coefficients[:] = rng.standard_normal(square4.n_velocity)
            fields.append(f)
        w, v, z = fields
        via_matrix = z.coefficients @ assemble_convection(
            square4, w) @ v.coefficients
        assert via_matrix == pytest.approx(
            trilinear_oracle(square4, w, v, z), rel=1e-10, abs=1e-10)


def test_fluctuation_rhs_cases(square4):
    rng = np.random.default_rng(3)
    u_old = zero_field(square4, "velocity")
    u_old.coefficients[:] = rng.standard_normal(square4.n_velocity)
    zero = zero_field(square4, "velocity")
    assert np.abs(assemble_fluctuation_rhs(square4, zero, u_old)).max() == 0.0
    fluct = zero_field(square4, "velocity")
    fluct.coefficients[:] = rng.standard_normal(square4.n_velocity)
    assert np.abs(assemble_fluctuation_rhs(square4, fluct, zero)).max() == 0.0
    rhs = assemble_fluctuation_rhs(square4, fluct, u_old)
    expect = assemble_convection(square4, fluct) @ u_old.coefficients
    assert np.array_equal(rhs, expect)


def test_forcing_load_unit_x(square4):
    load = assemble_forcing(square4, lambda x, y, t: (0 * x + 1, 0 * x), 0.0)
    # sum over x-component rows integrates f_x against the basis sum = 1
    assert load[0::2].sum() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(load[1::2]).max() < 1e-15
    zeros = assemble_forcing(square4, lambda x, y, t: (0 * x, 0 * x), 0.0)
    assert np.abs(zeros).max() == 0.0


def test_forcing_passes_time_through(square4):
    load = assemble_forcing(
        square4, lambda x, y, t: (0 * x + t, 0 * x), 2.0)
    assert load[0::2].sum() == pytest.approx(2.0, abs=1e-12)


def test_step_matrix_velocity_block_symmetric(ops4, square4):
    sm = build_step_matrix(square4, ops4, zero_field(square4, "velocity"),
                           dt=1.0, nu=1.0, eps=1.0)
    n_v = square4.n_velocity
    F = sm.matrix[:n_v, :n_v]
    assert abs(F - F.T).max() < 1e-12


def test_step_matrix_rejects_bad_parameters(ops4, square4):
    mean = zero_field(square4, "velocity")
    with pytest.raises(ValueError, match="dt"):
        build_step_matrix(square4, ops4, mean, dt=0.0, nu=1.0, eps=0.1)
    with pytest.raises(ValueError, match="eps"):
        build_step_matrix(square4, ops4, mean, dt=0.1, nu=1.0, eps=-1.0)


def test_step_matrix_fingerprint_tracks_inputs(ops4, square4):
    mean = zero_field(square4, "velocity")
    a = build_step_matrix(square4, ops4, mean, dt=0.1, nu=1.0, eps=0.1)
    b = build_step_matrix(square4, ops4, mean, dt=0.05, nu=1.0, eps=0.1)
    assert a.fingerprint != b.fingerprint
    mean.coefficients[0] = 1.0
    c = build_step_matrix(square4, ops4, mean, dt=0.1, nu=1.0, eps=0.1)
    assert c.fingerprint != a.fingerprint


def test_assembly_is_bitwise_repeatable(square4):
    rng = np.random.default_rng(11)
    w = zero_field(square4, "velocity")
    w.coefficients[:] = rng.standard_normal(square4.n_velocity)
    n1 = assemble_convection(square4, w)
    n2 = assemble_convection(square4, w)
    assert n1.data.tobytes() == n2.data.tobytes()
    assert n1.indices.tobytes() == n2.indices.tobytes()
    s1 = assemble_static(square4)
    s2 = assemble_static(square4)
    assert s1.K.data.tobytes() == s2.K.data.tobytes()
    assert s1.B.data.tobytes() == s2.B.data.tobytes()


def test_apply_dirichlet_two_by_two():
    import scipy.sparse as sp

    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    rhs = np.zeros(2)
    A_c, rhs_c = apply_dirichlet(A, rhs, np.array([0]), np.array([1.0]))
    x = spla.spsolve(A_c.tocsc(), rhs_c)
    assert x[0] == pytest.approx(1.0, abs=0)
    assert x[1] == pytest.approx(-0.5, abs=1e-15)


def test_constrain_split_matches_apply(ops4, square4):
    import scipy.sparse as sp

    n_v = square4.n_velocity
    A = (ops4.M + ops4.K).tocsr()
    rng = np.random.default_rng(5)
    rhs = rng.standard_normal(n_v)
    constrained = square4.dirichlet_dofs()
    values = rng.standard_normal(len(constrained))
    A1, rhs1 = apply_dirichlet(A, rhs, constrained, values)
    A2, bc_cols = constrain_system(A, constrained)
    rhs2 = constrain_rhs(rhs, bc_cols, constrained, values)
    assert abs(A1 - A2).max() == 0.0
    assert np.array_equal(rhs1, rhs2)


def test_constrain_rhs_rejects_nan(ops4, square4):
    A = (ops4.M + ops4.K).tocsr()
    constrained = square4.dirichlet_dofs()
    _, bc_cols = constrain_system(A, constrained)
    values = np.zeros(len(constrained))
    values[0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        constrain_rhs(np.zeros(A.shape[0]), bc_cols, constrained, values)


def test_matrix_market_round_trip(tmp_path, ops4):
    path = tmp_path / "mass.mtx"
    export_matrix_market(path, ops4.M, comment="velocity mass")
    back = scipy.io.mmread(path)
    assert abs(back.tocsr() - ops4.M).max() < 1e-15
