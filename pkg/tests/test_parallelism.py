import numpy as np
import pytest

from finslerlab import MetricSource, parse_metric
from finslerlab.connection import frame_data
from finslerlab.frame_bundle import adapted_frame, fundamental_field, unpack_real
from finslerlab.parallelism import (
    _bracket_table,
    bianchi_residuals,
    closed_form_P,
    closed_form_Q,
    extract_structure,
    labels_real,
    lie_bracket,
    parallelism_at,
    structure_equation_residuals,
    u_block_basis,
)
from finslerlab.equivalence import structure_coefficients
from finslerlab.registry import sample_points


@pytest.fixture(scope="module")
def twisted():
    # non-Hermitian with base dependence: exercises every structure function
    return parse_metric(MetricSource(
        2, "sqrt(abs2(v1)^2 + abs2(v2)^2) + abs2(z1)*abs2(v2)/2"))


def test_basis_n1_has_three_fields(progs):
    prog = progs["poincare_disc"]
    p = adapted_frame(prog, [0.3], [1.0])
    basis = parallelism_at(prog, p)
    assert len(basis.labels) == 3
    assert basis.min_singular_ratio > 1e-6
    assert basis.max_tangency < 1e-8


def test_flat_vertical_field_matrix(progs):
    # without quadratic/cubic corrections the generator is the elementary
    # antisymmetric pair
    prog = progs["flat_2"]
    p = adapted_frame(prog, [0, 0], [1.0, 0.0])
    basis = parallelism_at(prog, p)
    t = basis.tangents[("e", 2)]
    expect = np.zeros((2, 2), dtype=complex)
    expect[1, 0] = 1.0
    expect[0, 1] = -1.0
    assert np.allclose(t.dU, p.U @ expect, atol=1e-14)
    assert np.allclose(t.dz, 0)


@pytest.mark.parametrize("metric_id, z, v, expected_dim", [
    ("poincare_disc", [0.2], [1.0], 3),
    ("l4_finsler", [0.1, 0.2], [1.0, 0.8], 8),
    ("poincare_ball_3", [0.1, 0.2, -0.1], [1.0, 0.4, 0.2], 15),
])
def test_basis_rank(progs, metric_id, z, v, expected_dim):
    prog = progs[metric_id]
    p = adapted_frame(prog, z, v)
    basis = parallelism_at(prog, p)
    assert len(basis.labels) == expected_dim
    assert basis.min_singular_ratio > 1e-6


def test_block_bracket_is_matrix_commutator(progs):
    prog = progs["poincare_ball_2"]
    p = adapted_frame(prog, [0.2, 0.1], [1.0, 0.4])
    mats = u_block_basis(2)
    assert len(mats) == 1
    # [t, E] for the single block generator: commutator of the generators
    t_mat = np.zeros((2, 2), dtype=complex)
    t_mat[0, 0] = 1j
    br = lie_bracket(prog, ("t",), ("u", 0), p)
    comm = fundamental_field(p, t_mat @ mats[0] - mats[0] @ t_mat)
    assert np.max(np.abs(br.dU - comm.dU)) < 1e-7
    assert np.max(np.abs(br.dz)) < 1e-9


def test_flat_horizontal_brackets_vanish(progs):
    prog = progs["flat_2"]
    p = adapted_frame(prog, [0.1, 0.3], [1.0, 0.5])
    for i in range(4):
        for j in range(i + 1, 4):
            br = lie_bracket(prog, ("f", i), ("f", j), p)
            assert br.norm() < 1e-9


def test_rotation_bracket_values(progs):
    # the rotation generator reproduces the holomorphic lifts: checks carry
    # the [t, e_0-hat] = i e_0-hat and [t, e_lam-hat] = 0 coefficients
    for mid, z, v in [("poincare_ball_2", [0.3, 0.1], [0.5, 1.0]),
                      ("l4_finsler", [0.1, 0.2], [1.0, 0.8])]:
        prog = progs[mid]
        p = adapted_frame(prog, z, v)
        sf = extract_structure(prog, p)
        assert sf.checks["rotation_horizontal"] < 1e-6
        assert sf.checks["rotation_vertical"] < 1e-6
        assert sf.checks["vertical_holomorphic_brackets"] < 1e-6
        assert sf.checks["vertical_mixed_t_coefficient"] < 1e-5


def test_torsion_matches_connection_antisymmetrization(progs, twisted):
    p = adapted_frame(twisted, [0.4 + 0.1j, -0.2 + 0.3j], [1.0, 0.7 + 0.2j])
    sf = extract_structure(twisted, p)
    assert sf.checks["torsion_vs_connection"] < 1e-8
    assert np.max(np.abs(sf.T + np.transpose(sf.T, (0, 2, 1)))) < 1e-12


def test_flat_structure_functions_vanish(progs):
    prog = progs["flat_2"]
    p = adapted_frame(prog, [0.1, -0.2], [1.0, 0.5])
    sf = extract_structure(prog, p)
    for arr in (sf.T, sf.R_raw, sf.Q, sf.P_h, sf.P_H, sf.h_vert, sf.H_vert):
        assert np.max(np.abs(arr), initial=0.0) < 1e-9


def test_kaehler_metrics_are_torsion_free(progs, entries):
    for mid in ("poincare_ball_2", "hermitian_nonconstant", "fubini_study_2"):
        prog = progs[mid]
        z, v = sample_points(prog, entries[mid], 1, seed=13)[0]
        sf = extract_structure(prog, adapted_frame(prog, z, v))
        assert np.max(np.abs(sf.T)) < 1e-7


def test_ball_curvature_anchor(progs):
    prog = progs["poincare_ball_2"]
    p = adapted_frame(prog, [0.3, 0.1], [0.5, 1.0])
    sf = extract_structure(prog, p)
    assert sf.R[0, 0, 0, 0] == pytest.approx(-4.0, abs=1e-4)
    assert sf.R_raw[0, 0, 0, 0] == pytest.approx(-2.0, abs=1e-4)


def test_curvature_skew_hermitian_symmetry(progs, twisted):
    p = adapted_frame(twisted, [0.4 + 0.1j, -0.2], [1.0, 0.7])
    sf = extract_structure(twisted, p)
    sym = np.conj(np.transpose(sf.R_raw, (1, 0, 3, 2)))
    assert np.max(np.abs(sf.R_raw - sym)) < 1e-8


def test_closed_form_Q_and_P(progs, twisted):
    rng = np.random.default_rng(17)
    for prog in (progs["l4_finsler"], twisted):
        for _ in range(5):
            z = 0.4 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
            v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            if min(abs(v)) / np.linalg.norm(v) < 0.35:
                continue
            p = adapted_frame(prog, z, v)
            sf = extract_structure(prog, p)
            assert np.max(np.abs(sf.Q - closed_form_Q(prog, p))) < 1e-5
            ph, pH = closed_form_P(prog, p)
            assert np.max(np.abs(sf.P_h - ph)) < 1e-5
            assert np.max(np.abs(sf.P_H - pH)) < 1e-5


def test_structure_equations_hermitian(progs, entries):
    for mid in ("flat_2", "poincare_ball_2", "hermitian_nonconstant"):
        prog = progs[mid]
        z, v = sample_points(prog, entries[mid], 1, seed=21)[0]
        p = adapted_frame(prog, z, v)
        r = structure_equation_residuals(prog, p)
        assert max(r["eq529"], r["eq533"], r["eq534"], r["eq535"], r["eq536"]) < 1e-5
        norms = r["finsler_norms"]
        assert max(norms["sigma"], norms["pi"], norms["phi"]) < 1e-6


def test_structure_equations_quartic_norm(progs):
    prog = progs["l4_finsler"]
    p = adapted_frame(prog, [0.1, 0.2], [1.0, 0.8])
    r = structure_equation_residuals(prog, p)
    assert max(r["eq529"], r["eq533"], r["eq534"], r["eq535"], r["eq536"]) < 1e-4
    assert r["finsler_norms"]["sigma0"] > 1e-3


def test_bianchi_identities(progs, twisted):
    cases = [
        (progs["flat_2"], [0.1, -0.2], [1.0, 0.5]),
        (progs["poincare_ball_2"], [0.3, 0.1], [0.5, 1.0]),
        (progs["fubini_study_2"], [0.3, -0.2], [0.2, 1.0]),
        (twisted, [0.4 + 0.1j, -0.2 + 0.3j], [1.0, 0.7 + 0.2j]),
    ]
    for prog, z, v in cases:
        p = adapted_frame(prog, z, v)
        b = bianchi_residuals(prog, p)
        assert max(b.values()) < 1e-3


def _constant_pair_block(prog, z, U):
    """Structure coefficients of bracket pairs involving the compact
    generators; these are the structure constants of the group action."""
    labs = labels_real(prog.dim)
    coeffs = structure_coefficients(prog, z, U)
    N = len(labs)
    out = []
    idx = 0
    for j in range(N):
        for k in range(j + 1, N):
            if labs[j][0] in ("t", "u") or labs[k][0] in ("t", "u"):
                out.append(coeffs[idx * N:(idx + 1) * N])
            idx += 1
    return np.concatenate(out)


def test_compact_generator_brackets_are_metric_independent(progs):
    # the coefficients involving the rotation and block generators realize a
    # fixed group action: identical for every metric and every point
    pf = adapted_frame(progs["flat_2"], [0.1, -0.3], [1.0, 0.5])
    ref = _constant_pair_block(progs["flat_2"], pf.z, pf.U)
    for mid, z, v in [("poincare_ball_2", [0.2, 0.1], [1.0, 0.4]),
                      ("l4_finsler", [0.1, 0.2], [1.0, 0.8])]:
        prog = progs[mid]
        p = adapted_frame(prog, z, v)
        vals = _constant_pair_block(prog, p.z, p.U)
        assert np.max(np.abs(vals - ref)) < 1e-6


def test_flat_isometry_invariance(progs):
    # structure coefficients agree at frames matched by a unitary chart map
    prog = progs["flat_2"]
    rng = np.random.default_rng(23)
    M = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    Q, R = np.linalg.qr(M)
    Q = Q * (np.diag(R) / np.abs(np.diag(R)))
    p = adapted_frame(prog, [0.1, -0.2], [1.0, 0.5j])
    a = structure_coefficients(prog, p.z, p.U)
    b = structure_coefficients(prog, Q @ p.z, Q @ p.U)
    assert np.max(np.abs(a - b)) < 1e-8


def test_bracket_residual_guard(progs):
    # the decomposition residual doubles as a tangency audit
    prog = progs["poincare_ball_2"]
    p = adapted_frame(prog, [0.2, 0.1], [1.0, 0.3])
    vals, br = _bracket_table(prog, p)
    assert np.isfinite(br).all()
    sf = extract_structure(prog, p)
    assert sf.residual < 1e-5
