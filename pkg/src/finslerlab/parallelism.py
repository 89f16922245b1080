"""Absolute parallelism on the adapted frame bundle and its structure functions.

The parallelism consists of the 2n horizontal lifts, the 2(n-1) Webster-type
vertical fields, the fiber rotation generator and a fixed skew-Hermitian
basis of the block algebra acting on e_1..e_{n-1}.  Lie brackets are
computed numerically from finite-difference Jacobians of the fields in
ambient coordinates; their components in the parallelism basis are the
structure functions, the complete local isometry invariants.

Convention anchor: curvature components are extracted raw from brackets and
additionally reported in the holomorphic-sectional-curvature normalization
(twice the raw coefficient), in which the unit-disc metric has constant
curvature -4.  Torsion and the vertical structure functions carry no
normalization factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .connection import FrameData, frame_data
from .frame_bundle import (
    AmbientTangent,
    BundlePoint,
    pack_real,
    unpack_real,
    verify_tangent,
)
from .metric_dsl import FinslerError, MetricProgram

HSC_NORMALIZATION = 2.0  # reported curvature = raw bracket coefficient * this


def _unit(n: int, r: int, c: int) -> np.ndarray:
    A = np.zeros((n, n), dtype=complex)
    A[r, c] = 1.0
    return A


def u_block_basis(n: int) -> list[np.ndarray]:
    """Fixed basis of the skew-Hermitian algebra on the e_1..e_{n-1} block."""
    mats = [1j * _unit(n, lam, lam) for lam in range(1, n)]
    for lam in range(1, n):
        for mu in range(lam + 1, n):
            mats.append(_unit(n, lam, mu) - _unit(n, mu, lam))
    for lam in range(1, n):
        for mu in range(lam + 1, n):
            mats.append(1j * (_unit(n, lam, mu) + _unit(n, mu, lam)))
    return mats


def labels_real(n: int) -> list[tuple]:
    out = [("f", i) for i in range(2 * n)]
    out += [("e", a) for a in range(2, 2 * n)]
    out += [("t",)]
    out += [("u", k) for k in range((n - 1) ** 2)]
    return out


def labels_complex(n: int) -> list[tuple]:
    out = [("eh", a) for a in range(n)]
    out += [("ehb", a) for a in range(n)]
    out += [("ev", lam) for lam in range(1, n)]
    out += [("evb", lam) for lam in range(1, n)]
    out += [("t",)]
    out += [("V", rho, sig) for rho in range(1, n) for sig in range(1, n)]
    return out


# --------------------------------------------------------------------------
# the parallelism fields
# --------------------------------------------------------------------------

def _vertical_BC(fd: FrameData, lam: int) -> tuple[np.ndarray, np.ndarray]:
    """Generator pair of the Webster-type vertical field for index lam.

    B carries the metric-dependent corrections (pure quadratic and cubic
    form coefficients); C is the constant conjugate part.
    """
    n = fd.n
    C20 = fd.C(2, 0)
    C21 = fd.C(2, 1)
    B = _unit(n, lam, 0)
    for mu in range(1, n):
        B[0, mu] -= C20[mu, lam]
        for nu in range(1, n):
            B[nu, mu] -= C21[mu, lam, nu]
    C = -_unit(n, 0, lam)
    return B, C


def field_tangent(fd: FrameData, label: tuple) -> AmbientTangent:
    """Value of one parallelism field at the point of fd (any ambient point)."""
    n = fd.n
    U = fd.U
    kind = label[0]
    if kind == "f":
        i = label[1]
        gam, odd = divmod(i, 2)
        w = np.zeros(n, dtype=complex)
        w[gam] = 1j if odd else 1.0
        return AmbientTangent(U @ w, U @ (fd.E[:, :, gam] * w[gam]))
    if kind == "e":
        a = label[1]
        lam, odd = divmod(a, 2)
        B, C = _vertical_BC(fd, lam)
        A = 1j * (B - C) if odd else B + C
        return AmbientTangent(np.zeros(n, dtype=complex), U @ A)
    if kind == "t":
        return AmbientTangent(np.zeros(n, dtype=complex), U @ (1j * _unit(n, 0, 0)))
    if kind == "u":
        A = u_block_basis(n)[label[1]]
        return AmbientTangent(np.zeros(n, dtype=complex), U @ A)
    raise FinslerError(f"unknown field label {label!r}")


def _real_field_matrix(prog: MetricProgram, z, U) -> np.ndarray:
    """All parallelism fields at (z, U), packed as real columns."""
    fd = frame_data(prog, z, U)
    cols = [pack_real(field_tangent(fd, lab)) for lab in labels_real(prog.dim)]
    return np.array(cols).T


def _complexify(vec: np.ndarray, n: int) -> np.ndarray:
    """Real ambient tangent -> complexified stack (dz, dzbar, dU, dUbar)."""
    dz, dU = unpack_real(np.asarray(vec, dtype=float), n)
    return np.concatenate([dz, np.conj(dz), dU.ravel(), np.conj(dU).ravel()])


def _complex_basis(fd: FrameData) -> np.ndarray:
    """Columns: complexified basis fields in the order of labels_complex."""
    n = fd.n
    U = fd.U
    Ub = np.conj(U)
    zc = np.zeros(n, dtype=complex)
    zU = np.zeros((n, n), dtype=complex)

    def stack(dzh, dza, dUh, dUa):
        return np.concatenate([dzh, dza, dUh.ravel(), dUa.ravel()])

    cols = []
    for a in range(n):
        M = fd.E[:, :, a]
        cols.append(stack(U[:, a], zc, U @ M, zU))
    for a in range(n):
        M = fd.E[:, :, a]
        cols.append(stack(zc, Ub[:, a], zU, np.conj(U @ M)))
    BCs = [_vertical_BC(fd, lam) for lam in range(1, n)]
    for B, C in BCs:
        cols.append(stack(zc, zc, U @ B, np.conj(U @ C)))
    for B, C in BCs:
        cols.append(stack(zc, zc, U @ C, np.conj(U @ B)))
    T = 1j * _unit(n, 0, 0)
    cols.append(stack(zc, zc, U @ T, np.conj(U @ T)))
    for rho in range(1, n):
        for sig in range(1, n):
            cols.append(stack(zc, zc, U @ _unit(n, rho, sig),
                              -np.conj(U @ _unit(n, sig, rho))))
    return np.array(cols).T


def _complex_combination_matrix(n: int) -> np.ndarray:
    """K with complex_field_i = sum_j K[i, j] * real_field_j (constant)."""
    rl = labels_real(n)
    cl = labels_complex(n)
    pos = {lab: j for j, lab in enumerate(rl)}
    m = n - 1
    K = np.zeros((len(cl), len(rl)), dtype=complex)
    # indices of the u-basis families
    diag = {lam: pos[("u", lam - 1)] for lam in range(1, n)}
    skew, isym = {}, {}
    k = m
    for lam in range(1, n):
        for mu in range(lam + 1, n):
            skew[(lam, mu)] = pos[("u", k)]
            k += 1
    for lam in range(1, n):
        for mu in range(lam + 1, n):
            isym[(lam, mu)] = pos[("u", k)]
            k += 1
    for i, lab in enumerate(cl):
        kind = lab[0]
        if kind == "eh":
            K[i, pos[("f", 2 * lab[1])]] = 0.5
            K[i, pos[("f", 2 * lab[1] + 1)]] = -0.5j
        elif kind == "ehb":
            K[i, pos[("f", 2 * lab[1])]] = 0.5
            K[i, pos[("f", 2 * lab[1] + 1)]] = 0.5j
        elif kind == "ev":
            K[i, pos[("e", 2 * lab[1])]] = 0.5
            K[i, pos[("e", 2 * lab[1] + 1)]] = -0.5j
        elif kind == "evb":
            K[i, pos[("e", 2 * lab[1])]] = 0.5
            K[i, pos[("e", 2 * lab[1] + 1)]] = 0.5j
        elif kind == "t":
            K[i, pos[("t",)]] = 1.0
        elif kind == "V":
            rho, sig = lab[1], lab[2]
            if rho == sig:
                K[i, diag[rho]] = -1j
            elif rho < sig:
                K[i, skew[(rho, sig)]] = 0.5
                K[i, isym[(rho, sig)]] = -0.5j
            else:
                K[i, skew[(sig, rho)]] = -0.5
                K[i, isym[(sig, rho)]] = -0.5j
    return K


# --------------------------------------------------------------------------
# basis assembly and numerical brackets
# --------------------------------------------------------------------------

@dataclass
class ParallelismBasis:
    point: BundlePoint
    labels: list
    tangents: dict
    matrix: np.ndarray  # real columns
    min_singular_ratio: float
    max_tangency: float


def parallelism_at(prog: MetricProgram, p: BundlePoint,
                   tangency_tol: float = 1e-6) -> ParallelismBasis:
    """Assemble the parallelism at p, with tangency and independence checks."""
    fd = frame_data(prog, p.z, p.U)
    labs = labels_real(prog.dim)
    tangents = {lab: field_tangent(fd, lab) for lab in labs}
    worst = max(verify_tangent(prog, p, t) for t in tangents.values())
    if worst > tangency_tol:
        raise FinslerError(
            f"parallelism field fails tangency ({worst:.2e}); jets inaccurate "
            "or the point is not an adapted frame")
    mat = np.array([pack_real(tangents[lab]) for lab in labs]).T
    sv = np.linalg.svd(mat, compute_uv=False)
    return ParallelismBasis(point=p, labels=labs, tangents=tangents, matrix=mat,
                            min_singular_ratio=float(sv[-1] / sv[0]),
                            max_tangency=float(worst))


def _jacobians(prog: MetricProgram, z, U, step: float = 1e-5) -> np.ndarray:
    """Finite-difference Jacobians of all field columns; shape (D, N, D)."""
    n = prog.dim
    p0 = pack_real(AmbientTangent(np.asarray(z, dtype=complex),
                                  np.asarray(U, dtype=complex)))
    D = len(p0)
    cols = []
    for k in range(D):
        h = step * (1.0 + abs(p0[k]))
        e = np.zeros(D)
        e[k] = h
        zp, Up = unpack_real(p0 + e, n)
        zm, Um = unpack_real(p0 - e, n)
        fp = _real_field_matrix(prog, zp, Up)
        fm = _real_field_matrix(prog, zm, Um)
        cols.append((fp - fm) / (2 * h))
    return np.stack(cols, axis=-1)  # (D, N, D): d field_m / d coord_k


def _bracket_table(prog: MetricProgram, p: BundlePoint) -> tuple[np.ndarray, np.ndarray]:
    """All pairwise brackets of the real parallelism fields at p.

    Returns (values, brackets): values[:, m] is field m at p, and
    brackets[a, b] = J_b @ X_a - J_a @ X_b in packed-real coordinates.
    """
    key = ("brackets", p.key())
    hit = prog._cache.get(key)
    if hit is not None:
        return hit
    vals = _real_field_matrix(prog, p.z, p.U)
    jac = _jacobians(prog, p.z, p.U)
    # jac[:, m, k] = d(field m)/d(coord k); bracket = DY.X - DX.Y
    br = np.einsum("imk,kj->jmi", jac, vals) - np.einsum("imk,kj->mji", jac, vals)
    out = (vals, br)
    prog._cache[key] = out
    return out


def lie_bracket(prog: MetricProgram, label_x: tuple, label_y: tuple,
                p: BundlePoint, tangency_tol: float = 1e-5) -> AmbientTangent:
    """Numerical Lie bracket of two parallelism fields at p."""
    labs = labels_real(prog.dim)
    vals, br = _bracket_table(prog, p)
    a, b = labs.index(tuple(label_x)), labs.index(tuple(label_y))
    dz, dU = unpack_real(br[a, b], prog.dim)
    t = AmbientTangent(dz, dU)
    res = verify_tangent(prog, p, t)
    scale = max(1.0, t.norm())
    if res > tangency_tol * scale:
        raise FinslerError(f"bracket is not tangent to the bundle ({res:.2e})")
    return t


# --------------------------------------------------------------------------
# structure function extraction
# --------------------------------------------------------------------------

@dataclass
class StructureFunctions:
    """Complete set of structure functions at a bundle point.

    ``R`` is in the holomorphic-sectional-curvature normalization
    (unit disc -> -4); ``R_raw`` is the bracket-native coefficient.
    """

    point: BundlePoint
    T: np.ndarray          # (n, n, n)  T^a_{bg}, antisymmetric in (b, g)
    R_raw: np.ndarray      # (n, n, n, n)  R^a_{b g dbar}
    Q: np.ndarray          # (m, m, m, m) Q^rho_{sig lam mubar}, m = n-1
    P_h: np.ndarray        # (m, m, n)  coefficient family paired with dh
    P_H: np.ndarray        # (m, m, m, n) family paired with dH
    h_vert: np.ndarray     # (m, m) pure quadratic form on the block
    H_vert: np.ndarray     # (m, m, m) cubic form H_{lam mu nubar}
    residual: float        # worst bracket-decomposition residual
    checks: dict = field(default_factory=dict)
    u_embedding: np.ndarray | None = None

    @property
    def R(self) -> np.ndarray:
        return HSC_NORMALIZATION * self.R_raw


def extract_structure(prog: MetricProgram, p: BundlePoint,
                      residual_tol: float = 1e-5) -> StructureFunctions:
    """Decompose all parallelism brackets and read off the structure functions."""
    n = prog.dim
    m = n - 1
    fd = frame_data(prog, p.z, p.U)
    vals, br = _bracket_table(prog, p)
    K = _complex_combination_matrix(n)
    cl = labels_complex(n)
    cpos = {lab: i for i, lab in enumerate(cl)}
    basis = _complex_basis(fd)
    N = len(cl)

    # complexified real brackets, then complex-bilinear combinations
    br_complexified = np.empty(br.shape[:2] + (basis.shape[0],), dtype=complex)
    for a in range(br.shape[0]):
        for b in range(br.shape[1]):
            br_complexified[a, b] = _complexify(br[a, b], n)
    brc = np.einsum("ax,by,xyd->abd", K, K, br_complexified)

    sol, *_ = np.linalg.lstsq(basis, brc.reshape(N * N, -1).T, rcond=None)
    coeff = sol.T.reshape(N, N, N)  # coeff[a, b, i]: bracket (a,b) on basis i
    resid = brc - np.einsum("abi,di->abd", coeff, basis)
    scale = np.maximum(1.0, np.linalg.norm(brc, axis=2))
    worst = float(np.max(np.linalg.norm(resid, axis=2) / scale))
    if worst > residual_tol:
        raise FinslerError(f"bracket decomposition residual {worst:.2e} exceeds tolerance")

    def C(*lab):
        return coeff[cpos[lab[0]], cpos[lab[1]]]

    checks = {}

    # torsion from holomorphic-holomorphic brackets
    T = np.zeros((n, n, n), dtype=complex)
    horiz_purity = 0.0
    for b in range(n):
        for g in range(n):
            c = C(("eh", b), ("eh", g))
            for a in range(n):
                T[a, b, g] = -c[cpos[("eh", a)]]
            other = np.delete(c, [cpos[("eh", a2)] for a2 in range(n)])
            horiz_purity = max(horiz_purity, float(np.max(np.abs(other), initial=0.0)))
    checks["holomorphic_bracket_purity"] = horiz_purity
    checks["torsion_vs_connection"] = float(np.max(np.abs(T - fd.torsion)))

    # curvature from mixed horizontal brackets
    R = np.zeros((n, n, n, n), dtype=complex)
    mixed_purity = 0.0
    for b in range(n):
        for g in range(n):
            c = C(("eh", b), ("ehb", g))
            R[0, 0, b, g] = c[cpos[("t",)]] / 1j
            for lam in range(1, n):
                R[lam, 0, b, g] = -c[cpos[("ev", lam)]]
                R[0, lam, b, g] = c[cpos[("evb", lam)]]
                for sig in range(1, n):
                    R[lam, sig, b, g] = -c[cpos[("V", lam, sig)]]
            mixed_purity = max(mixed_purity, float(np.max(np.abs(
                [c[cpos[("eh", a)]] for a in range(n)]
                + [c[cpos[("ehb", a)]] for a in range(n)]), initial=0.0)))
    checks["mixed_bracket_purity"] = mixed_purity

    # rotation generator relations
    rot = 0.0
    for b in range(n):
        c = C(("t",), ("eh", b))
        expect = np.zeros(N, dtype=complex)
        if b == 0:
            expect[cpos[("eh", 0)]] = 1j
        rot = max(rot, float(np.max(np.abs(c - expect))))
    checks["rotation_horizontal"] = rot

    # vertical algebra: Q from mixed vertical brackets
    Q = np.zeros((m, m, m, m), dtype=complex)
    vert_zero = 0.0
    vert_t = 0.0
    for mu in range(1, n):
        for nu in range(1, n):
            vert_zero = max(vert_zero, float(np.max(np.abs(C(("ev", mu), ("ev", nu))),
                                                    initial=0.0)))
            c = C(("ev", mu), ("evb", nu))
            vert_t = max(vert_t, abs(c[cpos[("t",)]] + 1j * (mu == nu)))
            for rho in range(1, n):
                for sig in range(1, n):
                    Q[rho - 1, sig - 1, mu - 1, nu - 1] = (
                        c[cpos[("V", rho, sig)]] + (rho == mu) * (sig == nu))
    checks["vertical_holomorphic_brackets"] = vert_zero
    checks["vertical_mixed_t_coefficient"] = vert_t

    q0 = 0.0
    for nu in range(1, n):
        c = C(("t",), ("ev", nu))
        expect = np.zeros(N, dtype=complex)
        expect[cpos[("ev", nu)]] = -1j
        q0 = max(q0, float(np.max(np.abs(c - expect))))
    checks["rotation_vertical"] = q0  # includes Q^rho_{sig 0 nu} = 0

    # mixed vertical-horizontal brackets: P families
    P_h = np.zeros((m, m, n), dtype=complex)
    P_H = np.zeros((m, m, m, n), dtype=complex)
    p_zero = 0.0
    for rho in range(1, n):
        for g in range(n):
            c = C(("evb", rho), ("eh", g))
            # leading horizontal part: -delta_{rho g} e0_hat
            expect_h = np.zeros(n, dtype=complex)
            if rho == g:
                expect_h[0] = -1.0
            p_zero = max(p_zero, float(np.max(np.abs(
                [c[cpos[("eh", a)]] - expect_h[a] for a in range(n)]))))
            p_zero = max(p_zero, abs(c[cpos[("t",)]]))
            for nu in range(1, n):
                P_h[nu - 1, rho - 1, g] = c[cpos[("ev", nu)]]
                p_zero = max(p_zero, abs(c[cpos[("evb", nu)]]))
                for sig in range(1, n):
                    P_H[nu - 1, sig - 1, rho - 1, g] = c[cpos[("V", nu, sig)]]
    checks["vanishing_P_families"] = p_zero

    C20 = fd.C(2, 0)
    C21 = fd.C(2, 1)
    sf = StructureFunctions(
        point=p, T=T, R_raw=R, Q=Q, P_h=P_h, P_H=P_H,
        h_vert=C20[1:, 1:].copy(), H_vert=C21[1:, 1:, 1:].copy(),
        residual=worst, checks=checks,
    )
    # record the embedding of the complex block basis in the real fields
    sf.u_embedding = K[[cpos[("V", r, s)] for r in range(1, n) for s in range(1, n)], :]
    return sf


# --------------------------------------------------------------------------
# closed forms for Q and P
# --------------------------------------------------------------------------

def closed_form_Q(prog: MetricProgram, p: BundlePoint) -> np.ndarray:
    """Q from the quartic form: the vertical curvature has the closed form
    HH_{mubar rhobar sig lam} - sum_nu H_{nu mubar rhobar} H_{sig lam nubar}
    (the nu = 0 term reproduces the quadratic-form product)."""
    fd = frame_data(prog, p.z, p.U)
    n = prog.dim
    C22 = fd.C(2, 2)
    C21 = fd.C(2, 1)
    C12 = fd.C(1, 2)
    m = n - 1
    Q = np.zeros((m, m, m, m), dtype=complex)
    for rho in range(1, n):
        for sig in range(1, n):
            for lam in range(1, n):
                for mu in range(1, n):
                    val = C22[sig, lam, mu, rho]
                    val -= sum(C12[nu, mu, rho] * C21[sig, lam, nu] for nu in range(n))
                    Q[rho - 1, sig - 1, lam - 1, mu - 1] = val
    return Q


def form_derivative(prog: MetricProgram, z, U, dz, dU, pq: tuple[int, int]) -> np.ndarray:
    """Directional derivative of the frame-contracted (p, q) fiber form
    along the real ambient tangent (dz, dU)."""
    fd = frame_data(prog, z, U)
    pdeg, qdeg = pq
    n = prog.dim
    Uc = np.conj(fd.U)
    dz = np.asarray(dz, dtype=complex)
    dU = np.asarray(dU, dtype=complex)

    def contract(t, left=None, pos=None):
        # contract tensor slots with frame columns, substituting `left`
        # (an n x n matrix) at slot `pos`
        for s in range(pdeg):
            mat = left if (pos == s and left is not None) else fd.U
            t = np.tensordot(t, mat, axes=(0, 0))
        for s in range(qdeg):
            mat = left if (pos == pdeg + s and left is not None) else Uc
            t = np.tensordot(t, mat, axes=(0, 0))
        return t

    TZ, TZb = fd.jet.fiber_tensor_dbase(pdeg, qdeg)
    out = contract(np.einsum("k,k...->...", dz, TZ)
                   + np.einsum("k,k...->...", np.conj(dz), TZb))
    de0 = dU[:, 0]
    out = out + contract(np.tensordot(de0, fd.jet.fiber_tensor(pdeg + 1, qdeg),
                                      axes=(0, 0)))
    t_up = fd.jet.fiber_tensor(pdeg, qdeg + 1)
    out = out + contract(np.tensordot(np.conj(de0), t_up, axes=(0, pdeg)))
    raw = fd.jet.fiber_tensor(pdeg, qdeg)
    for s in range(pdeg):
        out = out + contract(raw, left=dU, pos=s)
    for s in range(qdeg):
        out = out + contract(raw, left=np.conj(dU), pos=pdeg + s)
    return out


def _complex_lift_derivative(prog: MetricProgram, p: BundlePoint, g: int,
                             pq: tuple[int, int], conj_dir: bool = False):
    """Derivative of a frame form along the holomorphic lift e_g-hat
    (or its conjugate), as a complex combination of real derivatives."""
    fd = frame_data(prog, p.z, p.U)
    t0 = field_tangent(fd, ("f", 2 * g))
    t1 = field_tangent(fd, ("f", 2 * g + 1))
    d0 = form_derivative(prog, p.z, p.U, t0.dz, t0.dU, pq)
    d1 = form_derivative(prog, p.z, p.U, t1.dz, t1.dU, pq)
    return 0.5 * (d0 + 1j * d1) if conj_dir else 0.5 * (d0 - 1j * d1)


def closed_form_P(prog: MetricProgram, p: BundlePoint):
    """The two derivative families of the structure functions:

        P_h[nu, rho, g]      = -lift_g(conj h_pure)[nu, rho]
        P_H[nu, sig, rho, g] = -lift_g(H_(1,2))[sig, nu, rho]

    where lift_g is the derivative along the holomorphic horizontal lift.
    Index placement is fixed against the bracket extraction; the tests
    assert agreement on a non-Hermitian metric with base dependence.
    """
    n = prog.dim
    m = n - 1
    # lift_g(conj f) = conj(conj-lift_g(f))
    d20c = np.array([np.conj(_complex_lift_derivative(prog, p, g, (2, 0), conj_dir=True))
                     for g in range(n)])
    d12 = np.array([_complex_lift_derivative(prog, p, g, (1, 2)) for g in range(n)])
    P_h = np.zeros((m, m, n), dtype=complex)
    P_H = np.zeros((m, m, m, n), dtype=complex)
    for nu in range(1, n):
        for rho in range(1, n):
            for g in range(n):
                P_h[nu - 1, rho - 1, g] = -d20c[g][nu, rho]
                for sig in range(1, n):
                    P_H[nu - 1, sig - 1, rho - 1, g] = -d12[g][sig, nu, rho]
    return P_h, P_H


# --------------------------------------------------------------------------
# the dual coframe
# --------------------------------------------------------------------------

def _split_stack(X: np.ndarray, n: int):
    return (X[:n], X[n:2 * n],
            X[2 * n:2 * n + n * n].reshape(n, n),
            X[2 * n + n * n:].reshape(n, n))


class _Coframe:
    """theta / omega / varpi evaluated on complexified ambient tangents."""

    def __init__(self, fd: FrameData):
        self.fd = fd
        self.n = fd.n
        self.Uinv = np.linalg.inv(fd.U)
        self.Ubinv = np.conj(self.Uinv)
        self.M = fd.E  # M[:, :, g]
        C21 = fd.C(2, 1)
        # varpi correction entries: corr[a, b, lam] multiplies omega[lam, 0]
        n = self.n
        corr = np.zeros((n, n, n), dtype=complex)
        for a in range(1, n):
            for b in range(1, n):
                corr[a, b, :] = C21[b, :, a]
        self.corr = corr

    def theta(self, X: np.ndarray):
        dzh, dza, _, _ = _split_stack(X, self.n)
        return self.Uinv @ dzh, self.Ubinv @ dza

    def omega(self, X: np.ndarray):
        dzh, dza, dUh, dUa = _split_stack(X, self.n)
        th = self.Uinv @ dzh
        ta = self.Ubinv @ dza
        oh = self.Uinv @ dUh - np.einsum("abg,g->ab", self.M, th)
        oa = self.Ubinv @ dUa - np.einsum("abg,g->ab", np.conj(self.M), ta)
        return oh, oa

    def varpi(self, X: np.ndarray) -> np.ndarray:
        """Holomorphic skew-Hermitianized connection matrix on X."""
        oh, oa = self.omega(X)
        n = self.n
        w = np.zeros((n, n), dtype=complex)
        w[0, 0] = oh[0, 0]
        for lam in range(1, n):
            w[lam, 0] = oh[lam, 0]
            w[0, lam] = -oa[lam, 0]
        if n > 1:
            w[1:, 1:] = oh[1:, 1:] + np.einsum("abl,l->ab", self.corr[1:, 1:, :], oh[:, 0])
        return w


def _form_tables(prog: MetricProgram, z, U):
    """theta / varpi values of every complexified basis field at (z, U)."""
    fd = frame_data(prog, z, U)
    cf = _Coframe(fd)
    basis = _complex_basis(fd)
    N = basis.shape[1]
    n = fd.n
    TH = np.zeros((n, N), dtype=complex)
    THb = np.zeros((n, N), dtype=complex)
    W = np.zeros((n, n, N), dtype=complex)
    for i in range(N):
        th, tb = cf.theta(basis[:, i])
        TH[:, i] = th
        THb[:, i] = tb
        W[:, :, i] = cf.varpi(basis[:, i])
    return fd, cf, basis, TH, THb, W


# --------------------------------------------------------------------------
# structure equations
# --------------------------------------------------------------------------

def structure_equation_residuals(prog: MetricProgram, p: BundlePoint,
                                 step: float = 1e-5) -> dict:
    """Residuals of the first-order identities satisfied by the coframe.

    Both sides of the torsion and curvature equations are evaluated on all
    pairs of parallelism fields; exterior derivatives use central
    finite differences along the fields.  Also reports the sup-norms of
    the purely Finslerian torsion/curvature coefficient families.
    """
    n = prog.dim
    sf = extract_structure(prog, p)
    fd0, cf0, basis0, TH0, THb0, W0 = _form_tables(prog, p.z, p.U)
    N = len(labels_complex(n))
    K = _complex_combination_matrix(n)
    vals, br = _bracket_table(prog, p)

    # displaced form tables along each real field
    TH_pm, W_pm = [], []
    for mreal in range(vals.shape[1]):
        xm = vals[:, mreal]
        h = step * (1.0 + np.linalg.norm(xm))
        zp, Up = unpack_real(pack_real(AmbientTangent(p.z, p.U)) + h * xm, n)
        zm_, Um = unpack_real(pack_real(AmbientTangent(p.z, p.U)) - h * xm, n)
        _, _, _, THp, _, Wp = _form_tables(prog, zp, Up)
        _, _, _, THm, _, Wm = _form_tables(prog, zm_, Um)
        TH_pm.append((THp - THm) / (2 * h))
        W_pm.append((Wp - Wm) / (2 * h))
    dTH_r = np.stack(TH_pm, axis=0)    # (Nreal, n, N): D_m theta^a(basis_i)
    dW_r = np.stack(W_pm, axis=0)      # (Nreal, n, n, N)

    # complex-direction derivatives: X_x(f) = sum_m K[x, m] D_m f
    dTH_c = np.einsum("xm,mai->xai", K, dTH_r)
    dW_c = np.einsum("xm,mabi->xabi", K, dW_r)

    # complex brackets and their form values at p
    brc = np.einsum("xm,yk,mkd->xyd", K, K,
                    np.stack([[_complexify(br[a, b], n) for b in range(br.shape[1])]
                              for a in range(br.shape[0])]))
    TH_br = np.zeros((n, N, N), dtype=complex)
    W_br = np.zeros((n, n, N, N), dtype=complex)
    for x in range(N):
        for y in range(N):
            TH_br[:, x, y] = cf0.theta(brc[x, y])[0]
            W_br[:, :, x, y] = cf0.varpi(brc[x, y])

    # d eta (X_x, X_y) = X(eta(Y)) - Y(eta(X)) - eta([X, Y])
    dTH = (np.transpose(dTH_c, (1, 0, 2)) - np.transpose(dTH_c, (1, 2, 0))
           - TH_br)                    # (n, N, N)
    dW = (np.transpose(dW_c, (1, 2, 0, 3)) - np.transpose(dW_c, (1, 2, 3, 0))
          - W_br)                      # (n, n, N, N)

    def wedge(A, B):
        # (eta wedge xi)(X_i, X_j) for row-vectors of form values
        return np.einsum("ai,bj->abij", A, B) - np.einsum("aj,bi->abij", A, B)

    # torsion equation
    C21 = fd0.C(2, 1)
    theta_wedge = wedge(TH0, TH0)      # theta^b ^ theta^g
    Theta = 0.5 * np.einsum("abg,bgij->aij", sf.T, theta_wedge)
    Sigma = np.zeros((n, N, N), dtype=complex)
    if n > 1:
        # H_{abar mu lam} = C21[mu, lam, a]; contraction over mu, lam >= 1
        w_lam0 = W0[1:, 0, :]          # varpi[lam, 0] values
        sw = np.einsum("li,mj->lmij", w_lam0, TH0[1:, :]) \
            - np.einsum("lj,mi->lmij", w_lam0, TH0[1:, :])
        Sigma = np.einsum("mla,lmij->aij", C21[1:, 1:, :], sw)
    lhs533 = dTH + _wedge_matrix_vector(W0, TH0)
    eq533 = float(np.max(np.abs(lhs533 - Theta - Sigma)))

    # curvature equations, matrix form
    Omega = np.einsum("abgd,gi,dj->abij", sf.R_raw, TH0, THb0) \
        - np.einsum("abgd,gj,di->abij", sf.R_raw, TH0, THb0)
    Pi, Phi, pi_norm, phi_norm = _pi_phi_forms(prog, p, fd0, TH0, THb0, W0)
    lhsW = dW + _wedge_matrix_matrix(W0)
    resW = lhsW - Omega - Pi - Phi
    eq534 = float(np.max(np.abs(resW[0, 0])))
    eq535 = float(np.max(np.abs(resW[1:, 0]))) if n > 1 else 0.0
    eq535 = max(eq535, float(np.max(np.abs(resW[0, 1:]))) if n > 1 else 0.0)
    eq536 = float(np.max(np.abs(resW[1:, 1:]))) if n > 1 else 0.0

    # omega skew-symmetry of the curvature 2-form family
    skew = float(np.max(np.abs(sf.R_raw - np.conj(np.transpose(sf.R_raw, (1, 0, 3, 2))))))

    # structure-group linear relations on the connection form
    eq529 = _vertical_subspace_residual(fd0, basis0, cf0)

    C20 = fd0.C(2, 0)
    sigma0 = float(np.max(np.abs(C20[1:, 1:]))) if n > 1 else 0.0
    sigma = float(np.max(np.abs(C21[1:, 1:, :]))) if n > 1 else 0.0
    return {
        "eq529": eq529,
        "eq533": eq533,
        "eq534": eq534,
        "eq535": eq535,
        "eq536": eq536,
        "omega_skew": skew,
        "decomposition_residual": sf.residual,
        "finsler_norms": {"sigma": sigma, "sigma0": sigma0,
                          "pi": pi_norm, "phi": phi_norm},
    }


def _wedge_matrix_vector(W, TH):
    # (varpi ^ theta)^a = sum_b varpi[a,b] ^ theta^b
    return (np.einsum("abi,bj->aij", W, TH) - np.einsum("abj,bi->aij", W, TH))


def _wedge_matrix_matrix(W):
    # (varpi ^ varpi)[a,b] = sum_c varpi[a,c] ^ varpi[c,b]
    return (np.einsum("aci,cbj->abij", W, W) - np.einsum("acj,cbi->abij", W, W))


def _pi_phi_forms(prog, p, fd, TH, THb, W):
    """Oblique and vertical Finsler curvature 2-forms on basis pairs."""
    n = fd.n
    N = TH.shape[1]
    Pi = np.zeros((n, n, N, N), dtype=complex)
    Phi = np.zeros((n, n, N, N), dtype=complex)
    if n == 1:
        return Pi, Phi, 0.0, 0.0
    d20 = np.array([_complex_lift_derivative(prog, p, g, (2, 0)) for g in range(n)])
    d20b = np.array([_complex_lift_derivative(prog, p, g, (2, 0), conj_dir=True)
                     for g in range(n)])
    d12 = np.array([_complex_lift_derivative(prog, p, g, (1, 2)) for g in range(n)])
    d21b = np.array([_complex_lift_derivative(prog, p, g, (2, 1), conj_dir=True)
                     for g in range(n)])

    def w2(a_vals, b_vals):
        return np.einsum("i,j->ij", a_vals, b_vals) - np.einsum("j,i->ij", a_vals, b_vals)

    pi_norm = 0.0
    for lam in range(1, n):
        for rho in range(1, n):
            for g in range(n):
                cb = np.conj(d20b[g][lam, rho])   # lift_g(conj h)[lam, rho]
                cf_ = d20b[g][lam, rho]           # conj-lift_g(h)[lam, rho]
                Pi[lam, 0] += -cb * w2(W[0, rho], TH[g])
                Pi[0, lam] += -cf_ * w2(W[rho, 0], THb[g])
                pi_norm = max(pi_norm, abs(cb))
                for mu in range(1, n):
                    cH = d12[g][mu, lam, rho]       # lift_g(H_(1,2))[mu, lam, rho]
                    cHb = d21b[g][mu, rho, lam]     # conj-lift_g(H_(2,1))[mu, rho, lam]
                    Pi[lam, mu] += -cH * w2(W[0, rho], TH[g]) \
                        - cHb * w2(W[rho, 0], THb[g])
                    pi_norm = max(pi_norm, abs(cH), abs(cHb))
    C22 = fd.C(2, 2)
    C21 = fd.C(2, 1)
    C12 = fd.C(1, 2)
    phi_norm = 0.0
    for lam in range(1, n):
        for mu in range(1, n):
            for rho in range(1, n):
                for sig in range(1, n):
                    k4 = C22[mu, rho, lam, sig] - sum(
                        C12[nu, lam, sig] * C21[mu, rho, nu] for nu in range(n))
                    Phi[lam, mu] += k4 * w2(W[rho, 0], W[0, sig])
                    phi_norm = max(phi_norm, abs(k4))
    return Pi, Phi, pi_norm, phi_norm


def _vertical_subspace_residual(fd, basis, cf) -> float:
    """Residual of the linear relations cutting out the vertical algebra,
    evaluated on every parallelism field."""
    n = fd.n
    C20 = fd.C(2, 0)
    C21 = fd.C(2, 1)
    C12 = fd.C(1, 2)
    worst = 0.0
    for i in range(basis.shape[1]):
        oh, oa = cf.omega(basis[:, i])
        # on real fields omega_a = conj(omega_h); on complex combinations the
        # antiholomorphic slot realizes the conjugate-form values
        worst = max(worst, abs(oh[0, 0] + oa[0, 0]))
        for lam in range(1, n):
            r = oh[0, lam] + oa[lam, 0] + sum(C20[lam, nu] * oh[nu, 0]
                                              for nu in range(n))
            worst = max(worst, abs(r))
            for mu in range(1, n):
                r = oh[lam, mu] + oa[mu, lam] \
                    + sum(C21[mu, nu, lam] * oh[nu, 0] for nu in range(n)) \
                    + sum(C12[mu, lam, nu] * oa[nu, 0] for nu in range(n))
                worst = max(worst, abs(r))
    return float(worst)


# --------------------------------------------------------------------------
# Bianchi identities
# --------------------------------------------------------------------------

def _lift_derivative_of(prog: MetricProgram, p: BundlePoint, func,
                        step: float = 1e-4):
    """Derivatives of a matrix-valued point function along the 2n horizontal
    lifts; returns (holomorphic, antiholomorphic) arrays with leading index g."""
    n = prog.dim
    fd = frame_data(prog, p.z, p.U)
    base = pack_real(AmbientTangent(p.z, p.U))
    d_real = []
    for i in range(2 * n):
        t = field_tangent(fd, ("f", i))
        h = step * (1.0 + t.norm())
        zp, Up = unpack_real(base + h * pack_real(t), n)
        zm, Um = unpack_real(base - h * pack_real(t), n)
        d_real.append((func(zp, Up) - func(zm, Um)) / (2 * h))
    hol = np.array([0.5 * (d_real[2 * g] - 1j * d_real[2 * g + 1]) for g in range(n)])
    anti = np.array([0.5 * (d_real[2 * g] + 1j * d_real[2 * g + 1]) for g in range(n)])
    return hol, anti


def bianchi_residuals(prog: MetricProgram, p: BundlePoint,
                      step: float = 1e-4) -> dict:
    """Residuals of the differential identities tying the torsion, the
    curvature and their horizontal derivatives.  Derivatives of the
    curvature come from finite differences of the bracket extraction, so
    the practical noise floor is around 1e-3 times the curvature scale."""
    n = prog.dim
    sf = extract_structure(prog, p)
    T, R = sf.T, sf.R_raw
    fd = frame_data(prog, p.z, p.U)
    C12 = fd.C(1, 2)
    C21 = fd.C(2, 1)

    dT_h, dT_a = _lift_derivative_of(prog, p, lambda z, U: frame_data(prog, z, U).torsion)
    dR_h, dR_a = _lift_derivative_of(
        prog, p, lambda z, U: extract_structure(prog, BundlePoint(z, U)).R_raw, step=step)
    d12_h = np.array([_complex_lift_derivative(prog, p, g, (1, 2)) for g in range(n)])
    d21_a = np.array([_complex_lift_derivative(prog, p, g, (2, 1), conj_dir=True)
                      for g in range(n)])

    scale = max(1.0, float(np.max(np.abs(R))), float(np.max(np.abs(T))))
    r1 = r2 = r3 = r4 = 0.0
    for a in range(n):
        for b in range(n):
            for g in range(n):
                for d in range(n):
                    # cyclic torsion identity
                    v = (dT_h[b][a, g, d] + dT_h[g][a, d, b] + dT_h[d][a, b, g]
                         + sum(T[a, e, b] * T[e, g, d] + T[a, e, d] * T[e, b, g]
                               + T[a, e, g] * T[e, d, b] for e in range(n)))
                    r1 = max(r1, abs(v))
                    # antisymmetrized curvature vs torsion derivative
                    v = (R[a, b, g, d] - R[a, g, b, d] - dT_a[d][a, b, g]
                         - sum(C21[lam, b, a] * R[lam, 0, g, d]
                               - C21[lam, g, a] * R[lam, 0, b, d]
                               for lam in range(n)))
                    r2 = max(r2, abs(v))
                    for e in range(n):
                        # holomorphic derivative identity
                        v = (dR_h[g][a, b, d, e] - dR_h[d][a, b, g, e]
                             + sum(R[a, b, zz, e] * T[zz, g, d] for zz in range(n))
                             + sum(d12_h[g][b, a, lam] * R[0, lam, d, e]
                                   - d12_h[d][b, a, lam] * R[0, lam, g, e]
                                   for lam in range(n)))
                        r3 = max(r3, abs(v))
                        # antiholomorphic derivative identity (conjugate
                        # mirror of the holomorphic one)
                        v = (dR_a[d][a, b, g, e] - dR_a[e][a, b, g, d]
                             + sum(R[a, b, g, zz] * np.conj(T[zz, d, e])
                                   for zz in range(n))
                             + sum(d21_a[d][b, lam, a] * R[lam, 0, g, e]
                                   - d21_a[e][b, lam, a] * R[lam, 0, g, d]
                                   for lam in range(n)))
                        r4 = max(r4, abs(v))
    return {"b541": r1 / scale, "b542": r2 / scale,
            "b543": r3 / scale, "b544": r4 / scale}
