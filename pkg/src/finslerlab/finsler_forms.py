"""Multilinear fiber forms of a complex Finsler metric.

The quadratic, cubic and quartic fiber forms are the order-2, 3, 4 jets of
F^2 in the fiber variables, contracted with frame vectors.  An index is an
integer 0..n-1 for a holomorphic slot, or ``bar(k)`` for the conjugate slot;
values only depend on the multiset of indices of each type (total symmetry).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metric_dsl import EvaluationError, FinslerError, MetricProgram


def bar(k: int) -> int:
    """Barred (conjugate) version of index k; involutive."""
    return ~k


def is_barred(idx: int) -> bool:
    return idx < 0


def contract(tensor: np.ndarray, unbarred, barred) -> complex:
    """Contract a (p, q) fiber tensor with vectors (barred ones conjugated)."""
    out = tensor
    for x in unbarred:
        out = np.tensordot(np.asarray(x, dtype=complex), out, axes=(0, 0))
    for y in barred:
        out = np.tensordot(np.conj(np.asarray(y, dtype=complex)), out, axes=(0, 0))
    return complex(out)


def raw_fiber_tensors(prog: MetricProgram, z, v, max_order: int = 4) -> dict:
    """All coordinate fiber tensors d^p_v d^q_vbar F^2 with p+q <= max_order."""
    jet = prog.jet_unchecked(z, v, max_order, 0)
    return {(p, q): jet.fiber_tensor(p, q)
            for p in range(max_order + 1) for q in range(max_order + 1 - p)}


@dataclass
class FinslerForms:
    """Frame components of the fiber forms at a point (z, v)."""

    z: np.ndarray
    v: np.ndarray
    frame: np.ndarray  # columns are the evaluation frame
    comp: dict = field(repr=False)  # (p, q) -> frame-contracted tensor

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def h_mixed(self) -> np.ndarray:
        """Hermitian matrix h(e_a, conj(e_b))."""
        return self.comp[(1, 1)]

    @property
    def h_pure(self) -> np.ndarray:
        """Symmetric matrix h(e_a, e_b); vanishes iff F comes from a Hermitian metric."""
        return self.comp[(2, 0)]

    def _lookup(self, indices) -> complex:
        unb = tuple(sorted(i for i in indices if not is_barred(i)))
        brd = tuple(sorted(~i for i in indices if is_barred(i)))
        t = self.comp[(len(unb), len(brd))]
        return complex(t[unb + brd]) if unb + brd else complex(t)

    def H(self, a, b, c) -> complex:
        """Cubic form component; use bar(k) for conjugate indices."""
        return self._lookup((a, b, c))

    def HH(self, a, b, c, d) -> complex:
        """Quartic form component; use bar(k) for conjugate indices."""
        return self._lookup((a, b, c, d))


def forms_at(prog: MetricProgram, z, v, frame=None, max_order: int = 4) -> FinslerForms:
    """Fiber forms at (z, v) in the given frame (coordinate frame if omitted)."""
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = prog.dim
    if frame is None:
        frame = np.eye(n, dtype=complex)
    frame = np.asarray(frame, dtype=complex)
    if np.linalg.matrix_rank(frame) < n:
        raise FinslerError("frame columns are linearly dependent")
    raw = raw_fiber_tensors(prog, z, v, max_order)
    comp = {}
    for (p, q), t in raw.items():
        for _ in range(p):
            t = np.tensordot(t, frame, axes=(0, 0))
        for _ in range(q):
            t = np.tensordot(t, np.conj(frame), axes=(0, 0))
        comp[(p, q)] = t
    return FinslerForms(z=z, v=v, frame=frame, comp=comp)


# --------------------------------------------------------------------------
# homogeneity identities
# --------------------------------------------------------------------------

def _nested(raw, xs) -> complex:
    """Nested derivative of F^2 along trivially extended real vectors.

    Each x in xs is the complex component vector of a real tangent vector;
    the value expands over holomorphic/antiholomorphic splittings.
    """
    k = len(xs)
    total = 0.0 + 0.0j
    for mask in range(1 << k):
        unb = [xs[i] for i in range(k) if mask >> i & 1]
        brd = [xs[i] for i in range(k) if not mask >> i & 1]
        total += contract(raw[(len(unb), len(brd))], unb, brd)
    return total


def homogeneity_identities(prog: MetricProgram, z, v, directions=None, seed=0) -> dict:
    """Residuals of the Euler/rotation identities satisfied by any metric
    with F(lambda v) = |lambda| F(v).

    Returns a dict of maximal absolute residuals, relative to the local
    scale of F^2.
    """
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = prog.dim
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = [rng.standard_normal(n) + 1j * rng.standard_normal(n)
                      for _ in range(6)]
    raw = {}
    jet = prog.jet_unchecked(z, v, 5, 0)
    for p in range(6):
        for q in range(6 - p):
            raw[(p, q)] = jet.fiber_tensor(p, q)
    f2 = float(np.real(raw[(0, 0)]))
    scale = max(1.0, abs(f2))

    res = {}
    # radial and rotational derivatives of F^2 itself
    d10 = contract(raw[(1, 0)], [v], [])
    res["a_radial"] = abs(d10 + np.conj(d10) - 2 * f2) / scale
    res["a_rotation"] = abs(1j * d10 - 1j * np.conj(d10)) / scale
    res["d_radial10"] = abs(d10 - f2) / scale

    # degree counting and rotation identity on nested derivatives, k <= 4
    res_b = 0.0
    res_c = 0.0
    for k in range(1, 5):
        for t in range(len(directions) - k + 1):
            xs = directions[t:t + k]
            g = _nested(raw, xs)
            gscale = max(scale, abs(g))
            res_b = max(res_b, abs(_nested(raw, xs + [v]) - (2 - k) * g) / gscale)
            rot = sum(_nested(raw, xs[:j] + [1j * xs[j]] + xs[j + 1:])
                      for j in range(k))
            res_c = max(res_c, abs(rot + _nested(raw, xs + [1j * v])) / gscale)
    res["b_degree"] = res_b
    res["c_rotation"] = res_c

    # pairings of h with the radial direction
    res_d = 0.0
    for x in directions:
        res_d = max(res_d, abs(contract(raw[(2, 0)], [x, v], [])) / scale)
        lhs = contract(raw[(1, 1)], [x], [v])
        rhs = contract(raw[(1, 0)], [x], [])
        res_d = max(res_d, abs(lhs - rhs) / scale)
    res["d_pairing"] = res_d

    # cubic and quartic contractions with the radial direction
    res_e = 0.0
    for i, x in enumerate(directions):
        for y in directions[i + 1:]:
            zc = directions[(i + 2) % len(directions)]
            e21 = contract(raw[(2, 1)], [x, v], [y])
            e12 = contract(raw[(1, 2)], [x], [y, v])
            res_e = max(res_e, abs(e21), abs(e12))
            h20 = contract(raw[(2, 0)], [x, y], [])
            res_e = max(res_e, abs(contract(raw[(3, 0)], [x, y, v], []) + h20))
            res_e = max(res_e, abs(contract(raw[(2, 1)], [x, y], [v]) - h20))
            res_e = max(res_e, abs(contract(raw[(2, 2)], [x, y], [zc, v])))
            res_e = max(res_e, abs(contract(raw[(2, 2)], [v, x], [y, zc])))
            res_e = max(res_e, abs(contract(raw[(3, 1)], [v, x, y], [zc])
                                   + contract(raw[(2, 1)], [x, y], [zc])))
            res_e = max(res_e, abs(contract(raw[(1, 3)], [x], [y, zc, v])
                                   + contract(raw[(1, 2)], [x], [y, zc])))
    res["e_cubic_quartic"] = res_e / scale
    res["max"] = max(res.values())
    return res


# --------------------------------------------------------------------------
# Levi form and the Hermitian criterion
# --------------------------------------------------------------------------

@dataclass
class LeviReport:
    eigenvalues: np.ndarray  # real, length n-1
    verdict: str  # strongly-pseudoconvex | non-degenerate | degenerate
    basis: np.ndarray  # columns span the maximal complex tangent distribution


def levi_check(prog: MetricProgram, z, v, tol: float = 1e-10) -> LeviReport:
    """Eigenvalues of the Levi form of the indicatrix along its maximal
    complex tangent distribution at v/F(v)."""
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    f = prog.norm(z, v)
    if f == 0:
        raise EvaluationError("v has zero norm")
    vhat = v / f
    jet = prog.jet_unchecked(z, vhat, 2, 0)
    grad = jet.fiber_tensor(1, 0)
    gnorm = np.linalg.norm(grad)
    if gnorm < 1e-12:
        raise FinslerError("degenerate indicatrix: dF^2 vanishes at the point")
    n = prog.dim
    if n == 1:
        return LeviReport(eigenvalues=np.zeros(0), verdict="strongly-pseudoconvex",
                          basis=np.zeros((1, 0), dtype=complex))
    # kernel of X -> sum X^i grad_i via SVD of the row vector
    _, _, vh = np.linalg.svd(grad[None, :])
    basis = np.conj(vh[1:]).T  # columns, orthonormal, grad . col = 0
    gmix = jet.fiber_tensor(1, 1)
    levi = np.conj(basis).T @ gmix @ basis
    eig = np.linalg.eigvalsh(0.5 * (levi + np.conj(levi).T))
    if np.min(eig) > tol:
        verdict = "strongly-pseudoconvex"
    elif np.min(np.abs(eig)) > tol:
        verdict = "non-degenerate"
    else:
        verdict = "degenerate"
    return LeviReport(eigenvalues=eig, verdict=verdict, basis=basis)


def hermitian_test(prog: MetricProgram, points, tol: float = 1e-8):
    """True iff the cubic fiber form vanishes on all sample points.

    Returns (is_hermitian, witness); the witness is (z, v, indices, value)
    for the largest offending component, or None.
    """
    if not points:
        raise FinslerError("hermitian_test requires a nonempty sample set")
    worst = (0.0, None)
    for z, v in points:
        raw = raw_fiber_tensors(prog, z, v, 3)
        for (p, q) in ((3, 0), (2, 1)):
            t = raw[(p, q)]
            idx = np.unravel_index(np.argmax(np.abs(t)), t.shape)
            val = t[idx]
            if abs(val) > worst[0]:
                indices = tuple(idx[:p]) + tuple(bar(i) for i in idx[p:])
                worst = (abs(val), (np.asarray(z), np.asarray(v), indices, complex(val)))
    if worst[0] < tol:
        return True, None
    return False, worst[1]


def recover_hermitian_metric(prog: MetricProgram, z, v) -> np.ndarray:
    """The candidate Hermitian metric matrix g_ij = d^2 F^2 / dv^i dvbar^j.

    For metrics with vanishing cubic form this is independent of v.
    """
    jet = prog.jet_unchecked(z, v, 2, 0)
    return jet.fiber_tensor(1, 1)
