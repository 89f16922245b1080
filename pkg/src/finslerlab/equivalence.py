"""Invariant signatures for the local equivalence problem.

The structure coefficients of the parallelism and their iterated derivatives
along the parallelism fields form a complete local invariant family; two
metrics can only be locally isometric through a frame match if the families
agree.  Signatures here are frame-pointwise: a mismatch rules out an
isometry matching the two frames, a match is necessary but not sufficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frame_bundle import BundlePoint, pack_real, unpack_real, AmbientTangent
from .metric_dsl import FinslerError, MetricProgram
from .parallelism import _bracket_table, _real_field_matrix


def structure_coefficients(prog: MetricProgram, z, U) -> np.ndarray:
    """Flattened real structure coefficients c^i_{jk} (pairs j < k) at (z, U).

    Ordering: pairs (j, k) with j < k lexicographic in the order of
    labels_real, and for each pair all basis components i in that order.
    """
    p = BundlePoint(np.asarray(z, dtype=complex), np.asarray(U, dtype=complex))
    vals, br = _bracket_table(prog, p)
    N = vals.shape[1]
    sol, *_ = np.linalg.lstsq(vals, br.reshape(N * N, -1).T, rcond=None)
    coeff = sol.T.reshape(N, N, N)
    out = []
    for j in range(N):
        for k in range(j + 1, N):
            out.append(coeff[j, k])
    return np.concatenate(out)


def _tier(prog: MetricProgram, z, U, k: int, step: float) -> np.ndarray:
    """All k-th derivatives of the structure coefficients along the fields."""
    if k == 0:
        return structure_coefficients(prog, z, U)
    fields = _real_field_matrix(prog, z, U)
    base = pack_real(AmbientTangent(np.asarray(z, dtype=complex),
                                    np.asarray(U, dtype=complex)))
    n = prog.dim
    out = []
    for margin in range(fields.shape[1]):
        xm = fields[:, margin]
        h = step * (1.0 + np.linalg.norm(xm))
        zp, Up = unpack_real(base + h * xm, n)
        zm, Um = unpack_real(base - h * xm, n)
        out.append((_tier(prog, zp, Up, k - 1, step)
                    - _tier(prog, zm, Um, k - 1, step)) / (2 * h))
    return np.concatenate(out)


@dataclass
class Signature:
    order: int
    dim: int
    tiers: list  # tiers[k] = flattened k-th derivative family
    vector: np.ndarray  # concatenation of all tiers

    def distance(self, other: "Signature") -> float:
        if self.dim != other.dim or self.order != other.order:
            raise FinslerError("signatures have different shape (dimension or order)")
        return float(np.max(np.abs(self.vector - other.vector)))


def signature(prog: MetricProgram, p: BundlePoint, order: int = 0,
              step: float = 1e-4) -> Signature:
    """Invariant signature at a bundle point up to the given derivative order."""
    if order > 2:
        raise FinslerError("signature derivative order is limited to 2")
    tiers = [_tier(prog, p.z, p.U, k, step) for k in range(order + 1)]
    return Signature(order=order, dim=prog.dim, tiers=tiers,
                     vector=np.concatenate(tiers))


@dataclass
class RegularityReport:
    ranks: list
    stabilized: bool
    order: int | None
    rank: int | None


def regularity(prog: MetricProgram, p: BundlePoint, alpha_max: int = 2,
               step: float = 1e-4, sv_tol: float = 1e-4,
               noise_floor: float = 1e-2) -> RegularityReport:
    """Numerical rank of the invariant families along the parallelism,
    with early stop at rank stabilization.

    Singular values count when above sv_tol * sigma_max AND above the
    absolute noise floor; the floor absorbs the finite-difference noise of
    iterated derivative tiers, which would otherwise fabricate rank on
    metrics whose invariants are constant.
    """
    if alpha_max > 2:
        raise FinslerError("regularity order is limited to 2")
    fields = _real_field_matrix(prog, p.z, p.U)
    base = pack_real(AmbientTangent(p.z, p.U))
    n = prog.dim

    def jac_rank(alpha: int) -> int:
        rows = []
        for margin in range(fields.shape[1]):
            xm = fields[:, margin]
            h = step * (1.0 + np.linalg.norm(xm))
            zp, Up = unpack_real(base + h * xm, n)
            zm, Um = unpack_real(base - h * xm, n)
            vp = np.concatenate([_tier(prog, zp, Up, k, step) for k in range(alpha + 1)])
            vm = np.concatenate([_tier(prog, zm, Um, k, step) for k in range(alpha + 1)])
            rows.append((vp - vm) / (2 * h))
        mat = np.array(rows)
        sv = np.linalg.svd(mat, compute_uv=False)
        cut = max(sv_tol * sv[0], noise_floor)
        return int(np.sum(sv > cut))

    ranks = [jac_rank(0)]
    for alpha in range(1, alpha_max + 1):
        ranks.append(jac_rank(alpha))
        if ranks[-1] == ranks[-2]:
            return RegularityReport(ranks=ranks, stabilized=True,
                                    order=alpha - 1, rank=ranks[-1])
    return RegularityReport(ranks=ranks, stabilized=False, order=None, rank=None)


def _haar_group_element(n: int, rng) -> np.ndarray:
    """Random element of the block structure group diag(phase, unitary)."""
    g = np.zeros((n, n), dtype=complex)
    g[0, 0] = np.exp(1j * rng.uniform(0, 2 * np.pi))
    if n > 1:
        M = rng.standard_normal((n - 1, n - 1)) + 1j * rng.standard_normal((n - 1, n - 1))
        Q, R = np.linalg.qr(M)
        g[1:, 1:] = Q * (np.diag(R) / np.abs(np.diag(R)))
    return g


def compare(progA: MetricProgram, pA: BundlePoint,
            progB: MetricProgram, pB: BundlePoint,
            order: int = 0, tol: float = 1e-3,
            fiber_samples: int = 0, seed: int = 0) -> dict:
    """Frame-pointwise signature comparison.

    A verdict of "differ" excludes a local isometry matching the two
    frames; "match" is a necessary condition only.  With fiber_samples > 0
    the frame at pB is additionally rotated through random structure-group
    elements and the best match is reported (no completeness claim).
    """
    if progA.dim != progB.dim:
        return {"verdict": "differ", "reason": "different chart dimensions",
                "distance": float("inf"), "order": order}
    sigA = signature(progA, pA, order)
    sigB = signature(progB, pB, order)
    best = sigA.distance(sigB)
    best_g = None
    rng = np.random.default_rng(seed)
    from .frame_bundle import group_act

    for _ in range(fiber_samples):
        g = _haar_group_element(progA.dim, rng)
        sigBg = signature(progB, group_act(pB, g), order)
        d = sigA.distance(sigBg)
        if d < best:
            best, best_g = d, g
    return {
        "verdict": "match" if best < tol else "differ",
        "distance": best,
        "tolerance": tol,
        "order": order,
        "fiber_samples": fiber_samples,
        "best_group_element": None if best_g is None else
        [[ [x.real, x.imag] for x in row] for row in best_g],
        "semantics": "frame-pointwise necessary condition: 'differ' excludes a "
                     "local isometry matching these frames; 'match' is inconclusive-positive",
    }
