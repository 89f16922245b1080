import numpy as np
import pytest

from finslerlab.jets import V, VBAR, Z, ZBAR, JetError, jet_space


def test_seed_and_arithmetic():
    sp = jet_space(2, 2, 1)
    v1 = sp.variable(V, 0, 1.5 + 0.5j)
    v2 = sp.variable(V, 1, -0.25j)
    prod = v1 * v2
    assert prod.value == pytest.approx((1.5 + 0.5j) * (-0.25j))
    assert prod.derivative(v=(0,)) == pytest.approx(-0.25j)
    assert prod.derivative(v=(0, 1)) == pytest.approx(1.0)
    assert prod.derivative(v=(0, 0)) == 0.0


def test_conjugation_swaps_variable_classes():
    sp = jet_space(1, 2, 1)
    v = sp.variable(V, 0, 2.0 + 1.0j)
    z = sp.variable(Z, 0, 0.25)
    f = v.conj() * z
    assert f.derivative(vbar=(0,), z=(0,)) == pytest.approx(1.0)
    assert f.derivative(v=(0,), z=(0,)) == 0.0


def test_abs2_hessian_is_one():
    sp = jet_space(1, 2, 0)
    v = sp.variable(V, 0, 0.3 - 0.7j)
    f = v.abs2()
    assert f.derivative(v=(0,), vbar=(0,)) == pytest.approx(1.0)
    assert f.derivative(v=(0, 0)) == 0.0


def test_inverse_and_sqrt_series():
    sp = jet_space(1, 3, 0)
    v = sp.variable(V, 0, 0.8 + 0.1j)
    g = v.abs2()
    # sqrt(g)^2 == g and g * (1/g) == 1 as truncated series
    s = g.sqrt()
    assert np.allclose((s * s).c, g.c, atol=1e-14)
    one = g * g.inv()
    expect = np.zeros_like(one.c)
    expect[0] = 1.0
    assert np.allclose(one.c, expect, atol=1e-14)


def test_singular_points_raise():
    sp = jet_space(1, 2, 0)
    zero = sp.const(0.0)
    with pytest.raises(JetError):
        zero.sqrt()
    with pytest.raises(JetError):
        zero.inv()


def test_reality_symmetry_of_real_expressions():
    # coefficients of a real-valued expression satisfy the bar-swap symmetry
    sp = jet_space(2, 3, 1)
    v1 = sp.variable(V, 0, 0.4 + 0.2j)
    v2 = sp.variable(V, 1, -0.3 + 0.9j)
    z1 = sp.variable(Z, 0, 0.1 - 0.6j)
    f = v1.abs2() * (1 + z1.abs2()) + v2.abs2()
    swapped = np.conj(f.c[sp._conj_perm])
    assert np.allclose(f.c, swapped, atol=1e-15)


def test_tensor_extraction_matches_scalar_lookup():
    sp = jet_space(2, 4, 1)
    v1 = sp.variable(V, 0, 0.4 + 0.2j)
    v2 = sp.variable(V, 1, -0.3 + 0.9j)
    f = (v1.abs2() + v2.abs2()).pow_int(2)
    t = f.fiber_tensor(2, 1)
    assert t[0, 1, 1] == pytest.approx(f.derivative(v=(0, 1), vbar=(1,)))
    dz, dzb = f.fiber_tensor_dbase(1, 1)
    assert dz[0, 1, 0] == pytest.approx(f.derivative(v=(1,), vbar=(0,), z=(0,)))
    assert dzb[1, 0, 1] == pytest.approx(f.derivative(v=(0,), vbar=(1,), zbar=(1,)))
