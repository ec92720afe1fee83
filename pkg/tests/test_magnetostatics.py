import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughguide import constants as C
from roughguide import magnetostatics as ms

MU0_2PI = C.MU_0 / (2 * np.pi)


def _midpoint_rule(start, end, I, p, n=10_000):
    """Biot-Savart line integral by the midpoint rule."""
    t = (np.arange(n) + 0.5) / n
    dl = (end - start) / n
    pts = start + np.outer(t, end - start)
    r = p - pts
    d = np.linalg.norm(r, axis=1)[:, None]
    return C.MU_0 * I / (4 * np.pi) * np.sum(np.cross(dl, r) / d**3, axis=0)


def test_long_segment_matches_infinite_wire():
    seg = ms.WireSegment([0, 0, -0.5], [0, 0, 0.5], 1.0)
    r, half = 1e-3, 0.5
    B = ms.biot_savart_segment(seg, [r, 0, 0]).B
    # closed form on the perpendicular bisector of a finite segment
    exact = MU0_2PI / r * half / np.hypot(half, r)
    assert np.linalg.norm(B) == pytest.approx(exact, rel=1e-12)
    # the finite length costs r^2 / (2 half^2) = 2e-6 against the infinite wire
    assert np.linalg.norm(B) == pytest.approx(MU0_2PI / r, rel=3e-6)
    # right-hand rule: current along +z, probe on +x -> field along +y
    assert B[1] > 0 and abs(B[0]) < 1e-18 and abs(B[2]) < 1e-18


def test_sign_flip_is_exact():
    p = [2e-6, 5e-6, 1e-6]
    a = ms.biot_savart_segment(ms.WireSegment([0, 0, -1e-3], [0, 0, 1e-3], 0.013), p).B
    b = ms.biot_savart_segment(ms.WireSegment([0, 0, -1e-3], [0, 0, 1e-3], -0.013), p).B
    assert np.array_equal(a, -b)


def test_l_shaped_pair_against_quadrature():
    corner = np.array([0.0, 0.0, 0.0])
    legs = [(np.array([-1e-3, 0, 0]), corner), (corner, np.array([0, 0, 1e-3]))]
    p = np.array([2e-4, 3e-4, 1e-4])
    lay = ms.WireLayout([a for a, _ in legs], [b for _, b in legs], [0.4, 0.4])
    ref = sum(_midpoint_rule(a, b, 0.4, p) for a, b in legs)
    B = ms.field_at(lay, p)
    assert np.max(np.abs(B - ref)) < 1e-8 * np.linalg.norm(ref)


def test_point_inside_core_raises():
    lay = ms.build_five_wire_layout()
    with pytest.raises(ms.PointInsideCoreError):
        ms.field_at(lay, [0.0, 100e-9, 0.0])


def test_empty_layout_uniform_field():
    lay = ms.WireLayout(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
                        uniform_field=(0, 0, 1.8e-4))
    assert np.array_equal(ms.field_at(lay, [1e-6, 2e-6, 3e-6]), [0, 0, 1.8e-4])


def test_antiparallel_pair_has_no_axial_component():
    lay = ms.WireLayout([[-5e-6, 0, -1e-3], [5e-6, 0, 1e-3]], [[-5e-6, 0, 1e-3], [5e-6, 0, -1e-3]],
                        [0.01, 0.01])
    B = ms.field_at(lay, [0.0, 4e-6, 2e-4])
    assert abs(B[2]) < 1e-20


def test_superposition_of_five_wires():
    lay = ms.build_five_wire_layout()
    p = np.array([1e-6, 6e-6, 3e-5])
    total = sum(ms.biot_savart_segment(s, p).B for s in lay.segments)
    assert np.allclose(ms.field_at(lay, p), total, rtol=1e-12, atol=0)


@given(st.lists(st.tuples(st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3), st.floats(-1, 1)),
                min_size=1, max_size=6),
       st.tuples(st.floats(-1e-3, 1e-3), st.floats(2e-5, 1e-3), st.floats(-1e-3, 1e-3)))
def test_superposition_property(wires, probe):
    starts = [[x, 0.0, -1e-3] for x, z, _ in wires]
    ends = [[x, 0.0, z + 1.5e-3] for x, z, _ in wires]
    lay = ms.WireLayout(starts, ends, [I for *_, I in wires])
    total = sum(ms.biot_savart_segment(s, probe).B for s in lay.segments)
    B = ms.field_at(lay, probe)
    scale = max(np.max(np.abs([ms.biot_savart_segment(s, probe).B for s in lay.segments])), 1e-300)
    assert np.max(np.abs(B - total)) <= 1e-12 * scale


@given(st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3),
       st.tuples(st.floats(-20e-6, 20e-6), st.floats(3e-6, 30e-6), st.floats(-5e-4, 5e-4)))
def test_linear_in_current(factor, probe):
    lay = ms.build_five_wire_layout()
    ref = factor * ms.field_at(lay, probe)
    np.testing.assert_allclose(ms.field_at(lay.scaled(factor), probe), ref, rtol=1e-12,
                               atol=1e-12 * np.linalg.norm(ref))


@given(st.tuples(st.floats(-15e-6, 15e-6), st.floats(3e-6, 25e-6), st.floats(-5e-4, 5e-4)))
def test_divergence_free(probe):
    lay = ms.build_five_wire_layout() + ms.build_h_wire_layout()
    G = ms.field_gradient(lay, probe, step=1e-9)
    assert abs(np.trace(G)) < 1e-6 * np.linalg.norm(G)


def test_current_conservation_checked():
    with pytest.raises(ValueError, match="not conserved"):
        ms.WireLayout([[0, 0, 0], [0, 0, 1]], [[0, 0, 1], [0, 0, 2]], [1.0, 2.0], ("a", "a"))


def test_degenerate_segment_rejected():
    with pytest.raises(ValueError):
        ms.WireSegment([0, 0, 0], [0, 0, 0], 1.0)


def test_side_guide_zero_and_gradient():
    I, Bx = 1.0, 1e-3
    lay = ms.WireLayout([[0, 0, -1.0]], [[0, 0, 1.0]], [I], uniform_field=(Bx, 0, 0))
    x0, y0 = ms.find_zero_line(lay, 0.0, (1e-5, 1.5e-4))
    assert y0 == pytest.approx(MU0_2PI * I / Bx, rel=1e-6)
    assert abs(x0) < 1e-10
    g = ms.transverse_gradient(lay, (x0, y0, 0.0))
    assert g == pytest.approx(2 * np.pi * Bx**2 / (C.MU_0 * I), rel=1e-4)


def test_zero_line_without_zero_raises():
    lay = ms.WireLayout(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), uniform_field=(1e-4, 0, 0))
    with pytest.raises(ms.NoConvergenceError):
        ms.find_zero_line(lay, 0.0, (0.0, 7e-6), max_iter=20)


def test_five_wire_guide_geometry():
    lay = ms.build_five_wire_layout()
    x0, y0 = ms.find_zero_line(lay, 0.0, (0.0, 6e-6))
    assert abs(x0) < 1e-12 and y0 == pytest.approx(7e-6, rel=1e-6)
    assert np.hypot(*ms.field_at(lay, [x0, y0, 0.0])[:2]) < 1e-12
    flipped = ms.find_zero_line(lay.scaled(-1), 0.0, (0.0, 6e-6))
    assert flipped == pytest.approx((x0, y0), abs=1e-12)
    g = ms.transverse_gradient(lay, (x0, y0, 0.0))
    f_perp = ms.omega_perp(g, 1.8e-4) / (2 * np.pi)
    assert 1.5e3 <= f_perp <= 3.0e3
    assert ms.transverse_gradient(lay.scaled(2), (x0, y0, 0.0)) == pytest.approx(2 * g, rel=1e-9)


def test_zero_currents_give_zero_field():
    lay = ms.build_five_wire_layout(I_c=0.0, I_b=0.0)
    assert not np.any(ms.field_at(lay, [1e-6, 7e-6, 0.0]))
    assert not np.any(ms.field_at(ms.build_h_wire_layout(0.0, 0.0), [0, 7e-6, 1e-4]))


def test_outer_offset_tuning_reproduces_default():
    assert ms.tune_outer_offset() == pytest.approx(ms.DEFAULT_OUTER_OFFSET, rel=1e-10)


def test_h_wire_expansion_and_tuning():
    lay = ms.build_h_wire_layout()
    Bc, gH, curv = ms.h_wire_local_expansion(lay)
    w_dc = np.sqrt(C.MU_B * curv / C.M_RB87)
    assert w_dc / (2 * np.pi) == pytest.approx(7.1, rel=1e-6)
    # oracle: closed-form inversion of the frequency-shift relation
    need = np.sqrt(((2 * np.pi * 11.3) ** 2 - w_dc**2) * C.M_RB87 * (1.8e-4 + Bc) / C.MU_B)
    assert abs(gH) == pytest.approx(need, rel=1e-6)
    sep, depth = ms.tune_h_geometry()
    assert sep == pytest.approx(ms.DEFAULT_H_LEG_SEPARATION, rel=1e-8)
    assert depth == pytest.approx(ms.DEFAULT_H_DEPTH, rel=1e-8)


def test_h_wire_mirror_symmetry():
    lay = ms.build_h_wire_layout(y_guide=0.0)
    a = ms.field_at(lay, [1e-5, 0.0, 3e-5])
    b = ms.field_at(lay, [1e-5, 0.0, -3e-5])
    assert a[1] == pytest.approx(-b[1], rel=1e-9)
