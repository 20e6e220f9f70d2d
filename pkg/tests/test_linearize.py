import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caesuc.linearize import (BoundsBox, LinearizationError, PiecewiseGrid, approximation_error_bound,
                              linearize_product, mccormick_binary_p, mccormick_binary_T, pw_square,
                              symmetric_grid)
from caesuc.milp import BINARY, EQ, MilpModel
from caesuc.solver import BnbOptions, solve_lp, solve_mip


def _fix(m, h, v):
    m.set_bounds(h, v, v)


def _extreme(m, target, sense):
    m.frozen = False
    m.set_objective({target: sense})
    res = solve_mip(m.freeze(), BnbOptions(gap=0.0, engine="tableau"))
    assert res.status == "optimal"
    return res.solution.values[target]


def test_mccormick_T_exact_on_random_cases():
    rng = np.random.default_rng(1)
    for _ in range(60):
        lo = rng.uniform(-50, 300)
        hi = lo + rng.uniform(0.1, 100)
        t_val = rng.uniform(lo, hi)
        for a_val in (0.0, 1.0):
            m = MilpModel()
            a = m.add_variable("a", BINARY)
            t = m.add_variable("t", lb=lo, ub=hi)
            q = mccormick_binary_T(m, a, t)
            _fix(m, a, a_val)
            _fix(m, t, t_val)
            for sense in (1, -1):
                m.frozen = False
                m.set_objective({q: sense})
                sol = solve_lp(m.freeze(), engine="tableau")
                assert sol.values[q] == pytest.approx(a_val * t_val, abs=1e-7)


def test_mccormick_p_exact_and_rejects_negative_lb():
    rng = np.random.default_rng(2)
    for _ in range(40):
        hi = rng.uniform(1, 80)
        p_val = rng.uniform(0, hi)
        for b_val in (0.0, 1.0):
            m = MilpModel()
            b = m.add_variable("b", BINARY)
            p = m.add_variable("p", lb=0, ub=hi)
            s = mccormick_binary_p(m, b, p)
            _fix(m, b, b_val)
            _fix(m, p, p_val)
            for sense in (1, -1):
                m.frozen = False
                m.set_objective({s: sense})
                assert solve_lp(m.freeze(), engine="tableau").values[s] == pytest.approx(b_val * p_val, abs=1e-7)
    m = MilpModel()
    b = m.add_variable("b", BINARY)
    p = m.add_variable("p", lb=-1, ub=5)
    with pytest.raises(LinearizationError):
        mccormick_binary_p(m, b, p)


def test_mccormick_unbounded_rejected():
    m = MilpModel()
    a = m.add_variable("a", BINARY)
    t = m.add_variable("t")
    with pytest.raises(LinearizationError):
        mccormick_binary_T(m, a, t)


def test_grid_and_symmetric_grid():
    g = PiecewiseGrid.uniform(-2, 6, 4)
    assert g.points == (-2, 0, 2, 4, 6)
    assert g.squares == (4, 0, 4, 16, 36)
    s = symmetric_grid(-1.0, 3.0, 5)
    assert 0.0 in s.points and s.lo <= -1.0 and s.hi >= 3.0
    assert s.width == pytest.approx(1.0)   # one negative segment must reach -1
    with pytest.raises(LinearizationError):
        PiecewiseGrid.uniform(1, 1, 3)


@pytest.mark.parametrize("z_val", [-2.0, -1.3, 0.0, 0.7, 2.0, 3.99, 6.0])
def test_pw_square_milp_matches_chord(z_val):
    grid = PiecewiseGrid.uniform(-2, 6, 4)
    m = MilpModel()
    z = m.add_variable("z", lb=-2, ub=6)
    s = pw_square(m, z, grid, "sq")
    _fix(m, z, z_val)
    chord = np.interp(z_val, grid.points, grid.squares)
    assert _extreme(m, s, 1) == pytest.approx(chord, abs=1e-7)
    assert _extreme(m, s, -1) == pytest.approx(chord, abs=1e-7)
    assert grid.square(z_val) == pytest.approx(chord, abs=1e-12)


def test_pw_square_rejects_bounds_outside_grid():
    m = MilpModel()
    z = m.add_variable("z", lb=-3, ub=1)
    with pytest.raises(LinearizationError):
        pw_square(m, z, PiecewiseGrid.uniform(-2, 2, 4), "sq")


def test_pw_square_dense_sweep_error_and_divide_points():
    for lo, hi, n in [(-3.0, 5.0, 16), (0.0, 1.0, 7), (10.0, 40.0, 3)]:
        g = PiecewiseGrid.uniform(lo, hi, n)
        zs = np.linspace(lo, hi, 4001)
        err = np.array([g.square(z) for z in zs]) - zs ** 2
        assert err.min() >= -1e-9
        assert err.max() <= g.width ** 2 / 4 + 1e-9
        for p in g.points:
            assert g.square(p) == pytest.approx(p * p, abs=1e-12)


@pytest.mark.parametrize("normalize", [True, False])
def test_product_milp_within_bound(normalize):
    rng = np.random.default_rng(3)
    for _ in range(6):
        xl, yl = rng.uniform(-5, 20), rng.uniform(0, 400)
        xu, yu = xl + rng.uniform(1, 10), yl + rng.uniform(5, 50)
        xv, yv = rng.uniform(xl, xu), rng.uniform(yl, yu)
        m = MilpModel()
        x = m.add_variable("x", lb=xl, ub=xu)
        y = m.add_variable("y", lb=yl, ub=yu)
        links = []
        w = linearize_product(m, x, y, n_plus=6, n_minus=6, normalize=normalize, registry=links)
        _fix(m, x, xv)
        _fix(m, y, yv)
        link = links[0]
        hi, lo = _extreme(m, w, -1), _extreme(m, w, 1)
        # fixing x and y pins every fill variable, so the MILP value is unique
        assert hi == pytest.approx(lo, abs=1e-6 * max(1, abs(hi)))
        assert hi == pytest.approx(link.evaluate(xv, yv), rel=1e-9, abs=1e-6)
        assert abs(hi - xv * yv) <= link.error_bound + 1e-6


def test_normalized_bound_scales_with_ranges():
    m = MilpModel()
    x = m.add_variable("m", lb=1e6, ub=2e6)
    y = m.add_variable("T", lb=280, ub=340)
    links = []
    linearize_product(m, x, y, n_plus=16, n_minus=16, registry=links)
    raw = approximation_error_bound([((2e6 + 340) - (1e6 + 280)) / 2 / 16] * 2)
    assert links[0].error_bound < raw / 1e3
    assert links[0].error_bound == pytest.approx(1e6 * 60 * approximation_error_bound(links[0].grids))


def test_square_of_same_variable():
    m = MilpModel()
    x = m.add_variable("x", lb=2, ub=10)
    links = []
    w = linearize_product(m, x, x, n_plus=8, registry=links)
    _fix(m, x, 5.5)
    val = _extreme(m, w, 1)
    assert abs(val - 30.25) <= links[0].error_bound + 1e-9
    assert val == pytest.approx(links[0].evaluate(5.5, 5.5))


def test_binary_assignment_is_feasible():
    m = MilpModel()
    x = m.add_variable("x", lb=0, ub=4)
    y = m.add_variable("y", lb=1, ub=3)
    links = []
    linearize_product(m, x, y, n_plus=4, n_minus=4, registry=links)
    assign = links[0].binary_assignment(2.7, 1.4)
    for h, v in assign.items():
        m.set_bounds(h, v, v)
    _fix(m, x, 2.7)
    _fix(m, y, 1.4)
    m.set_objective({})
    assert solve_lp(m.freeze(), engine="tableau").status == "optimal"


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-100, 100), span=st.floats(0.01, 50), n=st.integers(2, 20))
def test_symmetric_grid_contains_range_and_zero(a, span, n):
    g = symmetric_grid(a, a + span, n)
    assert g.lo <= a + 1e-12 and g.hi >= a + span - 1e-9
    assert g.n == n
    assert any(abs(p) < 1e-12 for p in g.points)


def test_bounds_box_overrides_variable_bounds():
    m = MilpModel()
    x = m.add_variable("x")
    a = m.add_variable("a", BINARY)
    box = BoundsBox()
    box.set(x, 0, 7)
    q = mccormick_binary_T(m, a, x, box)
    assert m.variables[q].ub == 7
    with pytest.raises(LinearizationError):
        box.set(x, 3, 1)
