import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magdbar import FormField, GridField, build_grid, inner_product, sample
from magdbar.errors import GridError, GridMismatchError, NodeBudgetError
from magdbar.grid import read_field_csv, write_field_csv


@pytest.mark.parametrize(
    "R, h, n, per_axis, size",
    [(1, 0.5, 1, 3, 9), (6, 0.1, 1, 119, 14161), (3, 0.3, 2, 19, 19**4)],
)
def test_node_counts(R, h, n, per_axis, size):
    g = build_grid(R, h, n)
    assert g.per_axis == per_axis
    assert g.size == size


def test_axis_is_symmetric_and_excludes_boundary():
    g = build_grid(1, 0.25)
    np.testing.assert_allclose(g.axis, [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75])


def test_rejects_non_integral_ratio_and_budget():
    with pytest.raises(GridError):
        build_grid(1.0, 0.3)
    with pytest.raises(NodeBudgetError):
        build_grid(6, 0.1, n=2)
    with pytest.raises(GridError):
        build_grid(-1, 0.1)


def test_points_layout_multivariable():
    g = build_grid(1, 0.5, 2)
    assert g.points.shape == (81, 2)
    # row-major over (x1, y1, x2, y2): the last axis varies fastest
    np.testing.assert_allclose(g.points[1], [-0.5 - 0.5j, -0.5 + 0.0j])
    assert g.node_of([0.5 + 0j, -0.5j]) == g.flat_index((2, 1, 1, 0))


def test_inner_product_examples():
    g = build_grid(1, 0.5)
    one = sample(lambda z: np.ones_like(z), g)
    assert inner_product(one, one) == pytest.approx(2.25)
    a = np.zeros(9)
    b = np.zeros(9)
    a[:4], b[4:] = 1.0, 2.0
    assert inner_product(GridField(g, a), GridField(g, b)) == 0


def test_inner_product_is_conjugate_linear_in_second_slot(rng):
    g = build_grid(1, 0.25)
    f = GridField(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
    q = GridField(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
    c = 0.3 - 2.0j
    assert inner_product(f, q * c) == pytest.approx(np.conj(c) * inner_product(f, q))
    assert inner_product(q, f) == pytest.approx(np.conj(inner_product(f, q)))


def test_sample_examples():
    g = build_grid(2, 0.5)
    assert sample(lambda z: z, g).at(0j) == 0
    assert sample(lambda z: np.exp(-abs(z) ** 2), g).at(1.0) == pytest.approx(np.exp(-1.0), rel=1e-12)


def test_gaussian_quadrature():
    g = build_grid(4, 0.05)
    f = sample(lambda z: np.exp(-abs(z) ** 2), g)
    assert inner_product(f, f).real == pytest.approx(np.pi / 2, abs=1e-4)


def test_quadrature_second_order_for_compact_bump():
    # bump supported in |z| < 1 inside a box of half-width 2
    def bump(z):
        r2 = np.abs(z) ** 2
        return np.where(r2 < 1, (1 - r2) ** 4, 0.0)

    exact = np.pi / 5  # 2 pi * integral_0^1 (1 - r^2)^4 r dr
    errs = []
    for h in (0.1, 0.05):
        f = sample(bump, build_grid(2, h))
        errs.append(abs(inner_product(f, sample(lambda z: np.ones_like(z), f.grid)).real - exact))
    assert np.log2(errs[0] / errs[1]) >= 1.8


def test_mismatched_grids_raise():
    a = sample(lambda z: z, build_grid(1, 0.5))
    b = sample(lambda z: z, build_grid(1, 0.25))
    with pytest.raises(GridMismatchError):
        inner_product(a, b)
    with pytest.raises(GridMismatchError):
        GridField(build_grid(1, 0.5), np.zeros(10))
    with pytest.raises(GridMismatchError):
        FormField(build_grid(1, 0.5, 2), (GridField(build_grid(1, 0.5, 2), np.zeros(81)),))


def test_field_csv_roundtrip(tmp_path, rng):
    g = build_grid(1, 0.25)
    f = GridField(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
    path = tmp_path / "f.csv"
    write_field_csv(f, path, {"config_hash": "abc"})
    assert path.read_text().startswith("# R=1.0,h=0.25,n=1,config_hash=abc")
    back = read_field_csv(path)
    assert back.grid.size == g.size
    np.testing.assert_array_equal(back.values, f.values)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.sampled_from([0.5, 0.25, 0.2]), st.integers(1, 2))
def test_node_of_roundtrips(steps, h, n):
    R = steps * h
    g = build_grid(R, h, n)
    idx = g.size // 2
    assert g.node_of(g.points[idx]) == idx
    assert g.multi_index(idx) == tuple([g.per_axis // 2] * g.real_dims)
