import itertools
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saegeom.errors import CapacityError, ContractError
from saegeom.geometry import (
    KthOrderPowerDiagram,
    PowerDiagram,
    cell_of,
    cells_of,
    diagram_to_enc,
    enc_to_diagram,
    fit_second_order,
    label_color,
    lift_to_voronoi,
    power_cell_index,
    power_functions,
    reduce_to_power,
    region_matrix,
    render_cells,
)
from saegeom.sae import JumpReLU, SaeParams, TopK, encode, support


def random_encoder(rng, n, d):
    w = rng.standard_normal((d, n))
    return SaeParams(w, rng.standard_normal(d), np.zeros((n, d)), np.zeros(n))


def random_diagram(rng, n, d, k):
    return KthOrderPowerDiagram(rng.standard_normal((d, n)), rng.standard_normal(d), k)


def hexagon():
    a = np.arange(6) * np.pi / 3
    return np.column_stack([np.cos(a), np.sin(a)])


# -- half-space regions ------------------------------------------------------


def test_region_matrix_topk_identity():
    p = SaeParams(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    reg = region_matrix({0}, p, TopK(1))
    np.testing.assert_array_equal(reg.h, [[1.0, -1.0]])
    np.testing.assert_array_equal(reg.c, [0.0])


def test_region_matrix_wrong_size():
    p = random_encoder(np.random.default_rng(0), 2, 4)
    with pytest.raises(ContractError):
        region_matrix({0, 1}, p, TopK(1))
    with pytest.raises(ContractError):
        region_matrix({7}, p, JumpReLU(0.0))


@pytest.mark.parametrize("kind", [TopK(2), JumpReLU(0.3), JumpReLU(0.0)])
def test_region_membership_matches_forward_pass(kind):
    rng = np.random.default_rng(1)
    p = random_encoder(rng, 3, 5)
    x = rng.standard_normal((1000, 3))
    z = encode(x, p, kind)
    for s in {support(row) for row in z}:
        if isinstance(kind, TopK) and len(s) != kind.k:
            continue
        inside = region_matrix(s, p, kind).contains(x)
        same = np.array([support(row) == s for row in z])
        np.testing.assert_array_equal(inside, same)


def test_region_with_identical_rows_is_flagged():
    w = np.array([[1.0, 0.5], [1.0, 0.5], [0.0, 1.0]])
    p = SaeParams(w, np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    assert region_matrix({0, 2}, p, TopK(2)).degenerate
    assert not region_matrix({0, 1}, p, TopK(2)).degenerate
    # a zero encoder row under JumpReLU cannot constrain anything
    w0 = np.vstack([w[:2], np.zeros(2)])
    p0 = SaeParams(w0, np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    assert region_matrix({0}, p0, JumpReLU(0.0)).degenerate


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_regions_are_convex(seed):
    rng = np.random.default_rng(seed)
    p = random_encoder(rng, 2, 5)
    act = TopK(2)
    x = rng.standard_normal((400, 2))
    z = encode(x, p, act)
    s = support(z[0])
    reg = region_matrix(s, p, act)
    inside = x[reg.contains(x)]
    if len(inside) < 2:
        return
    a, b = inside[0], inside[-1]
    t = rng.uniform(0, 1, 50)[:, None]
    assert np.all(reg.contains(t * a + (1 - t) * b))


# -- encoder <-> diagram -----------------------------------------------------


def test_enc_to_diagram_identity():
    diag = enc_to_diagram(SaeParams(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2)), 1)
    np.testing.assert_array_equal(diag.centroids, np.eye(2))
    np.testing.assert_array_equal(diag.weights, [1.0, 1.0])


def test_diagram_to_enc_examples():
    w, b = diagram_to_enc(KthOrderPowerDiagram(np.array([[1.0, 0.0]]), np.array([1.0]), 1))
    np.testing.assert_array_equal(w, [[1.0, 0.0]])
    np.testing.assert_array_equal(b, [0.0])
    w, b = diagram_to_enc(KthOrderPowerDiagram(np.zeros((3, 2)), np.zeros(3), 2))
    assert not w.any() and not b.any()


def test_bias_shift_moves_weights_not_cells():
    rng = np.random.default_rng(2)
    p = random_encoder(rng, 3, 6)
    shifted = p.replace(b_enc=p.b_enc + 0.7)
    d0, d1 = enc_to_diagram(p, 2), enc_to_diagram(shifted, 2)
    np.testing.assert_allclose(d1.weights - d0.weights, 1.4)
    x = rng.standard_normal((500, 3))
    np.testing.assert_array_equal(cells_of(x, d0), cells_of(x, d1))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_round_trips(n, d, seed):
    rng = np.random.default_rng(seed)
    w, b = rng.standard_normal((d, n)), rng.standard_normal(d)
    w2, b2 = diagram_to_enc(enc_to_diagram((w, b), 1))
    assert np.max(np.abs(w2 - w)) <= 1e-12
    assert np.max(np.abs(b2 - b)) <= 1e-12 * max(1.0, np.max(np.abs(w)) ** 2)
    diag = random_diagram(rng, n, d, 1)
    back = enc_to_diagram(diagram_to_enc(diag), 1)
    np.testing.assert_array_equal(back.centroids, diag.centroids)
    np.testing.assert_allclose(back.weights, diag.weights, atol=1e-12)


def test_topk_support_equals_cell():
    rng = np.random.default_rng(3)
    for _ in range(5):
        n, d = int(rng.integers(1, 5)), int(rng.integers(2, 11))
        k = int(rng.integers(1, min(d, 4) + 1))
        p = random_encoder(rng, n, d)
        x = rng.standard_normal((2000, n))
        z = encode(x, p, TopK(k))
        cells = cells_of(x, enc_to_diagram(p, k))
        for r in range(len(x)):
            assert support(z[r]) == tuple(cells[r])


# -- cells -------------------------------------------------------------------


def test_cell_of_examples():
    diag = KthOrderPowerDiagram(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2), 1)
    assert cell_of(np.array([0.5, 0.0]), diag) == (0,)
    tie = KthOrderPowerDiagram(np.zeros((3, 2)), np.zeros(3), 2)
    assert cell_of(np.array([0.3, -0.2]), tie) == (0, 1)


def test_power_functions_against_distance():
    rng = np.random.default_rng(4)
    mu, alpha = rng.standard_normal((5, 3)), rng.standard_normal(5)
    x = rng.standard_normal(3)
    dist = np.sum((x - mu) ** 2, axis=1) - alpha
    np.testing.assert_allclose(power_functions(x, mu, alpha), dist - x @ x, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_weight_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    diag = random_diagram(rng, 2, 6, 3)
    moved = KthOrderPowerDiagram(diag.centroids, diag.weights + shift, 3)
    x = rng.standard_normal((200, 2))
    same = cells_of(x, diag) == cells_of(x, moved)
    # a shift can only flip points sitting within rounding of a boundary
    p = np.sort(power_functions(x, diag.centroids, diag.weights), axis=1)
    gap = p[:, 3] - p[:, 2]
    assert np.all(same.all(axis=1) | (gap < 1e-9 * (1 + abs(shift))))


# -- order reduction ---------------------------------------------------------


def test_reduce_order_one_is_identity():
    rng = np.random.default_rng(5)
    diag = random_diagram(rng, 3, 4, 1)
    red = reduce_to_power(diag)
    np.testing.assert_array_equal(red.centroids, diag.centroids)
    np.testing.assert_allclose(red.weights, diag.weights, atol=1e-14)
    assert red.labels == [(0,), (1,), (2,), (3,)]


def test_reduce_hand_example():
    red = reduce_to_power(KthOrderPowerDiagram(np.eye(3), np.zeros(3), 2))
    assert red.labels == [(0, 1), (0, 2), (1, 2)]
    np.testing.assert_allclose(red.centroids[0], [0.5, 0.5, 0.0])
    assert red.weights[0] == pytest.approx(-0.5)


def test_reduce_matches_kth_order_rule():
    rng = np.random.default_rng(6)
    diag = random_diagram(rng, 3, 7, 3)
    red = reduce_to_power(diag)
    x = rng.standard_normal((1000, 3))
    via_red = [red.labels[i] for i in power_cell_index(x, red)]
    via_k = [tuple(c) for c in cells_of(x, diag)]
    assert via_red == via_k


def test_reduce_capacity_guard():
    diag = KthOrderPowerDiagram(np.zeros((40, 2)), np.zeros(40), 20)
    with pytest.raises(CapacityError):
        reduce_to_power(diag)


# -- second-order fit --------------------------------------------------------


def test_hexagon_has_no_second_order_generators():
    _, resid = fit_second_order(hexagon())
    assert resid > 0.1
    assert resid == pytest.approx(np.sqrt(3.0))


def test_hexagon_fit_depends_on_vertex_to_pair_assignment():
    # listing opposite vertices for complementary pairs (01/23, 02/13,
    # 03/12) makes the system consistent: four points at +-a, +-b do it
    _, resid = fit_second_order(hexagon()[[0, 1, 2, 5, 4, 3]])
    assert resid <= 1e-9


def test_pairwise_means_are_recovered():
    rng = np.random.default_rng(7)
    pts = rng.standard_normal((4, 3))
    targets = np.array([(pts[i] + pts[j]) / 2 for i, j in itertools.combinations(range(4), 2)])
    mu, resid = fit_second_order(targets)
    assert resid <= 1e-9
    # k = 4 gives a full-column-rank design, so the points are unique
    np.testing.assert_allclose(mu, pts, atol=1e-9)


def test_second_order_small_and_bad_counts():
    mu, resid = fit_second_order(np.array([[2.0, 4.0]]))
    assert resid == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(mu.sum(axis=0) / 2, [2.0, 4.0])
    with pytest.raises(ContractError):
        fit_second_order(np.zeros((4, 2)))


# -- Voronoi lift ------------------------------------------------------------


def test_lift_examples():
    equal = PowerDiagram(np.eye(2), np.full(2, 3.0))
    np.testing.assert_array_equal(lift_to_voronoi(equal)[:, -1], [0.0, 0.0])
    lifted = lift_to_voronoi(PowerDiagram(np.eye(2), np.array([0.0, -4.0])))
    np.testing.assert_array_equal(lifted[:, -1], [0.0, 2.0])
    np.testing.assert_array_equal(lifted[:, :2], np.eye(2))


def test_lift_slice_equals_power_cells():
    rng = np.random.default_rng(8)
    diag = PowerDiagram(rng.standard_normal((6, 2)), rng.standard_normal(6))
    lifted = lift_to_voronoi(diag)
    x = rng.standard_normal((1000, 2))
    x0 = np.hstack([x, np.zeros((1000, 1))])
    d2 = np.sum((x0[:, None, :] - lifted[None]) ** 2, axis=2)
    kdiag = KthOrderPowerDiagram(diag.centroids, diag.weights, 1)
    np.testing.assert_array_equal(np.argmin(d2, axis=1), power_cell_index(x, kdiag))


# -- rendering ---------------------------------------------------------------


def test_render_symmetric_pair_splits_on_bisector():
    diag = KthOrderPowerDiagram(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.zeros(2), 1)
    out = render_cells(diag, (-2, 2, -2, 2), resolution=20)
    assert np.all(out.labels[:, :10, 0] == 0)
    assert np.all(out.labels[:, 10:, 0] == 1)


def test_render_weight_moves_boundary():
    mu = np.array([[-1.0, 0.0], [1.0, 0.0]])
    base = render_cells(KthOrderPowerDiagram(mu, np.zeros(2), 1), (-2, 2, -2, 2), 40)
    heavy = render_cells(KthOrderPowerDiagram(mu, np.array([0.0, 1.0]), 1), (-2, 2, -2, 2), 40)
    assert np.count_nonzero(heavy.labels == 1) > np.count_nonzero(base.labels == 1)


def test_render_grid_matches_cell_of():
    rng = np.random.default_rng(9)
    p = random_encoder(rng, 2, 5)
    out = render_cells(p, (-1.5, 1.5, -1.0, 1.0), resolution=15, k=2)
    diag = enc_to_diagram(p, 2)
    assert out.ys[0] > out.ys[-1]
    for r, y in enumerate(out.ys):
        for c, xv in enumerate(out.xs):
            assert tuple(out.labels[r, c]) == cell_of(np.array([xv, y]), diag)


def test_render_svg_and_csv():
    rng = np.random.default_rng(10)
    p = random_encoder(rng, 2, 4)
    pts = rng.standard_normal((5, 2))
    out = render_cells(p, (-2, 2, -2, 2), resolution=12, k=2, points=pts)
    root = ET.fromstring(out.svg.encode())
    assert root.tag.endswith("svg") and root.get("version") == "1.1"
    rows = out.to_csv().splitlines()
    assert len(rows) == 12 and all(len(r.split(",")) == 12 for r in rows)
    assert all(lab.count("-") == 1 for lab in rows[0].split(","))
    again = render_cells(p, (-2, 2, -2, 2), resolution=12, k=2, points=pts)
    assert again.svg == out.svg


def test_render_needs_planar_input():
    rng = np.random.default_rng(11)
    with pytest.raises(ContractError):
        render_cells(random_diagram(rng, 3, 4, 1), (-1, 1, -1, 1))
    with pytest.raises(ContractError):
        render_cells(random_encoder(rng, 2, 4), (-1, 1, -1, 1))


def test_label_colors_are_stable_hex():
    c = label_color((0, 3))
    assert c == label_color([0, 3])
    assert len(c) == 7 and c.startswith("#")
    assert label_color((0, 3)) != label_color((0, 4))
