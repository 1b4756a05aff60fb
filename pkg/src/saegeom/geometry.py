"""Spline geometry of TopK / JumpReLU sparse autoencoders.

A TopK encoder partitions input space into the cells of a K-th-order
power diagram whose centroids are the encoder rows. This module converts
between the two descriptions, reduces a K-th-order diagram to an
ordinary power diagram over K-subsets, lifts power diagrams to Voronoi
diagrams one dimension up, and renders 2-D cell maps as SVG.

Cells are compared with the power function
``P_i(x) = -2 mu_i . x + |mu_i|^2 - alpha_i`` (the squared distance with
``|x|^2`` dropped). Ties always resolve toward the lowest index.
"""

from __future__ import annotations

import colorsys
import hashlib
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractError
from .numerics import as_matrix, as_vector, lstsq
from .sae import JumpReLU, SaeParams, TopK

MAX_REDUCED_CELLS = 10**6


@dataclass(frozen=True)
class HalfspaceRegion:
    """The open polyhedral set ``{x : h @ x > c}``."""

    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape[0] != self.c.shape[0]:
            raise ContractError("HalfspaceRegion needs one offset per row of h")

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.all(x @ self.h.T > self.c, axis=-1)

    @property
    def degenerate(self):
        """True if some row of ``h`` is zero.

        Then the region is not the interior of ``{h @ x >= c}``: it is
        either empty or that row places no constraint on ``x``.
        """
        return bool(np.any(np.all(self.h == 0, axis=1)))


@dataclass(frozen=True)
class PowerDiagram:
    centroids: np.ndarray
    weights: np.ndarray
    labels: list = field(default=None, compare=False)

    def __post_init__(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] == 0:
            raise ContractError("power diagram needs at least one centroid")
        if self.weights.shape != (self.centroids.shape[0],):
            raise ContractError("power diagram needs one weight per centroid")


@dataclass(frozen=True)
class KthOrderPowerDiagram:
    centroids: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        d = self.centroids.shape[0]
        if self.weights.shape != (d,):
            raise ContractError("diagram needs one weight per centroid")
        if not 1 <= self.order <= d:
            raise ContractError(f"order must lie in [1, {d}], got {self.order}")

    @property
    def dim(self):
        return self.centroids.shape[1]

    def to_dict(self):
        return {
            "centroids": self.centroids.tolist(),
            "weights": self.weights.tolist(),
            "order": self.order,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            as_matrix(doc["centroids"], "centroids"),
            as_vector(doc["weights"], "weights"),
            int(doc["order"]),
        )


def _check_subset(s, d):
    s = tuple(sorted(int(i) for i in s))
    if len(set(s)) != len(s) or (s and (s[0] < 0 or s[-1] >= d)):
        raise ContractError(f"cell label {s} is not a set of distinct indices in [0, {d})")
    return s


def region_matrix(s, params, kind):
    """Half-space description of the input region whose active set is ``s``.

    ``kind`` is a ``JumpReLU`` (any subset) or a ``TopK`` (``|s| == k``).
    For TopK there is one row per pair ``(i in s, j not in s)``, ordered
    by ``i`` then ``j``.
    """
    w, b = params.w_enc, params.b_enc
    d = w.shape[0]
    s = _check_subset(s, d)
    in_s = np.zeros(d, dtype=bool)
    in_s[list(s)] = True
    if isinstance(kind, JumpReLU):
        sign = np.where(in_s, 1.0, -1.0)
        return HalfspaceRegion(sign[:, None] * w, sign * (kind.tau - b))
    if isinstance(kind, TopK):
        if len(s) != kind.k:
            raise ContractError(f"TopK cell needs |S| = {kind.k}, got {len(s)}")
        out_s = np.flatnonzero(~in_s)
        pairs = [(i, j) for i in s for j in out_s]
        if not pairs:
            return HalfspaceRegion(np.zeros((0, w.shape[1])), np.zeros(0))
        ii = np.array([p[0] for p in pairs])
        jj = np.array([p[1] for p in pairs])
        return HalfspaceRegion(w[ii] - w[jj], -(b[ii] - b[jj]))
    raise ContractError(f"unsupported region kind {kind!r}")


def enc_to_diagram(params, k):
    """K-th-order power diagram realised by a TopK encoder.

    ``mu_i`` is row ``i`` of ``W_enc`` and ``alpha_i = 2 b_i + |mu_i|^2``.
    """
    if isinstance(params, SaeParams):
        w, b = params.w_enc, params.b_enc
    else:
        w, b = params
    w = as_matrix(w, "w_enc")
    b = as_vector(b, "b_enc")
    mu = w.copy()
    alpha = 2.0 * b + np.sum(mu * mu, axis=1)
    return KthOrderPowerDiagram(mu, alpha, int(k))


def diagram_to_enc(diag):
    """Encoder ``(W_enc, b_enc)`` whose TopK cells are the diagram's cells."""
    mu = diag.centroids
    w = mu.copy()
    b = 0.5 * diag.weights - 0.5 * np.sum(mu * mu, axis=1)
    return w, b


def power_functions(x, centroids, weights):
    """``P_i(x)`` for every centroid; shape ``(..., k)``."""
    x = np.asarray(x, dtype=np.float64)
    return -2.0 * x @ centroids.T + (np.sum(centroids * centroids, axis=1) - weights)


def cells_of(x, diag):
    """Sorted K-subset cell of each row of ``x``, as an ``(N, K)`` int array."""
    p = power_functions(np.atleast_2d(x), diag.centroids, diag.weights)
    idx = np.argsort(p, axis=1, kind="stable")[:, : diag.order]
    return np.sort(idx, axis=1)


def cell_of(x, diag):
    """Cell label (sorted tuple) of a single point."""
    return tuple(int(i) for i in cells_of(x, diag)[0])


def power_cell_index(x, diag):
    """Index of the first-order power cell containing each row of ``x``."""
    p = power_functions(np.atleast_2d(x), diag.centroids, diag.weights)
    return np.argmin(p, axis=1)


def reduce_to_power(diag):
    """Ordinary power diagram over all K-subsets with the same cells.

    Subset ``S`` gets centroid ``mean(mu_i, i in S)`` and weight
    ``|nu_S|^2 - mean(|mu_i|^2) + mean(alpha_i)``. Cells are listed in
    lexicographic subset order and ``labels`` records each subset.
    """
    d, k = diag.centroids.shape[0], diag.order
    count = math.comb(d, k)
    if count > MAX_REDUCED_CELLS:
        raise CapacityError(f"C({d},{k}) = {count} cells exceeds {MAX_REDUCED_CELLS}")
    subsets = list(itertools.combinations(range(d), k))
    inc = np.zeros((count, d))
    for row, s in enumerate(subsets):
        inc[row, list(s)] = 1.0 / k
    nu = inc @ diag.centroids
    sq = np.sum(diag.centroids**2, axis=1)
    beta = np.sum(nu * nu, axis=1) - inc @ sq + inc @ diag.weights
    return PowerDiagram(nu, beta, labels=subsets)


def fit_second_order(targets):
    """Least-squares centroids whose pairwise means match ``targets``.

    ``targets`` holds ``C(k, 2)`` points ordered by pair ``(0,1), (0,2),
    ..., (k-2,k-1)``. Returns ``(centroids, residual)`` where residual is
    the Frobenius norm of the misfit.
    """
    t = as_matrix(targets, "targets")
    m = t.shape[0]
    k = (1 + math.isqrt(1 + 8 * m)) // 2
    if k < 2 or k * (k - 1) // 2 != m:
        raise ContractError(f"{m} targets is not C(k, 2) for any k >= 2")
    a = np.zeros((m, k))
    for row, (i, j) in enumerate(itertools.combinations(range(k), 2)):
        a[row, i] = a[row, j] = 0.5
    mu = lstsq(a, t)
    return mu, float(np.linalg.norm(a @ mu - t))


def lift_to_voronoi(diag):
    """Centroids in one dimension higher whose Voronoi slice is ``diag``.

    Weights are shifted down by their maximum so that all are <= 0, then
    ``zeta_i = sqrt(-alpha_i)`` is appended as an extra coordinate.
    """
    alpha = diag.weights - np.max(diag.weights)
    zeta = np.sqrt(np.maximum(-alpha, 0.0))
    return np.hstack([diag.centroids, zeta[:, None]])


# -- rendering ---------------------------------------------------------------


def label_key(label):
    return "-".join(str(int(i)) for i in label)


def label_color(label):
    """Deterministic hex color for a cell label."""
    h = int.from_bytes(
        hashlib.blake2b(label_key(label).encode(), digest_size=8).digest(), "big"
    )
    hue = (h % 3600) / 3600.0
    light = 0.55 + 0.15 * ((h >> 16) % 100) / 100.0
    r, g, b = colorsys.hls_to_rgb(hue, light, 0.65)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


@dataclass
class CellRender:
    """Pixel-center cell labels of a 2-D diagram plus an SVG picture.

    ``labels[r, c]`` is the sorted K-subset at pixel row ``r`` (top row is
    ``ymax``) and column ``c`` (left column is ``xmin``).
    """

    labels: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    svg: str

    def to_csv(self):
        buf = io.StringIO()
        for row in self.labels:
            buf.write(",".join(label_key(lab) for lab in row))
            buf.write("\n")
        return buf.getvalue()

    def distinct_labels(self):
        return sorted({tuple(lab) for row in self.labels for lab in row})


def pixel_centers(bbox, resolution):
    xmin, xmax, ymin, ymax = bbox
    if not (xmax > xmin and ymax > ymin):
        raise ContractError(f"degenerate bounding box {bbox}")
    if resolution < 1:
        raise ContractError("resolution must be >= 1")
    dx = (xmax - xmin) / resolution
    dy = (ymax - ymin) / resolution
    xs = xmin + dx * (np.arange(resolution) + 0.5)
    ys = ymax - dy * (np.arange(resolution) + 0.5)
    return xs, ys


def render_cells(diag, bbox, resolution=200, k=None, points=None, size=480):
    """Rasterise the cells of a 2-D diagram.

    ``diag`` is a ``KthOrderPowerDiagram`` or ``SaeParams`` (then ``k``
    gives the TopK order). ``points`` optionally overlays data.
    """
    if isinstance(diag, SaeParams):
        if k is None:
            raise ContractError("rendering SaeParams needs the TopK order k")
        diag = enc_to_diagram(diag, k)
    if diag.dim != 2:
        raise ContractError(f"can only render 2-D diagrams, got n={diag.dim}")
    xs, ys = pixel_centers(bbox, resolution)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    labels = cells_of(grid, diag).reshape(resolution, resolution, diag.order)
    svg = cells_svg(labels, bbox, diag.centroids, points=points, size=size)
    return CellRender(labels=labels, xs=xs, ys=ys, svg=svg)


def cells_svg(labels, bbox, centroids=None, points=None, size=480, title=None):
    """SVG 1.1 document of a label grid, run-length encoded per pixel row."""
    return svg_document([cells_group(labels, bbox, centroids, points, size, title)], size, size)


def cells_group(labels, bbox, centroids=None, points=None, size=480, title=None, x0=0.0):
    res_y, res_x = labels.shape[:2]
    px, py = size / res_x, size / res_y
    xmin, xmax, ymin, ymax = bbox
    out = [f'<g transform="translate({x0:g},0)">']
    for r in range(res_y):
        c = 0
        while c < res_x:
            lab = tuple(labels[r, c])
            end = c + 1
            while end < res_x and tuple(labels[r, end]) == lab:
                end += 1
            out.append(
                f'<rect x="{c * px:.3f}" y="{r * py:.3f}" width="{(end - c) * px:.3f}" '
                f'height="{py:.3f}" fill="{label_color(lab)}" class="cell-{label_key(lab)}"/>'
            )
            c = end

    def to_px(p):
        return (p[0] - xmin) / (xmax - xmin) * size, (ymax - p[1]) / (ymax - ymin) * size

    if points is not None:
        for p in np.asarray(points):
            u, v = to_px(p)
            out.append(f'<circle cx="{u:.3f}" cy="{v:.3f}" r="2" fill="black" fill-opacity="0.6"/>')
    if centroids is not None:
        for p in np.asarray(centroids):
            if xmin <= p[0] <= xmax and ymin <= p[1] <= ymax:
                u, v = to_px(p)
                out.append(
                    f'<circle cx="{u:.3f}" cy="{v:.3f}" r="3.5" fill="white" stroke="black"/>'
                )
    if title:
        out.append(f'<text x="6" y="16" font-family="sans-serif" font-size="13">{title}</text>')
    out.append("</g>")
    return "\n".join(out)


def svg_document(groups, width, height):
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:g}" height="{height:g}" viewBox="0 0 {width:g} {height:g}">'
    )
    return "\n".join([head, *groups, "</svg>\n"])
