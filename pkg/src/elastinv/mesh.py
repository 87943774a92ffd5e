"""Uniform right-triangle mesh of the sample rectangle.

The rectangle (0, lx1) x (0, lx2) is divided into nx * ny pixel cells,
each split into two right triangles along the lower-left to upper-right
diagonal. Node ordering is row-major (x fastest), so node (i, j) has
index j * (nx + 1) + i. Cell (i, j) owns triangles 2 * (j * nx + i)
(lower) and 2 * (j * nx + i) + 1 (upper).
"""

from dataclasses import dataclass, field

import numpy as np

# Boundary tag values (per node).
INTERIOR = 0
BOTTOM = 1
TOP = 2
LEFTRIGHT = 3

_TOL = 1e-10


@dataclass(frozen=True)
class BarycentricHit:
    """Containing triangle and barycentric weights for a located point."""

    triangle_index: int
    weights: np.ndarray  # shape (3,), nonnegative, sums to 1


@dataclass(frozen=True)
class Mesh:
    nx: int
    ny: int
    lx1: float
    lx2: float
    nodes: np.ndarray        # (n_nodes, 2) coordinates in mm
    triangles: np.ndarray    # (n_triangles, 3) node indices, CCW
    boundary_tags: np.ndarray  # (n_nodes,) one of INTERIOR/BOTTOM/TOP/LEFTRIGHT

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def hx(self) -> float:
        return self.lx1 / self.nx

    @property
    def hy(self) -> float:
        return self.lx2 / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def node_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def triangle_centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


def build_uniform_mesh(nx: int, ny: int, lx1: float, lx2: float) -> Mesh:
    """Build the uniform triangulation with tagged boundary nodes.

    Corner nodes are tagged BOTTOM/TOP (the displacement-controlled
    boundaries win over the free sides).
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    if lx1 <= 0 or lx2 <= 0:
        raise ValueError(f"side lengths must be > 0, got lx1={lx1}, lx2={lx2}")

    xs = np.linspace(0.0, lx1, nx + 1)
    ys = np.linspace(0.0, lx2, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row-major: Y varies along axis 0
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    # Cell corner indices, vectorized over all cells.
    i = np.arange(nx)
    j = np.arange(ny)
    I, J = np.meshgrid(i, j)
    n00 = (J * (nx + 1) + I).ravel()
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1

    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    tags = np.full(nodes.shape[0], INTERIOR, dtype=np.uint8)
    col = np.arange(nodes.shape[0]) % (nx + 1)
    row = np.arange(nodes.shape[0]) // (nx + 1)
    tags[(col == 0) | (col == nx)] = LEFTRIGHT
    tags[row == 0] = BOTTOM
    tags[row == ny] = TOP

    nodes.setflags(write=False)
    triangles.setflags(write=False)
    tags.setflags(write=False)
    return Mesh(nx=nx, ny=ny, lx1=float(lx1), lx2=float(lx2),
                nodes=nodes, triangles=triangles, boundary_tags=tags)


def _barycentric(mesh: Mesh, tri: int, p: np.ndarray) -> np.ndarray:
    v = mesh.nodes[mesh.triangles[tri]]
    T = np.column_stack([v[1] - v[0], v[2] - v[0]])
    w12 = np.linalg.solve(T, p - v[0])
    return np.array([1.0 - w12[0] - w12[1], w12[0], w12[1]])


def locate_point(mesh: Mesh, p) -> BarycentricHit | None:
    """Find the triangle containing p, or None if p lies outside.

    Points on shared edges resolve to the lowest containing triangle
    index. O(1) via the structured cell grid.
    """
    p = np.asarray(p, dtype=float)
    x, y = p
    if x < -_TOL or x > mesh.lx1 + _TOL or y < -_TOL or y > mesh.lx2 + _TOL:
        return None

    hx, hy = mesh.hx, mesh.hy
    i = min(max(int(np.floor(x / hx)), 0), mesh.nx - 1)
    j = min(max(int(np.floor(y / hy)), 0), mesh.ny - 1)

    # On a shared cell edge the left/lower neighbor holds the lower
    # triangle index, so include those cells among the candidates.
    cis = [i - 1, i] if (i > 0 and abs(x - i * hx) <= _TOL) else [i]
    cjs = [j - 1, j] if (j > 0 and abs(y - j * hy) <= _TOL) else [j]

    candidates = sorted(
        2 * (cj * mesh.nx + ci) + k
        for ci in cis for cj in cjs for k in (0, 1)
    )
    for tri in candidates:
        w = _barycentric(mesh, tri, p)
        if np.all(w >= -_TOL):
            w = np.clip(w, 0.0, 1.0)
            return BarycentricHit(triangle_index=tri, weights=w / w.sum())
    return None


def locate_points(mesh: Mesh, pts: np.ndarray):
    """Vectorized point location for points inside the rectangle.

    Returns (triangle_indices, weights (n, 3), inside_mask). Outside
    points get triangle 0 / zero weights and inside_mask False. Edge
    points may resolve to either adjacent triangle; the interpolated
    value is identical either way.
    """
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = ((x >= -_TOL) & (x <= mesh.lx1 + _TOL)
              & (y >= -_TOL) & (y <= mesh.lx2 + _TOL))

    hx, hy = mesh.hx, mesh.hy
    i = np.clip(np.floor(x / hx).astype(np.int64), 0, mesh.nx - 1)
    j = np.clip(np.floor(y / hy).astype(np.int64), 0, mesh.ny - 1)
    xl = x - i * hx
    yl = y - j * hy

    lower = yl * hx <= xl * hy  # below or on the cell diagonal
    tri = 2 * (j * mesh.nx + i) + np.where(lower, 0, 1)

    s = xl / hx
    t = yl / hy
    # Lower triangle (n00, n10, n11): w = (1 - s, s - t, t).
    # Upper triangle (n00, n11, n01): w = (1 - t, s, t - s).
    w = np.empty((pts.shape[0], 3))
    w[:, 0] = np.where(lower, 1.0 - s, 1.0 - t)
    w[:, 1] = np.where(lower, s - t, s)
    w[:, 2] = np.where(lower, t, t - s)
    np.clip(w, 0.0, 1.0, out=w)
    w /= w.sum(axis=1, keepdims=True)

    tri = np.where(inside, tri, 0)
    w[~inside] = 0.0
    return tri, w, inside
