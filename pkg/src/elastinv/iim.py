"""Intensity-matching objective for piecewise-constant Lame fields.

The data term compares the deformed image pulled back through the
predicted deformation against the reference image, integrated over the
sample by the pixel-midpoint rule. The penalty is the squared L2 norm
of the piecewise-constant parameter field (kPa^2 * mm^2 units; the
regularization weight absorbs any scaling).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .elasticity import (DisplacementField, ElasticityBVP, MaterialField,
                         SolverError, dirichlet_dofs, element_matrices,
                         _factorize, _triangle_areas)
from .imaging import ScalarImage, _sample_bilinear
from .mesh import Mesh, locate_points

#: Returned for out-of-bounds parameter queries so a derivative-free
#: optimizer can retreat instead of crashing.
OUT_OF_BOUNDS_SENTINEL = 1e12


class IIMContext:
    """Immutable evaluation context for the inversion objective.

    Precomputes everything that does not depend on the parameter
    vector: per-triangle stiffness blocks, the Dirichlet reduction,
    and the pixel-center interpolation stencil.

    Parameter layout: (mu_0, ..., mu_{K-1}) when `fixed_lambda` is
    given, else interleaved (lam_0, mu_0, ..., lam_{K-1}, mu_{K-1}).
    """

    def __init__(self, mesh: Mesh, labels: np.ndarray,
                 I1: ScalarImage, I2: ScalarImage, bvp: ElasticityBVP,
                 alpha: float, bounds: tuple[float, float] = (10.0, 1000.0),
                 fixed_lambda: np.ndarray | None = None,
                 fill: float = 0.0):
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        if not bounds[0] < bounds[1]:
            raise ValueError(f"invalid bounds {bounds}")
        if (I1.width, I1.height) != (mesh.nx, mesh.ny):
            raise ValueError("I1 grid does not match the mesh pixel grid")
        if (I2.width, I2.height) != (mesh.nx, mesh.ny):
            raise ValueError("I2 grid does not match the mesh pixel grid")

        self.mesh = mesh
        self.labels = np.asarray(labels)
        self.n_regions = int(self.labels.max()) + 1
        self.I1 = I1
        self.I2 = I2
        self.bvp = bvp
        self.alpha = float(alpha)
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.fixed_lambda = (None if fixed_lambda is None
                             else np.asarray(fixed_lambda, dtype=float))
        self.fill = float(fill)

        areas = _triangle_areas(mesh)
        self.region_areas = np.bincount(self.labels, weights=areas,
                                        minlength=self.n_regions)

        # Stiffness ingredients, grouped so assembly per evaluation is
        # two weighted sums plus one sparse conversion.
        K_lam, K_mu, rows, cols = element_matrices(mesh)
        self._K_lam = K_lam
        self._K_mu = K_mu
        self._rows = rows.ravel()
        self._cols = cols.ravel()
        self._ndof = 2 * mesh.n_nodes

        dofs, vals = dirichlet_dofs(mesh, bvp)
        self._dir_dofs = dofs
        self._dir_vals = vals
        self._free = np.setdiff1d(np.arange(self._ndof), dofs)

        centers = I1.pixel_centers()
        tri, w, inside = locate_points(mesh, centers)
        assert np.all(inside)
        self._centers = centers
        self._stencil_nodes = mesh.triangles[tri]  # (P, 3)
        self._stencil_w = w

        self.pixel_area = (mesh.lx1 / mesh.nx) * (mesh.lx2 / mesh.ny)

    @property
    def n_params(self) -> int:
        return (self.n_regions if self.fixed_lambda is not None
                else 2 * self.n_regions)

    def split_params(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-region (lam, mu) arrays from the flat parameter vector."""
        p = np.asarray(p, dtype=float)
        if p.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {p.size}")
        if self.fixed_lambda is not None:
            return self.fixed_lambda, p
        return p[0::2], p[1::2]

    def in_bounds(self, p: np.ndarray) -> bool:
        lo, hi = self.bounds
        return bool(np.all((p >= lo) & (p <= hi)))

    def material(self, p: np.ndarray) -> MaterialField:
        lam, mu = self.split_params(p)
        return MaterialField(labels=self.labels, lam=lam, mu=mu)

    def solve(self, p: np.ndarray) -> DisplacementField:
        """FEM solve for the displacement at parameter vector p."""
        lam, mu = self.split_params(p)
        if np.any(mu <= 0):
            raise SolverError(f"invalid material: mu must be > 0, got {mu}")
        lam_t = lam[self.labels]
        mu_t = mu[self.labels]
        data = (lam_t[:, None, None] * self._K_lam
                + mu_t[:, None, None] * self._K_mu)
        K = sp.coo_matrix((data.ravel(), (self._rows, self._cols)),
                          shape=(self._ndof, self._ndof)).tocsc()

        u = np.zeros(self._ndof)
        u[self._dir_dofs] = self._dir_vals
        rhs = -(K @ u)
        K_ff = K[self._free][:, self._free]
        b_f = rhs[self._free]
        u_f = _factorize(K_ff).solve(b_f)
        b_norm = np.linalg.norm(b_f)
        if b_norm > 0:
            res = np.linalg.norm(K_ff @ u_f - b_f)
            if res > 1e-10 * b_norm:
                raise SolverError(
                    f"solve residual {res / b_norm:.3e} exceeds 1e-10")
        u[self._free] = u_f
        return DisplacementField(values=u.reshape(-1, 2))

    def warp_deformed(self, p: np.ndarray) -> np.ndarray:
        """Forward-operator image: I2 evaluated at x + u(x) per pixel."""
        u = self.solve(p)
        disp = np.einsum("pk,pkd->pd", self._stencil_w,
                         u.values[self._stencil_nodes])
        out = _sample_bilinear(self.I2, self._centers + disp, self.fill)
        return out.reshape(self.I1.height, self.I1.width)


def residual(ctx: IIMContext, p: np.ndarray) -> float:
    """Squared L2 intensity mismatch by the pixel-midpoint rule."""
    p = np.asarray(p, dtype=float)
    if not ctx.in_bounds(p):
        return OUT_OF_BOUNDS_SENTINEL
    warped = ctx.warp_deformed(p)
    diff = warped - ctx.I1.values
    return float(ctx.pixel_area * np.sum(diff * diff))


def penalty(ctx: IIMContext, p: np.ndarray) -> float:
    """Squared L2 norm of the piecewise-constant parameter field."""
    lam, mu = ctx.split_params(p)
    return float(np.sum((lam * lam + mu * mu) * ctx.region_areas))


def objective(ctx: IIMContext, p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    if not ctx.in_bounds(p):
        return OUT_OF_BOUNDS_SENTINEL
    return residual(ctx, p) + ctx.alpha * penalty(ctx, p)


def relative_error(region_areas: np.ndarray,
                   rec_lam: np.ndarray, rec_mu: np.ndarray,
                   true_lam: np.ndarray, true_mu: np.ndarray,
                   ) -> tuple[float, float, float]:
    """Relative L2 errors of piecewise-constant parameter fields.

    Returns (err_lam, err_mu, joint) as fractions, with
    joint = sqrt(err_lam^2 + err_mu^2).
    """
    region_areas = np.asarray(region_areas, dtype=float)

    def rel(rec, true):
        true = np.asarray(true, dtype=float)
        rec = np.asarray(rec, dtype=float)
        denom = np.sqrt(np.sum(true * true * region_areas))
        if denom == 0:
            raise ValueError("ground-truth field has zero norm")
        d = rec - true
        return float(np.sqrt(np.sum(d * d * region_areas)) / denom)

    e_lam = rel(rec_lam, true_lam)
    e_mu = rel(rec_mu, true_mu)
    return e_lam, e_mu, float(np.hypot(e_lam, e_mu))


def relative_error_params(ctx: IIMContext, p: np.ndarray, truth: np.ndarray,
                          ) -> tuple[float, float, float]:
    """relative_error on flat parameter vectors in the context layout."""
    rl, rm = ctx.split_params(p)
    tl, tm = ctx.split_params(truth)
    return relative_error(ctx.region_areas, rl, rm, tl, tm)
