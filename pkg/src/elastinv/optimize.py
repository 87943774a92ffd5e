"""Nelder-Mead simplex minimization with box clipping and tracing."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NMOptions:
    max_iterations: int = 100
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    initial_step: float = 0.05   # fraction of each coordinate's range
    f_tolerance: float = 1e-12
    x_tolerance: float = 1e-12
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    trace: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.reflection > 0 and self.expansion > 1
                and 0 < self.contraction < 1 and 0 < self.shrink < 1):
            raise ValueError("Nelder-Mead coefficients outside admissible ranges")


@dataclass(frozen=True)
class NMResult:
    x: np.ndarray
    fun: float
    iterations: int
    degenerate: bool
    trace_values: np.ndarray    # (iterations,) best value per iteration
    trace_points: np.ndarray    # (iterations, dim) best point per iteration
    trace_diameters: np.ndarray  # (iterations,) simplex diameter


def _clip(x: np.ndarray, opts: NMOptions) -> np.ndarray:
    if opts.lower is not None:
        x = np.maximum(x, opts.lower)
    if opts.upper is not None:
        x = np.minimum(x, opts.upper)
    return x


def _diameter(simplex: np.ndarray) -> float:
    d = 0.0
    for i in range(1, simplex.shape[0]):
        d = max(d, float(np.max(np.abs(simplex[i] - simplex[0]))))
    return d


def nelder_mead(f, x0, opts: NMOptions = NMOptions()) -> NMResult:
    """Minimize f over the box by the classic simplex method.

    Every trial point is clipped to the box before evaluation, so all
    evaluations stay inside the feasible region. One iteration is one
    reflect/expand/contract/shrink cycle. Fully deterministic; ties in
    the simplex ordering are broken by insertion order (stable sort).
    """
    x0 = _clip(np.asarray(x0, dtype=float), opts)
    dim = x0.size
    if opts.lower is not None and opts.upper is not None:
        span = np.asarray(opts.upper, dtype=float) - np.asarray(opts.lower, dtype=float)
    else:
        span = np.where(x0 != 0, np.abs(x0), 1.0)

    simplex = np.empty((dim + 1, dim))
    simplex[0] = x0
    for k in range(dim):
        v = x0.copy()
        step = opts.initial_step * span[k]
        v[k] += step
        v = _clip(v, opts)
        if v[k] == x0[k]:  # step left the box entirely; go the other way
            v[k] = x0[k] - step
            v = _clip(v, opts)
        simplex[k + 1] = v
    values = np.array([f(simplex[i]) for i in range(dim + 1)])

    trace_v, trace_x, trace_d = [], [], []
    degenerate = False
    iterations = 0

    for _ in range(opts.max_iterations):
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]

        centroid = simplex[:-1].mean(axis=0)
        xr = _clip(centroid + opts.reflection * (centroid - simplex[-1]), opts)
        fr = f(xr)

        if fr < values[0]:
            xe = _clip(centroid + opts.expansion * (xr - centroid), opts)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        else:
            # Contract toward the better of the worst vertex and the
            # reflected point; shrink if that fails too.
            if fr < values[-1]:
                xc = _clip(centroid + opts.contraction * (xr - centroid), opts)
            else:
                xc = _clip(centroid + opts.contraction * (simplex[-1] - centroid), opts)
            fc = f(xc)
            if fc < min(fr, values[-1]):
                simplex[-1], values[-1] = xc, fc
            else:
                for i in range(1, dim + 1):
                    simplex[i] = _clip(
                        simplex[0] + opts.shrink * (simplex[i] - simplex[0]), opts)
                    values[i] = f(simplex[i])

        iterations += 1
        best = int(np.argmin(values))
        diam = _diameter(np.concatenate(
            [simplex[best:best + 1], np.delete(simplex, best, axis=0)]))
        if opts.trace:
            trace_v.append(float(values[best]))
            trace_x.append(simplex[best].copy())
            trace_d.append(diam)
        if diam < 1e-14:
            degenerate = True
            break
        if (np.max(np.abs(values - values[best])) <= opts.f_tolerance
                and diam <= opts.x_tolerance):
            break

    best = int(np.argmin(values))
    return NMResult(
        x=simplex[best].copy(),
        fun=float(values[best]),
        iterations=iterations,
        degenerate=degenerate,
        trace_values=np.array(trace_v),
        trace_points=(np.array(trace_x) if trace_x
                      else np.empty((0, dim))),
        trace_diameters=np.array(trace_d),
    )
