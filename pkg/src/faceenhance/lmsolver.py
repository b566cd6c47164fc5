"""Landmark recovery from target edge lengths by Levenberg-Marquardt.

Energy: sum over mesh edges of (|p_i - p_j|^2 - d_ij^2)^2, a smooth quartic in
the coordinates. There is no gauge fixing; starting from the source landmarks
keeps the solution in their frame.
"""
import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geoembed import FaceMesh, LandmarkSet, pca_decode


@dataclass
class LmOptions:
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    max_iter: int = 200
    rel_tol: float = 1e-10

    def __post_init__(self):
        for name in ("damping_init", "damping_up", "damping_down", "max_iter", "rel_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FitProblem:
    mesh: FaceMesh
    target_distances: np.ndarray
    init_points: np.ndarray

    def __post_init__(self):
        self.target_distances = np.asarray(self.target_distances, dtype=np.float64)
        if isinstance(self.init_points, LandmarkSet):
            self.init_points = self.init_points.points
        self.init_points = np.asarray(self.init_points, dtype=np.float64)
        if len(self.target_distances) != len(self.mesh.edges):
            raise ValueError("target distances and mesh edges differ in length")
        if np.any(~(self.target_distances > 0)):
            raise ValueError("target distances must be positive")

    @property
    def edges(self):
        return np.asarray(self.mesh.edges, dtype=np.intp)


@dataclass
class FitResult:
    points: np.ndarray
    energy: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)   # (iteration, energy, damping)


class NotConvergedError(RuntimeError):
    pass


class NotConvergedWarning(RuntimeWarning):
    pass


def residuals(points, edges, target_sq):
    diff = points[edges[:, 0]] - points[edges[:, 1]]
    return (diff * diff).sum(axis=1) - target_sq, diff


def energy(points, problem):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) != len(problem.init_points):
        raise ValueError("point count does not match the problem")
    r, _ = residuals(pts, problem.edges, problem.target_distances ** 2)
    return float(r @ r)


def jacobian(points, edges):
    """d r_e / d p, shape (n_edges, 2 * n_points), row-major (x0, y0, x1, ...)."""
    diff = points[edges[:, 0]] - points[edges[:, 1]]
    m = len(edges)
    J = np.zeros((m, points.size))
    rows = np.arange(m)
    J[rows, 2 * edges[:, 0]] = 2 * diff[:, 0]
    J[rows, 2 * edges[:, 0] + 1] = 2 * diff[:, 1]
    J[rows, 2 * edges[:, 1]] = -2 * diff[:, 0]
    J[rows, 2 * edges[:, 1] + 1] = -2 * diff[:, 1]
    return J


def solve_landmarks(problem, opts=None):
    """Minimise the edge-length energy starting from ``problem.init_points``.

    Marquardt damping (``J^T J + mu * diag(J^T J)``); ``mu`` is multiplied by
    ``damping_up`` after a rejected step and divided by ``damping_down`` after
    an accepted one, so accepted iterates never increase the energy.
    Convergence: relative energy decrease below ``rel_tol`` or energy that is
    zero to rounding. Hitting ``max_iter`` returns the best iterate with
    ``converged=False``.
    """
    opts = opts or LmOptions()
    edges = problem.edges
    target_sq = problem.target_distances ** 2
    x = problem.init_points.copy()
    r, _ = residuals(x, edges, target_sq)
    e = float(r @ r)
    mu = opts.damping_init
    trace = [(0, e, mu)]
    # energy floor set by rounding in the squared lengths
    floor = (1e-13 * float(target_sq.max())) ** 2 * len(edges)
    if e <= floor:
        return FitResult(x, e, 0, True, trace)

    converged = False
    it = 0
    for it in range(1, int(opts.max_iter) + 1):
        J = jacobian(x, edges)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= opts.damping_up
                continue
            x_new = x + step.reshape(-1, 2)
            r_new, _ = residuals(x_new, edges, target_sq)
            e_new = float(r_new @ r_new)
            if np.isfinite(e_new) and e_new <= e:
                accepted = True
                break
            mu *= opts.damping_up
        if not accepted:
            converged = True   # no descent direction left at any damping
            break
        decrease = e - e_new
        x, r, e = x_new, r_new, e_new
        mu = max(mu / opts.damping_down, 1e-15)
        trace.append((it, e, mu))
        if e <= floor or decrease <= opts.rel_tol * max(e + decrease, 1e-300):
            converged = True
            break
    return FitResult(x, e, it, converged, trace)


def write_trace(result, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "energy", "damping"])
        for row in result.trace:
            w.writerow([row[0], repr(row[1]), repr(row[2])])


def recover_enhanced_landmarks(pca, mesh, l_y, p_x, opts=None, strict=False):
    """Decode an enhanced code to edge lengths and fit landmarks to them.

    Returns the :class:`FitResult`. Non-convergence raises when ``strict``,
    otherwise it is reported as a :class:`NotConvergedWarning`.
    """
    d = pca_decode(pca, l_y)
    # negative decoded lengths can only come from extrapolated codes
    d = np.maximum(np.abs(d), 1e-6)
    problem = FitProblem(mesh, d, p_x)
    res = solve_landmarks(problem, opts)
    if not res.converged:
        msg = f"landmark fit did not converge in {res.iterations} iterations (energy {res.energy:.3g})"
        if strict:
            raise NotConvergedError(msg)
        warnings.warn(msg, NotConvergedWarning, stacklevel=2)
    return res
