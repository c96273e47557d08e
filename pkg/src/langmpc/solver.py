"""Direct-shooting OCP solver: quadratic penalty phases around a box-bounded
first-order inner minimization (L-BFGS-B over the stacked controls)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import fmin_l_bfgs_b

from .constraints import ConstraintParams, g_eval, g_grad_x
from .features import (DegenerateCostError, FeatureLibrary, cost_grad_u, grad_hess_u,
                       traj_cost)
from .sim import DynamicsModel, Trajectory, control_jacobians


@dataclass
class OcpSpec:
    """A fully instantiated control problem for one sub-task."""

    theta: np.ndarray                 # (p,) task weights
    m: np.ndarray                     # [m_scale, m_term]
    horizon: int
    x0: np.ndarray                    # (6,) [pos, vel]
    objects: np.ndarray               # (n_obj, 3) snapshot the features anchor to
    dyn: DynamicsModel = field(default_factory=DynamicsModel)
    rho: ConstraintParams | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(6)
        self.objects = np.atleast_2d(np.asarray(self.objects, dtype=float))
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")

    def library(self) -> FeatureLibrary:
        return FeatureLibrary(self.objects)


@dataclass
class SolverConfig:
    gtol: float = 1e-9                # on the projected gradient of the normalized objective
    max_iter: int = 500               # inner iterations per penalty phase
    viol_tol: float = 1e-6
    mu0: float = 10.0
    mu_scale: float = 10.0
    mu_max: float = 1e6


@dataclass
class SolveResult:
    controls: np.ndarray
    traj: Trajectory
    cost: float                       # feature cost in caller units, no penalty
    max_violation: float
    converged: bool
    iterations: int
    mu_final: float


def _box_qp(h: np.ndarray, b: np.ndarray, lim: float) -> np.ndarray | None:
    """Exact primal active-set solve of min 0.5 u'hu + b'u over |u_i| <= lim.

    h must be symmetric positive definite; returns None if a subsystem solve
    fails so the caller can fall back to an iterative method. Finite
    termination: each pass either exactly minimizes over the current free set
    (possibly hitting one blocking bound) or releases the single worst
    mis-signed multiplier."""
    n = b.size
    try:
        u = np.clip(-np.linalg.solve(h, b), -lim, lim)
    except np.linalg.LinAlgError:
        return None
    active = np.where(u >= lim, 1, 0) + np.where(u <= -lim, -1, 0)
    for _ in range(8 * n + 32):
        g = h @ u + b
        free = active == 0
        d = np.zeros(n)
        if np.any(free):
            try:
                d[free] = np.linalg.solve(h[np.ix_(free, free)], -g[free])
            except np.linalg.LinAlgError:
                return None
        alpha = 1.0
        blocker = -1
        for i in np.flatnonzero(free & (d != 0.0)):
            bound = lim if d[i] > 0 else -lim
            a_i = (bound - u[i]) / d[i]
            if a_i < alpha:
                alpha, blocker = a_i, i
        if blocker >= 0:
            u = u + alpha * d
            side = 1 if d[blocker] > 0 else -1
            u[blocker] = side * lim
            active[blocker] = side
            continue
        # unblocked Newton step: the free set is exactly minimized, so only
        # the bound multipliers can still be wrong
        u = np.clip(u + d, -lim, lim)
        g = h @ u + b
        mult_viol = active * g
        worst = int(np.argmax(mult_viol)) if np.any(active != 0) else -1
        if worst < 0 or mult_viol[worst] <= 1e-10 * max(1.0, float(np.abs(g).max())):
            return u
        active[worst] = 0
    return None


def warm_start_controls(spec: OcpSpec) -> np.ndarray:
    """Constant-acceleration bang-bang profile toward the terminal-cost minimizer.

    Falls back to zero controls when the cost defines no attractor."""
    n = spec.horizon
    try:
        target = spec.library().quadratic_minimizer(spec.theta, spec.m)
    except DegenerateCostError:
        return np.zeros((n, 3))
    delta = target - spec.x0[:3]
    t_total = n * spec.dyn.dt
    a = 4.0 * delta / t_total ** 2
    a = np.clip(a, -spec.dyn.u_max, spec.dyn.u_max)
    u = np.zeros((n, 3))
    u[: n // 2] = a
    u[n - n // 2:] = -a
    return u


def _penalty_terms(states: np.ndarray, rho: ConstraintParams | None):
    """Violation hinge values over the decided states (x_1..x_N)."""
    if rho is None:
        return None, 0.0
    g = g_eval(states[1:, :3], rho)
    viol = np.maximum(0.0, g)
    return viol, float(np.max(g))


def solve_ocp(spec: OcpSpec, cfg: SolverConfig | None = None,
              warm_start: np.ndarray | None = None) -> SolveResult:
    """Minimize the feature cost subject to the learned constraint via quadratic
    penalties. The task weights are normalized internally (the minimizer is invariant
    under positive cost scaling), so the solve path is identical for theta and c*theta;
    the reported cost is in caller units."""
    cfg = cfg or SolverConfig()
    lib, dyn, n = spec.library(), spec.dyn, spec.horizon
    scale = float(np.max(np.abs(spec.theta)))
    if scale <= 0:
        raise DegenerateCostError("all task weights are zero")
    theta_n = spec.theta / scale

    jacs = control_jacobians(dyn, n)
    jac_flat = jacs.reshape((n + 1) * 6, 3 * n)
    base = np.empty((n + 1, 6))
    base[0] = spec.x0
    a_mat = dyn.a_matrix()
    for k in range(n):
        base[k + 1] = a_mat @ base[k]

    def make_traj(u_flat: np.ndarray) -> Trajectory:
        states = base + (jac_flat @ u_flat).reshape(n + 1, 6)
        return Trajectory(states, u_flat.reshape(n, 3))

    def objective(u_flat: np.ndarray, mu: float):
        traj = make_traj(u_flat)
        c = traj_cost(traj, theta_n, spec.m, lib)
        viol, _ = _penalty_terms(traj.states, spec.rho)
        pen = mu * float(np.sum(viol ** 2)) if viol is not None else 0.0
        return c + pen, traj, viol

    def gradient(traj: Trajectory, viol: np.ndarray | None, mu: float) -> np.ndarray:
        g = cost_grad_u(traj, theta_n, spec.m, lib, jacs)
        if viol is not None and np.any(viol > 0):
            gx = g_grad_x(traj.states[1:, :3], spec.rho)          # (n, 3)
            w = (2.0 * mu * viol)[:, None] * gx                    # d pen / d pos_k
            # chain through the position rows of each state Jacobian
            g = g + np.einsum("ka,kaj->j", w, jacs[1:, :3, :])
        return g

    def projected_gnorm(u_flat: np.ndarray, g: np.ndarray) -> float:
        """Gradient with components frozen against an active control bound zeroed."""
        gp = g.copy()
        eps = 1e-12 * dyn.u_max
        gp[(u_flat >= dyn.u_max - eps) & (g < 0)] = 0.0
        gp[(u_flat <= -dyn.u_max + eps) & (g > 0)] = 0.0
        return float(np.linalg.norm(gp))

    u_direct = None
    if spec.rho is None:
        # Unconstrained case is an exact convex box QP in u: solve it outright.
        b, h = grad_hess_u(spec.x0, np.zeros((n, 3)), theta_n, spec.m, lib, dyn)
        u_direct = _box_qp(h, b, dyn.u_max)
        if u_direct is not None:
            traj = make_traj(u_direct)
            g_star = cost_grad_u(traj, theta_n, spec.m, lib, jacs)
            if projected_gnorm(u_direct, g_star) <= cfg.gtol:
                return SolveResult(
                    controls=u_direct.reshape(n, 3), traj=traj,
                    cost=scale * traj_cost(traj, theta_n, spec.m, lib),
                    max_violation=0.0, converged=True, iterations=1, mu_final=cfg.mu0,
                )

    if warm_start is not None:
        u = np.asarray(warm_start, dtype=float).ravel().copy()
    elif u_direct is not None:
        u = u_direct.copy()   # box-QP solution beats the bang-bang guess
    else:
        u = warm_start_controls(spec).ravel().copy()
    u = np.clip(u, -dyn.u_max, dyn.u_max)
    bounds = [(-dyn.u_max, dyn.u_max)] * (3 * n)
    mu = cfg.mu0
    total_iters = 0
    grad_converged = False
    pgtol_inner = cfg.gtol / np.sqrt(3 * n)   # inner test is per-component
    while True:
        def fg(u_flat: np.ndarray):
            f, traj, viol = objective(u_flat, mu)
            return f, gradient(traj, viol, mu)

        it_used = 0
        for _ in range(3):   # restarts reset the curvature memory near the floor
            u, _, info = fmin_l_bfgs_b(fg, u, bounds=bounds, pgtol=pgtol_inner,
                                       factr=1.0, maxiter=cfg.max_iter - it_used,
                                       maxls=100)
            it_used += max(1, int(info["nit"]))
            total_iters += int(info["nit"])
            _, g_end = fg(u)
            grad_converged = projected_gnorm(u, g_end) <= cfg.gtol
            if grad_converged or it_used >= cfg.max_iter:
                break
        _, traj, _ = objective(u, mu)
        _, max_g = _penalty_terms(traj.states, spec.rho)
        if spec.rho is None or max_g <= cfg.viol_tol:
            break
        if mu >= cfg.mu_max:
            break
        mu = min(mu * cfg.mu_scale, cfg.mu_max)

    final_cost = scale * traj_cost(traj, theta_n, spec.m, lib)
    _, max_g = _penalty_terms(traj.states, spec.rho)
    ok = grad_converged and (spec.rho is None or max_g <= cfg.viol_tol)
    return SolveResult(
        controls=u.reshape(n, 3), traj=traj, cost=final_cost,
        max_violation=max(max_g, 0.0) if spec.rho is not None else 0.0,
        converged=ok, iterations=total_iters, mu_final=mu,
    )
