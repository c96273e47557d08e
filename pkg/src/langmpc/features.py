"""Polynomial object-relative cost features.

The running stage carries control effort, the terminal stage carries per-object,
per-axis quadratic and linear position terms plus a velocity penalty:

    quad(j, a) = m_term * ((pos_a - o_{j,a}) / m_scale)^2     (terminal)
    lin(j, a)  = m_term *  (pos_a - o_{j,a}) / m_scale        (terminal)
    ctrl       = ||u||^2                                      (running)
    vel        = ||vel||^2                                    (terminal)

A task weight vector theta combined with the shared scales m = [m_scale, m_term]
can express any quadratic attractor to a point offset from any object (completed
square: w*(x - o - d)^2 = w*(x-o)^2 - 2wd*(x-o) + const), which is what makes the
per-task weights transfer across scenes.

Every feature factorizes as s_i(m) * unit_feature_i(x, u), so trajectory-summed
feature values, gradients and Hessians with respect to the stacked controls are
computed once at unit scales and re-weighted cheaply while learning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import DynamicsModel, Trajectory, control_jacobians

FEATURE_KIND = "poly_object_relative"

RUNNING, TERMINAL = "running", "terminal"


def default_m() -> np.ndarray:
    """m = [m_scale, m_term], both positive, initialized at 1."""
    return np.ones(2)


@dataclass(frozen=True)
class FeatureLibrary:
    """Feature map bound to a snapshot of object positions."""

    objects: np.ndarray  # (n_obj, 3)

    def __post_init__(self):
        object.__setattr__(self, "objects", np.atleast_2d(np.asarray(self.objects, dtype=float)))
        if self.objects.shape[1] != 3:
            raise ValueError("objects must be (n_obj, 3)")

    @property
    def n_objects(self) -> int:
        return self.objects.shape[0]

    @property
    def p(self) -> int:
        # quad + lin blocks per object/axis, control effort, terminal velocity
        return 6 * self.n_objects + 2

    @property
    def kind(self) -> str:
        return FEATURE_KIND

    # --- index layout: [quad(j,a)...] [lin(j,a)...] ctrl vel -------------------
    @property
    def n_pos(self) -> int:
        return 3 * self.n_objects

    @property
    def idx_ctrl(self) -> int:
        return 2 * self.n_pos

    @property
    def idx_vel(self) -> int:
        return 2 * self.n_pos + 1

    def scale_factors(self, m: np.ndarray) -> np.ndarray:
        """s(m): per-feature multiplier so features = s(m) * unit features."""
        m_scale, m_term = _check_m(m)
        s = np.ones(self.p)
        s[: self.n_pos] = m_term / m_scale ** 2
        s[self.n_pos: 2 * self.n_pos] = m_term / m_scale
        return s

    def scale_factor_grads(self, m: np.ndarray) -> np.ndarray:
        """ds/dm, shape (p, 2)."""
        m_scale, m_term = _check_m(m)
        ds = np.zeros((self.p, 2))
        ds[: self.n_pos, 0] = -2.0 * m_term / m_scale ** 3
        ds[: self.n_pos, 1] = 1.0 / m_scale ** 2
        ds[self.n_pos: 2 * self.n_pos, 0] = -m_term / m_scale ** 2
        ds[self.n_pos: 2 * self.n_pos, 1] = 1.0 / m_scale
        return ds

    def unit_stage_features(self, x: np.ndarray, u: np.ndarray | None, stage: str) -> np.ndarray:
        phi = np.zeros(self.p)
        if stage == RUNNING:
            u = np.asarray(u, dtype=float)
            phi[self.idx_ctrl] = float(u @ u)
        elif stage == TERMINAL:
            x = np.asarray(x, dtype=float)
            rel = (x[:3][None, :] - self.objects).ravel()  # (n_pos,)
            phi[: self.n_pos] = rel ** 2
            phi[self.n_pos: 2 * self.n_pos] = rel
            phi[self.idx_vel] = float(x[3:] @ x[3:])
        else:
            raise ValueError(f"unknown stage {stage!r}")
        return phi

    def stage_features(self, x: np.ndarray, u: np.ndarray | None, stage: str,
                       m: np.ndarray) -> np.ndarray:
        return self.scale_factors(m) * self.unit_stage_features(x, u, stage)

    def unit_traj_features(self, traj: Trajectory) -> np.ndarray:
        """Trajectory-summed unit features: running stages over controls, then terminal."""
        phi = self.unit_stage_features(traj.states[-1], None, TERMINAL)
        phi[self.idx_ctrl] = float(np.sum(traj.controls ** 2))
        return phi

    def unit_feature_grads(self, traj: Trajectory, jacs: np.ndarray) -> np.ndarray:
        """d(trajectory-summed unit features)/d(stacked controls), shape (p, 3n)."""
        n = traj.horizon
        jn = jacs[n]                      # (6, 3n)
        x_n = traj.states[-1]
        g = np.zeros((self.p, 3 * n))
        rel = (x_n[:3][None, :] - self.objects)   # (n_obj, 3)
        pos_rows = jn[:3]                 # rows a: d pos_a / du
        for j in range(self.n_objects):
            for a in range(3):
                g[3 * j + a] = 2.0 * rel[j, a] * pos_rows[a]
                g[self.n_pos + 3 * j + a] = pos_rows[a]
        g[self.idx_ctrl] = 2.0 * traj.controls.ravel()
        g[self.idx_vel] = 2.0 * x_n[3:] @ jn[3:]
        return g

    def unit_feature_hessians(self, dyn: DynamicsModel, n: int) -> np.ndarray:
        """d^2(trajectory-summed unit features)/du^2, shape (p, 3n, 3n).

        Constant in both the controls and the object positions, so one tensor
        serves every demo that shares the dynamics and horizon."""
        jacs = control_jacobians(dyn, n)
        jn = jacs[n]
        h = np.zeros((self.p, 3 * n, 3 * n))
        for a in range(3):
            outer = 2.0 * np.outer(jn[a], jn[a])
            for j in range(self.n_objects):
                h[3 * j + a] = outer
        h[self.idx_ctrl] = 2.0 * np.eye(3 * n)
        h[self.idx_vel] = 2.0 * jn[3:].T @ jn[3:]
        return h

    def quadratic_minimizer(self, theta: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Stationary point of the terminal position cost (completed square), per axis.

        Raises if any axis has non-positive curvature: the cost has no attractor there."""
        theta = np.asarray(theta, dtype=float)
        s = self.scale_factors(m)
        tq = (theta[: self.n_pos] * s[: self.n_pos]).reshape(self.n_objects, 3)
        tl = (theta[self.n_pos: 2 * self.n_pos] * s[self.n_pos: 2 * self.n_pos]).reshape(
            self.n_objects, 3)
        curv = 2.0 * tq.sum(axis=0)                      # d^2 psi / d pos_a^2
        if np.any(curv <= 1e-12):
            raise DegenerateCostError("terminal cost has no positive curvature on some axis")
        lin = (-2.0 * tq * self.objects + tl).sum(axis=0)
        return -lin / curv


class DegenerateCostError(ValueError):
    """The task weights define no usable attractor."""


def _check_m(m: np.ndarray) -> tuple[float, float]:
    m = np.asarray(m, dtype=float)
    if m.shape != (2,):
        raise ValueError("m must be [m_scale, m_term]")
    if np.any(m <= 0):
        raise ValueError("length scales must stay positive")
    return float(m[0]), float(m[1])


def traj_cost(traj: Trajectory, theta: np.ndarray, m: np.ndarray, lib: FeatureLibrary) -> float:
    """theta-weighted feature total along a trajectory."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (lib.p,):
        raise ValueError(f"theta must have {lib.p} entries")
    return float((theta * lib.scale_factors(m)) @ lib.unit_traj_features(traj))


def cost_grad_u(traj: Trajectory, theta: np.ndarray, m: np.ndarray, lib: FeatureLibrary,
                jacs: np.ndarray) -> np.ndarray:
    """Exact gradient of traj_cost with respect to the stacked controls."""
    tb = np.asarray(theta, dtype=float) * lib.scale_factors(m)
    n = traj.horizon
    x_n = traj.states[-1]
    rel = x_n[:3][None, :] - lib.objects
    tq = tb[: lib.n_pos].reshape(lib.n_objects, 3)
    tl = tb[lib.n_pos: 2 * lib.n_pos].reshape(lib.n_objects, 3)
    dpsi = np.zeros(6)
    dpsi[:3] = (2.0 * tq * rel + tl).sum(axis=0)
    dpsi[3:] = 2.0 * tb[lib.idx_vel] * x_n[3:]
    g = dpsi @ jacs[n]
    g += 2.0 * tb[lib.idx_ctrl] * traj.controls.ravel()
    return g


def grad_hess_u(x0: np.ndarray, controls: np.ndarray, theta: np.ndarray, m: np.ndarray,
                lib: FeatureLibrary, dyn: DynamicsModel) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient and Hessian of the trajectory cost in the stacked controls.

    The dynamics are linear, so the chain rule terminates at first order in the
    state Jacobians and the Hessian is exact (no Gauss-Newton truncation)."""
    from .sim import rollout

    controls = np.asarray(controls, dtype=float).reshape(-1, 3)
    n = controls.shape[0]
    traj = rollout(x0, controls, dyn)
    jacs = control_jacobians(dyn, n)
    tb = np.asarray(theta, dtype=float) * lib.scale_factors(m)
    g = lib.unit_feature_grads(traj, jacs).T @ tb
    h = np.einsum("p,pij->ij", tb, lib.unit_feature_hessians(dyn, n))
    return g, h
