"""Unsafe-region learning: counterexample sampling and feasibility fitting.

A constraint is a scalar field g(x, rho) that is positive inside the unsafe region
and non-positive outside. Demonstrated (safe) states must satisfy g <= 0 everywhere;
sampled lower-cost alternatives are unsafe by revealed preference, so each must have
at least one state with g > 0. Fitting minimizes a hinge loss where each unsafe
trajectory contributes through a soft maximum over its states, so the effective
witness shifts continuously as the region deforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .sim import DynamicsModel, Trajectory, rollout

FAMILIES = ("ellipsoid", "axis_box")


class SamplingError(RuntimeError):
    """No lower-cost counterexamples were found."""


class FeasibilityError(RuntimeError):
    """No constraint parameters separated safe from unsafe data."""


@dataclass(frozen=True)
class ConstraintParams:
    """family "ellipsoid": g = 1 - sum_a shape_a*(x_a-c_a)^2 (shape = inverse sq. semi-axes);
    family "axis_box":  g = min_a (shape_a - |x_a - c_a|)   (shape = halfwidths)."""

    family: str
    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown constraint family {self.family!r}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=float).reshape(3))
        if np.any(self.shape <= 0):
            raise ValueError("constraint shape parameters must be positive")

    def to_dict(self) -> dict:
        return {"family": self.family, "center": self.center.tolist(),
                "shape": self.shape.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "ConstraintParams":
        return ConstraintParams(d["family"], np.array(d["center"]), np.array(d["shape"]))


def g_eval(points: np.ndarray, rho: ConstraintParams) -> np.ndarray:
    """Constraint field at one or many positions. Positive inside the unsafe region."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :3]
    d = pts - rho.center
    if rho.family == "ellipsoid":
        vals = 1.0 - (rho.shape * d ** 2).sum(axis=1)
    else:
        vals = (rho.shape - np.abs(d)).min(axis=1)
    return vals if np.asarray(points).ndim > 1 else vals[0]


def g_grad_x(points: np.ndarray, rho: ConstraintParams) -> np.ndarray:
    """d g / d position, shape (K, 3). Box uses the active-axis subgradient."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :3]
    d = pts - rho.center
    if rho.family == "ellipsoid":
        return -2.0 * rho.shape * d
    active = (rho.shape - np.abs(d)).argmin(axis=1)
    grad = np.zeros_like(pts)
    rows = np.arange(pts.shape[0])
    grad[rows, active] = -np.sign(d[rows, active])
    return grad


def trajectory_positions(traj: Trajectory) -> np.ndarray:
    """States visited after the (fixed) start: the part the controls decide."""
    return traj.states[1:, :3]


def sample_unsafe(safe_demo: Trajectory, cost_fn, dyn: DynamicsModel, n_attempts: int,
                  noise_scale: float, seed: int,
                  base: Trajectory | None = None) -> list[Trajectory]:
    """Perturb controls with Gaussian noise and keep rollouts strictly cheaper
    than the safe demo.

    A demonstrated trajectory that detoured must have been avoiding something;
    anything strictly cheaper from the same start is therefore unsafe. By
    default the demo's own controls are perturbed. Passing the unconstrained
    optimum from the same start as `base` makes the search generative rather
    than hopeful: nearly every perturbation of it stays far cheaper than the
    detoured demo, and (because the demo is optimal among trajectories that
    avoid the region) anything that passes the cost filter must cut through
    the avoided region."""
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive, otherwise nothing can beat the demo")
    if base is None:
        base = safe_demo
    rng = np.random.default_rng(seed)
    demo_cost = cost_fn(safe_demo)
    kept = []
    for _ in range(n_attempts):
        u = base.controls + rng.normal(0.0, noise_scale, size=base.controls.shape)
        u = np.clip(u, -dyn.u_max, dyn.u_max)
        traj = rollout(safe_demo.states[0], u, dyn)
        if cost_fn(traj) < demo_cost - 1e-12:
            kept.append(traj)
    if not kept:
        raise SamplingError("no perturbation beat the demonstration cost")
    return kept


@dataclass
class FeasibilityConfig:
    margin: float = 1e-3
    restarts: int = 16
    betas: tuple = (500.0, 2500.0, 12500.0)  # soft-max sharpness schedule per restart
    shape_min: float = 1e-4
    shape_max: float = 50.0  # generous: halfwidths for boxes, inverse sq. axes for ellipsoids


def _pack(rho: ConstraintParams) -> np.ndarray:
    return np.concatenate([rho.center, rho.shape])


def _unpack(z: np.ndarray, family: str) -> ConstraintParams:
    return ConstraintParams(family, z[:3], np.maximum(z[3:], 1e-9))


def _params_grad(pts, rho):
    """Rows of dg/dcenter and dg/dshape at each point."""
    d = pts - rho.center
    if rho.family == "ellipsoid":
        gc = 2.0 * rho.shape * d            # dg/dcenter rows
        gs = -d ** 2                        # dg/dshape rows
    else:
        active = (rho.shape - np.abs(d)).argmin(axis=1)
        rows = np.arange(pts.shape[0])
        gc = np.zeros_like(pts)
        gc[rows, active] = np.sign(d[rows, active])
        gs = np.zeros_like(pts)
        gs[rows, active] = 1.0
    return gc, gs


def _surrogate(z, family, safe_pts, unsafe_stack, seg_starts, seg_ids, margin, beta):
    """Hinge fit: push safe states below -margin and, for every unsafe trajectory,
    a soft maximum of g over its states above +margin.

    The soft maximum (log-sum-exp with sharpness beta) keeps the loss smooth as
    the most-violating state of a trajectory changes, which a hard argmax witness
    does not. Returns value and gradient in the packed parameters."""
    rho = _unpack(z, family)
    val = 0.0
    grad = np.zeros(6)

    g_safe = g_eval(safe_pts, rho)
    viol = np.maximum(0.0, g_safe + margin)
    val += float(np.sum(viol ** 2))
    if np.any(viol > 0):
        gc, gs = _params_grad(safe_pts, rho)
        grad[:3] += 2.0 * viol @ gc
        grad[3:] += 2.0 * viol @ gs

    g_u = g_eval(unsafe_stack, rho)
    seg_max = np.maximum.reduceat(g_u, seg_starts)
    w = np.exp(beta * (g_u - seg_max[seg_ids]))
    z_norm = np.add.reduceat(w, seg_starts)
    soft_max = seg_max + np.log(z_norm) / beta
    short = np.maximum(0.0, margin - soft_max)
    val += float(np.sum(short ** 2))
    if np.any(short > 0):
        gc, gs = _params_grad(unsafe_stack, rho)
        coef = (-2.0 * short)[seg_ids] * (w / z_norm[seg_ids])
        grad[:3] += coef @ gc
        grad[3:] += coef @ gs
    return val, grad


def _dense_unsafe_cells(all_unsafe: np.ndarray, safe_pts: np.ndarray,
                        bin_width: float = 0.02, top_k: int = 4) -> np.ndarray:
    """Centers of histogram cells dense in unsafe states and clear of safe ones.

    Every unsafe trajectory has a state inside the region while safe states
    never enter it, so its interior shows up as cells that are dense in unsafe
    states yet empty of safe ones. Other pileups (trajectory endpoints, shared
    transit corridors) contain safe states too and are dropped. The density is
    box-smoothed and a cell only counts when its whole neighborhood is free of
    safe states, which pushes the seeds off the region's surface (where safe
    demonstrations graze) and into its core."""
    lo, hi = all_unsafe.min(axis=0), all_unsafe.max(axis=0)
    edges = [np.arange(lo[a] - bin_width, hi[a] + 2 * bin_width, bin_width) for a in range(3)]
    hist_u, _ = np.histogramdd(all_unsafe, bins=edges)
    hist_s, _ = np.histogramdd(safe_pts, bins=edges)
    score = ndimage.uniform_filter(hist_u, size=3, mode="constant")
    core = ndimage.binary_erosion(hist_s == 0, structure=np.ones((3, 3, 3)))
    score[~core] = 0.0
    flat = score.ravel()
    order = np.argsort(flat)[::-1][:top_k]
    centers = []
    for i in order:
        if flat[i] <= 0:
            break
        cell = np.unravel_index(i, score.shape)
        centers.append([edges[a][cell[a]] + 0.5 * bin_width for a in range(3)])
    return np.array(centers).reshape(-1, 3)


def check_feasibility(rho: ConstraintParams, safe_pts: np.ndarray,
                      unsafe_trajs: list[np.ndarray]) -> bool:
    """Exact boolean test: every safe state outside, every unsafe trajectory caught."""
    if np.any(g_eval(safe_pts, rho) > 0):
        return False
    return all(np.max(g_eval(pts, rho)) > 0 for pts in unsafe_trajs)


def solve_feasibility(safe_pts: np.ndarray, unsafe_trajs: list[np.ndarray], family: str,
                      seed: int, cfg: FeasibilityConfig | None = None) -> ConstraintParams:
    """Fit constraint parameters separating safe states from unsafe trajectories.

    safe_pts: (S, 3) positions from demonstrations; unsafe_trajs: list of (K_i, 3)
    position arrays, each needing at least one caught state. Multistart alternation;
    the first restart passing the exact check wins (deterministic in seed)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown constraint family {family!r}")
    if not unsafe_trajs:
        raise FeasibilityError("no unsafe trajectories to separate")
    safe_pts = np.atleast_2d(np.asarray(safe_pts, dtype=float))
    unsafe_trajs = [np.atleast_2d(np.asarray(t, dtype=float))[:, :3] for t in unsafe_trajs]
    cfg = cfg or FeasibilityConfig()
    rng = np.random.default_rng(seed)
    all_unsafe = np.vstack(unsafe_trajs)
    lens = np.array([t.shape[0] for t in unsafe_trajs])
    seg_starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
    seg_ids = np.repeat(np.arange(len(unsafe_trajs)), lens)
    lo, hi = all_unsafe.min(axis=0), all_unsafe.max(axis=0)

    bounds = [(None, None)] * 3 + [(cfg.shape_min, cfg.shape_max)] * 3
    dense = _dense_unsafe_cells(all_unsafe, safe_pts)
    for restart in range(cfg.restarts):
        # head of the schedule: deterministic seeds at the likeliest interior
        # cells; tail alternates random unsafe states (which pile up in the
        # interior) with uniform draws so a wrong density guess still recovers.
        if restart < len(dense):
            center = dense[restart]
            spread = np.full(3, 0.03)
        elif restart % 2 == 0:
            center = all_unsafe[rng.integers(len(all_unsafe))]
            spread = np.full(3, 0.03)
        else:
            center = rng.uniform(lo, hi)
            spread = np.clip(np.percentile(np.abs(all_unsafe - center),
                                           rng.uniform(40.0, 80.0), axis=0), 0.01, 0.15)
        # a small region grows outward as the shortfall pull from missed
        # trajectories expands it until safe states push back; starting big
        # instead tends to collapse onto a thin slab that clips safe states
        shape = spread if family == "axis_box" else 1.0 / spread ** 2
        rho = ConstraintParams(family, center, np.clip(shape, cfg.shape_min, cfg.shape_max))
        for beta in cfg.betas:
            res = optimize.minimize(
                _surrogate, _pack(rho), jac=True, method="L-BFGS-B", bounds=bounds,
                args=(family, safe_pts, all_unsafe, seg_starts, seg_ids, cfg.margin, beta),
                options={"maxiter": 300, "ftol": 1e-14, "gtol": 1e-12},
            )
            rho = _unpack(res.x, family)
            if check_feasibility(rho, safe_pts, unsafe_trajs):
                return rho
    raise FeasibilityError(f"no feasible {family} found in {cfg.restarts} restarts")
