"""Inverse optimal control from demonstrations via a Laplace-approximated
maximum-entropy likelihood.

For each demonstration the stacked-control cost derivatives (g, H) are taken
at the demonstrated controls; the negative log likelihood contribution is

    0.5 * g^T Hhat^{-1} g - 0.5 * logdet(Hhat),

where Hhat is H lifted by a scalar so its smallest eigenvalue is at least
EIG_FLOOR. The quadratic term is zero exactly when the demonstration is
stationary for the current cost, and the log-determinant term rewards
sharply peaked cost landscapes, which sets the overall scale of the weights.

Because the feature library is quadratic in the stacked controls, g is linear
in the effective weights and H is constant per task, so the whole loss and its
exact gradient reduce to small dense linear algebra precomputed once per
demo set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureLibrary
from .mapping import MlpParams, flatten_params, init_mlp, mlp_backward, mlp_forward, unflatten_params
from .sim import DynamicsModel, Trajectory, control_jacobians

EIG_FLOOR = 1e-6


@dataclass
class IrlPrecomp:
    lib: FeatureLibrary
    dyn: DynamicsModel
    horizon: int
    demo_grads: np.ndarray          # (n_demos, p, 3*horizon): unit feature grads per demo
    task_slices: list[np.ndarray]   # demo indices per task
    unit_hessians: np.ndarray       # (p, 3*horizon, 3*horizon), shared by all demos

    @property
    def n_tasks(self) -> int:
        return len(self.task_slices)

    @property
    def n_demos(self) -> int:
        return self.demo_grads.shape[0]


def build_precomp(demos_by_task: list[list[Trajectory]], lib: FeatureLibrary,
                  dyn: DynamicsModel,
                  libs_by_task: list[list[FeatureLibrary]] | None = None) -> IrlPrecomp:
    """Per-demo feature derivatives plus the shared unit Hessians.

    libs_by_task, when given, supplies the feature library (i.e. the scene
    layout) for each demonstration, parallel to demos_by_task; the curvature
    of every feature is layout-independent, so the unit Hessians still come
    from the shared lib, which also fixes the feature count p."""
    horizons = {traj.horizon for task in demos_by_task for traj in task}
    if len(horizons) != 1:
        raise ValueError("all demonstrations must share one horizon")
    horizon = horizons.pop()
    jacs = control_jacobians(dyn, horizon)
    grads, slices = [], []
    pos = 0
    for t, task in enumerate(demos_by_task):
        if not task:
            raise ValueError("every task needs at least one demonstration")
        task_libs = [lib] * len(task) if libs_by_task is None else libs_by_task[t]
        if len(task_libs) != len(task):
            raise ValueError("libs_by_task must parallel demos_by_task")
        if any(tl.p != lib.p for tl in task_libs):
            raise ValueError("every scene must expose the same feature count")
        slices.append(np.arange(pos, pos + len(task)))
        pos += len(task)
        for traj, demo_lib in zip(task, task_libs):
            grads.append(demo_lib.unit_feature_grads(traj, jacs))
    return IrlPrecomp(lib=lib, dyn=dyn, horizon=horizon,
                      demo_grads=np.stack(grads), task_slices=slices,
                      unit_hessians=lib.unit_feature_hessians(dyn, horizon))


@dataclass(frozen=True)
class IrlBreakdown:
    total: float
    quad_term: float     # sum over demos of 0.5 * g^T Hhat^{-1} g
    logdet_term: float   # sum over demos of -0.5 * logdet Hhat


def demo_control_grads(theta: np.ndarray, m: np.ndarray, pre: IrlPrecomp) -> np.ndarray:
    """Cost gradient w.r.t. stacked controls at each demonstration, (n_demos, 3*horizon)."""
    theta = np.atleast_2d(theta)
    theta_bar = theta * pre.lib.scale_factors(m)
    out = np.zeros((pre.n_demos, pre.demo_grads.shape[2]))
    for t, idx in enumerate(pre.task_slices):
        row = theta_bar[t if theta_bar.shape[0] > 1 else 0]
        out[idx] = np.einsum("dpn,p->dn", pre.demo_grads[idx], row)
    return out


def _eval(theta: np.ndarray, m: np.ndarray, pre: IrlPrecomp, want_grad: bool):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape != (pre.n_tasks, pre.lib.p):
        raise ValueError(f"theta must be ({pre.n_tasks}, {pre.lib.p})")
    s = pre.lib.scale_factors(m)
    theta_bar = theta * s
    nn = pre.demo_grads.shape[2]
    h_vec = pre.unit_hessians.reshape(pre.lib.p, nn * nn)

    quad_total = 0.0
    logdet_total = 0.0
    d_theta_bar = np.zeros_like(theta_bar) if want_grad else None
    for t, idx in enumerate(pre.task_slices):
        tb = theta_bar[t]
        n_d = len(idx)
        h = (tb @ h_vec).reshape(nn, nn)
        h = 0.5 * (h + h.T)
        lam, v = np.linalg.eigh(h)
        lift = max(0.0, EIG_FLOOR - lam[0])
        lam_hat = lam + lift
        logdet = float(np.sum(np.log(lam_hat)))
        g = np.einsum("dpn,p->dn", pre.demo_grads[idx], tb)       # (D, nn)
        a = (g @ v) / lam_hat @ v.T                               # (D, nn) = g Hhat^{-1}
        quad_total += 0.5 * float(np.sum(a * g))
        logdet_total += -0.5 * n_d * logdet
        if not want_grad:
            continue
        d_t = np.einsum("dpn,dn->p", pre.demo_grads[idx], a)      # through g
        aa = (a[:, :, None] * a[:, None, :]).reshape(n_d, nn * nn)
        d_t += -0.5 * (aa @ h_vec.T).sum(axis=0)                  # through Hhat in the quad term
        h_inv = (v / lam_hat) @ v.T
        tr_hinv_h = h_vec @ h_inv.ravel()                         # tr(Hhat^{-1} Htilde_i)
        d_t += -0.5 * n_d * tr_hinv_h                             # through the log-determinant
        if lift > 0.0:
            # Hhat = H + (EIG_FLOOR - lam_min) I, so dHhat_i picks up -dlam_min_i I
            v_min = v[:, 0]
            d_lam = h_vec @ np.outer(v_min, v_min).ravel()        # dlam_min / dtheta_bar
            d_t += 0.5 * d_lam * float(np.sum(a * a))
            d_t += 0.5 * n_d * d_lam * float(np.trace(h_inv))
        d_theta_bar[t] = d_t

    breakdown = IrlBreakdown(quad_total + logdet_total, quad_total, logdet_total)
    if not want_grad:
        return breakdown, None, None
    d_theta = d_theta_bar * s
    ds = pre.lib.scale_factor_grads(m)                            # (p, 2)
    d_m = ds.T @ (theta * d_theta_bar).sum(axis=0)
    return breakdown, d_theta, d_m


def irl_loss(theta: np.ndarray, m: np.ndarray, pre: IrlPrecomp) -> IrlBreakdown:
    return _eval(theta, m, pre, want_grad=False)[0]


def irl_loss_grad(theta: np.ndarray, m: np.ndarray, pre: IrlPrecomp):
    """Returns (IrlBreakdown, dLoss/dtheta (T, p), dLoss/dm (2,))."""
    return _eval(theta, m, pre, want_grad=True)


# ---------------------------------------------------------------------------
# Training the embedding-to-weights mapping against the likelihood.

def output_bias_template(lib: FeatureLibrary) -> np.ndarray:
    """Initial output-layer bias: a benign positive-definite cost for every task."""
    bias = np.zeros(lib.p)
    bias[:lib.n_pos] = 1.0       # quadratic attraction to each object
    bias[lib.idx_ctrl] = 1.0
    bias[lib.idx_vel] = 0.1
    return bias


def mapping_loss_and_grad(vec: np.ndarray, layers: list[int], z_embs: np.ndarray,
                          pre: IrlPrecomp, fixed_m: np.ndarray | None = None):
    """Joint loss over [mlp parameters, log m] (log m omitted when fixed_m given).

    Returns (IrlBreakdown, gradient w.r.t. vec)."""
    vec = np.asarray(vec, dtype=float)
    n_mlp = sum(a * b for a, b in zip(layers[:-1], layers[1:])) + sum(layers[1:])
    params = unflatten_params(vec[:n_mlp], layers)
    if fixed_m is None:
        if vec.size != n_mlp + 2:
            raise ValueError("expected two trailing log-scale entries")
        psi = vec[n_mlp:]
        m = np.exp(psi)
    else:
        if vec.size != n_mlp:
            raise ValueError("vector length does not match the mlp layout")
        m = np.asarray(fixed_m, dtype=float)
    theta, cache = mlp_forward(params, z_embs)
    breakdown, d_theta, d_m = irl_loss_grad(theta, m, pre)
    d_params, _ = mlp_backward(params, cache, d_theta)
    grad = flatten_params(d_params)
    if fixed_m is None:
        grad = np.concatenate([grad, d_m * m])  # chain through m = exp(psi)
    return breakdown, grad


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (256,)
    step0: float = 1e-3
    momentum: float = 0.9
    max_iters: int = 1500
    grad_tol: float = 1e-5
    step_growth: float = 1.4
    step_shrink: float = 0.5
    step_min: float = 1e-14
    step_max: float = 10.0
    seed: int = 0
    train_m: bool = True


@dataclass
class TrainResult:
    params: MlpParams
    m: np.ndarray
    losses: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_mapping(pre: IrlPrecomp, z_embs: np.ndarray,
                  cfg: TrainConfig | None = None,
                  m0: np.ndarray | None = None) -> TrainResult:
    """Gradient descent with momentum and a backtracking step size.

    The accepted loss sequence is non-increasing: a proposed step is only taken
    if it does not increase the loss, otherwise the step shrinks and momentum
    resets. The scales m are optimized in log space to keep them positive.
    """
    cfg = cfg or TrainConfig()
    z_embs = np.atleast_2d(np.asarray(z_embs, dtype=float))
    if z_embs.shape[0] != pre.n_tasks:
        raise ValueError("one embedding row per task required")
    layers = [z_embs.shape[1], *cfg.hidden, pre.lib.p]
    params = init_mlp(layers, cfg.seed)
    params.weights[-1] *= 0.1  # start near the bias template, not a random cost
    params.biases[-1][:] = output_bias_template(pre.lib)
    if m0 is None:
        m0 = np.ones(2)
    fixed_m = None if cfg.train_m else np.asarray(m0, dtype=float)
    x = flatten_params(params)
    if cfg.train_m:
        x = np.concatenate([x, np.log(m0)])

    breakdown, grad = mapping_loss_and_grad(x, layers, z_embs, pre, fixed_m)
    loss = breakdown.total
    losses = [loss]
    velocity = np.zeros_like(x)
    step = cfg.step0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.linalg.norm(grad) <= cfg.grad_tol:
            converged = True
            break
        accepted = False
        while step >= cfg.step_min:
            v_try = cfg.momentum * velocity - step * grad
            x_try = x + v_try
            try:
                b_try, g_try = mapping_loss_and_grad(x_try, layers, z_embs, pre, fixed_m)
            except (np.linalg.LinAlgError, FloatingPointError):
                b_try = None
            if b_try is not None and np.isfinite(b_try.total) and b_try.total <= loss:
                x, velocity, loss, grad = x_try, v_try, b_try.total, g_try
                step = min(step * cfg.step_growth, cfg.step_max)
                accepted = True
                break
            step *= cfg.step_shrink
            velocity = np.zeros_like(x)
        if not accepted:
            break
        losses.append(loss)

    n_mlp = sum(a * b for a, b in zip(layers[:-1], layers[1:])) + sum(layers[1:])
    final_params = unflatten_params(x[:n_mlp], layers)
    final_m = np.exp(x[n_mlp:]) if cfg.train_m else np.asarray(m0, dtype=float)
    return TrainResult(params=final_params, m=final_m, losses=losses,
                       iterations=it, converged=converged)
