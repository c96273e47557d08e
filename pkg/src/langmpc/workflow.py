"""Offline training workflow: demonstrations in, learned model out.

Order of operations: embed every sub-task description, fit the PCA compression,
train the embedding-to-weights mapping and the shared feature scales against
the demonstration likelihood, then (when the demo set contains constrained
demonstrations) sample cheaper-but-unsafe counterexamples and solve the
constraint feasibility program.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .constraints import (ConstraintParams, FeasibilityConfig, SamplingError,
                          sample_unsafe, solve_feasibility, trajectory_positions)
from .demos import DemoSet, demo_cost_fn
from .embeddings import fit_pca
from .features import FeatureLibrary
from .irl import IrlPrecomp, TrainConfig, TrainResult, build_precomp, train_mapping
from .mapping import mlp_forward
from .model_store import LearnedModel
from .sim import Trajectory
from .solver import OcpSpec, solve_ocp

DEFAULT_MIN_UNSAFE = 200
DEFAULT_UNSAFE_ATTEMPTS = 40
DEFAULT_UNSAFE_NOISE = 0.02


def demoset_digest(ds: DemoSet) -> str:
    """Stable content digest used for provenance."""
    h = hashlib.sha256()
    h.update(ds.grammar_version.encode())
    h.update(np.float64([ds.noise_scale, ds.dyn.dt, ds.dyn.u_max]).tobytes())
    for scene in ds.scenes:
        h.update(np.ascontiguousarray(scene.object_positions()).tobytes())
    for ex in ds.examples:
        h.update(ex.description.encode())
        for traj in ex.demos_free + ex.demos_safe:
            h.update(np.ascontiguousarray(traj.controls).tobytes())
    return h.hexdigest()[:16]


def learn_constraints(ds: DemoSet, theta_by_task: np.ndarray, m: np.ndarray,
                      family: str, seed: int,
                      min_unsafe: int = DEFAULT_MIN_UNSAFE,
                      attempts_per_demo: int = DEFAULT_UNSAFE_ATTEMPTS,
                      noise_scale: float | None = None,
                      cfg: FeasibilityConfig | None = None):
    """Counterexample sampling plus feasibility solve over the pooled demos.

    Safe states come from every demonstration (free and constrained). For
    counterexamples, each constrained demo's start is re-solved without the
    constraint; perturbations of that cheaper optimum which still undercut the
    demo's cost are trajectories the demonstrator could have taken but did not,
    so only the obstacle can explain avoiding them.
    Returns (rho, safe_points, unsafe_trajectories).
    """
    if noise_scale is None:
        noise_scale = DEFAULT_UNSAFE_NOISE * ds.dyn.u_max
    rng = np.random.default_rng(seed)
    safe_pts = []
    unsafe: list[np.ndarray] = []
    objects = ds.scene.object_positions()

    def free_optimum(theta: np.ndarray, demo) -> Trajectory | None:
        spec = OcpSpec(theta=theta, m=m, horizon=demo.controls.shape[0],
                       x0=demo.states[0], objects=objects, dyn=ds.dyn, rho=None)
        result = solve_ocp(spec)
        return result.traj if result.converged else None

    def harvest():
        for t, ex in enumerate(ds.examples):
            cost = demo_cost_fn(theta_by_task[t], m, ds.scene)
            for traj in ex.demos_safe:
                try:
                    kept = sample_unsafe(traj, cost, ds.dyn, attempts_per_demo,
                                         noise_scale, seed=int(rng.integers(2 ** 63)),
                                         base=free_optimum(theta_by_task[t], traj))
                except SamplingError:
                    continue  # this demo is already near-optimal for its cost
                unsafe.extend(trajectory_positions(u) for u in kept)

    for ex in ds.examples:
        for traj in ex.demos_free + ex.demos_safe:
            safe_pts.append(trajectory_positions(traj))
    harvest()
    rounds = 0
    while len(unsafe) < min_unsafe and rounds < 20:
        rounds += 1
        harvest()
    if len(unsafe) < min_unsafe:
        raise SamplingError(
            f"collected {len(unsafe)} unsafe samples, needed {min_unsafe}")
    safe = np.concatenate(safe_pts, axis=0)
    rho = solve_feasibility(safe, unsafe, family, seed=seed, cfg=cfg)
    return rho, safe, unsafe


def train_model(ds: DemoSet, embedder, embedder_kind: str, z: int = 20,
                train_cfg: TrainConfig | None = None,
                constraint_family: str = "axis_box",
                threshold: float = 3.0, residual_max: float = 0.5,
                seed: int = 0, min_unsafe: int = DEFAULT_MIN_UNSAFE,
                learn_rho: bool | None = None) -> LearnedModel:
    if not ds.examples:
        raise ValueError("demo set is empty")
    descriptions = ds.descriptions()
    raw = embedder.embed(descriptions)
    pca = fit_pca(raw, z)
    z_embs = pca.project(raw)
    # Principal scores span very different ranges (the numeric-distance
    # direction is several times quieter than the token indicators), which
    # stalls gradient descent on exactly the distance response. Train on
    # whitened scores, then fold the scale into the first layer so the stored
    # network consumes plain projections.
    scale = z_embs.std(axis=0)
    scale[scale < 1e-9] = 1.0

    libs = [FeatureLibrary(s.object_positions()) for s in ds.scenes]
    lib = libs[0]
    demos_by_task = [ex.demos_free for ex in ds.examples]
    libs_by_task = [[libs[i] for i in ex.scene_free] for ex in ds.examples]
    pre: IrlPrecomp = build_precomp(demos_by_task, lib, ds.dyn, libs_by_task)
    cfg = train_cfg or TrainConfig(seed=seed)
    fit: TrainResult = train_mapping(pre, z_embs / scale, cfg)
    fit.params.weights[0] /= scale[:, None]

    rho: ConstraintParams | None = None
    if learn_rho is None:
        learn_rho = any(ex.demos_safe for ex in ds.examples)
    if learn_rho:
        theta_by_task, _ = mlp_forward(fit.params, z_embs)
        rho, _, _ = learn_constraints(ds, theta_by_task, fit.m, constraint_family,
                                      seed=seed, min_unsafe=min_unsafe)

    provenance = {
        "demoset": demoset_digest(ds),
        "seed": seed,
        "z": z,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "loss_tail": [float(v) for v in fit.losses[-5:]],
        "config": json.dumps({"hidden": list(cfg.hidden), "step0": cfg.step0,
                              "momentum": cfg.momentum, "max_iters": cfg.max_iters},
                             sort_keys=True),
    }
    return LearnedModel(
        embedder_kind=embedder_kind,
        embed_dim=raw.shape[1],
        grammar_version=ds.grammar_version,
        n_objects=lib.n_objects,
        pca=pca,
        mlp=fit.params,
        m=fit.m,
        example_embeddings=raw,
        example_descriptions=descriptions,
        dyn=ds.dyn,
        horizon=pre.horizon,
        rho=rho,
        threshold=threshold,
        residual_max=residual_max,
        provenance=provenance,
    )
