"""Synthetic demonstrations: an oracle demonstrator with a known quadratic objective.

The true objective for sub-task "d meters dir of object k" is
    sum_k ||u_k||^2 + w_t * ||ee_N - (o_k + d*dir)||^2,
expressed in the shared feature library via the completed square, so the oracle's
weights are exactly representable by the learner. Noise perturbs the controls, not
the states, keeping every demonstration dynamically consistent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintParams, g_eval
from .features import FeatureLibrary, default_m, traj_cost
from .grammar import GRAMMAR_VERSION, SubTaskSpec, parse_subtask
from .sim import (DynamicsModel, SceneState, Trajectory, rollout, scene_from_dict,
                  scene_to_dict, spawn_scene)
from .solver import OcpSpec, SolverConfig, solve_ocp

DEFAULT_TARGET_WEIGHT = 2e6
DEFAULT_VEL_WEIGHT = 5e4
DEFAULT_DEMO_HORIZON = 10


class PathNotBlockedError(RuntimeError):
    """A constrained demo was requested but the obstacle does not block the path."""


@dataclass
class SubTaskExample:
    subtask_id: str
    description: str
    demos_free: list[Trajectory] = field(default_factory=list)
    demos_safe: list[Trajectory] = field(default_factory=list)
    # index into DemoSet.scenes for each demo, parallel to the lists above
    scene_free: list[int] = field(default_factory=list)
    scene_safe: list[int] = field(default_factory=list)


@dataclass
class DemoSet:
    grammar_version: str
    dyn: DynamicsModel
    noise_scale: float
    scenes: list[SceneState]
    examples: list[SubTaskExample]
    obstacle_truth: ConstraintParams | None = None

    @property
    def scene(self) -> SceneState:
        """The primary scene (constrained demo sets use exactly one)."""
        return self.scenes[0]

    def descriptions(self) -> list[str]:
        return [ex.description for ex in self.examples]


def object_index(scene: SceneState, name: str) -> int:
    for i, obj in enumerate(scene.objects):
        if obj.name == name:
            return i
    raise KeyError(f"scene has no object named {name!r}")


def oracle_theta(subtask: SubTaskSpec, scene: SceneState,
                 target_weight: float = DEFAULT_TARGET_WEIGHT,
                 vel_weight: float = DEFAULT_VEL_WEIGHT) -> np.ndarray:
    """True task weights under unit scales m = [1, 1].

    w*(x - o - d)^2 completes to quad = w, lin = -2*w*d per axis of the referenced
    object; the leftover constant does not move the minimizer. The terminal
    velocity weight makes every demonstrated move arrive near rest."""
    lib = FeatureLibrary(scene.object_positions())
    k = object_index(scene, subtask.object_name)
    theta = np.zeros(lib.p)
    offset = subtask.offset()
    for a in range(3):
        theta[3 * k + a] = target_weight
        theta[lib.n_pos + 3 * k + a] = -2.0 * target_weight * offset[a]
    theta[lib.idx_ctrl] = 1.0
    theta[lib.idx_vel] = vel_weight
    return theta


def oracle_ocp(subtask: SubTaskSpec, scene: SceneState, x0: np.ndarray, horizon: int,
               dyn: DynamicsModel, rho: ConstraintParams | None = None,
               target_weight: float = DEFAULT_TARGET_WEIGHT,
               vel_weight: float = DEFAULT_VEL_WEIGHT) -> OcpSpec:
    return OcpSpec(
        theta=oracle_theta(subtask, scene, target_weight, vel_weight), m=default_m(),
        horizon=horizon, x0=x0, objects=scene.object_positions(), dyn=dyn, rho=rho,
    )


def _noisy_rollout(traj: Trajectory, dyn: DynamicsModel, noise_scale: float,
                   rng: np.random.Generator) -> Trajectory:
    if noise_scale <= 0:
        return traj
    u = traj.controls + rng.normal(0.0, noise_scale, size=traj.controls.shape)
    u = np.clip(u, -dyn.u_max, dyn.u_max)
    return rollout(traj.states[0], u, dyn)


def oracle_demo(subtask: SubTaskSpec, scene: SceneState, x0: np.ndarray, horizon: int,
                dyn: DynamicsModel, noise_scale: float, seed: int,
                solver_cfg: SolverConfig | None = None) -> Trajectory:
    """Solve the true unconstrained problem, then perturb the controls."""
    spec = oracle_ocp(subtask, scene, x0, horizon, dyn)
    result = solve_ocp(spec, solver_cfg)
    return _noisy_rollout(result.traj, dyn, noise_scale, np.random.default_rng(seed))


def _segment_blocked(start: np.ndarray, target: np.ndarray, rho: ConstraintParams,
                     samples: int = 64, depth: float = 0.0) -> bool:
    """True if the straight start->target path enters the region, reaching at
    least `depth` inside it at some point."""
    ts = np.linspace(0.0, 1.0, samples)[:, None]
    pts = start[None, :] + ts * (target - start)[None, :]
    return bool(np.max(g_eval(pts, rho)) > depth)


def oracle_demo_constrained(subtask: SubTaskSpec, scene: SceneState, x0: np.ndarray,
                            horizon: int, dyn: DynamicsModel, rho: ConstraintParams,
                            noise_scale: float, seed: int,
                            solver_cfg: SolverConfig | None = None,
                            target_weight: float = DEFAULT_TARGET_WEIGHT,
                            vel_weight: float = DEFAULT_VEL_WEIGHT) -> Trajectory:
    """Constrained oracle demo; requires the obstacle to actually block the straight path."""
    target = subtask.target(scene)
    if not _segment_blocked(np.asarray(x0[:3]), target, rho):
        raise PathNotBlockedError("obstacle does not intersect the start-target segment")
    spec = oracle_ocp(subtask, scene, x0, horizon, dyn, rho=rho,
                      target_weight=target_weight, vel_weight=vel_weight)
    result = solve_ocp(spec, solver_cfg)
    if float(np.max(g_eval(result.traj.states[:, :3], rho))) > 1e-6:
        # the penalty solve did not clear the obstacle from this start
        raise PathNotBlockedError("constrained solve left residual violation")
    rng = np.random.default_rng(seed)
    for _ in range(50):
        noisy = _noisy_rollout(result.traj, dyn, noise_scale, rng)
        if float(np.max(g_eval(noisy.states[1:, :3], rho))) <= 1e-6:
            return noisy
    return result.traj  # keep the noiseless solution rather than an unsafe perturbation


DEFAULT_START_SPAN = 0.20
DEFAULT_TRAINING_SCENES = 20
_START_XY_LIMIT = 0.45
_START_Z_RANGE = (0.05, 0.55)
_SCENE_Z_SPAN = 0.33
_SAFE_BLOCK_DEPTH = 0.02  # constrained-demo paths must cross this far inside


def training_scenes(n_scenes: int = DEFAULT_TRAINING_SCENES, seed: int = 0,
                    z_span: float = _SCENE_Z_SPAN) -> list[SceneState]:
    """Cube scenes for demonstration collection, with varied object positions.

    A single scene cannot identify which object a task's cost is anchored to:
    spreading quadratic weight over several objects while adjusting the linear
    term reproduces the same attractor and the same curvature, so a model
    trained on one layout transfers arbitrarily badly to another. Varying the
    layouts removes that freedom axis by axis. Heights are re-randomized on
    all but the first scene because cubes share one resting height within any
    tabletop layout, which would leave the z weights unidentified (and they
    matter mid-task, once an object has been stacked above another).
    """
    scenes = []
    for i in range(n_scenes):
        s = spawn_scene("cubes", seed=seed + i)
        if i > 0:
            rng = np.random.default_rng((seed + i, 7))
            for obj in s.objects:
                obj.position[2] += rng.uniform(0.0, z_span)
        scenes.append(s)
    return scenes


def generate_demoset(scenes: SceneState | list[SceneState], subtasks: list[SubTaskSpec],
                     demos_per_family: int,
                     dyn: DynamicsModel, horizon: int, noise_scale: float, seed: int,
                     obstacle: ConstraintParams | None = None,
                     start_span: float = DEFAULT_START_SPAN,
                     target_weight: float = DEFAULT_TARGET_WEIGHT,
                     vel_weight: float = DEFAULT_VEL_WEIGHT,
                     solver_cfg: SolverConfig | None = None) -> DemoSet:
    """Demonstrations for each sub-task, sharing the dynamics and horizon.

    Each sub-task's demos are spread round-robin over the given scenes, so the
    learner sees the same language anchored at several object layouts (see
    training_scenes for why that matters). Starts are drawn uniformly from a
    cube of half-width start_span centered on each sub-task's target (clipped
    to the workspace), so the demos of one task approach it from all sides and
    their arrival points average out the noise.

    Without an obstacle only unconstrained ("free") demos are produced. With
    one, the set must use a single scene (the obstacle is placed relative to
    its layout); each sub-task then also gets constrained ("safe") demos
    started where the obstacle blocks the straight path, and free demos are
    re-drawn until the unconstrained optimum stays clear of the obstacle (so
    the two families are genuinely distinct)."""
    if isinstance(scenes, SceneState):
        scenes = [scenes]
    if not scenes:
        raise ValueError("need at least one scene")
    names = [tuple(o.name for o in s.objects) for s in scenes]
    if any(n != names[0] for n in names):
        raise ValueError("all scenes must contain the same objects")
    if obstacle is not None and len(scenes) > 1:
        raise ValueError("constrained demo sets use a single scene")
    rng = np.random.default_rng(seed)
    examples = []
    for t_idx, subtask in enumerate(subtasks):
        ex = SubTaskExample(subtask_id=f"t{t_idx:03d}", description=subtask.describe())
        for d in range(demos_per_family):
            # rotate the scene assignment with the task index so related tasks
            # (same direction and object, different distance) pool distinct layouts
            s_idx = (d + t_idx) % len(scenes)
            scene = scenes[s_idx]
            traj = _draw_free_demo(subtask, scene, subtask.target(scene), dyn, horizon,
                                   noise_scale, obstacle, start_span, rng,
                                   target_weight, vel_weight, solver_cfg)
            ex.demos_free.append(traj)
            ex.scene_free.append(s_idx)
        if obstacle is not None:
            scene = scenes[0]
            target = subtask.target(scene)
            for _ in range(demos_per_family):
                traj = _draw_safe_demo(subtask, scene, target, dyn, horizon, noise_scale,
                                       obstacle, start_span, rng, target_weight,
                                       vel_weight, solver_cfg)
                ex.demos_safe.append(traj)
                ex.scene_safe.append(0)
        examples.append(ex)
    return DemoSet(GRAMMAR_VERSION, dyn, noise_scale, [s.copy() for s in scenes],
                   examples, obstacle_truth=obstacle)


def _sample_start(target: np.ndarray, span: float, rng: np.random.Generator) -> np.ndarray:
    pos = target + rng.uniform(-span, span, size=3)
    pos[:2] = np.clip(pos[:2], -_START_XY_LIMIT, _START_XY_LIMIT)
    pos[2] = np.clip(pos[2], *_START_Z_RANGE)
    return np.concatenate([pos, np.zeros(3)])


def _draw_free_demo(subtask, scene, target, dyn, horizon, noise_scale, obstacle,
                    start_span, rng, target_weight, vel_weight, solver_cfg,
                    max_tries: int = 200):
    for _ in range(max_tries):
        x0 = _sample_start(target, start_span, rng)
        if obstacle is not None and _segment_blocked(x0[:3], target, obstacle):
            continue
        spec = oracle_ocp(subtask, scene, x0, horizon, dyn, target_weight=target_weight,
                          vel_weight=vel_weight)
        result = solve_ocp(spec, solver_cfg)
        if obstacle is not None and np.max(g_eval(result.traj.states[:, :3], obstacle)) > 0:
            continue
        seed = int(rng.integers(2 ** 63))
        noisy = _noisy_rollout(result.traj, dyn, noise_scale, np.random.default_rng(seed))
        if obstacle is None or np.max(g_eval(noisy.states[:, :3], obstacle)) <= 1e-6:
            return noisy
    raise RuntimeError("could not draw an obstacle-free demonstration start")


def _draw_safe_demo(subtask, scene, target, dyn, horizon, noise_scale, obstacle,
                    start_span, rng, target_weight, vel_weight, solver_cfg,
                    max_tries: int = 200):
    for _ in range(max_tries):
        x0 = _sample_start(target, start_span, rng)
        # the start itself must be outside the obstacle, not merely blocked
        if g_eval(x0[None, :3], obstacle)[0] >= 0:
            continue
        # require a crossing through the interior, not a graze: perturbed
        # shortcuts of a grazing demo can slip around the region entirely,
        # which would poison the counterexample set
        if not _segment_blocked(x0[:3], target, obstacle, depth=_SAFE_BLOCK_DEPTH):
            continue
        seed = int(rng.integers(2 ** 63))
        try:
            return oracle_demo_constrained(subtask, scene, x0, horizon, dyn, obstacle,
                                           noise_scale, seed, solver_cfg,
                                           target_weight=target_weight,
                                           vel_weight=vel_weight)
        except PathNotBlockedError:
            continue
    raise PathNotBlockedError("no start placed the obstacle across the straight path")


def demo_cost_fn(theta: np.ndarray, m: np.ndarray, scene: SceneState):
    """Trajectory-cost callable bound to a scene's objects (for counterexample sampling)."""
    lib = FeatureLibrary(scene.object_positions())

    def fn(traj: Trajectory) -> float:
        return traj_cost(traj, theta, m, lib)

    return fn


# ---------------------------------------------------------------------------
# JSONL persistence: one header line, then one line per trajectory.

def save_demoset(ds: DemoSet, path: str):
    with open(path, "w") as f:
        header = {
            "grammar_version": ds.grammar_version,
            "dynamics": {"dt": ds.dyn.dt, "n_steps": ds.dyn.n_steps, "u_max": ds.dyn.u_max},
            "noise_scale": ds.noise_scale,
            "scenes": [scene_to_dict(s) for s in ds.scenes],
            "obstacle_truth": ds.obstacle_truth.to_dict() if ds.obstacle_truth else None,
        }
        f.write(json.dumps(header) + "\n")
        for ex in ds.examples:
            for kind, trajs, s_idx in (("free", ex.demos_free, ex.scene_free),
                                       ("safe", ex.demos_safe, ex.scene_safe)):
                for traj, scene in zip(trajs, s_idx):
                    row = {
                        "subtask_id": ex.subtask_id,
                        "description": ex.description,
                        "kind": kind,
                        "scene": scene,
                        "states": traj.states.tolist(),
                        "controls": traj.controls.tolist(),
                    }
                    f.write(json.dumps(row) + "\n")


def load_demoset(path: str) -> DemoSet:
    with open(path) as f:
        header = json.loads(f.readline())
        dyn = DynamicsModel(**header["dynamics"])
        examples: dict[str, SubTaskExample] = {}
        order: list[str] = []
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            parse_subtask(row["description"])  # every stored description must stay parseable
            sid = row["subtask_id"]
            if sid not in examples:
                examples[sid] = SubTaskExample(sid, row["description"])
                order.append(sid)
            traj = Trajectory(np.array(row["states"]), np.array(row["controls"]))
            if row["kind"] == "safe":
                examples[sid].demos_safe.append(traj)
                examples[sid].scene_safe.append(int(row["scene"]))
            else:
                examples[sid].demos_free.append(traj)
                examples[sid].scene_free.append(int(row["scene"]))
    obstacle = header.get("obstacle_truth")
    return DemoSet(
        grammar_version=header["grammar_version"], dyn=dyn,
        noise_scale=header["noise_scale"],
        scenes=[scene_from_dict(d) for d in header["scenes"]],
        examples=[examples[sid] for sid in order],
        obstacle_truth=ConstraintParams.from_dict(obstacle) if obstacle else None,
    )
