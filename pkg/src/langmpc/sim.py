"""Tabletop world: point end-effector with double-integrator dynamics, box objects."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# workspace box the scene must stay inside: x, y in [-0.5, 0.5], z in [0, 0.6]
TABLE_BOUNDS = np.array([[-0.5, 0.5], [-0.5, 0.5], [0.0, 0.6]])

EE_INFLATION = 0.005  # half-extent of the inflated end-effector point for collision tests

OBJECT_NAMES = ("one", "two", "three", "four", "five", "six", "seven", "eight")


class ControlBoundsError(ValueError):
    """A control exceeds the actuator bound."""


@dataclass(frozen=True)
class DynamicsModel:
    """Discrete double integrator in 3-D: pos' = pos + dt*vel + dt^2/2*a, vel' = vel + dt*a."""

    dt: float = 0.1
    n_steps: int = 20          # default planning horizon
    u_max: float = 1.0         # per-axis acceleration bound

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 2:
            raise ValueError("horizon must be at least 2")

    def a_matrix(self) -> np.ndarray:
        a = np.eye(6)
        a[:3, 3:] = self.dt * np.eye(3)
        return a

    def b_matrix(self) -> np.ndarray:
        b = np.zeros((6, 3))
        b[:3] = 0.5 * self.dt ** 2 * np.eye(3)
        b[3:] = self.dt * np.eye(3)
        return b


@dataclass
class SceneObject:
    name: str
    position: np.ndarray               # (3,) center
    half_extent: np.ndarray            # (3,)

    def copy(self) -> "SceneObject":
        return SceneObject(self.name, self.position.copy(), self.half_extent.copy())


@dataclass
class SceneState:
    """Full simulator state. held_object indexes into objects; held implies closed gripper."""

    ee_pos: np.ndarray
    ee_vel: np.ndarray
    gripper: str = "open"              # "open" | "closed"
    held_object: int | None = None
    objects: list[SceneObject] = field(default_factory=list)
    layout: str = "cubes"
    meta: dict = field(default_factory=dict)

    def copy(self) -> "SceneState":
        return SceneState(
            self.ee_pos.copy(), self.ee_vel.copy(), self.gripper, self.held_object,
            [o.copy() for o in self.objects], self.layout, dict(self.meta),
        )

    def state6(self) -> np.ndarray:
        return np.concatenate([self.ee_pos, self.ee_vel])

    def object_positions(self) -> np.ndarray:
        return np.array([o.position for o in self.objects])


@dataclass
class ControlInput:
    accel: np.ndarray
    gripper_action: str | None = None  # None | "open" | "close"


@dataclass
class Trajectory:
    """states: (N+1, 6) rows [pos, vel]; controls: (N, 3)."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.shape != (self.controls.shape[0] + 1, 6):
            raise ValueError("states must have one more row than controls")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def _check_control(accel: np.ndarray, dyn: DynamicsModel):
    if np.any(np.abs(accel) > dyn.u_max + 1e-9):
        raise ControlBoundsError(f"control {accel} exceeds bound {dyn.u_max}")


def step(x: np.ndarray, accel: np.ndarray, dyn: DynamicsModel) -> np.ndarray:
    """One kinematic step of the 6-d state [pos, vel] under acceleration accel."""
    x = np.asarray(x, dtype=float)
    accel = np.asarray(accel, dtype=float)
    _check_control(accel, dyn)
    out = np.empty(6)
    out[:3] = x[:3] + dyn.dt * x[3:] + 0.5 * dyn.dt ** 2 * accel
    out[3:] = x[3:] + dyn.dt * accel
    return out


def rollout(x0: np.ndarray, controls: np.ndarray, dyn: DynamicsModel) -> Trajectory:
    """Roll the double integrator forward through a control sequence."""
    controls = np.asarray(controls, dtype=float).reshape(-1, 3)
    states = np.empty((controls.shape[0] + 1, 6))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(controls.shape[0]):
        states[k + 1] = step(states[k], controls[k], dyn)
    return Trajectory(states, controls)


def control_jacobians(dyn: DynamicsModel, n: int) -> np.ndarray:
    """J[k] = d x_k / d u_stacked, shape (n+1, 6, 3n). x is affine in the stacked controls."""
    a, b = dyn.a_matrix(), dyn.b_matrix()
    powers = [np.eye(6)]
    for _ in range(n):
        powers.append(a @ powers[-1])
    j = np.zeros((n + 1, 6, 3 * n))
    for k in range(1, n + 1):
        for i in range(k):
            j[k, :, 3 * i:3 * i + 3] = powers[k - 1 - i] @ b
    return j


def apply_gripper(scene: SceneState, action: str, grasp_radius: float = 0.02) -> SceneState:
    """Open/close the gripper. Closing grasps the nearest object within grasp_radius;
    closing out of range is a no-op. Opening releases in place."""
    if action not in ("open", "close"):
        raise ValueError(f"unknown gripper action {action!r}")
    out = scene.copy()
    if action == "open":
        out.gripper = "open"
        out.held_object = None
        return out
    dists = [float(np.linalg.norm(o.position - scene.ee_pos)) for o in scene.objects]
    if not dists or min(dists) > grasp_radius:
        return out  # nothing in reach
    out.gripper = "closed"
    out.held_object = int(np.argmin(dists))
    return out


def sim_step(scene: SceneState, control: ControlInput, dyn: DynamicsModel,
             grasp_radius: float = 0.02) -> SceneState:
    """Advance the scene one tick: integrate the ee, drag any held object along,
    then apply an optional gripper action."""
    out = scene.copy()
    x = step(scene.state6(), control.accel, dyn)
    if out.held_object is not None:
        offset = out.objects[out.held_object].position - out.ee_pos
        out.objects[out.held_object].position = x[:3] + offset
    out.ee_pos, out.ee_vel = x[:3], x[3:]
    if control.gripper_action is not None:
        out = apply_gripper(out, control.gripper_action, grasp_radius)
    return out


def _aabb_overlap(c1, h1, c2, h2) -> bool:
    return bool(np.all(np.abs(np.asarray(c1) - np.asarray(c2)) < np.asarray(h1) + np.asarray(h2)))


def scene_collisions(scene: SceneState) -> list[tuple[str, str]]:
    """Collision pairs in the current scene: the inflated ee point against every
    non-held object, and the held object against every other object."""
    events = []
    ee_half = np.full(3, EE_INFLATION)
    for i, obj in enumerate(scene.objects):
        if i == scene.held_object:
            continue
        if _aabb_overlap(scene.ee_pos, ee_half, obj.position, obj.half_extent):
            events.append(("ee", obj.name))
    if scene.held_object is not None:
        held = scene.objects[scene.held_object]
        for i, obj in enumerate(scene.objects):
            if i == scene.held_object:
                continue
            if _aabb_overlap(held.position, held.half_extent, obj.position, obj.half_extent):
                events.append((held.name, obj.name))
    return events


def in_table_bounds(point: np.ndarray) -> bool:
    p = np.asarray(point)
    return bool(np.all(p >= TABLE_BOUNDS[:, 0]) and np.all(p <= TABLE_BOUNDS[:, 1]))


CUBE_HALF_EXTENT = 0.02


def spawn_scene(layout: str, seed: int, n_cubes: int = 4,
                min_separation: float = 0.16) -> SceneState:
    """Deterministically place a named layout. Layouts: cubes | sponge | drawer."""
    rng = np.random.default_rng(seed)
    if layout == "cubes":
        positions: list[np.ndarray] = []
        while len(positions) < n_cubes:
            xy = rng.uniform(-0.28, 0.28, size=2)
            if all(np.linalg.norm(xy - p[:2]) >= min_separation for p in positions):
                positions.append(np.array([xy[0], xy[1], CUBE_HALF_EXTENT]))
        objects = [
            SceneObject(OBJECT_NAMES[i], positions[i], np.full(3, CUBE_HALF_EXTENT))
            for i in range(n_cubes)
        ]
        meta = {}
    elif layout == "sponge":
        pan_xy = rng.uniform(-0.2, 0.2, size=2)
        sponge_xy = rng.uniform(-0.28, 0.28, size=2)
        while np.linalg.norm(sponge_xy - pan_xy) < 0.2:
            sponge_xy = rng.uniform(-0.28, 0.28, size=2)
        objects = [
            SceneObject("one", np.array([*pan_xy, 0.015]), np.array([0.06, 0.06, 0.015])),
            SceneObject("two", np.array([*sponge_xy, 0.01]), np.array([0.02, 0.02, 0.01])),
        ]
        meta = {}
    elif layout == "drawer":
        front_y = rng.uniform(-0.1, 0.1)
        objects = [
            SceneObject("one", np.array([0.3, front_y, 0.05]), np.array([0.01, 0.06, 0.05])),
        ]
        meta = {"slide_axis": [-1.0, 0.0, 0.0]}  # drawer pulls out toward -x
    else:
        raise ValueError(f"unknown layout {layout!r}")
    scene = SceneState(
        ee_pos=np.array([0.0, 0.0, 0.30]), ee_vel=np.zeros(3),
        gripper="open", held_object=None, objects=objects, layout=layout, meta=meta,
    )
    for obj in scene.objects:
        assert in_table_bounds(obj.position), "layout must spawn inside the table bounds"
    return scene


def scene_to_dict(scene: SceneState) -> dict:
    return {
        "ee_pos": scene.ee_pos.tolist(),
        "ee_vel": scene.ee_vel.tolist(),
        "gripper": scene.gripper,
        "held_object": scene.held_object,
        "layout": scene.layout,
        "meta": scene.meta,
        "objects": [
            {"name": o.name, "position": o.position.tolist(),
             "half_extent": o.half_extent.tolist()}
            for o in scene.objects
        ],
    }


def scene_from_dict(d: dict) -> SceneState:
    return SceneState(
        ee_pos=np.array(d["ee_pos"], dtype=float),
        ee_vel=np.array(d["ee_vel"], dtype=float),
        gripper=d.get("gripper", "open"),
        held_object=d.get("held_object"),
        objects=[
            SceneObject(o["name"], np.array(o["position"], dtype=float),
                        np.array(o["half_extent"], dtype=float))
            for o in d["objects"]
        ],
        layout=d.get("layout", "cubes"),
        meta=d.get("meta", {}),
    )
