"""Benchmark tasks: scripted plan builders and geometric success predicates.

All plans are built from the demonstrated sub-task grammar, so every move is
single-axis and object-relative. That restricts what block arrangements are
expressible without collisions: lowering a carried cube onto the table beside
another cube cannot be phrased collision-free, so the two non-stack tasks are
defined as tower arrangements (see the predicates below).

Pick-and-place cycle geometry (cubes of half extent 0.02 resting at z = 0.02):
approach 0.045 m above the source (inside the grasp radius with margin for
a learned model's few-mm height bias), lift to 0.12 m, transit at 0.12 m above
the destination so the carried cube clears every tower, then lower to 0.095 m,
leaving the released cube nominally 0.05 m above the destination center: one
cube height plus a 10 mm air gap. The air gap and the success band are sized
so the step stays inside [Z_STEP - Z_TOL, Z_STEP + Z_TOL] and the boxes never
interpenetrate even when the approach and place heights carry independent
few-mm errors.
"""
from __future__ import annotations

import numpy as np

from .grammar import SubTaskSpec
from .sim import CUBE_HALF_EXTENT, SceneState

APPROACH = 0.045
LIFT = 0.12
TRANSIT = 0.12
PLACE = 0.095
GRASP_RADIUS = 0.06

XY_TOL = 0.015
Z_STEP = 2 * CUBE_HALF_EXTENT     # one cube height
Z_TOL = 0.015

TASK_NAMES = ("stack", "l_shape", "pyramid")


def _above(distance: float, name: str) -> str:
    return SubTaskSpec(distance, "above", name).describe()


def _cycle(src: str, dest: str, via: str | None = None) -> list:
    from .pipeline import gripper, move

    steps = [
        move(_above(APPROACH, src)),
        gripper("close"),
        move(_above(LIFT, src)),
    ]
    if via is not None:
        # hop over an already-built tower: referencing its top cube keeps the
        # carried cube well above it while staying inside the grammar's range
        steps.append(move(_above(TRANSIT, via)))
    steps += [
        move(_above(TRANSIT, dest)),
        move(_above(PLACE, dest)),
        gripper("open"),
    ]
    return steps


def _cube_names(scene: SceneState) -> list[str]:
    return [o.name for o in scene.objects]


def stack_plan(scene: SceneState) -> list:
    """One tower: every cube onto the first, in scene order."""
    names = _cube_names(scene)
    if len(names) < 2:
        raise ValueError("stacking needs at least two objects")
    steps = []
    for src, dest in zip(names[1:], names[:-1]):
        steps.extend(_cycle(src, dest))
    return steps


def pyramid_plan(scene: SceneState) -> list:
    """Three-cube tower; the last cube stays on the table as the free base corner."""
    names = _cube_names(scene)
    if len(names) < 3:
        raise ValueError("this arrangement needs at least three objects")
    steps = _cycle(names[1], names[0])
    steps.extend(_cycle(names[2], names[1]))
    return steps


def l_shape_plan(scene: SceneState) -> list:
    """Two two-cube towers (the strokes of the L seen from the side)."""
    names = _cube_names(scene)
    if len(names) < 4:
        raise ValueError("this arrangement needs at least four objects")
    steps = _cycle(names[1], names[0])
    # the second carry may pass over the finished first tower, so route it
    # via that tower's top cube
    steps.extend(_cycle(names[3], names[2], via=names[1]))
    return steps


# ---------------------------------------------------------------------------
# Success predicates over (initial scene, final scene).

def _positions(scene: SceneState) -> dict[str, np.ndarray]:
    return {o.name: o.position for o in scene.objects}


def _is_tower(scene: SceneState, names: list[str]) -> bool:
    """names[0] is the base; centers xy-aligned within XY_TOL, z strictly
    increasing by one cube height within Z_TOL."""
    pos = _positions(scene)
    base = pos[names[0]]
    for name in names[1:]:
        if np.linalg.norm(pos[name][:2] - base[:2]) > XY_TOL:
            return False
    zs = [pos[name][2] for name in names]
    return all(abs((z2 - z1) - Z_STEP) <= Z_TOL for z1, z2 in zip(zs[:-1], zs[1:]))


def stack_success(initial: SceneState, final: SceneState) -> bool:
    return _is_tower(final, _cube_names(final))


def pyramid_success(initial: SceneState, final: SceneState) -> bool:
    names = _cube_names(final)
    untouched = np.linalg.norm(
        _positions(final)[names[3]] - _positions(initial)[names[3]]) <= 0.01
    return _is_tower(final, names[:3]) and untouched


def l_shape_success(initial: SceneState, final: SceneState) -> bool:
    names = _cube_names(final)
    return _is_tower(final, names[:2]) and _is_tower(final, names[2:4])


SUCCESS_PREDICATES = {
    "stack": stack_success,
    "pyramid": pyramid_success,
    "l_shape": l_shape_success,
}

COMMANDS = {
    "stack": "stack all cubes",
    "pyramid": "build a pyramid",
    "l_shape": "build an l shape",
}
