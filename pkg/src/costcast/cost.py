"""Planner cost function: base arm-quality terms plus per-task terms.

All terms have batched implementations operating on (N, H, 7) joint arrays so
the planner can score many sampled plans at once; the public single-plan
operations wrap the batched versions with N=1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .forecast import Forecast, POINT, SAFETY_VOLUME
from .motion import MotionError, WRIST_INDICES
from .robot import (
    ArmModel,
    RigidPose,
    RobotPlan,
    collision_sphere_centers,
    fk_batch,
    manipulability_batch,
    separation_batch,
    separation_batch_spheres,
)

D_SAFE = 0.05
ORIENTATION_WEIGHT = 0.3  # rad <-> m tradeoff in the pose cost
STOP_WINDOW = 5           # final steps penalized for nonzero velocity
JOINT_MARGIN = 0.9        # fraction of half-range before the limit hinge activates


@dataclass(frozen=True)
class CostWeights:
    alpha_s: float = 1.0
    alpha_j: float = 10.0
    alpha_m: float = 0.5
    alpha_c: float = 100.0
    alpha_t: float = 50.0
    beta: float = 5.0
    eps_pot: float = 0.15
    manip_floor: float = 0.05

    def __post_init__(self):
        for name in ("alpha_s", "alpha_j", "alpha_m", "alpha_c", "alpha_t", "beta"):
            if getattr(self, name) < 0:
                raise MotionError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("alpha_s", "alpha_j", "alpha_m", "alpha_c", "alpha_t",
                 "beta", "eps_pot", "manip_floor")}


@dataclass(frozen=True)
class TaskSpec:
    task: str
    pot_position: np.ndarray | None = None
    rest_config: np.ndarray | None = None       # joint-space retract target
    stir_reference: np.ndarray | None = None    # (n, 7) joint-space stirring cycle
    object_in_hand: bool = False
    table_goal: RigidPose | None = None

    def __post_init__(self):
        if self.task not in ("stir", "handover", "tableset"):
            raise MotionError(f"unknown task {self.task!r}")
        if self.pot_position is not None:
            object.__setattr__(self, "pot_position", np.asarray(self.pot_position, dtype=float))
        if self.rest_config is not None:
            object.__setattr__(self, "rest_config", np.asarray(self.rest_config, dtype=float))
        if self.stir_reference is not None:
            object.__setattr__(self, "stir_reference", np.asarray(self.stir_reference, dtype=float))

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise MotionError(f"task {self.task!r} requires spec field {name!r}")


def _forecast_frames(forecast: Forecast, H: int) -> np.ndarray:
    if forecast.kind != POINT:
        raise MotionError("this operation needs a point-trajectory forecast")
    frames = forecast.trajectory.frames
    if frames.shape[0] < H:
        raise MotionError("forecast horizon shorter than plan horizon")
    return frames[:H]


def hinge(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# --- batched terms --------------------------------------------------------

def base_terms_batch(model: ArmModel, Q: np.ndarray, Qd: np.ndarray,
                     weights: CostWeights) -> np.ndarray:
    """alpha_s*C_stop + alpha_j*C_joint + alpha_m*C_manip per plan, shape (N,)."""
    stop = np.sum(Qd[:, -STOP_WINDOW:] ** 2, axis=(1, 2))
    mid = model.mid()
    half = 0.5 * (model.hi - model.lo)
    joint = np.sum(hinge(np.abs(Q - mid) - JOINT_MARGIN * half) ** 2, axis=(1, 2))
    manip = np.sum(hinge(weights.manip_floor - manipulability_batch(model, Q)), axis=1)
    return weights.alpha_s * stop + weights.alpha_j * joint + weights.alpha_m * manip


def separation_against_forecast(model: ArmModel, Q: np.ndarray,
                                forecast: Forecast) -> np.ndarray:
    """Per-step minimum clearance (N, H) against a forecast of either kind."""
    H = Q.shape[1]
    centers = collision_sphere_centers(model, Q)
    if forecast.kind == SAFETY_VOLUME:
        if forecast.centers.shape[0] < H:
            raise MotionError("forecast horizon shorter than plan horizon")
        return separation_batch_spheres(model, centers, forecast.centers[:H],
                                        forecast.radii[:H])
    return separation_batch(model, centers, _forecast_frames(forecast, H))


def collision_terms_batch(model: ArmModel, Q: np.ndarray, forecast: Forecast,
                          weights: CostWeights, alpha: float | None = None) -> np.ndarray:
    sep = separation_against_forecast(model, Q, forecast)
    a = weights.alpha_c if alpha is None else alpha
    return a * np.sum(hinge(D_SAFE - sep) ** 2, axis=1)


def _wrist_pot_distance(forecast: Forecast, pot: np.ndarray, H: int) -> np.ndarray:
    """Per-step distance of the nearest forecast wrist to the pot, shape (H,)."""
    if forecast.kind == SAFETY_VOLUME:
        d = np.linalg.norm(forecast.centers[:H] - pot, axis=-1) - forecast.radii[:H]
        return np.maximum(d, 0.0).min(axis=-1)
    frames = _forecast_frames(forecast, H)
    wrists = frames[:, list(WRIST_INDICES)]
    return np.linalg.norm(wrists - pot, axis=-1).min(axis=-1)


def stir_terms_batch(model: ArmModel, Q: np.ndarray, forecast: Forecast,
                     spec: TaskSpec, weights: CostWeights) -> np.ndarray:
    """Retract to rest while the forecast wrist is near the pot, else track the stir cycle."""
    spec.require("pot_position", "rest_config", "stir_reference")
    N, H, _ = Q.shape
    D = _wrist_pot_distance(forecast, spec.pot_position, H)
    near = D <= weights.eps_pot                       # (H,)
    ref = spec.stir_reference
    ref_h = ref[np.arange(H) % ref.shape[0]]          # (H, 7)
    d_rest = np.linalg.norm(Q - spec.rest_config, axis=-1)   # (N, H)
    d_stir = np.linalg.norm(Q - ref_h[None], axis=-1)        # (N, H)
    return np.sum(np.where(near[None], d_rest, d_stir), axis=1)


def pose_error_batch(ee_pos: np.ndarray, ee_R: np.ndarray, target: RigidPose) -> np.ndarray:
    """Position + weighted geodesic-orientation error per element.

    ee_pos: (..., 3), ee_R: (..., 3, 3).
    """
    dp = np.linalg.norm(ee_pos - target.position, axis=-1)
    Rt = target.rotation().as_matrix()
    rel = np.swapaxes(ee_R, -1, -2) @ Rt
    tr = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    ang = np.arccos(tr)
    return dp + ORIENTATION_WEIGHT * ang


def grasp_pose(ee_now: RigidPose, wrist_final: np.ndarray) -> RigidPose:
    """Handover grasp target at the forecast final wrist.

    The approach axis (end-effector local +z) is carried by the minimal
    rotation onto the line from the current end effector to the wrist; roll
    about the approach axis is unchanged.
    """
    wrist_final = np.asarray(wrist_final, dtype=float)
    line = wrist_final - ee_now.position
    norm = np.linalg.norm(line)
    if norm <= 1e-6:
        raise MotionError("grasp target coincides with the current end effector")
    target_axis = line / norm
    R_now = ee_now.rotation()
    approach = R_now.as_matrix()[:, 2]
    c = float(np.dot(approach, target_axis))
    axis = np.cross(approach, target_axis)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            align = Rotation.identity()
        else:
            # antiparallel: rotate pi about any axis orthogonal to the approach
            ortho = np.cross(approach, [1.0, 0.0, 0.0])
            if np.linalg.norm(ortho) < 1e-6:
                ortho = np.cross(approach, [0.0, 1.0, 0.0])
            align = Rotation.from_rotvec(np.pi * ortho / np.linalg.norm(ortho))
    else:
        angle = np.arctan2(s, c)
        align = Rotation.from_rotvec(angle * axis / s)
    quat = (align * R_now).as_quat()
    quat = quat / np.linalg.norm(quat)
    return RigidPose(position=wrist_final, orientation=quat)


def handover_terms_batch(model: ArmModel, Q: np.ndarray, forecast: Forecast,
                         spec: TaskSpec, weights: CostWeights) -> np.ndarray:
    """Track the grasp pose at the forecast final wrist while the object is in hand."""
    if forecast.kind == SAFETY_VOLUME:
        raise MotionError("handover cost needs a point forecast (no wrist in a safety volume)")
    N, H, _ = Q.shape
    if not spec.object_in_hand:
        return np.zeros(N)
    frames = _forecast_frames(forecast, forecast.trajectory.frames.shape[0])
    wrists = frames[-1, list(WRIST_INDICES)]
    R, p = fk_batch(model, Q)
    out = np.empty(N)
    for n in range(N):
        ee0 = RigidPose(p[n, 0, 7], Rotation.from_matrix(R[n, 0, 7]).as_quat())
        # the moving (right) wrist is the handover hand
        target = grasp_pose(ee0, wrists[1])
        out[n] = np.sum(pose_error_batch(p[n, :, 7], R[n, :, 7], target))
    return out


def tableset_terms_batch(model: ArmModel, Q: np.ndarray, forecast: Forecast,
                         spec: TaskSpec, weights: CostWeights) -> np.ndarray:
    """Goal reaching plus beta-weighted collision avoidance."""
    spec.require("table_goal")
    R, p = fk_batch(model, Q)
    goal = np.sum(pose_error_batch(p[..., 7, :], R[..., 7, :, :], spec.table_goal), axis=1)
    coll = collision_terms_batch(model, Q, forecast, weights, alpha=1.0)
    return goal + weights.beta * coll


TASK_TERMS = {
    "stir": stir_terms_batch,
    "handover": handover_terms_batch,
    "tableset": tableset_terms_batch,
}


def total_cost_batch(model: ArmModel, Q: np.ndarray, Qd: np.ndarray,
                     forecast: Forecast, spec: TaskSpec,
                     weights: CostWeights) -> np.ndarray:
    """base + collision + alpha_t * task term, per plan (N,)."""
    total = base_terms_batch(model, Q, Qd, weights)
    total = total + collision_terms_batch(model, Q, forecast, weights)
    total = total + weights.alpha_t * TASK_TERMS[spec.task](model, Q, forecast, spec, weights)
    return total


# --- single-plan wrappers -------------------------------------------------

def _plan_arrays(plan: RobotPlan):
    return plan.q_array()[None], plan.qd_array()[None]


def base_cost(plan: RobotPlan, model: ArmModel, weights: CostWeights) -> float:
    Q, Qd = _plan_arrays(plan)
    return float(base_terms_batch(model, Q, Qd, weights)[0])


def collision_cost(plan: RobotPlan, model: ArmModel, human_forecast: Forecast,
                   weights: CostWeights) -> float:
    Q, _ = _plan_arrays(plan)
    return float(collision_terms_batch(model, Q, human_forecast, weights)[0])


def stir_cost(plan: RobotPlan, model: ArmModel, forecast: Forecast,
              spec: TaskSpec, weights: CostWeights) -> float:
    if spec.task != "stir":
        raise MotionError("stir_cost requires a stir task spec")
    Q, _ = _plan_arrays(plan)
    return float(stir_terms_batch(model, Q, forecast, spec, weights)[0])


def handover_cost(plan: RobotPlan, model: ArmModel, forecast: Forecast,
                  spec: TaskSpec, weights: CostWeights) -> float:
    if spec.task != "handover":
        raise MotionError("handover_cost requires a handover task spec")
    Q, _ = _plan_arrays(plan)
    return float(handover_terms_batch(model, Q, forecast, spec, weights)[0])


def tableset_cost(plan: RobotPlan, model: ArmModel, forecast: Forecast,
                  spec: TaskSpec, weights: CostWeights) -> float:
    if spec.task != "tableset":
        raise MotionError("tableset_cost requires a tableset task spec")
    Q, _ = _plan_arrays(plan)
    return float(tableset_terms_batch(model, Q, forecast, spec, weights)[0])


def total_cost(plan: RobotPlan, model: ArmModel, forecast: Forecast,
               spec: TaskSpec, weights: CostWeights) -> float:
    Q, Qd = _plan_arrays(plan)
    return float(total_cost_batch(model, Q, Qd, forecast, spec, weights)[0])
