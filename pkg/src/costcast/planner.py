"""Sampling-based MPC: sample velocity plans, score them against the active
forecast, reweight, execute one step and replan.

Also hosts the playback loop that replays a recorded human episode against a
live planner and produces per-timestep simulation logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .cost import CostWeights, TaskSpec, total_cost_batch, _wrist_pot_distance
from .forecast import Forecast, make_forecaster
from .motion import (
    Context,
    Episode,
    HISTORY_LEN,
    HORIZON_LEN,
    MotionError,
    Pose,
    Trajectory,
)
from .robot import (
    ArmModel,
    ArmState,
    N_DOF,
    RobotPlan,
    fk,
    fk_batch,
    jacobian,
    min_separation,
    rollout_arrays,
    step,
)

STIR_RADIUS = 0.10
STIR_PERIOD_S = 4.0
STIR_HEIGHT = 0.05  # circle height above the pot center
DEFAULT_RETRACT_POINT = (0.80, 0.0, 0.90)
DEFAULT_TABLE_GOAL = (0.62, 0.25, 0.98)


@dataclass(frozen=True)
class MppiConfig:
    n_samples: int = 64
    horizon: int = HORIZON_LEN
    dt: float = 0.04
    temperature: float = 0.2
    noise_sigma: float = 0.3
    n_iterations: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise MotionError("need at least 2 samples")
        if self.temperature <= 0 or self.noise_sigma <= 0:
            raise MotionError("temperature and noise_sigma must be positive")


@dataclass
class PlannerState:
    """Warm-start memory across replans."""

    mean_controls: np.ndarray  # (H, 7)
    rng: np.random.Generator

    @classmethod
    def init(cls, cfg: MppiConfig) -> "PlannerState":
        return cls(mean_controls=np.zeros((cfg.horizon, N_DOF)),
                   rng=np.random.default_rng(cfg.seed))


def rollout(model: ArmModel, state: ArmState, controls: np.ndarray, dt: float) -> RobotPlan:
    """Integrate a control sequence through the clamped kinematics."""
    controls = np.asarray(controls, dtype=float)
    states = []
    cur = state
    for t in range(controls.shape[0]):
        cur = step(model, cur, controls[t], dt)
        states.append(cur)
    return RobotPlan(states=tuple(states), dt=dt)


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax weights over sampled plan costs (lower cost, higher weight)."""
    costs = np.asarray(costs, dtype=float)
    if costs.size < 2:
        raise MotionError("need at least 2 costs")
    finite = np.isfinite(costs)
    if not finite.any():
        raise MotionError("all sampled plans have infinite cost")
    cmin = costs[finite].min()
    logw = np.where(finite, -(costs - cmin) / temperature, -np.inf)
    w = np.exp(logw)
    return w / w.sum()


def mppi_update(costs: np.ndarray, samples: np.ndarray, mean: np.ndarray,
                temperature: float) -> np.ndarray:
    """Exponentiated-cost softmax update of the sampling mean."""
    w = mppi_weights(costs, temperature)
    return np.einsum("n,nhj->hj", w, samples)


def ik_position(model: ArmModel, q0: np.ndarray, target: np.ndarray,
                iters: int = 200, damping: float = 0.05, step_clip: float = 0.2) -> np.ndarray:
    """Damped-least-squares position IK from q0 to a Cartesian target."""
    q = np.asarray(q0, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    for _ in range(iters):
        ee, _ = fk(model, q)
        err = target - ee.position
        if np.linalg.norm(err) < 1e-5:
            break
        Jl = jacobian(model, q)[:3]
        JJt = Jl @ Jl.T + damping**2 * np.eye(3)
        dq = Jl.T @ np.linalg.solve(JJt, err)
        q = q + np.clip(dq, -step_clip, step_clip)
        q = np.clip(q, model.lo, model.hi)
    return q


def stir_reference(model: ArmModel, pot_position: np.ndarray, dt: float,
                   q_seed: np.ndarray | None = None) -> np.ndarray:
    """Joint-space reference tracking a circle above the pot, one full period."""
    pot = np.asarray(pot_position, dtype=float)
    center = pot + np.array([0.0, 0.0, STIR_HEIGHT])
    n = int(round(STIR_PERIOD_S / dt))
    q = ik_position(model, q_seed if q_seed is not None else model.mid(),
                    center + np.array([STIR_RADIUS, 0.0, 0.0]))
    ref = np.empty((n, N_DOF))
    for i in range(n):
        ang = 2 * np.pi * i / n
        target = center + STIR_RADIUS * np.array([np.cos(ang), np.sin(ang), 0.0])
        q = ik_position(model, q, target, iters=50)
        ref[i] = q
    return ref


def rest_configuration(model: ArmModel, point=DEFAULT_RETRACT_POINT) -> np.ndarray:
    """A retracted joint configuration reached by IK from mid-range."""
    return ik_position(model, model.mid(), np.asarray(point, dtype=float))


def default_table_goal(model: ArmModel) -> "RigidPose":
    from .robot import RigidPose

    q = ik_position(model, model.mid(), np.asarray(DEFAULT_TABLE_GOAL, dtype=float))
    ee, _ = fk(model, q)
    return RigidPose(position=np.asarray(DEFAULT_TABLE_GOAL, dtype=float),
                     orientation=ee.orientation)


def build_task_spec(episode: Episode, model: ArmModel, dt: float = 0.04) -> TaskSpec:
    """Task spec with planner-side references derived from episode metadata."""
    if episode.task == "stir":
        pot = np.asarray(episode.extras["pot_position"], dtype=float)
        rest = rest_configuration(model)
        ref = stir_reference(model, pot, dt, q_seed=rest)
        return TaskSpec(task="stir", pot_position=pot, rest_config=rest, stir_reference=ref)
    if episode.task == "handover":
        return TaskSpec(task="handover", rest_config=rest_configuration(model))
    return TaskSpec(task="tableset", rest_config=rest_configuration(model),
                    table_goal=default_table_goal(model))


def plan_step(planner_state: PlannerState, arm_state: ArmState, forecast: Forecast,
              spec: TaskSpec, weights: CostWeights, cfg: MppiConfig,
              model: ArmModel | None = None, cost_fn=None):
    """One replanning cycle; returns (qd_cmd, best_plan, best_cost).

    Samples ``n_samples`` control sequences around the warm-started mean for
    ``n_iterations`` rounds, scores rollouts with the total cost (or a custom
    ``cost_fn(Q, Qd)``), and keeps the best sample seen across rounds.  The
    stored mean is softmax-updated each round then time-shifted for the next
    replan.
    """
    model = model or ArmModel()
    mean = planner_state.mean_controls
    best_cost = np.inf
    best_controls = None
    for _ in range(cfg.n_iterations):
        noise = planner_state.rng.normal(0.0, cfg.noise_sigma,
                                         size=(cfg.n_samples, cfg.horizon, N_DOF))
        samples = mean[None] + noise
        Q, Qd = rollout_arrays(model, arm_state.q, samples, cfg.dt)
        if cost_fn is not None:
            costs = np.asarray(cost_fn(Q, Qd), dtype=float)
        else:
            costs = total_cost_batch(model, Q, Qd, forecast, spec, weights)
        mean = mppi_update(costs, samples, mean, cfg.temperature)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost = float(costs[i])
            best_controls = samples[i]
    planner_state.mean_controls = np.vstack([mean[1:], mean[-1:]])
    best_plan = rollout(model, arm_state, best_controls, cfg.dt)
    return best_controls[0], best_plan, best_cost


@dataclass
class SimLog:
    """Per-timestep playback records; input to the metrics module."""

    task: str
    model_name: str
    dt: float
    records: list = field(default_factory=list)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({"meta": {"task": self.task, "model": self.model_name,
                                         "dt": self.dt}}) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "SimLog":
        lines = Path(path).read_text().splitlines()
        meta = json.loads(lines[0])["meta"]
        records = [json.loads(line) for line in lines[1:]]
        return cls(task=meta["task"], model_name=meta["model"], dt=meta["dt"],
                   records=records)


def _branch_active(forecast: Forecast, spec: TaskSpec, weights: CostWeights) -> bool:
    D = _wrist_pot_distance(forecast, spec.pot_position, HORIZON_LEN)
    return bool((D <= weights.eps_pot).any())


def run_episode(episode: Episode, forecaster, spec: TaskSpec, weights: CostWeights,
                cfg: MppiConfig, model: ArmModel | None = None,
                model_name: str = "model") -> SimLog:
    """Replay a recorded human episode against the live planner.

    ``forecaster`` is a callable (ctx, truth_future_or_None) -> Forecast (see
    ``make_forecaster``).  The oracle forecaster receives the true future.
    """
    model = model or ArmModel()
    if len(episode) < HISTORY_LEN + HORIZON_LEN:
        raise MotionError("episode too short for playback")
    if abs(episode.dt - cfg.dt) > 1e-9:
        raise MotionError("episode rate must match the planner rate")
    arm = ArmState(q=spec.rest_config if spec.rest_config is not None else model.mid(),
                   qd=np.zeros(N_DOF))
    pstate = PlannerState.init(cfg)
    log = SimLog(task=episode.task, model_name=model_name, dt=cfg.dt)
    obj_flags = episode.extras.get("object_in_hand")
    pot = spec.pot_position

    for t in range(HISTORY_LEN - 1, len(episode) - HORIZON_LEN):
        ctx = Context(episode.frames[t - HISTORY_LEN + 1:t + 1], dt=episode.dt)
        truth = Trajectory(episode.frames[t + 1:t + 1 + HORIZON_LEN], dt=episode.dt)
        fc = forecaster(ctx, truth)
        step_spec = spec
        if episode.task == "handover" and obj_flags is not None:
            from dataclasses import replace as _replace

            step_spec = _replace(spec, object_in_hand=bool(obj_flags[t]))
        cmd, best_plan, best_cost = plan_step(pstate, arm, fc, step_spec, weights,
                                              cfg, model=model)
        arm = step(model, arm, cmd, cfg.dt)
        ee, _ = fk(model, arm.q)
        human_now = Pose(episode.frames[t])
        sep = min_separation(model, arm.q, human_now)

        rec = {
            "step": t,
            "time_s": t * cfg.dt,
            "q": arm.q.tolist(),
            "qd": arm.qd.tolist(),
            "cmd": np.asarray(cmd, dtype=float).tolist(),
            "ee_pos": ee.position.tolist(),
            "ee_quat": ee.orientation.tolist(),
            "cost": best_cost,
            "min_sep": float(sep),
            "gt_wrist": episode.frames[t, 1].tolist(),
        }
        if episode.task == "stir":
            rec["branch_active"] = _branch_active(fc, step_spec, weights)
            rec["gt_near_pot"] = bool(
                np.linalg.norm(episode.frames[t, [0, 1]] - pot, axis=-1).min()
                <= weights.eps_pot)
        if episode.task == "handover":
            if fc.kind == "point":
                rec["forecast_final_wrist"] = fc.trajectory.frames[-1, 1].tolist()
            else:
                rec["forecast_final_wrist"] = None
            rec["object_in_hand"] = bool(obj_flags[t]) if obj_flags is not None else False
        log.records.append(rec)
    return log
