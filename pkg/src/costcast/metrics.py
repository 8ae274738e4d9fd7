"""Forecasting metrics (ADE/FDE and transition-window variants), planning
metrics from playback logs, and the empirical verifier of the training-
distribution loss bounds on finite toy problems.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forecast import POINT, Forecast, WindowSet
from .motion import HORIZON_LEN, MotionError, Trajectory, WRIST_INDICES

MM = 1000.0
GOAL_DETECT_RADIUS = 0.10
GOAL_DETECT_PERSIST = 5
GOAL_ARRIVE_RADIUS = 0.05

METRIC_KEYS = ("ade", "fde", "wrist_ade", "wrist_fde",
               "t_ade", "t_fde", "t_wrist_ade", "t_wrist_fde")


def ade_fde(forecast: Trajectory, truth: Trajectory, joint_subset=None):
    """Average / final displacement error in millimeters."""
    if forecast.frames.shape != truth.frames.shape:
        raise MotionError("forecast and truth must have equal shapes")
    joints = list(joint_subset) if joint_subset is not None else slice(None)
    d = np.linalg.norm(forecast.frames[:, joints] - truth.frames[:, joints], axis=-1)
    return float(d.mean() * MM), float(d[-1].mean() * MM)


def _displacements(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-window, per-frame, per-joint errors (B, T, J)."""
    return np.linalg.norm(pred - truth, axis=-1)


def _mean_se(values: np.ndarray):
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), se


def evaluate_forecaster(windows: WindowSet, forecaster, chunk: int = 256) -> dict:
    """All eight forecasting metrics (in mm) for one forecaster over a window set."""
    n = len(windows)
    if n == 0:
        raise MotionError("no windows to evaluate")
    ade_w = np.empty(n)
    fde_w = np.empty(n)
    wade_w = np.empty(n)
    wfde_w = np.empty(n)
    wr = list(WRIST_INDICES)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        ctx_b, fut_b = windows.gather(idx)
        pred = np.empty_like(fut_b)
        for bi, wi in enumerate(idx):
            ctx, fut, _ = windows.window(wi)
            fc = forecaster(ctx, fut)
            if fc.kind != POINT:
                raise MotionError("displacement metrics need point forecasts")
            pred[bi] = fc.trajectory.frames
        d = _displacements(pred, fut_b)  # (B, T, J)
        ade_w[idx] = d.mean(axis=(1, 2)) * MM
        fde_w[idx] = d[:, -1].mean(axis=1) * MM
        wade_w[idx] = d[:, :, wr].mean(axis=(1, 2)) * MM
        wfde_w[idx] = d[:, -1][:, wr].mean(axis=1) * MM
    flags = windows.flags
    if not flags.any():
        raise MotionError("no transition windows in the evaluation set")
    out = {}
    for key, values in (("ade", ade_w), ("fde", fde_w),
                        ("wrist_ade", wade_w), ("wrist_fde", wfde_w)):
        out[key], out[key + "_se"] = _mean_se(values)
        out["t_" + key], out["t_" + key + "_se"] = _mean_se(values[flags])
    out["n_windows"] = int(n)
    out["n_transition_windows"] = int(flags.sum())
    return out


def transition_metrics(windows: WindowSet, forecaster) -> tuple:
    """(t_ade, t_fde, t_wrist_ade, t_wrist_fde) restricted to transition windows."""
    m = evaluate_forecaster(windows, forecaster)
    return m["t_ade"], m["t_fde"], m["t_wrist_ade"], m["t_wrist_fde"]


# --- planning metrics -----------------------------------------------------

def _incursions(flags) -> list:
    """Closed [start, end] index intervals of consecutive true flags."""
    out = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            out.append((start, i - 1))
            start = None
    if start is not None:
        out.append((start, len(flags) - 1))
    return out


def _first_active(active: np.ndarray, lo: int, hi: int):
    lo = max(lo, 0)
    hi = min(hi, len(active) - 1)
    for i in range(lo, hi + 1):
        if active[i]:
            return i
    return None


def _first_inactive_after(active: np.ndarray, lo: int, hi: int):
    lo = max(lo, 0)
    hi = min(hi, len(active) - 1)
    for i in range(lo, hi + 1):
        if not active[i]:
            return i
    return None


def stop_restart_times(logs_model, logs_cur, horizon: int = HORIZON_LEN) -> dict:
    """Stop/restart advantage (ms) over current-pose tracking, plus FDR.

    ``logs_model`` and ``logs_cur`` are paired per-episode playback logs from
    stir episodes.  Stop time for an incursion is the lead of the model's
    first retract-branch activation over the current-pose activation;
    restart time is the analogous lead at deactivation.  FDR counts branch
    activations with no true incursion in the following ``horizon`` frames.
    """
    if isinstance(logs_model, (list, tuple)) is False:
        logs_model = [logs_model]
        logs_cur = [logs_cur]
    stop_deltas, restart_deltas = [], []
    n_act, n_false = 0, 0
    total_incursions = 0
    for lm, lc in zip(logs_model, logs_cur):
        dt = lm.dt
        act_m = np.array([r["branch_active"] for r in lm.records], dtype=bool)
        act_c = np.array([r["branch_active"] for r in lc.records], dtype=bool)
        gt = np.array([r["gt_near_pot"] for r in lm.records], dtype=bool)
        incursions = _incursions(gt)
        total_incursions += len(incursions)
        for s, e in incursions:
            t_c = _first_active(act_c, s - horizon, e)
            t_m = _first_active(act_m, s - horizon, e)
            if t_c is not None and t_m is not None:
                stop_deltas.append((t_c - t_m) * dt * 1000.0)
            # deactivation after the incursion ends
            d_c = _first_inactive_after(act_c, max(t_c if t_c is not None else s, s),
                                        e + horizon + 1)
            d_m = _first_inactive_after(act_m, max(t_m if t_m is not None else s, s),
                                        e + horizon + 1)
            if d_c is not None and d_m is not None:
                restart_deltas.append((d_c - d_m) * dt * 1000.0)
        # false detections: activations with no true incursion soon after
        rising = np.nonzero(act_m & ~np.concatenate([[False], act_m[:-1]]))[0]
        for t in rising:
            n_act += 1
            if not gt[t:t + horizon + 1].any():
                n_false += 1
    if total_incursions == 0:
        raise MotionError("no ground-truth incursions in the provided logs")
    stop, stop_se = _mean_se(stop_deltas) if stop_deltas else (float("nan"), 0.0)
    restart, restart_se = _mean_se(restart_deltas) if restart_deltas else (float("nan"), 0.0)
    fdr = n_false / n_act if n_act else 0.0
    return {"stop_ms": stop, "stop_ms_se": stop_se,
            "restart_ms": restart, "restart_ms_se": restart_se,
            "fdr": fdr, "n_incursions": total_incursions, "n_activations": n_act}


def _detection_step(records, goal: np.ndarray, lo: int, hi: int,
                    persist: int = GOAL_DETECT_PERSIST):
    """First record index in [lo, hi] whose forecast final wrist stays within
    the detection radius for ``persist`` consecutive records."""
    lo = max(lo, 0)
    hi = min(hi, len(records) - 1)
    run = 0
    for i in range(lo, hi + 1):
        w = records[i].get("forecast_final_wrist")
        ok = w is not None and np.linalg.norm(np.asarray(w) - goal) <= GOAL_DETECT_RADIUS
        run = run + 1 if ok else 0
        if run >= persist:
            return i - persist + 1
    return None


def handover_metrics(logs_model, logs_cur, episodes, horizon: int = HORIZON_LEN) -> dict:
    """Goal-detection gain, correct-goal rate, end-effector path length and
    time to goal over handover playback logs."""
    if isinstance(logs_model, (list, tuple)) is False:
        logs_model = [logs_model]
        logs_cur = [logs_cur]
        episodes = [episodes]
    gains, paths, times = [], [], []
    n_handover, n_correct = 0, 0
    for lm, lc, ep in zip(logs_model, logs_cur, episodes):
        goals = ep.extras.get("goals")
        holds = ep.extras.get("hold_intervals")
        if goals is None or holds is None:
            raise MotionError("handover episode lacks goal metadata")
        dt = lm.dt
        step0 = lm.records[0]["step"]
        ee = np.array([r["ee_pos"] for r in lm.records])
        for (hs, he), goal in zip(holds, goals):
            goal = np.asarray(goal, dtype=float)
            n_handover += 1
            lo = hs - step0 - 2 * horizon
            hi = he - step0
            t_m = _detection_step(lm.records, goal, lo, hi)
            t_c = _detection_step(lc.records, goal, lo, hi)
            if t_m is not None:
                n_correct += 1
            if t_m is not None and t_c is not None:
                gains.append((t_c - t_m) * dt * 1000.0)
            # arm travel from the hold start until arrival near the goal
            if t_m is None:
                continue
            start = max(t_m, 0)
            arrive = None
            for i in range(start, len(lm.records)):
                if np.linalg.norm(ee[i] - goal) <= GOAL_ARRIVE_RADIUS:
                    arrive = i
                    break
            if arrive is not None:
                seg = ee[start:arrive + 1]
                paths.append(float(np.sum(np.linalg.norm(np.diff(seg, axis=0), axis=-1))) * MM)
                times.append((arrive - start) * dt)
    if n_handover == 0:
        raise MotionError("no handovers in the provided episodes")
    gain, gain_se = _mean_se(gains) if gains else (float("nan"), 0.0)
    path, path_se = _mean_se(paths) if paths else (float("nan"), 0.0)
    ttg, ttg_se = _mean_se(times) if times else (float("nan"), 0.0)
    return {"goal_detection_ms": gain, "goal_detection_ms_se": gain_se,
            "correct_goal_rate": n_correct / n_handover,
            "path_length_mm": path, "path_length_mm_se": path_se,
            "time_to_goal_s": ttg, "time_to_goal_s_se": ttg_se,
            "n_handovers": n_handover}


# --- loss-bound verifier on finite toy problems ---------------------------

@dataclass(frozen=True)
class ToyCMDP:
    """Finite context/future tables for exact verification of the loss bounds."""

    P_phi: np.ndarray    # (m,)
    P_true: np.ndarray   # (m, n) conditional rows
    P_model: np.ndarray  # (m, n) conditional rows
    costs: np.ndarray    # (n,) cost of one fixed probe plan under each future
    delta: float

    def __post_init__(self):
        P_phi = np.asarray(self.P_phi, dtype=float)
        P_true = np.asarray(self.P_true, dtype=float)
        P_model = np.asarray(self.P_model, dtype=float)
        costs = np.asarray(self.costs, dtype=float)
        if abs(P_phi.sum() - 1.0) > 1e-12:
            raise MotionError("P_phi must sum to 1")
        for name, table in (("P_true", P_true), ("P_model", P_model)):
            if np.abs(table.sum(axis=1) - 1.0).max() > 1e-12:
                raise MotionError(f"rows of {name} must sum to 1")
        object.__setattr__(self, "P_phi", P_phi)
        object.__setattr__(self, "P_true", P_true)
        object.__setattr__(self, "P_model", P_model)
        object.__setattr__(self, "costs", costs)


def lemma1_check(toy: ToyCMDP, tol: float = 1e-12) -> dict:
    """Exact enumeration of the loss bounds under P and the mixed distribution.

    Per-context max cost is taken over the union support of the true and
    model conditionals (the futures that can carry probability mass in the
    cost-difference sum).
    """
    P, Pt, Pm, c = toy.P_phi, toy.P_true, toy.P_model, toy.costs
    support = (Pt > 0) | (Pm > 0)
    cmax_phi = np.where(support, c[None, :], -np.inf).max(axis=1)
    cmax = float(cmax_phi[P > 0].max())

    l1 = np.abs(Pt - Pm).sum(axis=1)                 # per-context L1 gap
    eps_P = float(P @ l1)
    ell = float(P @ np.abs((Pt - Pm) @ c))

    indicator = (cmax_phi >= toy.delta) & (P > 0)
    mass = float(P[indicator].sum())
    if mass <= 0:
        raise MotionError("transition distribution is empty (no context meets delta)")
    P_T = np.where(indicator, P, 0.0) / mass
    Q = 0.5 * P + 0.5 * P_T
    eps_Q = float(Q @ l1)

    bound_P = cmax * eps_P
    bound_Q = 2.0 * max(toy.delta, cmax * mass) * eps_Q
    return {
        "eps_P": eps_P,
        "eps_Q": eps_Q,
        "ell_theta": ell,
        "bound_P": bound_P,
        "bound_Q": bound_Q,
        "holds_P": ell <= bound_P + tol,
        "holds_Q": ell <= bound_Q + tol,
        "cmax": cmax,
        "transition_mass": mass,
    }


def worked_toycmdp() -> ToyCMDP:
    """The fixed two-context instance used as a cross-module anchor."""
    return ToyCMDP(
        P_phi=np.array([0.9, 0.1]),
        P_true=np.array([[1.0, 0.0], [1.0, 0.0]]),
        P_model=np.array([[1.0, 0.0], [0.8, 0.2]]),
        costs=np.array([1.0, 10.0]),
        delta=5.0,
    )


def random_toycmdp(rng: np.random.Generator, max_m: int = 6, max_n: int = 6) -> ToyCMDP:
    """A random finite instance with sparse supports and a feasible delta."""
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(2, max_n + 1))
    P_phi = rng.dirichlet(np.ones(m))

    def sparse_rows():
        rows = np.zeros((m, n))
        for i in range(m):
            k = int(rng.integers(1, n + 1))
            cols = rng.choice(n, size=k, replace=False)
            rows[i, cols] = rng.dirichlet(np.ones(k))
        return rows

    P_true = sparse_rows()
    P_model = sparse_rows()
    costs = rng.uniform(0.0, 10.0, size=n)
    support = (P_true > 0) | (P_model > 0)
    cmax_phi = np.where(support, costs[None, :], -np.inf).max(axis=1)
    feasible = cmax_phi[P_phi > 0]
    # keep the transition set non-empty
    delta = float(rng.uniform(0.0, feasible.max()))
    return ToyCMDP(P_phi=P_phi, P_true=P_true, P_model=P_model, costs=costs, delta=delta)


@dataclass
class MetricReport:
    forecasting: dict = field(default_factory=dict)  # model -> metric dict
    planning: dict = field(default_factory=dict)     # model -> metric dict

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(
            {"forecasting": self.forecasting, "planning": self.planning}, indent=2,
            sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        doc = json.loads(Path(path).read_text())
        return cls(forecasting=doc.get("forecasting", {}), planning=doc.get("planning", {}))
