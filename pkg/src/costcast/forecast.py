"""Human-motion forecasters and the cost-aware training loop.

The trainable model is a separable linear map: a joint-mixing matrix S and a
temporal matrix M act on history displacements, so the forward pass and its
gradient are closed form.  Training can upsample rare transition windows and
upweight wrist joints in the loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .motion import (
    DEFAULT_DT,
    HISTORY_LEN,
    HORIZON_LEN,
    MotionError,
    N_JOINTS,
    WRIST_INDICES,
    Context,
    Trajectory,
    slide_windows,
)

POINT = "point"
SAFETY_VOLUME = "safety_volume"

# Training-configuration presets: (transition_mix, wrist_weight).
PRESETS = {
    "scratch": (0.0, 1.0),
    "finetuned": (0.0, 1.0),
    "manicast": (0.5, 1.0),
    "manicast-t": (1.0, 1.0),
    "manicast-w": (0.5, 5.0),
}


@dataclass(frozen=True)
class Forecast:
    """Either a point-trajectory forecast or a conservative safety volume."""

    kind: str
    trajectory: Trajectory | None = None
    centers: np.ndarray | None = None  # (T, S, 3) sphere centers
    radii: np.ndarray | None = None    # (T, S)

    def __post_init__(self):
        if self.kind == POINT:
            if self.trajectory is None or self.centers is not None:
                raise MotionError("point forecast must carry exactly a trajectory")
        elif self.kind == SAFETY_VOLUME:
            if self.trajectory is not None or self.centers is None or self.radii is None:
                raise MotionError("safety-volume forecast must carry spheres only")
            if self.centers.shape[0] != HORIZON_LEN:
                raise MotionError("safety volume must cover the full horizon")
        else:
            raise MotionError(f"unknown forecast kind {self.kind!r}")

    @property
    def horizon(self) -> int:
        return HORIZON_LEN


def point_forecast(frames: np.ndarray, dt: float = DEFAULT_DT) -> Forecast:
    return Forecast(kind=POINT, trajectory=Trajectory(frames, dt=dt))


def forecast_cur(ctx: Context) -> Forecast:
    """Constant-pose baseline: the last observed pose held over the horizon."""
    frames = np.repeat(ctx.frames[-1][None], HORIZON_LEN, axis=0)
    return point_forecast(frames, ctx.dt)


def forecast_cvm(ctx: Context) -> Forecast:
    """Constant-velocity baseline fit over the whole history window."""
    v = (ctx.frames[-1] - ctx.frames[0]) / ((HISTORY_LEN - 1) * ctx.dt)
    t = np.arange(1, HORIZON_LEN + 1)[:, None, None] * ctx.dt
    return point_forecast(ctx.frames[-1] + t * v, ctx.dt)


def forecast_worst(ctx: Context) -> Forecast:
    """Conservative safety volume: arm-length spheres at the last shoulder positions."""
    last = ctx.frames[-1]
    # radius = longest arm (shoulder->elbow + elbow->wrist) in the last frame
    left = np.linalg.norm(last[4] - last[2]) + np.linalg.norm(last[2] - last[0])
    right = np.linalg.norm(last[5] - last[3]) + np.linalg.norm(last[3] - last[1])
    radius = max(left, right)
    centers = np.repeat(last[[4, 5]][None], HORIZON_LEN, axis=0)  # (T, 2, 3)
    radii = np.full((HORIZON_LEN, 2), radius)
    return Forecast(kind=SAFETY_VOLUME, centers=centers, radii=radii)


def forecast_oracle(window_future: Trajectory | None) -> Forecast:
    """Ground-truth forecast, available only in playback."""
    if window_future is None:
        raise MotionError("oracle forecast requires the recorded future (playback only)")
    return Forecast(kind=POINT, trajectory=window_future)


@dataclass(frozen=True)
class ForecastModel:
    """Separable linear forecaster: S mixes joints, M maps history to horizon."""

    S: np.ndarray
    M: np.ndarray
    trained: bool = False
    w: np.ndarray | None = None

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if S.shape != (N_JOINTS, N_JOINTS) or M.shape != (HISTORY_LEN, HORIZON_LEN):
            raise MotionError("model matrices have wrong shapes")
        if not (np.isfinite(S).all() and np.isfinite(M).all()):
            raise MotionError("model parameters must be finite")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "M", M)

    @classmethod
    def init(cls) -> "ForecastModel":
        return cls(S=np.eye(N_JOINTS), M=np.zeros((HISTORY_LEN, HORIZON_LEN)))


def _forward_arrays(model: ForecastModel, ctx_frames: np.ndarray) -> np.ndarray:
    """Batched forward pass; ctx_frames (..., k, J, 3) -> (..., T, J, 3)."""
    last = ctx_frames[..., -1:, :, :]
    dX = ctx_frames - last
    A = np.einsum("ut,...ujc->...tjc", model.M, dX)
    out = np.einsum("jk,...tkc->...tjc", model.S, A)
    return last + out


def model_forward(model: ForecastModel, ctx: Context) -> Forecast:
    """Forecast = last pose + S-mixed, M-mapped history displacements."""
    return point_forecast(_forward_arrays(model, ctx.frames), ctx.dt)


def default_weights(wrist_weight: float = 1.0) -> np.ndarray:
    w = np.ones(N_JOINTS)
    w[list(WRIST_INDICES)] = wrist_weight
    return w


def weighted_loss(model: ForecastModel, ctx: Context, truth: Trajectory,
                  w: np.ndarray) -> float:
    """Joint-weighted squared error of the forecast against the true future."""
    w = np.asarray(w, dtype=float)
    if (w <= 0).any():
        raise MotionError("loss weights must be positive")
    pred = _forward_arrays(model, ctx.frames)
    resid = pred - truth.frames
    return float(np.einsum("j,tjc->", w, resid**2))


def _batch_loss_and_grad(model: ForecastModel, ctx_b: np.ndarray, fut_b: np.ndarray,
                         w: np.ndarray):
    """Mean loss over a batch and its exact gradients w.r.t. S and M."""
    B = ctx_b.shape[0]
    last = ctx_b[:, -1:, :, :]
    dX = ctx_b - last                                # (B, k, J, 3)
    A = np.einsum("ut,bujc->btjc", model.M, dX)      # (B, T, J, 3)
    pred = last + np.einsum("jk,btkc->btjc", model.S, A)
    resid = pred - fut_b                             # (B, T, J, 3)
    loss = float(np.einsum("j,btjc->", w, resid**2)) / B
    G = 2.0 * w[None, None, :, None] * resid         # dL/dpred, pre-mean
    dS = np.einsum("btjc,btkc->jk", G, A) / B
    Bmat = np.einsum("jk,bukc->bujc", model.S, dX)   # (B, k, J, 3)
    dM = np.einsum("btjc,bujc->ut", G, Bmat) / B
    return loss, dS, dM


def loss_gradient(model: ForecastModel, batch, w: np.ndarray):
    """Exact gradient of the mean batch loss w.r.t. (S, M).

    ``batch`` is a list of (Context, Trajectory) pairs.
    """
    if len(batch) == 0:
        raise MotionError("batch must be non-empty")
    ctx_b = np.stack([c.frames for c, _ in batch])
    fut_b = np.stack([t.frames for _, t in batch])
    _, dS, dM = _batch_loss_and_grad(model, ctx_b, fut_b, np.asarray(w, dtype=float))
    return dS, dM


class WindowSet:
    """Sliding windows over a list of episodes, gathered lazily for batching."""

    def __init__(self, episodes, k: int = HISTORY_LEN, T: int = HORIZON_LEN,
                 stride: int = 1):
        self.k, self.T = k, T
        self.episode_frames = []
        index = []
        flags = []
        for ei, ep in enumerate(episodes):
            self.episode_frames.append(ep.frames)
            n = len(ep)
            if n < k + T:
                raise MotionError("episode too short for windowing")
            for start in range(0, n - k - T + 1, stride):
                fut_lo, fut_hi = start + k, start + k + T - 1
                index.append((ei, start))
                flags.append(any(s <= fut_hi and e >= fut_lo for s, e in ep.transitions))
        self.index = np.array(index, dtype=int)
        self.flags = np.array(flags, dtype=bool)
        self.dt = episodes[0].dt if episodes else DEFAULT_DT

    def __len__(self) -> int:
        return len(self.index)

    def gather(self, idx):
        """Context/future arrays for the given window indices: (B,k,J,3), (B,T,J,3)."""
        idx = np.asarray(idx, dtype=int)
        ctx = np.empty((len(idx), self.k, N_JOINTS, 3))
        fut = np.empty((len(idx), self.T, N_JOINTS, 3))
        for out_i, wi in enumerate(idx):
            ei, start = self.index[wi]
            frames = self.episode_frames[ei]
            ctx[out_i] = frames[start:start + self.k]
            fut[out_i] = frames[start + self.k:start + self.k + self.T]
        return ctx, fut

    def window(self, wi: int):
        ei, start = self.index[wi]
        frames = self.episode_frames[ei]
        ctx = Context(frames[start:start + self.k], dt=self.dt)
        fut = Trajectory(frames[start + self.k:start + self.k + self.T], dt=self.dt)
        return ctx, fut, bool(self.flags[wi])


ANNOTATED = "annotated"
COST_PERCENTILE = "cost_percentile"


def build_transition_set(windows, mode: str = ANNOTATED,
                         delta_percentile: float = 0.10, cost_fn=None) -> np.ndarray:
    """Indices of windows forming the transition distribution.

    ``annotated`` uses the episode annotations.  ``cost_percentile`` computes
    a max inducible cost per window via ``cost_fn(ctx, fut)`` (expected to
    scan a fixed probe set of robot plans) and keeps the windows at or above
    the (1 - delta_percentile) quantile.
    """
    if isinstance(windows, WindowSet):
        ws = windows
        n = len(ws)
    else:
        ws = None
        windows = list(windows)
        n = len(windows)
    if n == 0:
        raise MotionError("no windows given")
    if mode == ANNOTATED:
        if ws is not None:
            idx = np.nonzero(ws.flags)[0]
        else:
            idx = np.array([i for i, (_, _, f) in enumerate(windows) if f], dtype=int)
    elif mode == COST_PERCENTILE:
        if cost_fn is None:
            raise MotionError("cost_percentile mode requires a cost_fn")
        cmax = np.empty(n)
        for i in range(n):
            ctx, fut, _ = ws.window(i) if ws is not None else windows[i]
            cmax[i] = cost_fn(ctx, fut)
        delta = np.quantile(cmax, 1.0 - delta_percentile)
        idx = np.nonzero(cmax >= delta)[0]
    else:
        raise MotionError(f"unknown transition-set mode {mode!r}")
    if len(idx) == 0:
        raise MotionError("transition set is empty; cannot form the transition distribution")
    return idx


def sample_batch(n_windows: int, transition_set: np.ndarray, mix: float,
                 batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Window indices for one batch: ceil(mix*B) from the transition set, rest uniform."""
    if not 0.0 <= mix <= 1.0:
        raise MotionError("mix must be in [0, 1]")
    n_trans = int(np.ceil(mix * batch_size))
    if n_trans > 0 and (transition_set is None or len(transition_set) == 0):
        raise MotionError("mix > 0 requires a non-empty transition set")
    parts = []
    if n_trans > 0:
        parts.append(rng.choice(transition_set, size=n_trans, replace=True))
    if batch_size - n_trans > 0:
        parts.append(rng.integers(0, n_windows, size=batch_size - n_trans))
    return np.concatenate(parts)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    transition_mix: float = 0.5
    wrist_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise MotionError("learning rate must be nonnegative")
        if not 0.0 <= self.transition_mix <= 1.0:
            raise MotionError("transition_mix must be in [0, 1]")
        if self.wrist_weight < 1.0:
            raise MotionError("wrist_weight must be >= 1")


def preset_config(name: str, base: TrainConfig | None = None) -> TrainConfig:
    if name not in PRESETS:
        raise MotionError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    mix, ww = PRESETS[name]
    base = base or TrainConfig()
    return replace(base, transition_mix=mix, wrist_weight=ww)


def _val_loss(model: ForecastModel, ws: WindowSet, w: np.ndarray,
              chunk: int = 512) -> float:
    total = 0.0
    n = len(ws)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        ctx_b, fut_b = ws.gather(idx)
        pred = _forward_arrays(model, ctx_b)
        resid = pred - fut_b
        total += float(np.einsum("j,btjc->", w, resid**2))
    return total / n


def train(model: ForecastModel, train_windows: WindowSet, val_windows: WindowSet,
          config: TrainConfig, transition_set: np.ndarray | None = None):
    """Momentum gradient descent on the weighted loss with transition upsampling.

    Returns (best_model, history) where best_model minimizes validation loss
    across epochs and history is a list of per-epoch dicts.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise MotionError("train and validation window sets must be non-empty")
    if transition_set is None and config.transition_mix > 0:
        transition_set = build_transition_set(train_windows, mode=ANNOTATED)
    w = default_weights(config.wrist_weight)
    rng = np.random.default_rng(config.seed)
    S, M = model.S.copy(), model.M.copy()
    vS, vM = np.zeros_like(S), np.zeros_like(M)
    n_batches = max(1, len(train_windows) // config.batch_size)

    best = ForecastModel(S=S.copy(), M=M.copy(), trained=True, w=w)
    best_val = _val_loss(best, val_windows, w)
    history = [{"epoch": 0, "train_loss": None, "val_loss": best_val}]

    cur = ForecastModel(S=S, M=M)
    for epoch in range(1, config.epochs + 1):
        epoch_loss = 0.0
        for _ in range(n_batches):
            idx = sample_batch(len(train_windows), transition_set,
                               config.transition_mix, config.batch_size, rng)
            ctx_b, fut_b = train_windows.gather(idx)
            loss, dS, dM = _batch_loss_and_grad(cur, ctx_b, fut_b, w)
            if not np.isfinite(loss):
                raise MotionError(f"training diverged (non-finite loss) at epoch {epoch}")
            vS = config.momentum * vS - config.learning_rate * dS
            vM = config.momentum * vM - config.learning_rate * dM
            S = S + vS
            M = M + vM
            cur = ForecastModel(S=S, M=M)
            epoch_loss += loss
        val = _val_loss(cur, val_windows, w)
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_batches, "val_loss": val})
        if val < best_val:
            best_val = val
            best = ForecastModel(S=S.copy(), M=M.copy(), trained=True, w=w)
    return best, history


def cost_gap(model: ForecastModel, windows, probe_plans, task_cost) -> float:
    """Mean |cost under truth - cost under forecast| over windows and probe plans.

    ``task_cost(plan, forecast)`` evaluates a robot plan against a forecast;
    the model expectation is taken at the mean forecast.
    """
    if len(probe_plans) == 0:
        raise MotionError("need at least one probe plan")
    if isinstance(windows, WindowSet):
        items = [windows.window(i) for i in range(len(windows))]
    else:
        items = list(windows)
    gaps = []
    for ctx, fut, _flag in items:
        pred = model_forward(model, ctx)
        truth = Forecast(kind=POINT, trajectory=fut)
        for plan in probe_plans:
            gaps.append(abs(task_cost(plan, truth) - task_cost(plan, pred)))
    return float(np.mean(gaps))


def save_checkpoint(model: ForecastModel, path, preset: str = "", seed: int = 0) -> None:
    doc = {
        "k": HISTORY_LEN,
        "T": HORIZON_LEN,
        "J": N_JOINTS,
        "preset": preset,
        "seed": seed,
        "trained": model.trained,
        "S": {"shape": list(model.S.shape), "data": model.S.flatten().tolist()},
        "M": {"shape": list(model.M.shape), "data": model.M.flatten().tolist()},
        "w": None if model.w is None else list(map(float, model.w)),
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ForecastModel:
    doc = json.loads(Path(path).read_text())
    S = np.array(doc["S"]["data"]).reshape(doc["S"]["shape"])
    M = np.array(doc["M"]["data"]).reshape(doc["M"]["shape"])
    w = None if doc.get("w") is None else np.asarray(doc["w"], dtype=float)
    return ForecastModel(S=S, M=M, trained=bool(doc.get("trained", True)), w=w)


def make_forecaster(name_or_model):
    """Uniform forecaster interface: callable (ctx, truth_future_or_None) -> Forecast."""
    if isinstance(name_or_model, ForecastModel):
        model = name_or_model
        return lambda ctx, fut=None: model_forward(model, ctx)
    name = str(name_or_model).lower()
    if name == "cur":
        return lambda ctx, fut=None: forecast_cur(ctx)
    if name == "cvm":
        return lambda ctx, fut=None: forecast_cvm(ctx)
    if name == "worst":
        return lambda ctx, fut=None: forecast_worst(ctx)
    if name == "fut":
        return lambda ctx, fut=None: forecast_oracle(fut)
    raise MotionError(f"unknown forecaster {name_or_model!r}")
