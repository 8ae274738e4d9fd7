"""Command-line entry point wiring generation, training, simulation,
evaluation and the loss-bound verifier into reproducible runs.

Every command is driven by a single JSON run config (plus a few flag
overrides); outputs land in a run directory named by the config hash.
Exit codes: 0 success, 2 usage/config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, forecast, metrics, planner
from .cost import CostWeights
from .forecast import TrainConfig, WindowSet, make_forecaster
from .motion import MotionError, load_episode, save_episode
from .planner import MppiConfig, SimLog, build_task_spec, run_episode
from .robot import ArmModel

DEFAULT_COUNTS = {"stir": 19, "handover": 27, "tableset": 15}
BASELINES = ("cur", "cvm", "worst", "fut")


class ConfigError(ValueError):
    pass


def _sub(doc: dict, key: str) -> dict:
    val = doc.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    return val


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    out_root: str = "runs"
    counts: dict = dataclasses.field(default_factory=lambda: dict(DEFAULT_COUNTS))
    gen: datagen.GenConfig = dataclasses.field(default_factory=datagen.GenConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    mppi: MppiConfig = dataclasses.field(default_factory=MppiConfig)
    weights: CostWeights = dataclasses.field(default_factory=CostWeights)
    preset: str = "manicast"
    models: tuple = ("cur", "cvm")

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        doc = json.loads(Path(path).read_text()) if path else {}
        overrides = overrides or {}
        seed = int(overrides.get("seed", doc.get("seed", 0)))
        gen_kwargs = _sub(doc, "gen")
        gen_kwargs.setdefault("seed", seed)
        train_kwargs = _sub(doc, "train")
        train_kwargs.setdefault("seed", seed)
        mppi_kwargs = _sub(doc, "mppi")
        mppi_kwargs.setdefault("seed", seed)
        try:
            cfg = cls(
                seed=seed,
                out_root=str(overrides.get("out", doc.get("out_root", "runs"))),
                counts={**DEFAULT_COUNTS, **_sub(doc, "counts")},
                gen=datagen.GenConfig(**gen_kwargs),
                train=TrainConfig(**train_kwargs),
                mppi=MppiConfig(**mppi_kwargs),
                weights=CostWeights(**_sub(doc, "weights")),
                preset=str(overrides.get("preset", doc.get("preset", "manicast"))),
                models=tuple(doc.get("models", ["cur", "cvm"])),
            )
        except (TypeError, MotionError) as exc:
            raise ConfigError(str(exc)) from exc
        bad = set(cfg.counts) - set(datagen.GENERATORS)
        if bad:
            raise ConfigError(f"unknown task name(s) in counts: {sorted(bad)}")
        for name in cfg.models:
            if name not in BASELINES and name not in forecast.PRESETS:
                raise ConfigError(f"unknown model {name!r}")
        if cfg.preset not in forecast.PRESETS:
            raise ConfigError(f"unknown preset {cfg.preset!r}")
        return cfg

    def canonical(self) -> str:
        doc = {
            "seed": self.seed,
            "counts": self.counts,
            "gen": dataclasses.asdict(self.gen),
            "train": dataclasses.asdict(self.train),
            "mppi": dataclasses.asdict(self.mppi),
            "weights": self.weights.to_dict(),
            "preset": self.preset,
            "models": list(self.models),
        }
        return json.dumps(doc, sort_keys=True)

    def run_dir(self) -> Path:
        digest = hashlib.sha256(self.canonical().encode()).hexdigest()[:12]
        d = Path(self.out_root) / digest
        d.mkdir(parents=True, exist_ok=True)
        return d


def _episode_seed(global_seed: int, task: str, index: int) -> int:
    offsets = {"stir": 0, "handover": 100000, "tableset": 200000}
    return global_seed * 1000000 + offsets[task] + index


def cmd_gen(cfg: RunConfig) -> int:
    """Generate the episode dataset and a manifest."""
    run_dir = cfg.run_dir()
    data_dir = run_dir / "data"
    data_dir.mkdir(exist_ok=True)
    manifest = []
    for task, count in sorted(cfg.counts.items()):
        for i in range(count):
            seed = _episode_seed(cfg.seed, task, i)
            ep = datagen.GENERATORS[task](dataclasses.replace(cfg.gen, seed=seed))
            name = f"{task}_{i:03d}.json"
            save_episode(ep, data_dir / name)
            manifest.append({"file": f"data/{name}", "task": task, "seed": seed})
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(manifest)} episodes to {data_dir}")
    return 0


def _load_manifest(run_dir: Path):
    path = run_dir / "manifest.json"
    if not path.exists():
        raise MotionError(f"no manifest at {path}; run `gen` first")
    manifest = json.loads(path.read_text())
    episodes = {}
    for entry in manifest:
        episodes.setdefault(entry["task"], []).append(load_episode(run_dir / entry["file"]))
    return episodes


def _splits(episodes_by_task: dict, seed: int):
    """Per-task 8:1:1 splits merged into train/val/test episode lists."""
    train, val, test = [], [], {}
    for task in sorted(episodes_by_task):
        tr, va, te = datagen.split_dataset(episodes_by_task[task], seed)
        train.extend(tr)
        val.extend(va)
        test[task] = te
    return train, val, test


def cmd_train(cfg: RunConfig) -> int:
    """Train the configured preset and write a checkpoint plus loss history."""
    run_dir = cfg.run_dir()
    episodes = _load_manifest(run_dir)
    train_eps, val_eps, _ = _splits(episodes, cfg.seed)
    train_ws = WindowSet(train_eps)
    val_ws = WindowSet(val_eps)
    tconf = forecast.preset_config(cfg.preset, cfg.train)
    model, history = forecast.train(forecast.ForecastModel.init(), train_ws, val_ws, tconf)
    ckpt = run_dir / f"checkpoint_{cfg.preset}.json"
    forecast.save_checkpoint(model, ckpt, preset=cfg.preset, seed=tconf.seed)
    with open(run_dir / f"history_{cfg.preset}.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss"])
        writer.writeheader()
        writer.writerows(history)
    print(f"trained preset {cfg.preset!r}; checkpoint at {ckpt}")
    return 0


def _forecaster_for(name: str, run_dir: Path):
    if name in BASELINES:
        return make_forecaster(name)
    ckpt = run_dir / f"checkpoint_{name}.json"
    if not ckpt.exists():
        raise MotionError(f"no checkpoint for model {name!r} at {ckpt}")
    return make_forecaster(forecast.load_checkpoint(ckpt))


def cmd_eval_forecast(cfg: RunConfig) -> int:
    """Forecasting metrics for the configured models on the test split."""
    run_dir = cfg.run_dir()
    episodes = _load_manifest(run_dir)
    _, _, test = _splits(episodes, cfg.seed)
    report = metrics.MetricReport()
    for name in cfg.models:
        if name == "worst":
            continue  # no point trajectory to score
        fc = _forecaster_for(name, run_dir)
        for task, eps in sorted(test.items()):
            ws = WindowSet(eps)
            report.forecasting[f"{name}/{task}"] = metrics.evaluate_forecaster(ws, fc)
    out = run_dir / "forecast_report.json"
    report.to_json(out)
    print(f"wrote {out}")
    return 0


def cmd_simulate(cfg: RunConfig, episode_path: str, model_name: str, out_path: str) -> int:
    """Play back one episode against the planner with the named forecaster."""
    episode = load_episode(episode_path)
    arm = ArmModel()
    spec = build_task_spec(episode, arm, dt=cfg.mppi.dt)
    fc = _forecaster_for(model_name, cfg.run_dir())
    log = run_episode(episode, fc, spec, cfg.weights, cfg.mppi, model=arm,
                      model_name=model_name)
    log.to_jsonl(out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_eval_plan(cfg: RunConfig) -> int:
    """Planning metrics via playback of the test split for each model."""
    run_dir = cfg.run_dir()
    episodes = _load_manifest(run_dir)
    _, _, test = _splits(episodes, cfg.seed)
    arm = ArmModel()
    report_path = run_dir / "plan_report.json"
    report = metrics.MetricReport()
    for task in ("stir", "handover"):
        eps = test.get(task, [])
        if not eps:
            continue
        spec_cache = [build_task_spec(ep, arm, dt=cfg.mppi.dt) for ep in eps]
        logs = {}
        names = list(dict.fromkeys(["cur", *cfg.models]))
        if task == "handover" and "worst" in names:
            names.remove("worst")  # no wrist target in a safety volume
        for name in names:
            fc = _forecaster_for(name, run_dir)
            logs[name] = [run_episode(ep, fc, spec, cfg.weights, cfg.mppi, model=arm,
                                      model_name=name)
                          for ep, spec in zip(eps, spec_cache)]
        for name in names:
            if task == "stir":
                report.planning[f"{name}/stir"] = metrics.stop_restart_times(
                    logs[name], logs["cur"])
            else:
                report.planning[f"{name}/handover"] = metrics.handover_metrics(
                    logs[name], logs["cur"], eps)
    report.to_json(report_path)
    print(f"wrote {report_path}")
    return 0


def cmd_lemma(n_instances: int, seed: int) -> int:
    """Verify the loss bounds on the fixed instance plus random sweeps."""
    fixed = metrics.lemma1_check(metrics.worked_toycmdp())
    print("fixed instance:", json.dumps({k: fixed[k] for k in
                                         ("eps_P", "eps_Q", "ell_theta",
                                          "bound_P", "bound_Q", "holds_P", "holds_Q")}))
    failures = 0 if (fixed["holds_P"] and fixed["holds_Q"]) else 1
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(n_instances):
        rep = metrics.lemma1_check(metrics.random_toycmdp(rng))
        if rep["holds_P"] and rep["holds_Q"]:
            passed += 1
        else:
            failures += 1
    print(f"random sweep: {passed}/{n_instances} passed")
    if failures:
        print(f"{failures} bound violations")
        return 3
    return 0


def cmd_report(cfg: RunConfig, log_paths) -> int:
    """Merge available reports and dump per-timestep CSVs from sim logs."""
    run_dir = cfg.run_dir()
    merged = metrics.MetricReport()
    for name, attr in (("forecast_report.json", "forecasting"),
                       ("plan_report.json", "planning")):
        path = run_dir / name
        if path.exists():
            part = metrics.MetricReport.from_json(path)
            getattr(merged, attr).update(getattr(part, attr))
    merged.to_json(run_dir / "report.json")
    for lp in log_paths:
        log = SimLog.from_jsonl(lp)
        out = Path(lp).with_suffix(".csv")
        with open(out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "wrist_error_mm", "branch_active", "min_sep_m"])
            for rec in log.records:
                werr = ""
                if rec.get("forecast_final_wrist") is not None and "gt_wrist" in rec:
                    werr = 1000.0 * float(np.linalg.norm(
                        np.asarray(rec["forecast_final_wrist"]) - np.asarray(rec["gt_wrist"])))
                writer.writerow([rec["step"], werr, rec.get("branch_active", ""),
                                 rec["min_sep"]])
        print(f"wrote {out}")
    print(f"wrote {run_dir / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="costcast")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="run-config JSON file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--preset", default=None)
        sp.add_argument("--out", default=None, help="output root directory")

    common(sub.add_parser("gen", help="generate the episode dataset"))
    common(sub.add_parser("train", help="train a forecaster preset"))
    common(sub.add_parser("eval-forecast", help="forecasting metrics on the test split"))
    sp = sub.add_parser("simulate", help="play back one episode against the planner")
    common(sp)
    sp.add_argument("--episode", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--log-out", required=True)
    common(sub.add_parser("eval-plan", help="planning metrics via playback"))
    sp = sub.add_parser("lemma-check", help="verify the loss bounds")
    sp.add_argument("--n-instances", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp = sub.add_parser("report", help="merge reports and dump per-timestep CSVs")
    common(sp)
    sp.add_argument("logs", nargs="*", help="sim-log JSONL files to convert to CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "lemma-check":
            return cmd_lemma(args.n_instances, args.seed)
        overrides = {k: v for k, v in (("seed", args.seed), ("preset", args.preset),
                                       ("out", args.out)) if v is not None}
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval-forecast":
            return cmd_eval_forecast(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.episode, args.model, args.log_out)
        if args.command == "eval-plan":
            return cmd_eval_plan(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.logs)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MotionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
