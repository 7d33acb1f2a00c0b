"""Simulation batches, detection-file tracking and CSV output."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .baseline import run_baseline
from .engine import FilterDivergence
from .gaussbeta import constant_velocity_model
from .ospa import OspaParams, ospa
from .rfs import BetaDist, GaussBeta, Gaussian
from .robust import (
    ClutterModel,
    ObjectBirth,
    ObjectModel,
    RobustConfig,
    RobustFilterState,
    estimate_clutter_rate,
    estimate_detection_probability,
    extract_tracks,
    robust_step,
    structural_violations,
)
from .scenario import DEFAULT_BIRTH_MEANS, ScenarioConfig, preset, simulate


class ConfigError(ValueError):
    exit_code = 1


class DataError(ValueError):
    exit_code = 2


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "runs": 1,
    "scenario": {
        "preset": None,
        "duration": 100,
        "region": [[-1000.0, 1000.0], [-1000.0, 1000.0]],
        "p_survival": 0.99,
        "clutter_rate": [[1, 10.0]],
        "detection_prob": [[1, 0.97]],
        "births": None,
    },
    "model": {"T": 1.0, "v_f": 5.0, "v_r": 3.0},
    "filter": {
        "max_components": 1000,
        "min_weight": 1e-15,
        "sampler": "gibbs",
        "gibbs_sweeps": 1000,
        "estimator": "mb",
        "threshold": 0.5,
        "beta_inflation": 1.2,
        "p_survival": 0.99,
        "birth_beta": [9.0, 1.0],
        "births": None,
    },
    "clutter": {
        "p_survival": 0.9,
        "p_detect": 0.9,
        "birth_prob": 0.5,
        "n_birth_initial": 120,
        "n_birth": 30,
        "volume": None,
    },
    "ospa": {"c": 300.0, "p": 1.0},
}

PRESET_PROFILES = {
    1: ([[1, 10.0]], [[1, 0.97]]),
    2: ([[1, 10.0]], [[1, 0.85]]),
    3: ([[1, 70.0]], [[1, 0.97]]),
    4: ([[1, 25.0], [51, 35.0]], [[1, 0.95]]),
}


def _default_births() -> list[dict]:
    return [{"r": 0.03, "mean": list(m), "cov_diag": [50.0, 50.0, 50.0, 50.0]} for m in DEFAULT_BIRTH_MEANS]


def merge_config(user: dict | None) -> dict:
    """Overlay a user document on the defaults; unknown keys are rejected."""
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in (user or {}).items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a mapping")
            for sub, v in value.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                cfg[key][sub] = v
        else:
            cfg[key] = value
    scn = cfg["scenario"]
    if scn["preset"] is not None:
        if scn["preset"] not in PRESET_PROFILES:
            raise ConfigError(f"unknown scenario preset {scn['preset']!r}; expected 1-4")
        scn["clutter_rate"], scn["detection_prob"] = copy.deepcopy(PRESET_PROFILES[scn["preset"]])
    for section in ("scenario", "filter"):
        if cfg[section]["births"] is None:
            cfg[section]["births"] = _default_births()
    if cfg["clutter"]["volume"] is None:
        (x0, x1), (y0, y1) = scn["region"]
        cfg["clutter"]["volume"] = float((x1 - x0) * (y1 - y0))
    if not isinstance(cfg["runs"], int) or cfg["runs"] < 1:
        raise ConfigError("runs must be an integer >= 1")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _gaussians(births: list[dict]):
    out = []
    for b in births:
        mean = np.asarray(b["mean"], dtype=float)
        cov = np.diag(np.asarray(b["cov_diag"], dtype=float))
        out.append((float(b["r"]), Gaussian(mean, cov)))
    return out


def build_scenario(cfg: dict) -> ScenarioConfig:
    s, m = cfg["scenario"], cfg["model"]
    try:
        return ScenarioConfig(
            duration=int(s["duration"]),
            region=tuple(tuple(float(v) for v in axis) for axis in s["region"]),
            dynamics=constant_velocity_model(m["T"], m["v_f"], m["v_r"]),
            births=tuple(_gaussians(s["births"])),
            p_survival=float(s["p_survival"]),
            detection_prob=tuple(tuple(p) for p in s["detection_prob"]),
            clutter_rate=tuple(tuple(p) for p in s["clutter_rate"]),
            name=f"scenario-{s['preset']}" if s["preset"] else "custom",
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def build_filter(cfg: dict, seed: int) -> RobustConfig:
    f, c, m = cfg["filter"], cfg["clutter"], cfg["model"]
    try:
        beta = BetaDist(*map(float, f["birth_beta"]))
        births = tuple(ObjectBirth(r, GaussBeta(g, beta)) for r, g in _gaussians(f["births"]))
        objects = ObjectModel(constant_velocity_model(m["T"], m["v_f"], m["v_r"]), float(f["p_survival"]),
                              births, float(f["beta_inflation"]))
        clutter = ClutterModel(float(c["p_survival"]), float(c["p_detect"]), float(c["birth_prob"]),
                               int(c["n_birth_initial"]), int(c["n_birth"]), float(c["volume"]))
        return RobustConfig(objects, clutter, int(f["max_components"]), float(f["min_weight"]), f["sampler"],
                            int(f["gibbs_sweeps"]), f["estimator"], float(f["threshold"]), int(seed))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid filter config: {exc}") from exc


# --------------------------------------------------------------------------
# one filtering pass


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class StepRecord:
    step: int
    n_meas: int
    est_cardinality: int
    lambda_hat: float
    pd_hat: float
    wall_time: float
    tracks: list


def filter_scans(scans, config: RobustConfig, timing: bool = False, check: bool = False) -> tuple[list[StepRecord], list]:
    """Run the adaptive filter over ``scans``; returns per-step records and invariant violations."""
    state = RobustFilterState.initial(config)
    records, violations = [], []
    for Z in scans:
        t0 = time.perf_counter()
        state = robust_step(state, Z)
        est = extract_tracks(state)
        lam = estimate_clutter_rate(state)
        pd = estimate_detection_probability(state, est)
        wall = time.perf_counter() - t0 if timing else math.nan
        if check:
            violations.extend((state.step, v) for v in structural_violations(state, len(Z)))
        tracks = [(e.label, np.asarray(e.mean, dtype=float), e.existence) for e in sorted(est, key=lambda e: e.label)]
        records.append(StepRecord(state.step, len(Z), len(est), lam, pd, wall, tracks))
    return records, violations


def _positions(tracks) -> np.ndarray:
    return np.array([x[:2] for _, x, _ in tracks]).reshape(len(tracks), 2)


def run_one(args) -> dict:
    """One Monte-Carlo run: simulate, filter, score. Picklable for process pools."""
    cfg, run, opts = args
    seed = cfg["seed"] + run
    scenario = build_scenario(cfg)
    fcfg = build_filter(cfg, seed)
    params = OspaParams(**cfg["ospa"])
    truth = simulate(scenario, seed)
    out = {"run": run, "seed": seed, "status": "ok", "series": [], "tracks": [], "violations": [],
           "detections": truth.measurements if opts.get("write_detections") else None}
    try:
        records, violations = filter_scans(truth.measurements, fcfg, opts.get("timing", False), opts.get("check", False))
    except FilterDivergence:
        out["status"] = "diverged"
        return out
    out["violations"] = violations
    base = None
    if opts.get("baseline"):
        try:
            base = run_baseline(truth.measurements, fcfg.objects, scenario, fcfg.budget, fcfg.estimator, fcfg.threshold)
        except FilterDivergence:
            out["status"] = "baseline-diverged"
    for rec in records:
        k = rec.step
        truth_xy = truth.positions(k)
        row = {
            "run": run, "step": k, "n_meas": rec.n_meas, "true_cardinality": len(truth_xy),
            "est_cardinality": rec.est_cardinality, "lambda_hat": rec.lambda_hat, "pd_hat": rec.pd_hat,
            "true_lambda": scenario.true_lambda(k), "true_pd": scenario.true_pd(k),
        }
        row.update(zip(("ospa_total", "ospa_loc", "ospa_card"), ospa(_positions(rec.tracks), truth_xy, params.c, params.p)))
        if opts.get("baseline"):
            if base is not None:
                bt = base[k - 1]
                bxy = np.array([e.mean[:2] for e in bt]).reshape(len(bt), 2)
                row["base_cardinality"] = len(bt)
                row.update(zip(("base_ospa_total", "base_ospa_loc", "base_ospa_card"),
                               ospa(bxy, truth_xy, params.c, params.p)))
            else:
                row.update(dict.fromkeys(("base_cardinality", "base_ospa_total", "base_ospa_loc", "base_ospa_card"), math.nan))
        row["wall_time"] = rec.wall_time
        out["series"].append(row)
        out["tracks"].extend(_track_rows(run, k, rec.tracks))
    return out


def _track_rows(run, step, tracks):
    rows = []
    for label, x, r in tracks:
        rows.append({"run": run, "step": step, "label_birth": label.birth_time, "label_index": label.birth_index,
                     "x": x[0], "y": x[1], "xdot": x[2], "ydot": x[3], "existence": r})
    return rows


TRACK_COLUMNS = ["run", "step", "label_birth", "label_index", "x", "y", "xdot", "ydot", "existence"]


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def aggregate(series: list[dict], columns: list[str]) -> list[dict]:
    """Across-run mean of every numeric column, per step."""
    by_step: dict[int, list[dict]] = {}
    for row in series:
        by_step.setdefault(row["step"], []).append(row)
    out = []
    for step in sorted(by_step):
        rows = by_step[step]
        agg = {"step": step, "n_runs": len(rows)}
        for c in columns:
            agg[c] = float(np.mean([r[c] for r in rows]))
        out.append(agg)
    return out


def run_simulation(cfg: dict, out_dir, baseline: bool = False, workers: int = 1, timing: bool = False,
                   write_detections: bool = False, check: bool = False) -> dict:
    """Monte-Carlo batch; returns a summary with per-run status."""
    out = _prepare_out(out_dir)
    opts = {"baseline": baseline, "timing": timing, "write_detections": write_detections, "check": check}
    jobs = [(cfg, run, opts) for run in range(cfg["runs"])]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(j) for j in jobs]
    results.sort(key=lambda r: r["run"])

    series = [row for r in results for row in r["series"]]
    tracks = [row for r in results for row in r["tracks"]]
    columns = ["run", "step", "n_meas", "true_cardinality", "est_cardinality", "lambda_hat", "pd_hat",
               "ospa_total", "ospa_loc", "ospa_card", "true_lambda", "true_pd"]
    if baseline:
        columns += ["base_cardinality", "base_ospa_total", "base_ospa_loc", "base_ospa_card"]
    columns.append("wall_time")
    _write(out / "series.csv", _csv_text(series, columns))
    _write(out / "tracks.csv", _csv_text(tracks, TRACK_COLUMNS))
    agg_cols = [c for c in columns if c not in ("run", "step", "wall_time")]
    _write(out / "aggregate.csv", _csv_text(aggregate(series, agg_cols), ["step", "n_runs"] + agg_cols))
    run_rows = [{"run": r["run"], "seed": r["seed"], "status": r["status"]} for r in results]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "seed", "status"])
    for r in run_rows:
        w.writerow([r["run"], r["seed"], r["status"]])
    _write(out / "runs.csv", buf.getvalue())
    _write(out / "config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    if write_detections:
        for r in results:
            if r["detections"] is not None:
                _write(out / f"detections_run{r['run']}.csv", format_detections(r["detections"]))
    return {"results": results, "n_diverged": sum(r["status"] == "diverged" for r in results)}


# --------------------------------------------------------------------------
# detection files


def format_detections(scans) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "x", "y"])
    for k, Z in enumerate(scans, start=1):
        for z in np.asarray(Z).reshape(-1, 2):
            w.writerow([k, repr(float(z[0])), repr(float(z[1]))])
    return buf.getvalue()


def read_detections(path, duration: int | None = None) -> list[np.ndarray]:
    """Parse a ``step,x,y`` file into per-step scans (steps are 1-based).

    Steps absent from the file are empty scans. The scan count is
    ``duration`` when given, otherwise the largest step in the file.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read detections {path}: {exc.strerror}") from exc
    if not lines or [h.strip() for h in lines[0].split(",")] != ["step", "x", "y"]:
        raise DataError(f"{path}:1: expected header 'step,x,y'")
    by_step: dict[int, list] = {}
    last = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 3:
                raise ValueError
            step = int(parts[0])
            x, y = float(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed row {line!r}") from None
        if step < 1 or not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{path}:{lineno}: malformed row {line!r}")
        if step < last:
            raise DataError(f"{path}:{lineno}: step {step} follows step {last}; steps must be non-decreasing")
        last = step
        by_step.setdefault(step, []).append((x, y))
    n = duration if duration is not None else last
    if last > n:
        raise DataError(f"{path}: step {last} exceeds the declared duration {n}")
    return [np.array(by_step.get(k, []), dtype=float).reshape(-1, 2) for k in range(1, n + 1)]


def run_track_file(cfg: dict, detections, out_dir, timing: bool = False) -> list[StepRecord]:
    out = _prepare_out(out_dir)
    scans = read_detections(detections, int(cfg["scenario"]["duration"]))
    fcfg = build_filter(cfg, cfg["seed"])
    try:
        records, _ = filter_scans(scans, fcfg, timing)
    except FilterDivergence as exc:
        raise FilterDivergence(f"filter divergence on {detections}") from exc
    series = [{"step": r.step, "n_meas": r.n_meas, "est_cardinality": r.est_cardinality, "lambda_hat": r.lambda_hat,
               "pd_hat": r.pd_hat, "wall_time": r.wall_time} for r in records]
    tracks = [row for r in records for row in _track_rows(0, r.step, r.tracks)]
    _write(out / "series.csv", _csv_text(series, ["step", "n_meas", "est_cardinality", "lambda_hat", "pd_hat", "wall_time"]))
    _write(out / "tracks.csv", _csv_text(tracks, TRACK_COLUMNS))
    _write(out / "config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return records


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
