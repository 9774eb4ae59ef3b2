"""Command cores shared by the HTTP service and the CLI.

Each function is a pure input-paths-to-output-files transformation; the
service wraps them in request/response models and the CLI is a thin
client of the service.  Scientific outputs are byte-stable across
reruns; wall-clock facts are quarantined in manifest files.
"""

import glob
import json
import os
import time
from datetime import datetime, timezone
from typing import Optional

from evoscope.evolution import run_evolution
from evoscope.gateway import cost_report, load_price_table, zero_shot_best_of_n
from evoscope.geometry import (
    MdsConfig,
    mds_fit,
    oos_place_many,
    robust_minmax,
    stratified_sample,
)
from evoscope.metrics import generation_summaries, novelty_records, run_descriptors
from evoscope.operators import build_operator
from evoscope.stats import MIXED_SPECS, MODEL_SPECS, fit_mixed_spec, fit_ols_spec
from evoscope.workbench.config import (
    GatewayConfig,
    RunConfig,
    TaskConfig,
    build_task,
    config_hash,
)
from evoscope.workbench.io import (
    atomic_write_text,
    read_csv_table,
    read_trajectory,
    write_csv,
    write_json,
    write_trajectory,
)

import numpy as np

RUNS_COLUMNS = [
    "run_id", "task_id", "operator_id", "seed", "avg_novelty",
    "initial_novelty", "breakthrough_rate", "lrr", "pcd",
    "best_final_fitness", "best_final_perf", "offspring_attempts",
    "valid_attempts",
]
GENERATION_COLUMNS = [
    "run_id", "task_id", "operator_id", "seed", "generation", "mean_novelty",
    "max_novelty", "h_spatial", "h_fitness", "bandwidth",
    "breakthrough_count", "offspring_attempts", "valid_attempts",
    "best_so_far", "prob_breakthrough",
]
NOVELTY_COLUMNS = ["run_id", "individual_id", "raw_novelty", "normalized_novelty"]
MDS_COLUMNS = ["uid", "run_id", "individual_id", "generation", "x", "y",
               "fitness_norm", "is_base"]


def cmd_run(cfg: RunConfig) -> dict:
    """Execute every repetition and persist trajectories plus a manifest.

    Repetitions share the task instance (hence the initial population)
    and differ only in the evolution seed, which shifts by the
    repetition index.
    """
    task = build_task(cfg.task)
    spec = cfg.operator.to_spec()
    started = time.perf_counter()
    runs = []
    for rep in range(cfg.repetitions):
        gateway = cfg.gateway.build() if cfg.operator.uses_llm() else None
        evo_cfg = cfg.evolution.to_config(seed=cfg.evolution.seed + rep)
        operator = build_operator(spec, task, gateway)
        run_id = f"{task.task_id}__{spec.label()}__s{evo_cfg.seed}__r{rep}"
        traj = run_evolution(evo_cfg, task, operator, run_id)
        path = os.path.join(cfg.output_dir, f"{run_id}.jsonl")
        write_trajectory(traj, path, task_recipe=cfg.task.model_dump(mode="json"))
        entry = {
            "run_id": run_id,
            "path": path,
            "attempts": len(traj.records),
            "best_fitness": max(
                (r.raw_fitness for r in traj.records if r.valid),
                default=task.invalid_fitness,
            ),
        }
        if gateway is not None and gateway.ledger:
            ledger_path = os.path.join(cfg.output_dir, f"{run_id}.exchanges.jsonl")
            lines = [json.dumps(ex.to_dict(), sort_keys=True,
                                separators=(",", ":"))
                     for ex in gateway.ledger]
            atomic_write_text(ledger_path, "\n".join(lines) + "\n")
            entry["exchanges_path"] = ledger_path
            entry["gateway_calls"] = len(gateway.ledger)
        runs.append(entry)
    digest = config_hash(cfg)
    manifest = {
        "config_hash": digest,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": time.perf_counter() - started,
        "runs": [r["run_id"] for r in runs],
    }
    manifest_path = os.path.join(cfg.output_dir, "manifest.json")
    write_json(manifest_path, manifest)
    return {"runs": runs, "config_hash": digest, "manifest_path": manifest_path}


def _load_trajectories(pattern: str) -> list:
    files = sorted(glob.glob(pattern))
    if not files:
        raise ValueError(f"no trajectory files match {pattern!r} (zero matches)")
    out = []
    for path in files:
        traj, header = read_trajectory(path)
        if not header.get("task"):
            raise ValueError(f"{path}: header lacks the task recipe")
        task = build_task(TaskConfig.model_validate(header["task"]))
        out.append((traj, task, header))
    return out


def cmd_analyze(pattern: str, out_dir: str) -> dict:
    """Metrics over every trajectory matching the glob.

    Emits the per-run descriptor table (with per-instance min-max
    normalized best final fitness), per-generation summaries, and
    per-attempt novelty rows.  Distances always come from each run's own
    task; families are never pooled.
    """
    loaded = _load_trajectories(pattern)
    run_rows = []
    gen_rows = []
    nov_rows = []
    for traj, task, header in loaded:
        run_rows.append(run_descriptors(traj, task).to_dict())
        for row in generation_summaries(traj, task):
            merged = {
                "run_id": traj.run_id,
                "task_id": traj.task_id,
                "operator_id": traj.operator_id,
                "seed": traj.config.seed,
            }
            merged.update(row.to_dict())
            gen_rows.append(merged)
        for rec in novelty_records(traj, task):
            nov_rows.append({
                "run_id": traj.run_id,
                "individual_id": rec.individual_id,
                "raw_novelty": rec.raw,
                "normalized_novelty": rec.normalized,
            })
    # Per-instance normalization of the final performance column.
    by_task: dict = {}
    for row in run_rows:
        by_task.setdefault(row["task_id"], []).append(row["best_final_fitness"])
    for row in run_rows:
        values = by_task[row["task_id"]]
        lo, hi = min(values), max(values)
        span = hi - lo
        row["best_final_perf"] = (
            (row["best_final_fitness"] - lo) / span if span > 0.0 else 0.0
        )
    os.makedirs(out_dir, exist_ok=True)
    runs_csv = os.path.join(out_dir, "runs.csv")
    gen_csv = os.path.join(out_dir, "generation_summaries.csv")
    nov_csv = os.path.join(out_dir, "novelty.csv")
    write_csv(runs_csv, RUNS_COLUMNS, run_rows)
    write_csv(gen_csv, GENERATION_COLUMNS, gen_rows)
    write_csv(nov_csv, NOVELTY_COLUMNS, nov_rows)
    return {
        "runs_csv": runs_csv,
        "generation_csv": gen_csv,
        "novelty_csv": nov_csv,
        "n_runs": len(loaded),
    }


def cmd_stats(table_path: str, spec: str, out_path: Optional[str] = None) -> dict:
    """Fit one named model spec against a descriptor or generation CSV."""
    table = read_csv_table(table_path)
    if spec in MODEL_SPECS:
        result = fit_ols_spec(table, spec)
    elif spec in MIXED_SPECS:
        result = fit_mixed_spec(table, spec)
    else:
        known = sorted(MODEL_SPECS) + sorted(MIXED_SPECS)
        raise KeyError(f"unknown spec {spec!r}; expected one of {known}")
    payload = {"spec": spec, "result": result.to_dict()}
    if out_path:
        write_json(out_path, payload)
        payload["out_path"] = out_path
    return payload


def _mds_from_matrix(distances_path: str, out_dir: str, cfg: MdsConfig) -> dict:
    with open(distances_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    ids = payload["ids"]
    model = mds_fit(np.asarray(payload["matrix"], dtype=float), cfg, ids=ids)
    os.makedirs(out_dir, exist_ok=True)
    coords_csv = os.path.join(out_dir, "mds_coords.csv")
    rows = [
        {"uid": str(i), "run_id": "", "individual_id": "", "generation": "",
         "x": float(x), "y": float(y), "fitness_norm": "", "is_base": 1}
        for i, (x, y) in zip(ids, model.coords)
    ]
    write_csv(coords_csv, MDS_COLUMNS, rows)
    manifest = {
        "source": "distance-matrix",
        "n_points": len(ids),
        "stress": model.stress,
        "iterations": model.iterations,
    }
    write_json(os.path.join(out_dir, "mds_manifest.json"), manifest)
    return {"coords": [coords_csv], "manifest": manifest}


def cmd_mds(trajectories: Optional[str] = None,
            distances: Optional[str] = None,
            out_dir: str = ".",
            max_iter: int = 300, eps: float = 1e-3, seed: int = 42,
            cap_per_bucket: int = 60, total_cap: int = 4000) -> dict:
    """Embed trajectory genomes (or a raw distance matrix) into 2-D.

    With trajectories: per task instance, sample a base set stratified
    by (operator, generation), fit MDS on the base distance matrix, and
    place every remaining attempt by k-NN Shepard interpolation.
    """
    cfg = MdsConfig(max_iter=max_iter, eps=eps, seed=seed)
    if (trajectories is None) == (distances is None):
        raise ValueError("pass exactly one of trajectories or distances")
    if distances is not None:
        return _mds_from_matrix(distances, out_dir, cfg)

    loaded = _load_trajectories(trajectories)
    by_task: dict = {}
    for traj, task, header in loaded:
        by_task.setdefault(task.task_id, (task, []))[1].append(traj)
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"source": "trajectories", "tasks": {}}
    coord_files = []
    for task_id in sorted(by_task):
        task, trajs = by_task[task_id]
        entries = []
        for traj in trajs:
            for rec in traj.records:
                if not rec.valid:
                    continue
                entries.append({
                    "uid": f"{traj.run_id}:{rec.id}",
                    "run_id": traj.run_id,
                    "individual_id": rec.id,
                    "generation": rec.generation,
                    "operator_id": traj.operator_id,
                    "genome": task.parse_genome(rec.canon),
                    "fitness": rec.raw_fitness,
                })
        buckets: dict = {}
        for k, e in enumerate(entries):
            buckets.setdefault((e["operator_id"], e["generation"]), []).append(k)
        base_idx = stratified_sample(buckets, cap_per_bucket, total_cap, seed)
        base = [entries[k] for k in base_idx]
        n_base = len(base)
        dist = np.zeros((n_base, n_base))
        for i in range(n_base):
            for j in range(i + 1, n_base):
                d = task.distance(base[i]["genome"], base[j]["genome"])
                dist[i, j] = dist[j, i] = d
        model = mds_fit(dist, cfg, ids=[e["uid"] for e in base])
        base_uids = {e["uid"] for e in base}
        rest = [e for e in entries if e["uid"] not in base_uids]
        if rest:
            d_rest = np.array([
                [task.distance(e["genome"], b["genome"]) for b in base]
                for e in rest
            ])
            placed = oos_place_many(d_rest, model, k=min(8, n_base))
        else:
            placed = np.zeros((0, 2))
        fitness_norm = robust_minmax([e["fitness"] for e in entries])
        norm_by_uid = {e["uid"]: f for e, f in zip(entries, fitness_norm)}
        coords_by_uid = {e["uid"]: xy for e, xy in zip(base, model.coords)}
        coords_by_uid.update({e["uid"]: xy for e, xy in zip(rest, placed)})
        rows = []
        for e in entries:
            x, y = coords_by_uid[e["uid"]]
            rows.append({
                "uid": e["uid"],
                "run_id": e["run_id"],
                "individual_id": e["individual_id"],
                "generation": e["generation"],
                "x": float(x),
                "y": float(y),
                "fitness_norm": float(norm_by_uid[e["uid"]]),
                "is_base": int(e["uid"] in base_uids),
            })
        path = os.path.join(out_dir, f"mds_{task_id}.csv")
        write_csv(path, MDS_COLUMNS, rows)
        coord_files.append(path)
        manifest["tasks"][task_id] = {
            "n_points": len(entries),
            "n_base": n_base,
            "stress": model.stress,
            "iterations": model.iterations,
        }
    write_json(os.path.join(out_dir, "mds_manifest.json"), manifest)
    return {"coords": coord_files, "manifest": manifest}


def cmd_zeroshot(task_cfg: TaskConfig, gateway_cfg: GatewayConfig, model: str,
                 out_path: Optional[str] = None) -> dict:
    """Best-of-N temperature-swept probe against one task instance."""
    task = build_task(task_cfg)
    gateway = gateway_cfg.build()
    report = zero_shot_best_of_n(task, model, gateway)
    payload = report.to_dict()
    if out_path:
        write_json(out_path, payload)
    return payload


def cmd_cost(ledger_pattern: str, prices_path: str,
             out_path: Optional[str] = None) -> dict:
    """Aggregate exchange ledgers into the per-model cost table."""
    files = sorted(glob.glob(ledger_pattern))
    if not files:
        raise ValueError(f"no ledger files match {ledger_pattern!r}")
    exchanges = []
    for path in files:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    exchanges.append(json.loads(line))
    report = cost_report(exchanges, load_price_table(prices_path))
    payload = report.to_dict()
    if out_path:
        write_json(out_path, payload)
    return payload
