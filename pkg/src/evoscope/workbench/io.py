"""Trajectory persistence and byte-stable report files.

Trajectories are JSONL: a header line carrying the schema version and
the run's provenance (including the task recipe, so analysis can rebuild
distances), then one line per attempt in id order.  Scientific outputs
never contain timestamps; wall-clock facts live in the manifest only.
"""

import csv
import json
import os
import tempfile
from typing import Optional

from evoscope.evolution import EvolutionConfig, Individual, Trajectory

SCHEMA_VERSION = 1


class SchemaVersionError(ValueError):
    """File written under a different trajectory schema."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file and rename, so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_header(traj: Trajectory, task_recipe: Optional[dict] = None) -> dict:
    cfg = traj.config
    return {
        "schema": SCHEMA_VERSION,
        "kind": "trajectory",
        "run_id": traj.run_id,
        "task_id": traj.task_id,
        "operator_id": traj.operator_id,
        "task": task_recipe,
        "evolution": {
            "n_init": cfg.n_init,
            "elite_fraction": cfg.elite_fraction,
            "parents_per_prompt": cfg.parents_per_prompt,
            "offspring_per_generation": cfg.offspring_per_generation,
            "capacity": cfg.capacity,
            "generations": cfg.generations,
            "seed": cfg.seed,
        },
    }


def record_row(rec: Individual) -> dict:
    # raw_novelty stays null at run time; it needs the full attempt scan
    # and is filled post-hoc into the novelty table by analysis.
    return {
        "id": rec.id,
        "generation": rec.generation,
        "canon": rec.canon,
        "raw_fitness": rec.raw_fitness,
        "valid": rec.valid,
        "parent_ids": list(rec.parent_ids),
        "operator_tag": rec.operator_tag,
        "error": rec.error,
        "exchange_index": rec.exchange_index,
        "raw_novelty": None,
    }


def write_trajectory(traj: Trajectory, path: str,
                     task_recipe: Optional[dict] = None) -> None:
    lines = [_dumps(trajectory_header(traj, task_recipe))]
    lines.extend(_dumps(record_row(r)) for r in traj.records)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory(path: str) -> tuple:
    """Returns (Trajectory, header dict). Genomes stay as canon strings."""
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line]
    if not lines:
        raise SchemaVersionError(f"{path}: empty trajectory file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema {header.get('schema')!r}, expected {SCHEMA_VERSION}"
        )
    evo = header["evolution"]
    cfg = EvolutionConfig(**evo)
    records = []
    previous_id = -1
    for line in lines[1:]:
        row = json.loads(line)
        if row["id"] != previous_id + 1:
            raise SchemaVersionError(
                f"{path}: attempt ids not dense at {row['id']}"
            )
        previous_id = row["id"]
        records.append(Individual(
            id=row["id"],
            genome=None,
            canon=row["canon"],
            raw_fitness=row["raw_fitness"],
            generation=row["generation"],
            parent_ids=tuple(row["parent_ids"]),
            valid=row["valid"],
            operator_tag=row["operator_tag"],
            error=row.get("error"),
            exchange_index=row.get("exchange_index"),
        ))
    traj = Trajectory(
        run_id=header["run_id"],
        task_id=header["task_id"],
        operator_id=header["operator_id"],
        config=cfg,
        records=records,
    )
    return traj, header


def write_csv(path: str, columns: list, rows: list) -> None:
    """Deterministic CSV: fixed column order, repr-exact floats, LF ends."""
    def cell(v):
        if isinstance(v, float):
            return repr(v)
        if v is None:
            return ""
        return v

    import io as _io
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([cell(row[c]) for c in columns])
    atomic_write_text(path, buf.getvalue())


def read_csv_table(path: str) -> dict:
    """CSV back into a column dict, floats where every cell parses."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        return {name: [] for name in reader.fieldnames or []}
    table: dict = {name: [r[name] for r in rows] for name in reader.fieldnames}
    for name, values in table.items():
        try:
            table[name] = [float(v) for v in values]
        except ValueError:
            pass
    return table


def write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
