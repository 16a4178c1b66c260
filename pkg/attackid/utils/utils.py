import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from ..modules.dynamics import SystemState, Trajectory
from ..pipelines.pipeline_identification import StepRecord
from .errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

SUPPORT_FIELDS = {"true_support", "support_equality", "support_relaxed"}
INT_FIELDS = {"t", "cardinality_equality", "cardinality_relaxed", "enumerated_equality", "enumerated_relaxed",
              "excess_equality", "excess_relaxed"}
BOOL_FIELDS = {"detected", "superset_correct", "exact_correct", "applicable", "condition_thm1", "condition_thm2",
               "true_attack_feasible_relaxed", "lemma2_holds"}
STR_FIELDS = {"reason"}
NAN = "nan"


def _format(value) -> str:
    if value is None:
        return NAN
    if isinstance(value, tuple):
        return ";".join(str(v) for v in value)
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return NAN if math.isnan(value) else repr(float(value))
    return str(value)


def _parse(name, text):
    if name in STR_FIELDS:
        return text
    if name in SUPPORT_FIELDS:
        return tuple(int(v) for v in text.split(";")) if text else ()
    if text == NAN:
        return None
    if name in BOOL_FIELDS:
        if text not in ("True", "False"):
            raise ValueError(f"{name}: expected True or False, got '{text}'")
        return text == "True"
    if name in INT_FIELDS:
        return int(text)
    return float(text)


def records_frame(records) -> pd.DataFrame:
    """StepRecords as strings: supports `;`-joined bus ids, floats in round-trip precision, None as nan."""
    names = StepRecord.field_names()
    rows = [[_format(getattr(r, name)) for name in names] for r in records]
    return pd.DataFrame(rows, columns=names, dtype=object)


def read_records(path) -> list:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    names = StepRecord.field_names()
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise ConfigError(f"missing columns {missing}", path=path)
    records = []
    for i, row in enumerate(frame.itertuples(index=False)):
        values = row._asdict()
        try:
            records.append(StepRecord(**{name: _parse(name, values[name]) for name in names}))
        except ValueError as exc:
            raise ConfigError(str(exc), path=path, field=f"row {i + 1}") from exc
    return records


def write_results(records, tables, out_dir, series=None, seed=None, summary=None):
    """records.csv and tables.json of one series.

    Args:
        records (list of StepRecord): in step order
        tables (list of FourfoldTable): written in the given order
        out_dir (str): created if missing
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.csv"
    records_frame(records).to_csv(records_path, index=False)
    tables_path = out_dir / "tables.json"
    with open(tables_path, "w") as f:
        json.dump({
            "series": series,
            "seed": seed,
            "tables": [table.to_dict() for table in tables],
            "summary": summary or {},
        }, f, indent=2, default=json_default)
    logger.info(f"wrote {records_path} and {tables_path}")
    return records_path, tables_path


def save_trajectory_csv(trajectory: Trajectory, save_path):
    Path(save_path).parent.mkdir(parents=True, exist_ok=True)
    trajectory.to_frame().to_csv(save_path, index=False, na_rep=NAN)


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("file does not exist", path=path)
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON ({exc.msg} at line {exc.lineno})", path=path) from exc


def _vector(value, n, path, field):
    try:
        out = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError("expected a list of numbers", path=path, field=field) from exc
    if out.shape != (n,):
        raise ConfigError(f"expected {n} entries, got shape {out.shape}", path=path, field=field)
    if not np.all(np.isfinite(out)):
        raise ConfigError("entries must be finite", path=path, field=field)
    return out


def parse_attack(value, model, path=None, field="attack") -> np.ndarray:
    """An attack as a full list of d_u deviations or as a {bus id: deviation} mapping."""
    if isinstance(value, dict):
        delta_a = np.zeros(model.d_u)
        for key, v in value.items():
            try:
                bus = int(key)
            except ValueError as exc:
                raise ConfigError(f"bus id '{key}' is not an integer", path=path, field=field) from exc
            if not 1 <= bus <= model.n_bus:
                raise ConfigError(f"unknown bus {bus}", path=path, field=f"{field}.{key}")
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError("expected a number", path=path, field=f"{field}.{key}")
            delta_a[bus - 1] = float(v)
        return delta_a
    return _vector(value, model.d_u, path, field)


def load_attack(path, model) -> np.ndarray:
    """{"attack": [...] | {"<bus id>": value}}"""
    data = read_json(path)
    if not isinstance(data, dict) or "attack" not in data:
        raise ConfigError("missing key", path=path, field="attack")
    return parse_attack(data["attack"], model, path)


def load_schedule(path, model) -> dict:
    """{"schedule": {"<step>": attack}} -> {step: da}"""
    data = read_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("schedule"), dict):
        raise ConfigError("missing mapping", path=path, field="schedule")
    schedule = {}
    for key, value in data["schedule"].items():
        try:
            step = int(key)
        except ValueError as exc:
            raise ConfigError(f"step '{key}' is not an integer", path=path, field="schedule") from exc
        schedule[step] = parse_attack(value, model, path, f"schedule.{key}")
    return schedule


def load_state(path, model) -> SystemState:
    """{"theta": [...], "omega": [...]}; omega defaults to zeros."""
    data = read_json(path)
    if not isinstance(data, dict) or "theta" not in data:
        raise ConfigError("missing key", path=path, field="theta")
    theta = _vector(data["theta"], model.n_bus, path, "theta")
    omega = _vector(data.get("omega", [0.0] * model.n_bus), model.n_bus, path, "omega")
    return SystemState(theta=theta, omega=omega)


def dump_system(S, b, save_path, blocks=None, **extra):
    """(S, b) and optionally the diagonal blocks as JSON, the input of the solver-only entry point.

    `extra` entries (column map, scales) are written alongside and ignored by `load_system`.
    """
    Path(save_path).parent.mkdir(parents=True, exist_ok=True)
    data = {"S": np.asarray(S).tolist(), "b": np.asarray(b).tolist()}
    if blocks is not None:
        data["blocks"] = [[rows.start, rows.stop, cols.start, cols.stop] for rows, cols in blocks]
    data.update(extra)
    with open(save_path, "w") as f:
        json.dump(data, f, indent=2)


def load_system(path):
    """Inverse of `dump_system`: (S, b, blocks or None)."""
    data = read_json(path)
    for key in ("S", "b"):
        if not isinstance(data, dict) or key not in data:
            raise ConfigError("missing key", path=path, field=key)
    try:
        S = np.asarray(data["S"], dtype=float)
        b = np.asarray(data["b"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError("S and b must be numeric arrays", path=path) from exc
    if S.ndim != 2 or b.ndim != 1 or S.shape[0] != b.shape[0]:
        raise DimensionError(f"{path}: S has shape {S.shape} and b has shape {b.shape}")
    blocks = None
    if data.get("blocks") is not None:
        blocks = [(slice(r0, r1), slice(c0, c1)) for r0, r1, c0, c1 in data["blocks"]]
        cols = sorted((c.start, c.stop) for _, c in blocks)
        if cols and (cols[0][0] != 0 or cols[-1][1] != S.shape[1]
                     or any(a[1] != c[0] for a, c in zip(cols, cols[1:]))):
            raise DimensionError(f"{path}: blocks do not tile the {S.shape[1]} columns of S")
    return S, b, blocks


def json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
