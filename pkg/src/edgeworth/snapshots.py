"""
Artifacts on disk: snapshot CSVs, tables, plot data, reports and the manifest.

Floats are written with 17 significant digits, which is enough for every
double to read back bit for bit.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from edgeworth.ensemble import Snapshot
from edgeworth.errors import ArtifactError
from edgeworth.fokker_planck import FPSnapshot

logger = logging.getLogger(__name__)

AGENT_COLUMNS = ["t", "agent_id", "x", "y"]
PARTICLE_COLUMNS = ["tau", "particle_id", "v", "w"]
FULL_PRECISION = 17

PathLike = Union[str, Path]


def _float_format(precision: int) -> str:
    return f"%.{precision}g"


def _write_frame(frame: pd.DataFrame, path: PathLike, precision: int):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=_float_format(precision), lineterminator="\n")
    except OSError as e:
        raise ArtifactError(f"could not write {path}: {e}") from e


def write_snapshot(path: PathLike, snapshot: Union[Snapshot, FPSnapshot], precision: int = FULL_PRECISION):
    """One row per agent (`t,agent_id,x,y`) or per particle (`tau,particle_id,v,w`)."""
    if isinstance(snapshot, FPSnapshot):
        time, first, second, columns = snapshot.tau, snapshot.v, snapshot.w, PARTICLE_COLUMNS
    else:
        time, first, second, columns = snapshot.t, snapshot.x, snapshot.y, AGENT_COLUMNS
    frame = pd.DataFrame({
        columns[0]: np.full(len(first), float(time)),
        columns[1]: np.arange(len(first)),
        columns[2]: np.asarray(first, dtype=np.float64),
        columns[3]: np.asarray(second, dtype=np.float64),
    })
    _write_frame(frame, path, precision)


def _read_frame(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactError(f"could not read snapshot {path}: {e}") from e


def read_snapshot(path: PathLike) -> Union[Snapshot, FPSnapshot]:
    frame = _read_frame(path)
    columns = list(frame.columns)
    if columns not in (AGENT_COLUMNS, PARTICLE_COLUMNS):
        raise ArtifactError(f"{path}: unexpected header {','.join(columns)}")
    if frame.empty:
        raise ArtifactError(f"{path}: snapshot has no rows")
    if frame.isna().any().any():
        raise ArtifactError(f"{path}: snapshot has missing values")
    frame = frame.sort_values(columns[1], kind="stable")
    time = float(frame[columns[0]].iloc[0])
    first = frame[columns[2]].to_numpy(dtype=np.float64)
    second = frame[columns[3]].to_numpy(dtype=np.float64)
    if columns == PARTICLE_COLUMNS:
        return FPSnapshot(time, first, second)
    return Snapshot(time, first, second)


def read_agents(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Holdings (x, y) of an agent snapshot, to seed a new run."""
    snapshot = read_snapshot(path)
    if isinstance(snapshot, FPSnapshot):
        raise ArtifactError(f"{path}: expected agent holdings (x, y), found particles (v, w)")
    return snapshot.x, snapshot.y


def write_table(path: PathLike, columns: Mapping[str, Sequence], precision: int = FULL_PRECISION):
    _write_frame(pd.DataFrame(dict(columns)), path, precision)


def read_table(path: PathLike) -> pd.DataFrame:
    return _read_frame(path)


def write_plot(path: PathLike, xs: Iterable[float], ys: Iterable[float], precision: int = FULL_PRECISION):
    """Two whitespace-separated columns, one point per line."""
    data = np.column_stack([np.asarray(list(xs), dtype=np.float64), np.asarray(list(ys), dtype=np.float64)])
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, data, fmt=_float_format(precision), delimiter=" ")
    except OSError as e:
        raise ArtifactError(f"could not write {path}: {e}") from e


def write_report(path: PathLike, sections: Mapping[str, Mapping[str, object]]):
    """Plain `key: value` lines grouped under `[section]` headers."""
    lines = []
    for title, entries in sections.items():
        lines.append(f"[{title}]")
        lines.extend(f"{key}: {value}" for key, value in entries.items())
        lines.append("")
    _write_text(path, "\n".join(lines))


def write_manifest(path: PathLike, manifest: Dict[str, object]):
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: PathLike) -> Dict[str, object]:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"could not read manifest {path}: {e}") from e


def _write_text(path: PathLike, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise ArtifactError(f"could not write {path}: {e}") from e
    logger.debug("wrote %s", path)
