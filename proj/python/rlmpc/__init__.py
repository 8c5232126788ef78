"""Learning-based tuning of a mobile-robot NMPC.

The compiled core exposes the controller, the learning rules and training
runs; ``read_table`` loads a run directory's CSV logs under their schema.
"""

import csv
import math
from pathlib import Path

from ._core import (
    EPISODES_COLUMNS,
    SUMMARY_COLUMNS,
    THETA_COLUMNS,
    ControlInput,
    Controller,
    DivergenceError,
    EpisodeSummary,
    Obstacle,
    QEvaluation,
    RobotState,
    RunConfig,
    Scenario,
    TrainingLog,
    checkpoint_theta,
    es_update,
    evaluate,
    ges_update,
    obstacle_value,
    resume,
    step_rk4,
    theta_initial,
    theta_names,
    train,
    valid_algorithm_names,
)

_SCHEMAS = {
    "episodes": EPISODES_COLUMNS,
    "theta": THETA_COLUMNS,
    "summary": SUMMARY_COLUMNS,
}


def read_table(run_dir, name):
    """Columns of ``<run_dir>/<name>.csv`` as lists of floats (empty fields become NaN).

    Raises ValueError naming the first missing column.
    """
    if name not in _SCHEMAS:
        raise ValueError(f"unknown table {name!r}; expected one of {sorted(_SCHEMAS)}")
    path = Path(run_dir) / f"{name}.csv"
    with path.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, [])
        for column in _SCHEMAS[name]:
            if column not in header:
                raise ValueError(f"{path}: missing column {column!r}")
        columns = {c: [] for c in header}
        for row in reader:
            for c, field in zip(header, row):
                columns[c].append(float(field) if field else math.nan)
    return columns


__all__ = [name for name in dir() if not name.startswith("_") and name not in ("csv", "math", "Path")]
