"""Reading CMAPSS trajectory files and attaching RUL labels.

A CMAPSS table is whitespace-separated text with 26 columns per row:
unit id, cycle, three operational settings and 21 sensor channels.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

N_SETTINGS = 3
N_SENSORS = 21
N_COLUMNS = 2 + N_SETTINGS + N_SENSORS
DEFAULT_RUL_CAP = 125.0

DATASET_IDS = ("FD001", "FD002", "FD003", "FD004")

# (train engines, test engines)
ENGINE_COUNTS = {
    "FD001": (100, 100),
    "FD002": (260, 259),
    "FD003": (100, 100),
    "FD004": (249, 248),
}


class CMAPSSParseError(ValueError):
    """Malformed trajectory table. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BundleStructureError(ValueError):
    pass


@dataclass
class EngineTrajectory:
    engine_id: int
    cycles: np.ndarray
    settings: np.ndarray
    sensors: np.ndarray

    def __post_init__(self):
        self.cycles = np.asarray(self.cycles, dtype=np.int64)
        self.settings = np.asarray(self.settings, dtype=np.float64).reshape(-1, N_SETTINGS)
        self.sensors = np.asarray(self.sensors, dtype=np.float64).reshape(-1, N_SENSORS)
        n = len(self.cycles)
        if self.settings.shape[0] != n or self.sensors.shape[0] != n:
            raise ValueError(
                f"engine {self.engine_id}: {n} cycles but "
                f"{self.settings.shape[0]} settings rows / {self.sensors.shape[0]} sensor rows"
            )
        if n and (self.cycles[0] != 1 or np.any(np.diff(self.cycles) != 1)):
            raise ValueError(f"engine {self.engine_id}: cycles must run 1, 2, ... without gaps")

    def __len__(self) -> int:
        return len(self.cycles)

    def to_rows(self) -> np.ndarray:
        """The trajectory as a T x 26 array in file column order."""
        ids = np.full((len(self), 1), self.engine_id, dtype=np.float64)
        return np.hstack([ids, self.cycles[:, None].astype(np.float64), self.settings, self.sensors])


@dataclass
class DatasetBundle:
    dataset_id: str
    train: list[EngineTrajectory]
    test: list[EngineTrajectory]
    test_final_rul: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.test_final_rul = np.asarray(self.test_final_rul, dtype=np.float64)
        if len(self.test_final_rul) != len(self.test):
            raise BundleStructureError(
                f"{self.dataset_id}: {len(self.test)} test engines but "
                f"{len(self.test_final_rul)} RUL values"
            )


def _parse_float(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise CMAPSSParseError(f"non-numeric field {token!r}", lineno) from None


def parse_trajectory_table(text: str | TextIO | Iterable[str]) -> list[EngineTrajectory]:
    """Parse a CMAPSS train/test table into per-engine trajectories.

    Rows must already be sorted by (unit, cycle); an out-of-order row is an
    error rather than something to silently fix.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    groups: dict[int, list[list[float]]] = {}
    order: list[int] = []
    current = None
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise CMAPSSParseError(f"expected {N_COLUMNS} columns, got {len(tokens)}", lineno)
        values = [_parse_float(t, lineno) for t in tokens]
        unit, cycle = values[0], values[1]
        if unit != int(unit) or cycle != int(cycle) or unit < 1:
            raise CMAPSSParseError("unit id and cycle must be positive integers", lineno)
        unit = int(unit)
        if unit != current:
            if unit in groups:
                raise CMAPSSParseError(f"unit {unit} reappears after other units", lineno)
            groups[unit] = []
            order.append(unit)
            current = unit
        rows = groups[unit]
        expected = len(rows) + 1
        if int(cycle) != expected:
            raise CMAPSSParseError(f"unit {unit}: expected cycle {expected}, got {int(cycle)}", lineno)
        rows.append(values)
    if not order:
        raise CMAPSSParseError("no trajectories")

    out = []
    for unit in order:
        arr = np.asarray(groups[unit], dtype=np.float64)
        out.append(
            EngineTrajectory(
                engine_id=unit,
                cycles=arr[:, 1].astype(np.int64),
                settings=arr[:, 2 : 2 + N_SETTINGS],
                sensors=arr[:, 2 + N_SETTINGS :],
            )
        )
    return out


def format_trajectory_table(trajs: Iterable[EngineTrajectory]) -> str:
    """Inverse of :func:`parse_trajectory_table` (full float precision)."""
    lines = []
    for traj in trajs:
        for row in traj.to_rows():
            head = f"{int(row[0])} {int(row[1])}"
            lines.append(head + " " + " ".join(repr(float(v)) for v in row[2:]))
    return "\n".join(lines) + "\n"


def compute_capped_rul(traj: EngineTrajectory, cap: float | None = DEFAULT_RUL_CAP) -> np.ndarray:
    """Remaining cycles at each row, ``min(T - cycle, cap)``; ``cap=None`` disables capping."""
    n = len(traj)
    if n == 0:
        raise ValueError("empty trajectory")
    rul = (n - np.arange(1, n + 1)).astype(np.float64)
    if cap is not None:
        np.minimum(rul, cap, out=rul)
    return rul


def parse_rul_file(text: str) -> np.ndarray:
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 1:
            raise CMAPSSParseError(f"expected one value, got {len(tokens)}", lineno)
        values.append(_parse_float(tokens[0], lineno))
    return np.asarray(values, dtype=np.float64)


def _read(path: Path) -> str:
    if not path.is_file():
        raise FileNotFoundError(f"missing CMAPSS file: {path}")
    return path.read_text()


def default_data_dir() -> Path | None:
    env = os.environ.get("RUL_DATA_DIR")
    return Path(env) if env else None


def load_bundle(
    dataset_id: str,
    data_dir: str | os.PathLike,
    cap_test_rul: bool = True,
    cap: float = DEFAULT_RUL_CAP,
) -> DatasetBundle:
    if dataset_id not in DATASET_IDS:
        raise ValueError(f"unknown dataset {dataset_id!r}; expected one of {DATASET_IDS}")
    data_dir = Path(data_dir)
    train = parse_trajectory_table(_read(data_dir / f"train_{dataset_id}.txt"))
    test = parse_trajectory_table(_read(data_dir / f"test_{dataset_id}.txt"))
    final_rul = parse_rul_file(_read(data_dir / f"RUL_{dataset_id}.txt"))
    if len(final_rul) != len(test):
        raise BundleStructureError(
            f"{dataset_id}: {len(test)} test engines but {len(final_rul)} RUL values"
        )
    if cap_test_rul:
        final_rul = np.minimum(final_rul, cap)
    return DatasetBundle(dataset_id, train, test, final_rul)
