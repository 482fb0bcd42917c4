"""
Persistence for datasets, trajectories, model bundles and run manifests.

Storage formats:
  - JSON for structured documents (model bundles, solver results, costs,
    manifests). Written with indent=2 and sorted keys so files are
    human-readable and diff cleanly. Python's json module writes floats with
    their shortest round-trip repr, so reloading a bundle reproduces every
    number exactly.
  - CSV for numeric tables (datasets, trajectories, traces). numpy writes them
    with a fixed "%.17g" format, so regenerating with the same seed produces
    byte-identical files.

Error handling strategy:
  A run cannot continue without its inputs, so nothing here degrades to a
  warning. Every failure is turned into a StorageError naming the path,
  which the CLI reports with exit code 2.
"""

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import Trajectory, UrfModel, model_from_dict, model_to_dict
from .errors import DimensionError, StorageError

CSV_FORMAT = "%.17g"


def ensure_dir(path: Path) -> Path:
    """Create `path` (and parents) if needed; raise StorageError when that fails."""
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create output directory {path}: {e}") from e
    return path


def save_json(data: Any, filepath: Path) -> Path:
    try:
        ensure_dir(filepath.parent)
        with open(filepath, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise StorageError(f"cannot write {filepath}: {e}") from e
    return filepath


def load_json(filepath: Path) -> Any:
    try:
        with open(filepath) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise StorageError(f"file not found: {filepath}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise StorageError(f"cannot read {filepath}: {e}") from e


def write_table(filepath: Path, columns: list[str], rows: np.ndarray) -> Path:
    """Numeric CSV with a header row."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(columns):
        raise DimensionError(f"{len(columns)} column names for a table with {rows.shape[1]} columns")
    try:
        ensure_dir(filepath.parent)
        np.savetxt(filepath, rows.reshape(-1, len(columns)), delimiter=",", header=",".join(columns), comments="", fmt=CSV_FORMAT)
    except OSError as e:
        raise StorageError(f"cannot write {filepath}: {e}") from e
    return filepath


def read_table(filepath: Path) -> tuple[list[str], np.ndarray]:
    try:
        with open(filepath) as f:
            header = f.readline().strip()
        rows = np.loadtxt(filepath, delimiter=",", skiprows=1, ndmin=2)
    except FileNotFoundError as e:
        raise StorageError(f"file not found: {filepath}") from e
    except (OSError, ValueError) as e:
        raise StorageError(f"cannot read {filepath}: {e}") from e
    columns = [name.strip() for name in header.split(",")] if header else []
    if rows.size == 0:
        rows = np.empty((0, len(columns)))
    return columns, rows


def write_dataset_csv(filepath: Path, inputs: np.ndarray, successors: np.ndarray) -> Path:
    """Transitions as columns x0..x{d-1}, y0..y{p-1}."""
    columns = [f"x{i}" for i in range(inputs.shape[1])] + [f"y{i}" for i in range(successors.shape[1])]
    return write_table(filepath, columns, np.hstack([inputs, successors]))


def read_dataset_csv(filepath: Path, state_dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_dataset_csv.

    Raises:
        DimensionError: the header is not x0..x{d-1}, y0..y{p-1}; the
            message cites the first offending column.
    """
    columns, rows = read_table(filepath)
    d = sum(1 for name in columns if name.startswith("x"))
    p = len(columns) - d
    if state_dim is not None and d != state_dim:
        raise DimensionError(f"{filepath}: expected {state_dim} input columns, found {d}")
    expected = [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(p)]
    for position, (found, wanted) in enumerate(zip(columns, expected, strict=True)):
        if found != wanted:
            raise DimensionError(f"{filepath}: column {position} is {found!r}, expected {wanted!r}")
    if p == 0:
        raise DimensionError(f"{filepath}: no target columns (y0..)")
    return rows[:, :d], rows[:, d:]


def write_trajectory_csv(filepath: Path, trajectory: Trajectory | np.ndarray) -> Path:
    """Columns n, x0..x{p-1}."""
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    index = np.arange(states.shape[0], dtype=float)[:, None]
    columns = ["n"] + [f"x{i}" for i in range(states.shape[1])]
    return write_table(filepath, columns, np.hstack([index, states]))


def read_trajectory_csv(filepath: Path) -> Trajectory:
    _, rows = read_table(filepath)
    return Trajectory(states=rows[:, 1:])


def save_model_bundle(model: UrfModel, filepath: Path, metadata: dict[str, Any] | None = None) -> Path:
    bundle = {"model": model_to_dict(model), "metadata": metadata or {}}
    return save_json(bundle, filepath)


def load_model_bundle(filepath: Path) -> tuple[UrfModel, dict[str, Any]]:
    bundle = load_json(filepath)
    if not isinstance(bundle, dict) or "model" not in bundle:
        raise StorageError(f"{filepath} is not a model bundle")
    return model_from_dict(bundle["model"]), bundle.get("metadata", {})


def file_digest(filepath: Path) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(filepath, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def digests(root: Path, files: list[Path]) -> dict[str, str]:
    """Relative path -> SHA-256 for every file, sorted by path."""
    return {str(path.relative_to(root)): file_digest(path) for path in sorted(files)}


def update_manifest(root: Path, section: str, content: dict[str, Any]) -> Path:
    """Merge one command's record into <root>/manifest.json."""
    path = root / "manifest.json"
    manifest = load_json(path) if path.exists() else {}
    manifest.setdefault("commands", {})[section] = content
    return save_json(manifest, path)


def write_manifest_header(root: Path, header: dict[str, Any]) -> Path:
    """Set the top-level (config, provenance, seed, version) manifest fields."""
    path = root / "manifest.json"
    manifest = load_json(path) if path.exists() else {}
    manifest.update(header)
    return save_json(manifest, path)


def write_records(filepath: Path, columns: list[str], records: list[list[Any]]) -> Path:
    """CSV of mixed text/numeric rows; floats use the same format as write_table."""
    cells = [
        [CSV_FORMAT % value if isinstance(value, float) else str(value) for value in record]
        for record in records
    ]
    try:
        ensure_dir(filepath.parent)
        np.savetxt(
            filepath,
            np.array(cells, dtype=object).reshape(-1, len(columns)),
            delimiter=",",
            header=",".join(columns),
            comments="",
            fmt="%s",
        )
    except OSError as e:
        raise StorageError(f"cannot write {filepath}: {e}") from e
    return filepath
