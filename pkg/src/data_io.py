"""
Readers and writers for the CLI file formats.

Supports:
- CSV: headerless, row-major matrices written with 17 significant digits
- EDGES: sparse symmetric matrices as "# dim", "# edges" and "# diag" sections
- JSON: manifests and reports (pydantic models)
- Labels: one integer per line

For beginners: every format is plain text so runs can be diffed and read by
other tools; writing then reading a matrix gives back the exact same values.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel

from src.exceptions import MalformedInputError
from src.models import SparseSymmetric

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"


def write_matrix_csv(path: PathLike, a) -> Path:
    """Write a 2-D array as headerless CSV."""
    path = Path(path)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    np.savetxt(path, a, fmt=FLOAT_FORMAT, delimiter=",")
    return path


def read_matrix_csv(path: PathLike) -> np.ndarray:
    """
    Read a headerless CSV matrix.

    Raises:
        FileNotFoundError: If the file doesn't exist
        MalformedInputError: On empty files, ragged rows or non-numeric cells
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")

    rows: List[List[float]] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = [float(cell) for cell in line.split(",")]
        except ValueError as exc:
            raise MalformedInputError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
        if rows and len(row) != len(rows[0]):
            raise MalformedInputError(
                f"{path}:{lineno}: expected {len(rows[0])} columns, found {len(row)}"
            )
        rows.append(row)

    if not rows:
        raise MalformedInputError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def write_edges(path: PathLike, sym: SparseSymmetric) -> Path:
    """Write a sparse symmetric matrix in the .edges format."""
    path = Path(path)
    lines = [f"# dim {sym.dim}", "# edges"]
    lines += [f"{i} {j} {v:.17g}" for i, j, v in sym.edges()]
    lines.append("# diag")
    lines += [f"{i} {v:.17g}" for i, v in enumerate(sym.diag)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_edges(path: PathLike) -> SparseSymmetric:
    """
    Read a .edges file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        MalformedInputError: On missing headers or unparsable lines
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")

    dim = None
    section = None
    edges: List[Tuple[int, int, float]] = []
    diag: Dict[int, float] = {}

    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[:1] == ["dim"] and len(parts) == 2:
                dim = int(parts[1])
            elif parts in (["edges"], ["diag"]):
                section = parts[0]
            else:
                raise MalformedInputError(f"{path}:{lineno}: unknown header '{line}'")
            continue

        fields = line.split()
        try:
            if section == "edges" and len(fields) == 3:
                edges.append((int(fields[0]), int(fields[1]), float(fields[2])))
            elif section == "diag" and len(fields) == 2:
                diag[int(fields[0])] = float(fields[1])
            else:
                raise MalformedInputError(f"{path}:{lineno}: unexpected line '{line}'")
        except ValueError as exc:
            if isinstance(exc, MalformedInputError):
                raise
            raise MalformedInputError(f"{path}:{lineno}: {exc}") from exc

    if dim is None:
        raise MalformedInputError(f"{path}: missing '# dim' header")
    if sorted(diag) != list(range(dim)):
        raise MalformedInputError(f"{path}: diagonal must list every index 0..{dim - 1}")

    try:
        return SparseSymmetric.from_edges(dim, np.array([diag[i] for i in range(dim)]), edges)
    except ValueError as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc


def write_labels(path: PathLike, labels) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(labels, dtype=int), fmt="%d")
    return path


def read_labels(path: PathLike) -> np.ndarray:
    """Read one integer label per line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        return np.array([int(line) for line in path.read_text().split()], dtype=int)
    except ValueError as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc


def write_json(path: PathLike, model: BaseModel) -> Path:
    path = Path(path)
    path.write_text(model.model_dump_json(indent=2))
    return path


def file_digest(path: PathLike) -> str:
    """sha256 hex digest of a file."""
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


class MatrixFileParser:
    """
    Loads any CLI artifact by its suffix.

    .csv gives a dense array, .edges a SparseSymmetric and .json a dict.
    """

    def __init__(self):
        """Initialize the parser."""
        self.supported_formats = [".csv", ".edges", ".json"]

    def parse_file(self, file_path: PathLike) -> Any:
        """
        Parse a file into its in-memory form.

        Args:
            file_path: Path to the artifact

        Returns:
            ndarray, SparseSymmetric or dict depending on the suffix

        Raises:
            MalformedInputError: If the format is not supported or the content is invalid
            FileNotFoundError: If the file doesn't exist
        """
        path = Path(file_path)

        if not path.exists():
            raise FileNotFoundError(f"File not found: {file_path}")

        extension = path.suffix.lower()

        if extension not in self.supported_formats:
            raise MalformedInputError(
                f"Unsupported file format: {extension}. "
                f"Supported formats: {', '.join(self.supported_formats)}"
            )

        if extension == ".csv":
            return read_matrix_csv(path)
        if extension == ".edges":
            return read_edges(path)
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedInputError(f"{path}: invalid JSON ({exc})") from exc
