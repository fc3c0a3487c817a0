# lattice_sternberg/adapters/tensor_io.py
"""
Disk formats: block maps as CSV rows keyed by lattice multi-indices with a JSON
header, jets as a manifest plus one CSV per order, reports as sorted JSON.
"""

import csv
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from lattice_sternberg import settings
from lattice_sternberg.decay import LatticeWindow, _Profile
from lattice_sternberg.errors import ParseError, PreconditionViolated
from lattice_sternberg.jets import PolyJet
from lattice_sternberg.lattice import BlockLinearMap, to_blocks
from lattice_sternberg.multilinear import MultiLinearMap
from lattice_sternberg.sparse import SparseTensor, block_arrays, from_block_arrays

logger = logging.getLogger("lattice_sternberg.tensor_io")

PathLike = Union[str, Path]


# ---------- Models ----------
class TensorHeader(BaseModel):
    window: LatticeWindow
    n: int
    arity: int
    cutoff: float
    blocks: int
    decay: Optional[Dict[str, Any]] = None


class JetManifest(BaseModel):
    window: LatticeWindow
    degree: int
    files: List[str]


# ---------- helpers ----------
def _real(tensor: np.ndarray) -> np.ndarray:
    t = np.real_if_close(tensor, tol=1e6)
    if np.iscomplexobj(t):
        raise PreconditionViolated("complex tensors are not exported; take real and imaginary parts separately")
    return t


def _columns(window: LatticeWindow, arity: int) -> List[str]:
    names = [f"i_{c}" for c in range(window.dim_m)]
    for p in range(1, arity + 1):
        names += [f"j{p}_{c}" for c in range(window.dim_m)]
    n = window.node_dim_n
    names += ["e_" + "".join(str(d) for d in idx) for idx in np.ndindex(*(n,) * (arity + 1))]
    return names


def _stored_blocks(W: MultiLinearMap) -> Tuple[np.ndarray, np.ndarray]:
    """Node keys and real-valued blocks of every nonzero block."""
    if W.is_sparse:
        T = W.tensor
        return block_arrays(SparseTensor(T.dim, T.coords, _real(T.data)), W.window.node_dim_n)
    blocks = to_blocks(_real(W.tensor), W.window)
    node_axes = W.arity + 1
    keys = np.argwhere(np.any(blocks != 0, axis=tuple(range(node_axes, 2 * node_axes))))
    return keys, blocks[tuple(keys.T)]


def _write_tensor(W: MultiLinearMap, path: Path, cutoff: float) -> int:
    window, arity = W.window, W.arity
    keys, blocks = _stored_blocks(W)
    sizes = np.abs(blocks).reshape(len(keys), -1).max(axis=1) if len(keys) else np.zeros(0)
    offsets = window.offsets
    count = 0
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_columns(window, arity))
        for nodes, block in zip(keys[sizes > cutoff], blocks[sizes > cutoff]):
            row: List[Any] = []
            for node in nodes:
                row += offsets[node].tolist()
            row += [repr(float(v)) for v in block.reshape(-1)]
            writer.writerow(row)
            count += 1
    return count


def _read_tensor(path: Path, window: LatticeWindow, arity: int) -> SparseTensor:
    n, m = window.node_dim_n, window.dim_m
    keys: List[Tuple[int, ...]] = []
    values: List[List[float]] = []
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != _columns(window, arity):
                raise ParseError(f"{path}: unexpected columns for arity {arity}")
            for row in reader:
                coords = [int(v) for v in row[:m * (arity + 1)]]
                keys.append(tuple(window.index_of(tuple(coords[q * m:(q + 1) * m])) for q in range(arity + 1)))
                values.append([float(v) for v in row[m * (arity + 1):]])
        blocks = np.array(values, dtype=float).reshape((len(values),) + (n,) * (arity + 1))
    except (OSError, ValueError, StopIteration) as e:
        raise ParseError(f"cannot read tensor file {path}: {e}") from e
    node_keys = np.array(keys, dtype=np.int64).reshape(-1, arity + 1)
    return from_block_arrays(window.dim, n, node_keys, blocks)


def _read_header(path: Path) -> TensorHeader:
    try:
        return TensorHeader.parse_raw(path.read_text())
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read header {path}: {e}") from e


# ---------- linear / multilinear ----------
def write_multilinear(
    W: Union[MultiLinearMap, BlockLinearMap],
    directory: PathLike,
    name: str,
    decay: Optional[_Profile] = None,
    cutoff: float = settings.BLOCK_CUTOFF,
) -> Path:
    """Writes <name>.json (header) and <name>.csv (one row per block above cutoff)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(W, BlockLinearMap):
        W = MultiLinearMap.from_linear(W)
    count = _write_tensor(W, directory / f"{name}.csv", cutoff)
    header = TensorHeader(
        window=W.window, n=W.window.node_dim_n, arity=W.arity, cutoff=cutoff, blocks=count,
        decay=decay.dict(exclude={"certificate"}) if decay is not None else None,
    )
    (directory / f"{name}.json").write_text(header.json(sort_keys=True, indent=2))
    logger.debug("wrote %s with %d blocks", name, count)
    return directory / f"{name}.csv"


def read_multilinear(directory: PathLike, name: str) -> MultiLinearMap:
    directory = Path(directory)
    header = _read_header(directory / f"{name}.json")
    tensor = _read_tensor(directory / f"{name}.csv", header.window, header.arity)
    return MultiLinearMap(header.window, tensor)


def write_linear(A: BlockLinearMap, directory: PathLike, name: str, decay: Optional[_Profile] = None,
                 cutoff: float = settings.BLOCK_CUTOFF) -> Path:
    return write_multilinear(A, directory, name, decay, cutoff)


def read_linear(directory: PathLike, name: str) -> BlockLinearMap:
    return read_multilinear(directory, name).to_linear()


# ---------- jets ----------
def write_jet(f: PolyJet, directory: PathLike, cutoff: float = settings.BLOCK_CUTOFF) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, C in enumerate(f.coefficients, start=1):
        _write_tensor(C, directory / f"order_{k}.csv", cutoff)
        files.append(f"order_{k}.csv")
    manifest = JetManifest(window=f.window, degree=f.degree, files=files)
    path = directory / "manifest.json"
    path.write_text(manifest.json(sort_keys=True, indent=2))
    return path


def read_jet(directory: PathLike) -> PolyJet:
    directory = Path(directory)
    try:
        manifest = JetManifest.parse_raw((directory / "manifest.json").read_text())
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read jet manifest in {directory}: {e}") from e
    coeffs = [
        MultiLinearMap(manifest.window, _read_tensor(directory / fname, manifest.window, k))
        for k, fname in enumerate(manifest.files, start=1)
    ]
    return PolyJet.from_coefficients(manifest.window, coeffs)


# ---------- reports ----------
def _json_default(obj):
    if isinstance(obj, BaseModel):
        return obj.dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite(obj):
    """Non-finite floats become null; strict JSON has no NaN or Infinity."""
    if isinstance(obj, BaseModel):
        obj = obj.dict()
    elif isinstance(obj, np.ndarray):
        obj = obj.tolist()
    elif isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, complex):
        obj = [obj.real, obj.imag]
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def report_json(payload: Union[BaseModel, Dict[str, Any]], generated_at: Optional[str] = None) -> str:
    data = payload.dict() if isinstance(payload, BaseModel) else dict(payload)
    data["generated_at"] = generated_at or datetime.now(timezone.utc).isoformat()
    return json.dumps(_finite(data), sort_keys=True, indent=2, allow_nan=False, default=_json_default)


def write_report(path: PathLike, payload: Union[BaseModel, Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_json(payload) + "\n")
    logger.info("report written: %s", path)
    return path


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path
