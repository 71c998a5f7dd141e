"""Snapshot data carrier and the ``.fbf`` binary container.

Container layout (all integers little-endian)::

    b"FLOWBNCH"                 8 bytes magic
    version                     uint32
    header_length               uint64
    header                      UTF-8 JSON, header_length bytes
    payload                     raw little-endian, row-major arrays

The header is ``{"arrays": [{name, dtype, shape, byte_offset}, ...],
"meta": {...}}``. ``byte_offset`` counts from the first payload byte, so
readers never depend on array order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import CorruptionError, FormatError, SchemaError, ShapeError

MAGIC = b"FLOWBNCH"
VERSION = 1

_DTYPES = {
    "f64": np.dtype("<f8"),
    "c128": np.dtype("<c16"),
    "i64": np.dtype("<i8"),
}
_PREAMBLE = struct.Struct("<8sIQ")

CHALLENGE_TAGS = ("compression", "forecasting", "sensing")


def dtype_tag(array: np.ndarray) -> str:
    """Container dtype tag for an array, coercing compatible numpy types."""
    kind = np.asarray(array).dtype.kind
    if kind == "f":
        return "f64"
    if kind == "c":
        return "c128"
    if kind in "iub":
        return "i64"
    raise SchemaError(f"unsupported dtype {np.asarray(array).dtype}")


@dataclass
class SnapshotMatrix:
    """Space-time field samples.

    ``data`` has shape ``(n_snapshots, n_channels, *space_dims)`` which is
    exactly the snapshot-major / channel-major / row-major storage order.
    """

    data: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim < 3:
            raise ShapeError("data must have shape (n_snapshots, n_channels, *space_dims)")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("snapshot data must be finite")

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def space_dims(self) -> tuple[int, ...]:
        return self.data.shape[2:]

    @property
    def state_size(self) -> int:
        """Scalars per snapshot (grid points times channels)."""
        return int(np.prod(self.data.shape[1:]))

    @property
    def matrix(self) -> np.ndarray:
        """``state_size x n_snapshots`` view used by the decompositions."""
        return self.data.reshape(self.n_snapshots, -1).T

    @classmethod
    def from_matrix(cls, matrix, space_dims=None, n_channels: int = 1, dt: float = 1.0):
        matrix = np.asarray(matrix, dtype=np.float64)
        if space_dims is None:
            space_dims = (matrix.shape[0] // n_channels,)
        shape = (matrix.shape[1], n_channels, *space_dims)
        if int(np.prod(shape[1:])) != matrix.shape[0]:
            raise ShapeError(f"{matrix.shape[0]} rows cannot form channels x grid {shape[1:]}")
        return cls(np.ascontiguousarray(matrix.T).reshape(shape), dt)

    def like(self, matrix) -> "SnapshotMatrix":
        """New snapshot set on this grid from a ``state_size x T`` matrix."""
        return SnapshotMatrix.from_matrix(matrix, self.space_dims, self.n_channels, self.dt)


def _normalize_items(named_arrays) -> list[tuple[str, np.ndarray]]:
    if isinstance(named_arrays, Mapping):
        items = list(named_arrays.items())
    else:
        items = list(named_arrays)
    if not items:
        raise SchemaError("container needs at least one array")
    seen = set()
    out = []
    for name, arr in items:
        if not isinstance(name, str) or not name:
            raise SchemaError(f"array names must be non-empty strings, got {name!r}")
        if name in seen:
            raise SchemaError(f"duplicate array name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        tag = dtype_tag(arr)
        arr = np.asarray(arr, dtype=_DTYPES[tag], order="C")
        if tag != "i64" and not np.all(np.isfinite(arr)):
            raise SchemaError(f"array {name!r} contains non-finite values")
        out.append((name, arr))
    return out


def write_container(path, named_arrays, meta: Mapping[str, Any] | None = None) -> None:
    """Write named arrays (a mapping or an iterable of pairs) to ``path``."""
    items = _normalize_items(named_arrays)
    entries = []
    offset = 0
    for name, arr in items:
        entries.append(
            {"name": name, "dtype": dtype_tag(arr), "shape": list(arr.shape), "byte_offset": offset}
        )
        offset += arr.nbytes
    header = json.dumps({"arrays": entries, "meta": dict(meta or {})}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for _, arr in items:
            fh.write(arr.tobytes(order="C"))


def read_header(path) -> dict:
    """Parse and return the JSON header plus the payload start offset."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        pre = fh.read(_PREAMBLE.size)
        if len(pre) < _PREAMBLE.size:
            raise FormatError(f"{path}: file too short for a container preamble")
        magic, version, hlen = _PREAMBLE.unpack(pre)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        if _PREAMBLE.size + hlen > size:
            raise CorruptionError(f"{path}: header length {hlen} runs past end of file")
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptionError(f"{path}: unreadable header ({exc})") from None
    header["payload_offset"] = _PREAMBLE.size + hlen
    header["payload_length"] = size - header["payload_offset"]
    return header


def _check_entries(path, header) -> None:
    plen = header["payload_length"]
    spans = []
    for e in header.get("arrays", []):
        if e.get("dtype") not in _DTYPES:
            raise CorruptionError(f"{path}: array {e.get('name')!r} has unknown dtype {e.get('dtype')!r}")
        shape = e.get("shape")
        off = e.get("byte_offset")
        if not isinstance(shape, list) or any((not isinstance(d, int)) or d < 0 for d in shape):
            raise CorruptionError(f"{path}: array {e.get('name')!r} has invalid shape {shape!r}")
        if not isinstance(off, int) or off < 0:
            raise CorruptionError(f"{path}: array {e.get('name')!r} has invalid offset {off!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPES[e["dtype"]].itemsize
        if off + nbytes > plen:
            raise CorruptionError(
                f"{path}: array {e['name']!r} spans bytes [{off}, {off + nbytes}) "
                f"beyond payload length {plen}"
            )
        spans.append((off, off + nbytes))
    spans.sort()
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CorruptionError(f"{path}: overlapping array payloads")
    if sum(b - a for a, b in spans) != plen:
        raise CorruptionError(
            f"{path}: declared arrays cover {sum(b - a for a, b in spans)} bytes, payload has {plen}"
        )


def read_container(path, with_meta: bool = False):
    """Read a container; returns ``{name: array}`` (and ``meta`` if asked)."""
    header = read_header(path)
    _check_entries(path, header)
    arrays = {}
    with open(path, "rb") as fh:
        for e in header["arrays"]:
            dt = _DTYPES[e["dtype"]]
            count = int(np.prod(e["shape"], dtype=np.int64))
            fh.seek(header["payload_offset"] + e["byte_offset"])
            buf = fh.read(count * dt.itemsize)
            arrays[e["name"]] = np.frombuffer(buf, dtype=dt).reshape(e["shape"]).copy()
    if with_meta:
        return arrays, header.get("meta", {})
    return arrays


# -- results and metrics files ------------------------------------------------


@dataclass
class ResultsFile:
    """Method output handed to the evaluator."""

    challenge_tag: str
    arrays: dict[str, np.ndarray]
    method_name: str = ""
    provenance: dict = field(default_factory=dict)

    def write(self, path) -> None:
        meta = {
            "kind": "results",
            "challenge_tag": self.challenge_tag,
            "method_name": self.method_name,
            "provenance": self.provenance,
        }
        write_container(path, self.arrays, meta)

    @classmethod
    def read(cls, path) -> "ResultsFile":
        arrays, meta = read_container(path, with_meta=True)
        if meta.get("kind") != "results":
            raise FormatError(f"{path}: not a results file (kind={meta.get('kind')!r})")
        return cls(meta["challenge_tag"], arrays, meta.get("method_name", ""), meta.get("provenance", {}))


@dataclass
class MetricsFile:
    """Per-challenge metric bundle: names map to scalars or 1-D/2-D curves."""

    challenge_tag: str
    metrics: dict[str, Any]
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if not np.all(np.isfinite(np.asarray(value))):
                raise ValueError(f"metric {name!r} is not finite")

    def write(self, path) -> None:
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in self.metrics.items()}
        meta = {"kind": "metrics", "challenge_tag": self.challenge_tag, "info": self.info}
        write_container(path, arrays, meta)

    @classmethod
    def read(cls, path) -> "MetricsFile":
        arrays, meta = read_container(path, with_meta=True)
        if meta.get("kind") != "metrics":
            raise FormatError(f"{path}: not a metrics file (kind={meta.get('kind')!r})")
        return cls(meta["challenge_tag"], arrays, meta.get("info", {}))


# -- schemas ------------------------------------------------------------------


@dataclass(frozen=True)
class ArraySpec:
    """Required array: dtype tag and shape with ``None`` or symbol wildcards.

    String entries in ``shape`` are symbols that must bind to the same
    length across all arrays of a schema.
    """

    name: str
    dtype: str
    shape: tuple


def results_schema(challenge_tag: str, **dims) -> list[ArraySpec]:
    """Frozen array layout for each challenge.

    ``dims`` pins symbols to concrete sizes, for example
    ``results_schema("forecasting", sequences=32, horizon=30)``.
    """
    def d(sym):
        return dims.get(sym, sym)

    if challenge_tag == "compression":
        return [
            ArraySpec("modes", "f64", (d("state"), d("modes"))),
            ArraySpec("energies", "f64", (d("modes"),)),
            ArraySpec("mean", "f64", (d("state"),)),
            ArraySpec("latent", "f64", (d("modes"), d("snapshots"))),
        ]
    if challenge_tag == "forecasting":
        return [ArraySpec("forecasts", "f64", (d("sequences"), d("horizon"), d("state")))]
    if challenge_tag == "sensing":
        return [
            ArraySpec("estimates", "f64", (d("targets"), d("samples"))),
            ArraySpec("warmup_offset", "i64", ()),
        ]
    raise SchemaError(f"unknown challenge tag {challenge_tag!r}; expected one of {CHALLENGE_TAGS}")


def validate_results(results: ResultsFile, schema_tag: str | None = None, **dims) -> list[str]:
    """Human-readable schema violations; empty when the results conform."""
    tag = schema_tag or results.challenge_tag
    violations = []
    if results.challenge_tag != tag:
        violations.append(f"challenge tag {results.challenge_tag!r} does not match schema {tag!r}")
    try:
        specs = results_schema(tag, **dims)
    except SchemaError as exc:
        return violations + [str(exc)]
    bound: dict[str, int] = {}
    for spec in specs:
        if spec.name not in results.arrays:
            violations.append(f"missing required array {spec.name!r}")
            continue
        arr = np.asarray(results.arrays[spec.name])
        try:
            tag_found = dtype_tag(arr)
        except SchemaError:
            tag_found = str(arr.dtype)
        if tag_found != spec.dtype:
            violations.append(f"array {spec.name!r} has dtype {tag_found}, expected {spec.dtype}")
        if arr.ndim != len(spec.shape):
            violations.append(
                f"array {spec.name!r} has {arr.ndim} dimensions, expected {len(spec.shape)}"
            )
            continue
        for axis, (want, got) in enumerate(zip(spec.shape, arr.shape)):
            if isinstance(want, str):
                if bound.setdefault(want, got) != got:
                    violations.append(
                        f"array {spec.name!r} axis {axis} ({want}) has length {got}, "
                        f"inconsistent with {bound[want]} elsewhere"
                    )
            elif want is not None and want != got:
                violations.append(f"array {spec.name!r} axis {axis} has length {got}, expected {want}")
        if arr.dtype.kind in "fc" and not np.all(np.isfinite(arr)):
            violations.append(f"array {spec.name!r} contains non-finite values")
    return violations

