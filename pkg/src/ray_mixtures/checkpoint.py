from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, FieldConfig, config_from_dict, config_to_dict
from .errors import CheckpointError, ConfigError, DataError, DomainError
from .field import FieldParams, layer_shapes
from .images import atomic_write_bytes
from .optim import OptimizerState


logger = logging.getLogger(__name__)

# Layout:
#   8 bytes   magic b"RAYMIXCK"
#   uint32    format version (little endian)
#   uint64    header length in bytes
#   header    UTF-8 JSON, sorted keys: architecture, config, step, arrays [[name, shape], ...]
#   payload   float64 little endian: every parameter, then Adam m, then Adam v, in `arrays` order

MAGIC = b"RAYMIXCK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass(frozen=True)
class Checkpoint:
    params: FieldParams
    state: OptimizerState
    config: Config


def checkpoint_bytes(params: FieldParams, state: OptimizerState, config: Config) -> bytes:
    names = list(params.arrays)
    header = {
        "architecture": params.descriptor(),
        "config": config_to_dict(config),
        "step": state.step,
        "arrays": [[name, list(params.arrays[name].shape)] for name in names],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(head)), head]
    for group in (params.arrays, state.m, state.v):
        for name in names:
            parts.append(np.ascontiguousarray(group[name], dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path: Path, params: FieldParams, state: OptimizerState, config: Config) -> None:
    atomic_write_bytes(Path(path), checkpoint_bytes(params, state, config))
    logger.debug("wrote checkpoint %s at step %d", path, state.step)


def _architecture_mismatch(expected: dict[str, tuple[int, ...]], found: dict[str, tuple[int, ...]]) -> str:
    for name in sorted(set(expected) | set(found)):
        if expected.get(name) != found.get(name):
            return f"{name}: expected {expected.get(name)}, found {found.get(name)}"
    return "parameter order differs"


def parse_checkpoint(data: bytes, *, expected: FieldConfig | None = None) -> Checkpoint:
    if len(data) < _PREFIX.size:
        if not MAGIC.startswith(data[: len(MAGIC)]):
            raise CheckpointError("bad_magic", "not a checkpoint file")
        raise CheckpointError("truncated", f"file is {len(data)} bytes")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("bad_magic", "not a checkpoint file")
    if version != VERSION:
        raise CheckpointError("version", f"format version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    if start + head_len > len(data):
        raise CheckpointError("truncated", "header extends past end of file")
    try:
        header = json.loads(data[start : start + head_len].decode("utf-8"))
        config = config_from_dict(header["config"])
        step = int(header["step"])
        shapes = {name: tuple(shape) for name, shape in header["arrays"]}
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError) as e:
        raise CheckpointError("truncated", f"unreadable header: {e}") from None

    arch = {name: tuple(s) for name, s in layer_shapes(config.field).items()}
    if list(arch.items()) != list(shapes.items()):
        raise CheckpointError("architecture", _architecture_mismatch(arch, shapes))
    if expected is not None and expected != config.field:
        want = {name: tuple(s) for name, s in layer_shapes(expected).items()}
        raise CheckpointError("architecture", _architecture_mismatch(want, arch))

    count = sum(int(np.prod(s)) for s in shapes.values())
    payload = data[start + head_len :]
    if len(payload) != 3 * count * 8:
        raise CheckpointError("truncated", f"payload is {len(payload)} bytes, expected {3 * count * 8}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)

    groups: list[dict[str, np.ndarray]] = []
    offset = 0
    for _ in range(3):
        group = {}
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            group[name] = flat[offset : offset + n].reshape(shape).copy()
            offset += n
        groups.append(group)
    try:
        params = FieldParams(config.field, groups[0])
        state = OptimizerState(m=groups[1], v=groups[2], step=step)
    except DomainError as e:
        raise CheckpointError("architecture", str(e)) from None
    return Checkpoint(params=params, state=state, config=config)


def load_checkpoint(path: Path, *, expected: FieldConfig | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    return parse_checkpoint(data, expected=expected)
