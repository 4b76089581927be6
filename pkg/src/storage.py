"""
פורמטי הקבצים הבינאריים: נקודות שמירה HDK1, מאגרי מעברים HDD1, תקצירים ומניפסט

כל המספרים little-endian; אחרי המגיק בא בית גרסה.
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.architectures import policy_from_arrays
from src.data_schemas import ArchitectureSpec, RunManifest
from src.distillation import TransitionDataset

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HDK1"
DATASET_MAGIC = b"HDD1"
FORMAT_VERSION = 1

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_RECORD_DIMS = struct.Struct("<III")

PathLike = Union[str, Path]


class FormatError(ValueError):
    """מגיק או גרסה שגויים, או קובץ קטוע"""


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise FormatError(f"{self.source}: truncated at byte {self.offset} (needed {size} more)")
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))[0]

    def text(self, length_fmt: struct.Struct) -> str:
        raw = self.take(self.unpack(length_fmt))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.source}: invalid UTF-8 string at byte {self.offset}") from None

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def header(self, magic: bytes) -> None:
        found = self.take(len(magic))
        if found != magic:
            raise FormatError(f"{self.source}: bad magic {found!r}, expected {magic!r}")
        version = self.unpack(_U8)
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.source}: unsupported format version {version}")

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(f"{self.source}: {len(self.data) - self.offset} trailing bytes")


def _text(value: str, length_fmt: struct.Struct) -> bytes:
    raw = value.encode("utf-8")
    return length_fmt.pack(len(raw)) + raw


# ---------------------------------------------------------------------------
# נקודות שמירה

def _encode_field(key: str, value) -> bytes:
    if isinstance(value, bool):
        payload = b"b" + _U8.pack(int(value))
    elif isinstance(value, int):
        payload = b"i" + _I64.pack(value)
    elif isinstance(value, float):
        payload = b"f" + _F64.pack(value)
    elif isinstance(value, str):
        payload = b"s" + _text(value, _U16)
    else:
        raise TypeError(f"Cannot serialize spec field {key} of type {type(value).__name__}")
    return _text(key, _U8) + payload


def _decode_field(reader: _Reader) -> Tuple[str, object]:
    key = reader.text(_U8)
    tag = reader.take(1)
    if tag == b"b":
        return key, bool(reader.unpack(_U8))
    if tag == b"i":
        return key, reader.unpack(_I64)
    if tag == b"f":
        return key, reader.unpack(_F64)
    if tag == b"s":
        return key, reader.text(_U16)
    raise FormatError(f"{reader.source}: unknown field tag {tag!r} for {key}")


def encode_checkpoint(spec: ArchitectureSpec, arrays: Dict[str, np.ndarray]) -> bytes:
    """מפרט כשדות מתויגים ואחריו טנזורים בעלי שם, בסדר ממוין"""
    fields = spec.model_dump(mode="json")
    parts = [CHECKPOINT_MAGIC, _U8.pack(FORMAT_VERSION), _U16.pack(len(fields))]
    parts.extend(_encode_field(key, fields[key]) for key in sorted(fields))
    parts.append(_U32.pack(len(arrays)))
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name], dtype="<f8")
        parts.append(_text(name, _U16))
        parts.append(_U8.pack(array.ndim))
        parts.extend(_U64.pack(extent) for extent in array.shape)
        parts.append(array.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes, source: str = "<checkpoint>") -> Tuple[ArchitectureSpec, Dict[str, np.ndarray]]:
    reader = _Reader(data, source)
    reader.header(CHECKPOINT_MAGIC)
    fields = dict(_decode_field(reader) for _ in range(reader.unpack(_U16)))
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(reader.unpack(_U32)):
        name = reader.text(_U16)
        shape = tuple(reader.unpack(_U64) for _ in range(reader.unpack(_U8)))
        arrays[name] = reader.floats(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    reader.finish()
    try:
        spec = ArchitectureSpec(**fields)
    except ValidationError as e:
        raise FormatError(f"{source}: invalid architecture spec: {e.errors()[0]['msg']}") from None
    return spec, arrays


def save_checkpoint(path: PathLike, spec: ArchitectureSpec, arrays: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(spec, arrays))
    logger.debug(f"Wrote {spec.kind.value} checkpoint with {len(arrays)} tensors to {path}")
    return path


def load_checkpoint(path: PathLike) -> Tuple[ArchitectureSpec, Dict[str, np.ndarray]]:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))


def save_policy(path: PathLike, policy) -> Path:
    """כל מדיניות, כולל המקומפלת, נשמרת באותו מיכל"""
    return save_checkpoint(path, policy.spec, policy.parameter_arrays())


def load_policy(path: PathLike):
    spec, arrays = load_checkpoint(path)
    try:
        return policy_from_arrays(spec, arrays)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def load_oracle(path: PathLike):
    from src.harness import UniversalOracle

    policy = load_policy(path)
    try:
        return UniversalOracle(policy)
    except (ValueError, AttributeError) as e:
        raise FormatError(f"{path}: not a universal oracle checkpoint ({e})") from None


# ---------------------------------------------------------------------------
# מאגרי מעברים

def encode_dataset(dataset: TransitionDataset) -> bytes:
    parts = [DATASET_MAGIC, _U8.pack(FORMAT_VERSION), _U64.pack(len(dataset))]
    for record in dataset.records():
        n_limbs, state_dim = record.states.shape
        action_dim = record.teacher_mean.size // n_limbs
        parts.append(_text(record.morphology_id, _U16))
        parts.append(_RECORD_DIMS.pack(n_limbs, state_dim, action_dim))
        for array in (record.states, record.teacher_mean, record.teacher_log_std):
            parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes, source: str = "<dataset>") -> TransitionDataset:
    """רשומות רצופות של אותה מורפולוגיה נאספות יחד, כך שסדר הרשומות נשמר"""
    reader = _Reader(data, source)
    reader.header(DATASET_MAGIC)
    dataset = TransitionDataset()
    run_id = None
    run: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def flush():
        if run:
            dataset.add(run_id, *(np.stack(column) for column in zip(*run)))

    for _ in range(reader.unpack(_U64)):
        morphology_id = reader.text(_U16)
        n_limbs, state_dim, action_dim = _RECORD_DIMS.unpack(reader.take(_RECORD_DIMS.size))
        states = reader.floats(n_limbs * state_dim).reshape(n_limbs, state_dim)
        mean = reader.floats(n_limbs * action_dim)
        log_std = reader.floats(n_limbs * action_dim)
        if morphology_id != run_id:
            flush()
            run_id, run = morphology_id, []
        run.append((states, mean, log_std))
    flush()
    reader.finish()
    return dataset


def save_dataset(path: PathLike, dataset: TransitionDataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_dataset(dataset))
    logger.info(f"Wrote {len(dataset)} transitions to {path}")
    return path


def load_dataset(path: PathLike) -> TransitionDataset:
    path = Path(path)
    return decode_dataset(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
# תקצירים ומניפסט

def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: PathLike, manifest: RunManifest) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote manifest with {len(manifest.outputs)} outputs to {path}")
    return path
