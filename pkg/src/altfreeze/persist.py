"""Bit-exact persistence: dataset files, checkpoints, logs, heatmaps.

All multi-byte integers are little-endian and array values are stored raw
in little-endian IEEE floats, so the formats are reproducible byte for byte
and independent implementations can interoperate.

Dataset file (magic ``VCLP``, version 1)::

    "VCLP" | version u32 | record count u32
    per record: id u32 | label u8 | kind u8 | C,T,H,W u32 each | C*T*H*W float32 values

Checkpoint file (magic ``AFCK``, version 1)::

    "AFCK" | version u32 | tensor count u32
    per tensor: name length u32 + UTF-8 name | group tag u8 (0 spatial,
                1 temporal, 2 shared) | dtype code u8 (0 f32, 1 f64) |
                rank u32 | extents u32 each | raw values
    trailing state: counter u64 | iteration u64 | epoch u64 | seed u64 |
                    rng state (PCG64: state 16B | inc 16B | has_uint32 u32 |
                    uinteger u32)

The tensor list holds the trainable parameters (group tag from the
partition rule), then batch-norm running statistics (named
``*.running_mean`` / ``*.running_var``, tagged shared), then optimizer
momentum buffers under ``momentum/<parameter name>`` with their parameter's
tag.  The format carries no architecture metadata, so loading a model back
requires the matching ModelSpec.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .data import KIND_NAMES, ClipDataset
from .metrics import EvalReport
from .model import Model, ModelSpec, build_model
from .partition import ParamGroup, classify_param

__all__ = [
    "FileFormatError",
    "GROUP_TAGS",
    "TAG_GROUPS",
    "save_dataset",
    "load_dataset",
    "save_manifest",
    "CheckpointState",
    "RawCheckpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_model",
    "write_pgm",
    "write_metric_log",
    "write_eval_report",
    "LOG_COLUMNS",
]

DATASET_MAGIC = b"VCLP"
CHECKPOINT_MAGIC = b"AFCK"
FORMAT_VERSION = 1

GROUP_TAGS = {ParamGroup.SPATIAL: 0, ParamGroup.TEMPORAL: 1, ParamGroup.SHARED: 2}
TAG_GROUPS = {v: k for k, v in GROUP_TAGS.items()}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

LOG_COLUMNS = ("iter", "epoch", "phase", "lr", "loss", "eval_auc")


class FileFormatError(ValueError):
    pass


def _read(f, n: int, what: str) -> bytes:
    offset = f.tell()
    buf = f.read(n)
    if len(buf) != n:
        raise FileFormatError(
            f"truncated file: expected {n} bytes for {what} at offset {offset}, got {len(buf)}"
        )
    return buf


def _read_u32(f, what: str) -> int:
    return struct.unpack("<I", _read(f, 4, what))[0]


def _read_u64(f, what: str) -> int:
    return struct.unpack("<Q", _read(f, 8, what))[0]


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(ds: ClipDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(ds)))
        for i in range(len(ds)):
            clip = np.ascontiguousarray(ds.clips[i], dtype="<f4")
            f.write(struct.pack("<IBB", int(ds.ids[i]), int(ds.labels[i]), int(ds.kinds[i])))
            f.write(struct.pack("<4I", *clip.shape))
            f.write(clip.tobytes())


def load_dataset(path) -> ClipDataset:
    with open(path, "rb") as f:
        magic = _read(f, 4, "dataset magic")
        if magic != DATASET_MAGIC:
            raise FileFormatError(f"bad dataset magic {magic!r}, expected {DATASET_MAGIC!r}")
        version = _read_u32(f, "dataset version")
        if version != FORMAT_VERSION:
            raise FileFormatError(f"unsupported dataset version {version}")
        count = _read_u32(f, "record count")
        clips, labels, kinds, ids = [], [], [], []
        shape: tuple[int, ...] | None = None
        for r in range(count):
            rid, label, kind = struct.unpack("<IBB", _read(f, 6, f"record {r} header"))
            dims = struct.unpack("<4I", _read(f, 16, f"record {r} dims"))
            if shape is None:
                shape = dims
            elif dims != shape:
                raise FileFormatError(f"record {r} shape {dims} differs from first record {shape}")
            n = int(np.prod(dims))
            raw = _read(f, 4 * n, f"record {r} values")
            values = np.frombuffer(raw, dtype="<f4").reshape(dims)
            if values.size and (values.min() < 0.0 or values.max() > 1.0):
                raise FileFormatError(f"record {r} has values outside [0, 1]")
            clips.append(values)
            labels.append(label)
            kinds.append(kind)
            ids.append(rid)
        trailing = f.read(1)
        if trailing:
            raise FileFormatError(f"unexpected trailing bytes after {count} records")
    if count == 0:
        raise FileFormatError("dataset file contains no records")
    return ClipDataset(
        clips=np.stack(clips),
        labels=np.asarray(labels, dtype=np.uint8),
        kinds=np.asarray(kinds, dtype=np.uint8),
        ids=np.asarray(ids, dtype=np.uint32),
    )


def save_manifest(ds: ClipDataset, path) -> None:
    """Plain-text companion: one ``id label kind seed`` line per clip."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# id\tlabel\tkind\tseed\n")
        for i in range(len(ds)):
            kind = KIND_NAMES.get(int(ds.kinds[i]), str(int(ds.kinds[i])))
            f.write(f"{int(ds.ids[i])}\t{int(ds.labels[i])}\t{kind}\t{ds.seeds[i]}\n")


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class CheckpointState:
    counter: int = 0
    iteration: int = 0
    epoch: int = 0
    seed: int = 0
    pcg_state: int = 0
    pcg_inc: int = 0
    pcg_has_uint32: int = 0
    pcg_uinteger: int = 0

    @classmethod
    def from_rng(cls, counter: int, iteration: int, epoch: int, seed: int, rng: np.random.Generator):
        st = rng.bit_generator.state
        return cls(
            counter=counter,
            iteration=iteration,
            epoch=epoch,
            seed=seed,
            pcg_state=st["state"]["state"],
            pcg_inc=st["state"]["inc"],
            pcg_has_uint32=st["has_uint32"],
            pcg_uinteger=st["uinteger"],
        )

    def rng_state(self) -> dict:
        return {
            "bit_generator": "PCG64",
            "state": {"state": self.pcg_state, "inc": self.pcg_inc},
            "has_uint32": self.pcg_has_uint32,
            "uinteger": self.pcg_uinteger,
        }


@dataclass
class RawCheckpoint:
    tensors: list[tuple[str, int, np.ndarray]] = field(default_factory=list)  # (name, tag, values)
    state: CheckpointState = field(default_factory=CheckpointState)

    def by_name(self) -> dict[str, tuple[int, np.ndarray]]:
        return {name: (tag, arr) for name, tag, arr in self.tensors}

    def param_entries(self) -> list[tuple[str, int, np.ndarray]]:
        return [
            (n, t, a)
            for n, t, a in self.tensors
            if not n.startswith("momentum/")
            and not n.endswith(".running_mean")
            and not n.endswith(".running_var")
        ]

    def momentum_entries(self) -> dict[str, np.ndarray]:
        return {
            n[len("momentum/") :]: a for n, t, a in self.tensors if n.startswith("momentum/")
        }


def _write_tensor(f, name: str, tag: int, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    code = _DTYPE_CODES[np.dtype(arr.dtype)]
    f.write(struct.pack("<BB", tag, code))
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())


def save_checkpoint(model: Model, state: CheckpointState | None, path, momentum: dict[str, np.ndarray] | None = None) -> None:
    """Write model parameters, BN statistics, momentum, and trainer state."""
    entries: list[tuple[str, int, np.ndarray]] = []
    param_tags: dict[str, int] = {}
    for named, tensor in model.named_params():
        tag = GROUP_TAGS[classify_param(named)]
        param_tags[named.name] = tag
        entries.append((named.name, tag, tensor.data))
    for name, buf in model.buffers():
        entries.append((name, GROUP_TAGS[ParamGroup.SHARED], buf))
    for name, buf in (momentum or {}).items():
        if name not in param_tags:
            raise ValueError(f"momentum buffer {name!r} does not match any parameter")
        entries.append((f"momentum/{name}", param_tags[name], buf))
    state = state or CheckpointState()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, tag, arr in entries:
            _write_tensor(f, name, tag, arr)
        f.write(struct.pack("<4Q", state.counter, state.iteration, state.epoch, state.seed))
        f.write(int(state.pcg_state).to_bytes(16, "little"))
        f.write(int(state.pcg_inc).to_bytes(16, "little"))
        f.write(struct.pack("<II", state.pcg_has_uint32, state.pcg_uinteger))


def load_checkpoint(path) -> RawCheckpoint:
    with open(path, "rb") as f:
        magic = _read(f, 4, "checkpoint magic")
        if magic != CHECKPOINT_MAGIC:
            raise FileFormatError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version = _read_u32(f, "checkpoint version")
        if version != FORMAT_VERSION:
            raise FileFormatError(f"unsupported checkpoint version {version}")
        count = _read_u32(f, "tensor count")
        tensors: list[tuple[str, int, np.ndarray]] = []
        for i in range(count):
            name_len = _read_u32(f, f"tensor {i} name length")
            name = _read(f, name_len, f"tensor {i} name").decode("utf-8")
            tag, code = struct.unpack("<BB", _read(f, 2, f"tensor {name!r} flags"))
            if tag not in TAG_GROUPS:
                raise FileFormatError(f"tensor {name!r} has unknown group tag {tag}")
            if code not in _CODE_DTYPES:
                raise FileFormatError(f"tensor {name!r} has unknown dtype code {code}")
            rank = _read_u32(f, f"tensor {name!r} rank")
            shape = struct.unpack(f"<{rank}I", _read(f, 4 * rank, f"tensor {name!r} extents"))
            dtype = _CODE_DTYPES[code]
            raw = _read(f, dtype.itemsize * int(np.prod(shape)), f"tensor {name!r} values")
            tensors.append((name, tag, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()))
        counter, iteration, epoch, seed = struct.unpack(
            "<4Q", _read(f, 32, "training-state counters")
        )
        pcg_state = int.from_bytes(_read(f, 16, "rng state"), "little")
        pcg_inc = int.from_bytes(_read(f, 16, "rng increment"), "little")
        has_u32, uinteger = struct.unpack("<II", _read(f, 8, "rng tail"))
        trailing = f.read(1)
        if trailing:
            raise FileFormatError("unexpected trailing bytes after training-state block")
    return RawCheckpoint(
        tensors=tensors,
        state=CheckpointState(
            counter=counter,
            iteration=iteration,
            epoch=epoch,
            seed=seed,
            pcg_state=pcg_state,
            pcg_inc=pcg_inc,
            pcg_has_uint32=has_u32,
            pcg_uinteger=uinteger,
        ),
    )


def restore_model(raw: RawCheckpoint, spec: ModelSpec, dtype=np.float32) -> Model:
    """Rebuild a model from a checkpoint; the spec supplies the architecture."""
    model = build_model(spec, seed=0, dtype=dtype)
    stored = {name: arr for name, _, arr in raw.param_entries()}
    expected = {name: t for name, t in model.param_tensors().items()}
    buffers = dict(model.buffers())
    for name, tensor in expected.items():
        if name not in stored:
            raise FileFormatError(f"checkpoint is missing parameter {name!r}")
        arr = stored.pop(name)
        if arr.shape != tensor.shape:
            raise FileFormatError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, model expects {tensor.shape}"
            )
        tensor.data[...] = arr.astype(tensor.dtype)
    for name, buf in buffers.items():
        if name not in stored:
            raise FileFormatError(f"checkpoint is missing buffer {name!r}")
        arr = stored.pop(name)
        if arr.shape != buf.shape:
            raise FileFormatError(
                f"checkpoint buffer {name!r} has shape {arr.shape}, model expects {buf.shape}"
            )
        buf[...] = arr.astype(buf.dtype)
    if stored:
        raise FileFormatError(f"checkpoint has tensors unknown to the model: {sorted(stored)}")
    return model


# ---------------------------------------------------------------------------
# text artifacts


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM image must be 2D, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"PGM image must be uint8, got {img.dtype}")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metric_log(rows: list[dict], path, config_echo: dict | None = None) -> None:
    """CSV log; the effective configuration is echoed as '#' header lines."""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in (config_echo or {}).items():
            f.write(f"# {key}={value}\n")
        f.write(",".join(LOG_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row.get(col, "")) for col in LOG_COLUMNS) + "\n")


def write_eval_report(report: EvalReport, path, scores_path=None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("dataset,auc\n")
        for name, value in report.aucs.items():
            f.write(f"{name},{repr(float(value))}\n")
    if scores_path is not None:
        with open(scores_path, "w", encoding="utf-8") as f:
            f.write("dataset,id,label,score\n")
            for name, (ids, labels, scores) in report.scores.items():
                for i in range(len(ids)):
                    f.write(f"{name},{int(ids[i])},{int(labels[i])},{repr(float(scores[i]))}\n")
