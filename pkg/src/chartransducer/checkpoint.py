"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic  b"CHARTRCK"
    bytes 8..11   format version, uint32
    bytes 12..19  header length H, uint64
    bytes 20..    UTF-8 JSON header of H bytes
    remainder     raw tensor payloads, concatenated in header order

The JSON header stores the model and training configs, step counter, rng
derivation info (base seed + step; every random stream is re-derived
from these), dev-accuracy history, vocabulary symbol lists and one
``{name, dtype, shape}`` record per tensor. Parameters use their model
names; Adam moments are stored as ``adam.m.<name>`` / ``adam.v.<name>``.
Payloads are written in little-endian byte order regardless of platform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor
from .data import Vocabulary
from .model import TransducerModel
from .optim import AdamState
from .transformer import TransformerConfig, parameter_shapes

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"CHARTRCK"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


class CheckpointError(RuntimeError):
    """Unreadable, truncated, wrong-version or inconsistent checkpoint."""


@dataclass
class Checkpoint:
    """Full training state at one step; sufficient for bit-exact resume."""

    config: TransformerConfig
    train_config: "TrainConfig"  # noqa: F821  (import cycle; runtime duck-typed)
    step: int
    params: dict[str, np.ndarray]
    adam: AdamState
    src_symbols: list[str]
    tgt_symbols: list[str]
    dev_history: list[tuple[int, float]] = field(default_factory=list)
    version: int = FORMAT_VERSION

    @property
    def rng_state(self) -> dict:
        """All random streams are derived from (seed, domain, counter), so
        the base seed plus the step fully identify the rng state."""
        return {"scheme": "seed-sequence counters",
                "seed": self.train_config.seed, "step": self.step}

    def to_model(self) -> TransducerModel:
        params = {k: Tensor(v.copy(), requires_grad=True) for k, v in self.params.items()}
        return TransducerModel(
            config=self.config,
            params=params,
            src_vocab=Vocabulary(self.src_symbols),
            tgt_vocab=Vocabulary(self.tgt_symbols),
            encoder_mode=self.train_config.encoder_mode,
        )

    @property
    def dev_accuracy(self) -> float | None:
        for s, acc in self.dev_history:
            if s == self.step:
                return acc
        return None


def _tensor_records(ck: Checkpoint):
    for name, arr in ck.params.items():
        yield name, arr
    for name, arr in ck.adam.m.items():
        yield f"adam.m.{name}", arr
    for name, arr in ck.adam.v.items():
        yield f"adam.v.{name}", arr


def save_checkpoint(ck: Checkpoint, path) -> None:
    records = list(_tensor_records(ck))
    header = {
        "format_version": ck.version,
        "model_config": asdict(ck.config),
        "train_config": asdict(ck.train_config),
        "step": ck.step,
        "rng": ck.rng_state,
        "dev_history": [[int(s), float(a)] for s, a in ck.dev_history],
        "adam": {"step": ck.adam.step, "beta1": ck.adam.beta1,
                 "beta2": ck.adam.beta2, "epsilon": ck.adam.epsilon},
        "src_vocab": ck.src_symbols,
        "tgt_vocab": ck.tgt_symbols,
        "tensors": [{"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
                    for name, arr in records],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ck.version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in records:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[str(arr.dtype)]).tobytes())


def load_checkpoint(path) -> Checkpoint:
    from .training import TrainConfig  # deferred; training imports this module

    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 12 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
    off = len(MAGIC) + 12
    if len(raw) < off + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    off += hlen

    tensors: dict[str, np.ndarray] = {}
    for rec in header["tensors"]:
        dtype = _DTYPES.get(rec["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown tensor dtype {rec['dtype']!r}")
        shape = tuple(rec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if len(raw) < off + nbytes:
            raise CheckpointError(f"{path}: truncated payload at tensor {rec['name']!r}")
        arr = np.frombuffer(raw[off:off + nbytes], dtype=dtype).reshape(shape)
        tensors[rec["name"]] = arr.astype(rec["dtype"])
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")

    config = TransformerConfig(**header["model_config"])
    train_config = TrainConfig(**header["train_config"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    expected = parameter_shapes(config)
    if set(params) != set(expected):
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        raise CheckpointError(f"{path}: parameter names mismatch config "
                              f"(missing {sorted(missing)}, extra {sorted(extra)})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} shape {params[name].shape} != config shape {shape}"
            )
    adam_meta = header["adam"]
    adam = AdamState(
        step=int(adam_meta["step"]),
        beta1=float(adam_meta["beta1"]),
        beta2=float(adam_meta["beta2"]),
        epsilon=float(adam_meta["epsilon"]),
        m={k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")},
        v={k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")},
    )
    return Checkpoint(
        config=config,
        train_config=train_config,
        step=int(header["step"]),
        params=params,
        adam=adam,
        src_symbols=list(header["src_vocab"]),
        tgt_symbols=list(header["tgt_vocab"]),
        dev_history=[(int(s), float(a)) for s, a in header["dev_history"]],
        version=version,
    )
