"""Binary checkpoint container: magic "FAMT", version, a canonical JSON
config block, then named tensors (little-endian, row-major). The vocabulary
token file is stored alongside the checkpoint and referenced by content
hash; embedding rows live in the container under "vocab.embedding".
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .model import Seq2Seq, TransformerConfig
from .vocab import MultiVocab, read_vocab, write_vocab

MAGIC = b"FAMT"
VERSION = 1

_DTYPE_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def write_container(path: str | Path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            if arr.dtype == np.float32:
                arr = arr.astype("<f4", copy=False)
            elif arr.dtype == np.float64:
                arr = arr.astype("<f8", copy=False)
            elif arr.dtype == np.int64:
                arr = arr.astype("<i8", copy=False)
            tag = _DTYPE_TAGS.get(arr.dtype)
            if tag is None:
                raise FormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", tag))
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes(order="C"))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    offset = 4
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    (config_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    config = json.loads(data[offset : offset + config_len].decode("utf-8"))
    offset += config_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (tag,) = struct.unpack_from("<B", data, offset)
        offset += 1
        if tag not in _TAG_DTYPES:
            raise FormatError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dtype = _TAG_DTYPES[tag]
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}Q", data, offset)
        offset += 8 * rank
        size = int(np.prod(shape)) * dtype.itemsize if rank else dtype.itemsize
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)) if rank else 1,
                            offset=offset).reshape(shape)
        offset += size
        tensors[name] = arr.copy()
    return config, tensors


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def save_model(
    path: str | Path,
    model: Seq2Seq,
    vocab: MultiVocab,
    extra: dict | None = None,
) -> None:
    path = Path(path)
    vocab_path = path.with_name(path.name + ".vocab")
    write_vocab(vocab, vocab_path)
    tensors: dict[str, np.ndarray] = {"vocab.embedding": vocab.embedding_matrix}
    state = model.state_dict()
    for name, tensor in state.items():
        tensors[f"model.{name}"] = tensor.detach().cpu().numpy()
    config = {
        "format": VERSION,
        "kind": "model",
        "model": asdict(model.cfg),
        "vocab_file": vocab_path.name,
        "vocab_sha256": file_sha256(vocab_path),
        "extra": extra or {},
    }
    write_container(path, config, tensors)


def load_model(path: str | Path) -> tuple[Seq2Seq, MultiVocab, dict]:
    path = Path(path)
    config, tensors = read_container(path)
    if config.get("kind") != "model":
        raise FormatError(f"{path}: not a model checkpoint")
    vocab_path = path.with_name(config["vocab_file"])
    if file_sha256(vocab_path) != config["vocab_sha256"]:
        raise FormatError(f"{vocab_path}: content hash mismatch")
    vocab = read_vocab(vocab_path, tensors["vocab.embedding"].astype(np.float32))
    cfg = TransformerConfig(**config["model"])
    model = Seq2Seq(cfg, vocab)
    state = {
        name[len("model."):]: torch.from_numpy(arr.copy())
        for name, arr in tensors.items()
        if name.startswith("model.")
    }
    model.load_state_dict(state)
    model.eval()
    return model, vocab, config


def save_alignment(path: str | Path, alignment) -> None:
    from .alignment import HubAlignment  # local import to avoid a cycle

    assert isinstance(alignment, HubAlignment)
    tensors = {
        f"map.{lang}": m.matrix.astype(np.float64)
        for lang, m in alignment.maps.items()
    }
    config = {
        "format": VERSION,
        "kind": "alignment",
        "pivot": alignment.pivot,
        "orthogonal": {l: m.orthogonal for l, m in alignment.maps.items()},
        "accuracies": alignment.accuracies,
    }
    write_container(path, config, tensors)


def load_alignment(path: str | Path):
    from .alignment import HubAlignment, LinearMap

    config, tensors = read_container(path)
    if config.get("kind") != "alignment":
        raise FormatError(f"{path}: not an alignment artifact")
    pivot = config["pivot"]
    maps = {}
    for name, arr in tensors.items():
        lang = name[len("map."):]
        maps[lang] = LinearMap(
            arr.astype(np.float64), lang, pivot,
            orthogonal=bool(config["orthogonal"].get(lang, False)),
        )
    return HubAlignment(pivot=pivot, maps=maps, accuracies=dict(config["accuracies"]))
