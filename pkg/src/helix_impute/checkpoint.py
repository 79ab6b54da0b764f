"""Binary checkpoint container.

Layout::

    b"HELIXCKPT1\\n"
    uint64 little-endian: length of the JSON header in bytes
    JSON header (sorted keys, compact): run config, feature count, manifest
    raw little-endian float64 payloads, one per manifest entry, in order

Manifest offsets are relative to the first payload byte. Writing is fully
deterministic, so save -> load -> save reproduces the file byte for byte.
"""

import json
import struct
from typing import NamedTuple

import numpy as np

from .config import RunConfig
from .errors import ConfigError, ManifestError, MagicError, TruncatedError
from .io import NormStats
from .model import HelixModel

MAGIC = b"HELIXCKPT1\n"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class Checkpoint(NamedTuple):
    model: HelixModel
    config: RunConfig
    norm: NormStats


def _tensors(model, norm):
    out = [(name, p.data) for name, p in model.named_parameters()]
    if norm is not None:
        out.append(("norm.mean", np.asarray(norm.mean, dtype=np.float64)))
        out.append(("norm.std", np.asarray(norm.std, dtype=np.float64)))
    return out


def to_bytes(model, config, norm=None):
    tensors = _tensors(model, norm)
    manifest, offset = [], 0
    for name, arr in tensors:
        nbytes = int(arr.size) * 8
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": FORMAT_VERSION,
        "config": config.to_dict(),
        "n_features": model.config.n_features,
        "manifest": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    return MAGIC + _LEN.pack(len(hbytes)) + hbytes + body


def save_checkpoint(path, model, config, norm=None):
    blob = to_bytes(model, config, norm)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def from_bytes(blob):
    if not blob.startswith(MAGIC):
        raise MagicError("not a checkpoint: magic string HELIXCKPT1 missing")
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise TruncatedError("file ends inside the header length field")
    (hlen,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + hlen:
        raise TruncatedError(f"header needs {hlen} bytes, only {len(blob) - pos} present")
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"header is not valid JSON: {exc}") from exc
    pos += hlen
    if not isinstance(header, dict) or header.get("format") != FORMAT_VERSION:
        raise ManifestError(f"unsupported header format {header.get('format') if isinstance(header, dict) else None!r}")
    try:
        config = RunConfig.from_dict(header["config"])
        n_features = int(header["n_features"])
        manifest = list(header["manifest"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise ManifestError(f"header is incomplete or invalid: {exc}") from exc
    try:
        model = HelixModel.initialize(config.model_config(n_features), 0)
    except ConfigError as exc:
        raise ManifestError(f"header config cannot build a model: {exc}") from exc

    expected = [(n, p.shape) for n, p in model.named_parameters()] + [("norm.mean", (n_features,)), ("norm.std", (n_features,))]
    has_norm = len(manifest) == len(expected)
    if not has_norm:
        expected = expected[:-2]
    if len(manifest) != len(expected):
        raise ManifestError(f"manifest has {len(manifest)} tensors, config implies {len(expected)}")
    payload = memoryview(blob)[pos:]
    arrays, offset = {}, 0
    for entry, (name, shape) in zip(manifest, expected):
        if entry.get("name") != name:
            raise ManifestError(f"expected tensor {name!r} at this position, found {entry.get('name')!r}", name)
        if tuple(entry.get("shape", ())) != tuple(shape):
            raise ManifestError(f"shape {entry.get('shape')} disagrees with config shape {list(shape)}", name)
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if entry.get("offset") != offset or entry.get("nbytes") != nbytes:
            raise ManifestError(f"offset/size {entry.get('offset')}/{entry.get('nbytes')} expected {offset}/{nbytes}", name)
        if offset + nbytes > len(payload):
            raise TruncatedError(f"payload for {name!r} is cut short")
        arrays[name] = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise ManifestError(f"{len(payload) - offset} trailing bytes after the last tensor")
    norm = NormStats(arrays.pop("norm.mean"), arrays.pop("norm.std")) if has_norm else None
    model.load_state_dict(arrays)
    return Checkpoint(model, config, norm)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
