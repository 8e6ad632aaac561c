"""Binary checkpoint persistence.

Layout: magic b"SAMN", u32 version (little-endian), u32 JSON header length,
header bytes, then for each array a u64 little-endian element count followed
by float64 little-endian data. The header carries the model kind, network
specs, parameter segment tables, seed provenance and the array directory, so
load(save(x)) round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from .. import probkit as pk
from ..fisher import FisherInfo

MAGIC = b"SAMN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "vae" | "ddpm" | "classifier"
    meta: dict  # json-able: specs, dims, seed provenance
    params: dc.ParamStore
    fim: FisherInfo | None = None
    schedule: pk.NoiseSchedule | None = None


def _segments_to_json(segments):
    return [[name, list(shape), offset] for name, shape, offset in segments]


def _segments_from_json(data):
    return [(name, tuple(shape), offset) for name, shape, offset in data]


def save_checkpoint(ckpt, path):
    arrays = {"params": ckpt.params.values}
    header = {
        "kind": ckpt.kind,
        "meta": ckpt.meta,
        "segments": _segments_to_json(ckpt.params.segments),
        "arrays": ["params"],
    }
    if ckpt.fim is not None:
        arrays["fim"] = ckpt.fim.values
        header["arrays"].append("fim")
        header["fim_sample_count"] = ckpt.fim.sample_count
        header["fim_source"] = ckpt.fim.source
    if ckpt.schedule is not None:
        arrays["betas"] = ckpt.schedule.betas
        header["arrays"].append("betas")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for key in header["arrays"]:
            arr = np.asarray(arrays[key], dtype="<f8").ravel()
            f.write(struct.pack("<Q", arr.size))
            f.write(arr.tobytes())


def _read_exact(f, n, path, what):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated {what}")
    return data


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, path, "header length"))
        header = json.loads(_read_exact(f, header_len, path, "header"))
        arrays = {}
        for key in header["arrays"]:
            (count,) = struct.unpack("<Q", _read_exact(f, 8, path, "array length"))
            data = _read_exact(f, count * 8, path, f"array {key!r}")
            arrays[key] = np.frombuffer(data, dtype="<f8").copy()
    params = dc.ParamStore(_segments_from_json(header["segments"]), arrays["params"])
    fim = None
    if "fim" in arrays:
        fim = FisherInfo(
            values=arrays["fim"],
            sample_count=int(header.get("fim_sample_count", 0)),
            source=header.get("fim_source", ""),
        )
        if fim.values.size != len(params):
            raise CheckpointError(
                f"{path}: FIM length {fim.values.size} misaligned with "
                f"params length {len(params)}"
            )
    schedule = None
    if "betas" in arrays:
        betas = arrays["betas"]
        schedule = pk.NoiseSchedule(betas=betas, alpha_bars=np.cumprod(1.0 - betas))
    return Checkpoint(
        kind=header["kind"],
        meta=header["meta"],
        params=params,
        fim=fim,
        schedule=schedule,
    )
