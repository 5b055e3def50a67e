"""Binary container for generated environments.

Layout (all integers little-endian uint32)::

    b"fedinv-data v1\\n"
    env_count
    env_count x (meta_len, meta_json_utf8)
    env_count x (features float32[n*d] row-major, labels float32[n])

Each meta block records ``env_id``, ``n``, ``d`` and ``label_kind``
("int" or "float") next to the generation metadata.  Features are stored
as 32-bit floats, so reading back returns float32-rounded values.
"""

import json
import os
import struct
from pathlib import Path

import numpy as np

from fedinv.errors import FormatError
from fedinv.tensorcore import Dataset

MAGIC = b"fedinv-data v1\n"


def write_container(path, envs):
    chunks = [MAGIC, struct.pack("<I", len(envs))]
    for env in envs:
        meta = dict(env.meta)
        meta.update({"env_id": int(env.env_id), "n": len(env), "d": int(env.X.shape[1]),
                     "label_kind": "int" if env.is_classification else "float"})
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        chunks += [struct.pack("<I", len(blob)), blob]
    for env in envs:
        chunks.append(env.X.astype("<f4").tobytes())
        chunks.append(np.asarray(env.y).reshape(len(env)).astype("<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def read_container(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a fedinv-data v1 container")
    pos = len(MAGIC)

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise FormatError(f"{path}: truncated at byte {pos}")
        piece = raw[pos:pos + nbytes]
        pos += nbytes
        return piece

    (count,) = struct.unpack("<I", take(4))
    metas = []
    for _ in range(count):
        (size,) = struct.unpack("<I", take(4))
        try:
            metas.append(json.loads(take(size).decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad metadata block: {exc}") from None
    envs = []
    for meta in metas:
        n, d = int(meta.pop("n")), int(meta.pop("d"))
        kind = meta.pop("label_kind")
        X = np.frombuffer(take(4 * n * d), dtype="<f4").reshape(n, d).astype(np.float64)
        y = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float64)
        if kind == "int":
            y = y.astype(np.int64)
        envs.append(Dataset(X, y, int(meta.pop("env_id")), meta))
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return envs
