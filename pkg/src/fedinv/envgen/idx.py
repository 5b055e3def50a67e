"""IDX (MNIST) reader and writer.

Header: big-endian uint32 magic ``0x00000803`` for images (count, rows,
cols follow) or ``0x00000801`` for labels (count follows), then uint8
payload.
"""

import os
import struct
from pathlib import Path

import numpy as np

from fedinv.errors import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read(path, magic, ndims):
    raw = Path(path).read_bytes()
    head = 4 + 4 * ndims
    if len(raw) < head:
        raise FormatError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndims}I", raw[4:head])
    size = int(np.prod(dims))
    if len(raw) - head != size:
        raise FormatError(f"{path}: payload has {len(raw) - head} bytes, header implies {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path):
    """Return ``(images, labels)`` as uint8 arrays of shape (n, rows, cols) and (n,)."""
    images = _read(images_path, IMAGE_MAGIC, 3)
    labels = _read(labels_path, LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images_path} holds {images.shape[0]} images but "
                          f"{labels_path} holds {labels.shape[0]} labels")
    return images, labels


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


def find_mnist(directory=None):
    """Locate the MNIST training IDX pair, or return None.

    Looks in ``directory`` or ``$FEDINV_MNIST_DIR`` for the standard file names,
    with or without the ``.idx`` infix.
    """
    directory = directory or os.environ.get("FEDINV_MNIST_DIR")
    if not directory:
        return None
    base = Path(directory)
    for img, lab in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                     ("train-images.idx3-ubyte", "train-labels.idx1-ubyte")):
        if (base / img).is_file() and (base / lab).is_file():
            return base / img, base / lab
    return None
