"""Image environments: procedural digit glyphs, colour staining and rotation.

Raw image datasets are :class:`Dataset` objects whose rows are flattened
grey-level pixels (0-255) and whose ``meta["image_shape"]`` records
``(rows, cols)``.

Coloured layout produced by :func:`colorize`, for ``B`` pixel blocks and a
palette of ``P`` colours: columns ``0..B-1`` hold the block-mean grey level
scaled to [0, 1].  Column ``B + b*P + k`` holds the fraction of block ``b``
stained with colour ``k``.  Only the sample's own colour is ever nonzero.
"""

import math

import numpy as np

from fedinv.errors import ContractError, DomainError
from fedinv.seeding import stream
from fedinv.tensorcore import Dataset

STAIN_MODES = ("none", "foreground", "background", "both")
STAIN_THRESHOLD = 0.5

# Seven-segment style strokes plus two diagonals, in a unit box (x right, y down).
_PTS = {"tl": (0.28, 0.15), "tr": (0.72, 0.15), "ml": (0.28, 0.5), "mr": (0.72, 0.5),
        "bl": (0.28, 0.85), "br": (0.72, 0.85)}
_SEGS = {"a": ("tl", "tr"), "b": ("tr", "mr"), "c": ("mr", "br"), "d": ("bl", "br"),
         "e": ("ml", "bl"), "f": ("tl", "ml"), "g": ("ml", "mr"), "h": ("tr", "bl"),
         "i": ("tl", "mr")}
_DIGITS = ("abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "ah", "abcdefg", "abcdfg")


def image_dataset(images, labels, env_id=0):
    images = np.asarray(images)
    n, rows, cols = images.shape
    return Dataset(images.reshape(n, rows * cols).astype(np.float64),
                   np.asarray(labels).astype(np.int64), env_id,
                   {"image_shape": [rows, cols], "rotation_deg": 0.0, "stain_mode": "none",
                    "palette_size": 0, "spurious_corr": 0.0})


def synthetic_digits(n, seed, size=28, label="glyphs"):
    """Ten classes of jittered stroke glyphs as uint8 images ``(n, size, size)``.

    A stand-in for MNIST when the IDX files are not available: each class
    is a fixed stroke pattern, randomly warped, thickened and shifted per
    sample.
    """
    rng = stream(seed, label)
    labels = rng.integers(0, 10, size=n)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1) / size
    out = np.empty((n, size * size), dtype=np.uint8)
    for k in range(n):
        ang = math.radians(rng.uniform(-12, 12))
        scale = rng.uniform(0.8, 1.1)
        shear = rng.uniform(-0.25, 0.25)
        M = scale * np.array([[math.cos(ang), -math.sin(ang) + shear],
                              [math.sin(ang), math.cos(ang)]])
        shift = 0.5 + rng.uniform(-0.08, 0.08, size=2)
        width = rng.uniform(0.035, 0.07)
        dist = np.full(pix.shape[0], np.inf)
        for seg in _DIGITS[labels[k]]:
            p0, p1 = (np.array(_PTS[e]) + rng.normal(0, 0.03, 2) for e in _SEGS[seg])
            a = (p0 - 0.5) @ M.T + shift
            b = (p1 - 0.5) @ M.T + shift
            ab = b - a
            t = np.clip((pix - a) @ ab / max(ab @ ab, 1e-12), 0.0, 1.0)
            dist = np.minimum(dist, np.linalg.norm(pix - a - t[:, None] * ab, axis=1))
        ink = np.clip(1.0 - (dist - width) * size, 0.0, 1.0)
        ink = ink * rng.uniform(0.75, 1.0) + rng.uniform(0, 0.08, size=ink.shape)
        out[k] = np.clip(255.0 * ink, 0, 255).astype(np.uint8)
    return out.reshape(n, size, size), labels


def _image_shape(data):
    shape = data.meta.get("image_shape")
    if shape is not None:
        return int(shape[0]), int(shape[1])
    side = math.isqrt(data.X.shape[1])
    if side * side != data.X.shape[1]:
        raise DomainError("features are not a square image and no image_shape is recorded")
    return side, side


def stain_mask(images, mode):
    """Boolean mask of stained pixels; threshold is half of each image's maximum."""
    images = np.asarray(images, dtype=np.float64)
    if mode not in STAIN_MODES:
        raise ContractError(f"unknown stain mode {mode!r}")
    flat = images.reshape(images.shape[0], -1)
    if mode == "none":
        return np.zeros(flat.shape, dtype=bool).reshape(images.shape)
    if mode == "both":
        return np.ones(flat.shape, dtype=bool).reshape(images.shape)
    fg = flat > STAIN_THRESHOLD * flat.max(axis=1, keepdims=True)
    return (fg if mode == "foreground" else ~fg).reshape(images.shape)


def draw_colors(labels, palette_size, corr, rng, color_map=None):
    """Colour index per sample.

    With probability ``|corr|`` the colour is tied to the label: the mapped
    colour when ``corr >= 0``, or the next palette entry when ``corr < 0``.
    Otherwise it is drawn uniformly from the palette.  ``color_map[label]``
    defaults to ``label mod palette_size``.
    """
    labels = np.asarray(labels)
    if color_map is None:
        tied = labels % palette_size
    else:
        tied = np.asarray(color_map)[labels] % palette_size
    if corr < 0:
        tied = (tied + 1) % palette_size
    keep = rng.random(labels.shape[0]) < abs(corr)
    free = rng.integers(0, palette_size, size=labels.shape[0])
    return np.where(keep, tied, free)


def colorize(data, mode, palette_size, corr, seed, block=4, color_map=None, label="stain"):
    """Stain a raw image dataset and return it in the coloured feature layout."""
    if palette_size < 2:
        raise DomainError(f"palette_size must be >= 2, got {palette_size}")
    if not abs(corr) <= 1.0:
        raise DomainError(f"correlation {corr} outside [-1, 1]")
    rows, cols = _image_shape(data)
    if rows % block or cols % block:
        raise ContractError(f"block {block} does not tile a {rows}x{cols} image")
    n = len(data)
    imgs = data.X.reshape(n, rows, cols)
    rng = stream(seed, f"{label}/{data.env_id}")
    colors = draw_colors(data.y, palette_size, corr, rng, color_map)
    mask = stain_mask(imgs, mode).astype(np.float64)

    br, bc = rows // block, cols // block

    def pool(a):
        return a.reshape(n, br, block, bc, block).mean(axis=(2, 4)).reshape(n, br * bc)

    gray = pool(imgs / 255.0)
    frac = pool(mask)
    nb = br * bc
    chan = np.zeros((n, nb, palette_size))
    chan[np.arange(n)[:, None], np.arange(nb)[None, :], colors[:, None]] = frac
    meta = dict(data.meta)
    meta.update({"stain_mode": mode, "palette_size": int(palette_size), "spurious_corr": float(corr),
                 "block": int(block), "stained_fraction": float(mask.mean()),
                 "image_shape": [rows, cols], "layout": "colored"})
    return Dataset(np.hstack([gray, chan.reshape(n, nb * palette_size)]), data.y, data.env_id, meta)


def color_indices(data):
    """Recover each sample's colour from a coloured dataset (-1 if unstained)."""
    P = data.meta["palette_size"]
    rows, cols = data.meta["image_shape"]
    nb = (rows // data.meta["block"]) * (cols // data.meta["block"])
    chan = data.X[:, nb:].reshape(len(data), nb, P).sum(axis=1)
    return np.where(chan.max(axis=1) > 0, chan.argmax(axis=1), -1)


def rotate_images(images, angle_deg):
    """Rotate ``(n, rows, cols)`` images about their centre, nearest-neighbour, zero fill."""
    images = np.asarray(images)
    n, rows, cols = images.shape
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    cy, cx = (rows - 1) / 2.0, (cols - 1) / 2.0
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    # inverse map: source pixel for each output pixel
    sx = c * (xx - cx) + s * (yy - cy) + cx
    sy = -s * (xx - cx) + c * (yy - cy) + cy
    ix, iy = np.rint(sx).astype(np.intp), np.rint(sy).astype(np.intp)
    inside = (ix >= 0) & (ix < cols) & (iy >= 0) & (iy < rows)
    out = np.zeros_like(images)
    out[:, inside] = images[:, iy[inside], ix[inside]]
    return out


def rotate_plane(X, angle_deg, plane):
    i, j = plane
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    out = np.array(X, dtype=np.float64, copy=True)
    out[:, i] = c * X[:, i] - s * X[:, j]
    out[:, j] = s * X[:, i] + c * X[:, j]
    return out


def rotate_env(data, angle_deg, plane=None):
    """Rotate every sample by ``angle_deg``.

    With ``plane=(i, j)`` the two feature columns are rotated as a 2-D vector.
    Otherwise features must be a raw image (see module docstring).
    """
    meta = dict(data.meta)
    meta["rotation_deg"] = float(meta.get("rotation_deg", 0.0)) + float(angle_deg)
    if plane is not None:
        if not (0 <= plane[0] < data.X.shape[1] and 0 <= plane[1] < data.X.shape[1]):
            raise ContractError(f"rotation plane {plane} out of range")
        return Dataset(rotate_plane(data.X, angle_deg, plane), data.y, data.env_id, meta)
    if meta.get("layout") == "colored":
        raise DomainError("rotate raw images before staining them")
    rows, cols = _image_shape(data)
    if rows != cols:
        raise DomainError(f"cannot rotate non-square {rows}x{cols} images")
    imgs = rotate_images(data.X.reshape(len(data), rows, cols), angle_deg)
    return Dataset(imgs.reshape(len(data), -1), data.y, data.env_id, meta)
