"""Small file-format helpers: binary PGM, key-value sidecars, hashing."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale array as binary PGM (P5). Row 0 is the top."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM writer expects a 2D uint8 array")
    h, w = image.shape
    header = b"P5\n%d %d\n255\n" % (w, h)
    atomic_write_bytes(path, header + np.ascontiguousarray(image).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image  # optional dependency

    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path)


def write_image(path, image: np.ndarray) -> None:
    """Dispatch on suffix: ``.pgm`` (always available) or ``.png`` (needs Pillow)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, image)
    elif suffix == ".png":
        write_png(path, image)
    else:
        raise ValueError(f"unsupported image format {suffix!r}; use .pgm or .png")


def write_sidecar(path, meta: dict) -> None:
    """Write ``key = value`` lines; values are JSON so they read back exactly."""
    lines = [f"{k} = {json.dumps(v, sort_keys=True)}" for k, v in meta.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_sidecar(path) -> dict:
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            meta[key] = json.loads(value)
    return meta


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def stable_hash(obj, length: int = 16) -> str:
    """Short content hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:length]
