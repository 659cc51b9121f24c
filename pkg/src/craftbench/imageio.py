"""Image persistence.

Two files per image: a binary PPM (P6, 8-bit) for eyeballing, and the
authoritative float32 sidecar the pipeline computes on.  The sidecar
is 16 bytes of header (magic "CVF1", then u32 height, width, channels,
little-endian) followed by the raw little-endian float32 array in
row-major order.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CVF1"
_HEADER = struct.Struct("<III")


def write_float_image(path, img):
    arr = np.ascontiguousarray(img, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError("expected an h x w x c array")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(h, w, c))
        f.write(arr.tobytes())


def read_float_image(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise ValueError(f"{path}: not a float image sidecar")
    h, w, c = _HEADER.unpack(data[4:16])
    expect = 16 + 4 * h * w * c
    if len(data) != expect:
        raise ValueError(f"{path}: payload is {len(data)} bytes, expected {expect}")
    arr = np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c)
    return arr.astype(np.float64)


def quantize(img):
    """[0, 1] floats to the 8-bit view stored in the PPM."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    if img.dtype != np.uint8:
        img = quantize(img)
    h, w, c = img.shape
    if c != 3:
        raise ValueError("PPM wants 3 channels")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def render_panel(clean, adv, amplify=10.0):
    """clean | adversarial | amplified difference, side by side."""
    diff = np.clip(0.5 + amplify * (adv - clean), 0.0, 1.0)
    return np.concatenate([clean, adv, diff], axis=1)
