"""PFM disparity maps, binary PPM images and PGM masks, plus the paired-file dataset layout.

PFM maps are returned as float32 so a write/read cycle is bit-exact; PPM
images are ``float64[3, H, W]`` in [0, 1].
"""

import json
import logging
import os
import re

import numpy as np

log = logging.getLogger(__name__)


class PfmError(ValueError):
    """Base class for malformed PFM files."""


class PfmMagicError(PfmError):
    pass


class PfmTruncatedError(PfmError):
    pass


class PfmScaleError(PfmError):
    pass


class NetpbmError(ValueError):
    pass


_WS = b" \t\r\n"


def _header_tokens(buf, count, comments=False):
    """Split the first ``count`` whitespace-separated tokens off ``buf``.

    Returns ``(tokens, offset)`` where ``offset`` is the first payload byte
    (just past the single whitespace byte that ends the last token).
    """
    tokens, i, n = [], 0, len(buf)
    while len(tokens) < count:
        while i < n and (buf[i] in _WS or (comments and buf[i] == ord("#"))):
            if buf[i] == ord("#"):
                while i < n and buf[i] not in b"\r\n":
                    i += 1
            i += 1
        start = i
        while i < n and buf[i] not in _WS:
            i += 1
        if start == i:
            return tokens, None
        tokens.append(buf[start:i].decode("ascii", "replace"))
    if i >= n:
        return tokens, None
    return tokens, i + 1


def write_pfm(path, disparity):
    """Write a grayscale little-endian PFM (rows bottom-to-top)."""
    d = np.asarray(disparity)
    if d.ndim != 2:
        raise ValueError(f"PFM map must be 2D [H, W], got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("PFM write needs finite values")
    H, W = d.shape
    payload = np.ascontiguousarray(d[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{W} {H}\n-1.0\n".encode("ascii"))
        fh.write(payload)


def read_pfm(path):
    """Read a grayscale PFM into ``float32[H, W]`` (top row first)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, off = _header_tokens(buf, 4)
    if not tokens or tokens[0] != "Pf":
        magic = tokens[0] if tokens else ""
        raise PfmMagicError(f"{path}: bad PFM magic {magic!r} (expected 'Pf')")
    if off is None:
        raise PfmTruncatedError(f"{path}: header ends early")
    try:
        W, H = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise PfmError(f"{path}: malformed PFM header {tokens!r}") from None
    if W < 1 or H < 1:
        raise PfmError(f"{path}: non-positive size {W}x{H}")
    if scale == 0.0:
        raise PfmScaleError(f"{path}: zero scale field (endianness undefined)")
    need = 4 * W * H
    if len(buf) - off < need:
        raise PfmTruncatedError(f"{path}: payload has {len(buf) - off} bytes, need {need}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=W * H, offset=off).reshape(H, W)
    return np.ascontiguousarray(data[::-1], dtype=np.float32)


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, off = _header_tokens(buf, 4, comments=True)
    if not tokens or tokens[0] != magic:
        raise NetpbmError(f"{path}: expected {magic} header, got {tokens[:1]!r}")
    if off is None:
        raise NetpbmError(f"{path}: header ends early")
    try:
        W, H, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise NetpbmError(f"{path}: malformed header {tokens!r}") from None
    if maxval != 255:
        raise NetpbmError(f"{path}: maxval {maxval} unsupported (only 255)")
    if W < 1 or H < 1:
        raise NetpbmError(f"{path}: non-positive size {W}x{H}")
    need = W * H * channels
    if len(buf) - off < need:
        raise NetpbmError(f"{path}: payload has {len(buf) - off} bytes, need {need}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=off), H, W


def write_ppm(path, image):
    """Write ``[3, H, W]`` values in [0, 1] as binary P6, rounding to nearest."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM image must be [3, H, W], got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    _, H, W = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())


def read_ppm(path):
    raw, H, W = _read_netpbm(path, "P6", 3)
    return raw.reshape(H, W, 3).transpose(2, 0, 1) / 255.0


def write_pgm_mask(path, mask):
    """Boolean mask as binary P5: 255 = valid, 0 = invalid."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {m.shape}")
    H, W = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(np.where(m, 255, 0).astype(np.uint8).tobytes())


def read_pgm_mask(path):
    raw, H, W = _read_netpbm(path, "P5", 1)
    return raw.reshape(H, W) == 255


# -- paired-file directory layout: <stem>.left.ppm / .right.ppm / .disp.pfm / .mask.pgm

_STEM = re.compile(r"^(.+)\.left\.ppm$")
MANIFEST = "dataset.json"


def save_dataset(directory, samples, meta=None):
    """Write samples as paired files plus a small JSON manifest (calibration, generator params)."""
    os.makedirs(directory, exist_ok=True)
    stems = []
    for i, s in enumerate(samples):
        stem = f"{i:05d}"
        base = os.path.join(directory, stem)
        write_ppm(base + ".left.ppm", s.left)
        write_ppm(base + ".right.ppm", s.right)
        write_pfm(base + ".disp.pfm", np.where(s.valid_mask, s.gt_disparity, 0.0))
        write_pgm_mask(base + ".mask.pgm", s.valid_mask)
        stems.append(stem)
    calib = samples[0].calib if samples else None
    doc = {"count": len(stems),
           "calib": None if calib is None else {"focal_px": calib.focal_px,
                                                "baseline_mm": calib.baseline_mm},
           "meta": meta or {}}
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(doc, fh, indent=2)
    return stems


def list_stems(directory):
    stems = []
    for name in sorted(os.listdir(directory)):
        m = _STEM.match(name)
        if m:
            stems.append(m.group(1))
    return stems


def load_dataset(directory):
    """Read every ``<stem>.left.ppm`` group in ``directory`` (sorted by stem)."""
    from .synth import Calib, StereoSample

    calib = Calib()
    manifest = os.path.join(directory, MANIFEST)
    if os.path.exists(manifest):
        with open(manifest) as fh:
            c = json.load(fh).get("calib")
        if c:
            calib = Calib(float(c["focal_px"]), float(c["baseline_mm"]))
    samples = []
    for stem in list_stems(directory):
        base = os.path.join(directory, stem)
        disp = read_pfm(base + ".disp.pfm").astype(np.float64)
        mask = np.isfinite(disp)
        if os.path.exists(base + ".mask.pgm"):
            mask &= read_pgm_mask(base + ".mask.pgm")
        samples.append(StereoSample(read_ppm(base + ".left.ppm"), read_ppm(base + ".right.ppm"),
                                    disp, mask, calib, name=stem))
    if not samples:
        raise FileNotFoundError(f"no '<stem>.left.ppm' files in {directory}")
    log.info("loaded %d samples from %s", len(samples), directory)
    return samples
