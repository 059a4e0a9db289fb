"""LDR/HDR image types, PPM/PFM I/O, linearization, mu-law and PSNR."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, clip, log1p, mul

MU = 5000.0
GAMMA = 2.2
PSNR_CAP = 100.0


class ImageFormatError(ValueError):
    pass


@dataclass
class LdrFrame:
    pixels: np.ndarray            # H x W x 3 in [0, 1]
    exposure_time: float          # seconds
    gamma: float = GAMMA

    def __post_init__(self):
        self.pixels = np.clip(np.asarray(self.pixels, dtype=np.float32), 0.0, 1.0)
        if not self.exposure_time > 0:
            raise ValueError(f"exposure time must be positive, got {self.exposure_time}")


@dataclass
class HdrImage:
    radiance: np.ndarray          # H x W x 3, linear, >= 0

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float32)
        if not np.isfinite(self.radiance).all() or (self.radiance < 0).any():
            raise ValueError("HDR radiance must be finite and nonnegative")


@dataclass
class FrameSet:
    frames: list[LdrFrame]
    reference_index: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a frame set needs at least one frame")
        if not 0 <= self.reference_index < len(self.frames):
            raise ValueError(f"reference index {self.reference_index} out of range for {len(self.frames)} frames")
        sizes = {f.pixels.shape[:2] for f in self.frames}
        if len(sizes) != 1:
            raise ValueError(f"frames differ in size: {sorted(sizes)}")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].pixels.shape[:2]


# --- file formats ----------------------------------------------------------

def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed header: unexpected end of file")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the payload
    return tokens, pos + 1


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = _header_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed header {tokens!r}") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}, only 255 is read")
    need = w * h * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).astype(np.float32) / 255.0


def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"PPM needs H x W x 3 pixels, got {pixels.shape}")
    h, w, _ = pixels.shape
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Returns H x W x 3 for colour ("PF") files and H x W x 1 for greyscale ("Pf")."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = _header_tokens(buf, 4)
    if tokens[0] == b"PF":
        channels = 3
    elif tokens[0] == b"Pf":
        channels = 1
    else:
        raise ImageFormatError(f"{path}: not a PFM (magic {tokens[0]!r})")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed header {tokens!r}") from None
    if scale == 0:
        raise ImageFormatError(f"{path}: scale field must be nonzero")
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * channels * 4
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    rows = np.frombuffer(payload, dtype=dtype).reshape(h, w, channels)
    return rows[::-1].astype(np.float32)


def write_pfm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Writes 1- or 3-channel float images; 2-channel input (flow) gets a zero third channel."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[2] == 2:
        image = np.concatenate([image, np.zeros_like(image[..., :1])], axis=2)
    if image.shape[2] not in (1, 3):
        raise ValueError(f"PFM holds 1 or 3 channels, got {image.shape[2]}")
    h, w, c = image.shape
    magic = "PF" if c == 3 else "Pf"
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image[::-1], dtype="<f4").tobytes())


def image_io(path, mode: str, data: np.ndarray | None = None):
    if mode == "read_ppm":
        return read_ppm(path)
    if mode == "read_pfm":
        return read_pfm(path)
    if mode == "write_ppm":
        return write_ppm(path, data)
    if mode == "write_pfm":
        return write_pfm(path, data)
    raise ValueError(f"unknown image_io mode {mode!r}")


# --- radiometry ------------------------------------------------------------

def linearize(frame: LdrFrame) -> np.ndarray:
    if not frame.exposure_time > 0:
        raise ValueError(f"exposure time must be positive, got {frame.exposure_time}")
    return (frame.pixels.astype(np.float64) ** frame.gamma / frame.exposure_time).astype(np.float32)


def tonemap_mu(h, mu: float = MU):
    """log(1 + mu h) / log(1 + mu). Works on arrays and on Tensors."""
    if isinstance(h, Tensor):
        if (h.data < 0).any():
            raise ValueError("mu-law tonemap needs nonnegative input")
        return mul(log1p(mul(h, mu)), 1.0 / math.log1p(mu))
    h = np.asarray(h)
    if (h < 0).any():
        raise ValueError("mu-law tonemap needs nonnegative input")
    return np.log1p(mu * h) / math.log1p(mu)


def hdr_scale(gt: np.ndarray, percentile: float = 99.0) -> float:
    """Normalizer for a ground-truth radiance map: its 99th percentile."""
    s = float(np.percentile(np.asarray(gt), percentile))
    return s if s > 0 else 1.0


def normalize(h, scale: float):
    """Divide by ``scale`` and clamp to [0, 1]."""
    if isinstance(h, Tensor):
        return clip(mul(h, 1.0 / scale), 0.0, 1.0)
    return np.clip(np.asarray(h) / scale, 0.0, 1.0)


def psnr(pred: np.ndarray, target: np.ndarray, domain: str = "linear") -> float:
    """PSNR in dB for images in [0, 1]; identical inputs give +inf."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"psnr shape mismatch: {pred.shape} vs {target.shape}")
    if domain == "mu":
        pred, target = tonemap_mu(pred), tonemap_mu(target)
    elif domain != "linear":
        raise ValueError(f"unknown psnr domain {domain!r}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def capped(db: float) -> float:
    return min(db, PSNR_CAP)


def hdr_psnr(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(PSNR-mu, PSNR-L) after normalizing both by the ground truth's 99th percentile."""
    s = hdr_scale(gt)
    p, g = normalize(pred, s), normalize(gt, s)
    return psnr(p, g, "mu"), psnr(p, g, "linear")


def exposure_weighted_average(frames: FrameSet, alpha: float = 1 / 3, beta: float = 2 / 3) -> np.ndarray:
    """Naive merge: confidence-weighted mean of the linearized frames, no alignment."""
    from .exposure import confidence_np

    num = np.zeros(frames.frames[0].pixels.shape, dtype=np.float64)
    den = np.zeros(frames.shape + (1,), dtype=np.float64)
    for f in frames.frames:
        w = confidence_np(f.pixels.mean(axis=2, keepdims=True), alpha, beta) + 1e-6
        num += w * linearize(f)
        den += w
    return (num / den).astype(np.float32)
