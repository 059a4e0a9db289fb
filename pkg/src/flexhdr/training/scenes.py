"""Scenes: synthetic bracketed captures, scene directories, augmentation."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..imaging import (
    FrameSet,
    HdrImage,
    ImageFormatError,
    LdrFrame,
    read_pfm,
    read_ppm,
    write_pfm,
    write_ppm,
)

READ_NOISE = 0.5 / 255.0


@dataclass
class Scene:
    frame_set: FrameSet
    ground_truth: HdrImage | None = None
    flows: list[np.ndarray] | None = None     # per frame, H x W x 2 in reference geometry
    name: str = ""

    def __post_init__(self):
        if self.ground_truth is not None and self.ground_truth.radiance.shape[:2] != self.frame_set.shape:
            raise ValueError(
                f"ground truth size {self.ground_truth.radiance.shape[:2]} != frame size {self.frame_set.shape}"
            )

    @property
    def evs(self) -> list[float]:
        ref = self.frame_set.frames[self.frame_set.reference_index].exposure_time
        return [math.log2(f.exposure_time / ref) for f in self.frame_set.frames]


class SceneError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


# --- synthetic scenes ------------------------------------------------------

class _Radiance:
    """Band-limited random radiance: smooth gradient plus coloured Gaussian blobs."""

    def __init__(self, rng: np.random.Generator, size: int):
        s = float(size)
        self.base = rng.uniform(0.02, 0.12, 3) * rng.uniform(0.7, 1.0)
        self.grad = rng.normal(0, 0.1, (2, 3)) / s
        n_big = int(rng.integers(5, 10))
        n_small = int(rng.integers(12, 24))
        centres = rng.uniform(-0.1 * s, 1.1 * s, (n_big + n_small, 2))
        sigmas = np.concatenate([rng.uniform(0.06 * s, 0.2 * s, n_big), rng.uniform(1.5, 4.0, n_small)])
        amps = np.concatenate([
            np.exp(rng.uniform(math.log(0.05), math.log(3.0), n_big)),
            np.exp(rng.uniform(math.log(0.02), math.log(0.6), n_small)),
        ])
        tint = rng.uniform(0.55, 1.0, (n_big + n_small, 3))
        self.centres, self.sigmas, self.colours = centres, sigmas, amps[:, None] * tint

    def __call__(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        out = self.base + xs[..., None] * self.grad[0] + ys[..., None] * self.grad[1]
        out = np.maximum(out, 0.005)
        for (cx, cy), sg, col in zip(self.centres, self.sigmas, self.colours):
            out = out + np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sg * sg))[..., None] * col
        return out


class _MovingObject:
    """Soft-edged disc with its own striped texture."""

    def __init__(self, rng: np.random.Generator, size: int):
        s = float(size)
        self.centre = rng.uniform(0.3 * s, 0.7 * s, 2)
        self.radius = rng.uniform(0.12 * s, 0.2 * s)
        self.colour = np.exp(rng.uniform(math.log(0.05), math.log(2.0))) * rng.uniform(0.5, 1.0, 3)
        self.freq = rng.uniform(0.3, 0.8)
        self.angle = rng.uniform(0, math.pi)

    def mask(self, xs, ys):
        d = np.hypot(xs - self.centre[0], ys - self.centre[1])
        return np.clip((self.radius - d) / 1.5 + 0.5, 0.0, 1.0)

    def radiance(self, xs, ys):
        u = (xs - self.centre[0]) * math.cos(self.angle) + (ys - self.centre[1]) * math.sin(self.angle)
        return self.colour * (0.6 + 0.4 * np.sin(self.freq * u))[..., None]


def expose(radiance: np.ndarray, t: float, rng: np.random.Generator, gamma: float = 2.2) -> np.ndarray:
    """Clip, gamma-encode, quantize to 8 bits, add read noise."""
    ldr = np.clip(radiance * t, 0.0, 1.0) ** (1.0 / gamma)
    ldr = np.round(ldr * 255.0) / 255.0
    ldr = ldr + rng.normal(0.0, READ_NOISE, ldr.shape)
    return np.clip(ldr, 0.0, 1.0).astype(np.float32)


def make_synthetic_scene(
    seed: int,
    size: int = 64,
    n_frames: int = 3,
    ev_list=(-2.0, 0.0, 2.0),
    motion: str = "mixed",
    reference: int | None = None,
    max_shift: float = 4.0,
    shifts: list[tuple[float, float]] | None = None,
) -> Scene:
    """Render a random radiance field and bracket it.

    Frame i sees the background displaced by d_i and, for ``motion="mixed"``,
    a disc displaced by a further o_i. The stored flows map reference pixels
    to their position in frame i, so frame_i(p + flow_i(p)) = ref(p).
    ``shifts`` overrides the random global displacements.
    """
    evs = [float(e) for e in ev_list]
    if len(evs) != n_frames or n_frames < 1 or not all(math.isfinite(e) for e in evs):
        raise ValueError(f"ev_list must hold {n_frames} finite values, got {ev_list!r}")
    if motion not in ("none", "translation", "mixed"):
        raise ValueError(f"motion must be none, translation or mixed, got {motion!r}")
    if reference is None:
        reference = int(np.argmin(np.abs(evs)))
    if not 0 <= reference < n_frames:
        raise ValueError(f"reference index {reference} out of range")
    if shifts is not None and len(shifts) != n_frames:
        raise ValueError("need one shift per frame")

    rng = np.random.default_rng(seed)
    field = _Radiance(rng, size)
    obj = _MovingObject(rng, size) if motion == "mixed" else None
    ys, xs = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")

    def render(d, o):
        bx, by = xs - d[0], ys - d[1]
        r = field(bx, by)
        if obj is not None:
            ox, oy = bx - o[0], by - o[1]
            m = obj.mask(ox, oy)[..., None]
            r = (1 - m) * r + m * obj.radiance(ox, oy)
        return r

    frames, flows = [], []
    noise_rng = np.random.default_rng([seed, 1])
    for i, ev in enumerate(evs):
        if i == reference or motion == "none":
            d = np.zeros(2)
        elif shifts is not None:
            d = np.asarray(shifts[i], dtype=np.float64)
        else:
            d = rng.uniform(-max_shift, max_shift, 2)
        o = rng.uniform(-max_shift, max_shift, 2) if (obj is not None and i != reference) else np.zeros(2)
        t = 2.0**ev
        frames.append(LdrFrame(expose(render(d, o), t, noise_rng), exposure_time=t))
        fl = np.broadcast_to(d, (size, size, 2)).copy()
        if obj is not None:
            inside = obj.mask(xs, ys) > 0.5
            fl[inside] = d + o
        flows.append(fl.astype(np.float32))
    gt = render(np.zeros(2), np.zeros(2)).astype(np.float32)
    return Scene(FrameSet(frames, reference), HdrImage(gt), flows, name=f"synthetic-{seed}")


# --- augmentation ----------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    top: int = 0
    left: int = 0
    crop: int | None = None
    hflip: bool = False
    vflip: bool = False
    quarter_turns: int = 0      # each turn maps a displacement (dx, dy) to (-dy, dx)

    def image(self, a: np.ndarray) -> np.ndarray:
        if self.crop is not None:
            a = a[self.top : self.top + self.crop, self.left : self.left + self.crop]
        if self.hflip:
            a = a[:, ::-1]
        if self.vflip:
            a = a[::-1]
        a = np.rot90(a, -(self.quarter_turns % 4), axes=(0, 1))
        return np.ascontiguousarray(a)

    def flow(self, f: np.ndarray) -> np.ndarray:
        f = self.image(f).copy()
        if self.hflip:
            f[..., 0] *= -1
        if self.vflip:
            f[..., 1] *= -1
        for _ in range(self.quarter_turns % 4):
            f = np.stack([-f[..., 1], f[..., 0]], axis=-1)
        return f


def apply_transform(scene: Scene, tf: Transform) -> Scene:
    h, w = scene.frame_set.shape
    if tf.crop is not None and (tf.top + tf.crop > h or tf.left + tf.crop > w):
        raise ValueError(f"crop {tf.crop} at ({tf.top}, {tf.left}) exceeds image size {h}x{w}")
    frames = [replace(f, pixels=tf.image(f.pixels)) for f in scene.frame_set.frames]
    gt = None if scene.ground_truth is None else HdrImage(tf.image(scene.ground_truth.radiance))
    flows = None if scene.flows is None else [tf.flow(f) for f in scene.flows]
    return Scene(FrameSet(frames, scene.frame_set.reference_index), gt, flows, scene.name)


def augment(scene: Scene, seed, crop: int | None = 64) -> Scene:
    """Random crop, horizontal/vertical flips and a multiple-of-90-degree rotation."""
    h, w = scene.frame_set.shape
    if crop is not None and (crop > h or crop > w):
        raise ValueError(f"crop {crop} larger than image {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - crop + 1)) if crop else 0
    left = int(rng.integers(0, w - crop + 1)) if crop else 0
    tf = Transform(
        top=top,
        left=left,
        crop=crop,
        hflip=bool(rng.integers(2)),
        vflip=bool(rng.integers(2)),
        quarter_turns=int(rng.integers(4)),
    )
    return apply_transform(scene, tf)


# --- scene directories -----------------------------------------------------

def ingest_scene_dir(path) -> Scene:
    """Read ldr_*.ppm, exposures.txt and the optional gt.pfm / reference.txt."""
    path = Path(path)
    if not path.is_dir():
        raise SceneError(path, "not a directory")
    images = sorted(path.glob("ldr_*.ppm"))
    if not images:
        raise SceneError(path, "no ldr_*.ppm images")
    exp_file = path / "exposures.txt"
    if not exp_file.is_file():
        raise SceneError(exp_file, "missing exposures.txt")
    try:
        lines = [ln.strip() for ln in exp_file.read_text().splitlines() if ln.strip()]
        times = [float(ln) for ln in lines]
    except (OSError, ValueError) as e:
        raise SceneError(exp_file, f"unreadable exposure times ({e})") from None
    if len(times) != len(images):
        raise SceneError(path, f"{len(images)} images but {len(times)} exposure lines in exposures.txt")
    frames = []
    for img, t in zip(images, times):
        try:
            frames.append(LdrFrame(read_ppm(img), exposure_time=t))
        except (OSError, ImageFormatError) as e:
            raise SceneError(img, str(e)) from None
        except ValueError as e:
            raise SceneError(exp_file, str(e)) from None
    ref = 0
    ref_file = path / "reference.txt"
    if ref_file.is_file():
        try:
            ref = int(ref_file.read_text().strip())
        except ValueError:
            raise SceneError(ref_file, "reference.txt must hold one integer") from None
    try:
        frame_set = FrameSet(frames, ref)
    except ValueError as e:
        raise SceneError(path, str(e)) from None
    gt = None
    gt_file = path / "gt.pfm"
    if gt_file.is_file():
        try:
            gt = HdrImage(read_pfm(gt_file))
        except (OSError, ValueError) as e:
            raise SceneError(gt_file, str(e)) from None
    try:
        return Scene(frame_set, gt, name=path.name)
    except ValueError as e:
        raise SceneError(path, str(e)) from None


def write_scene_dir(scene: Scene, path, order: list[int] | None = None) -> Path:
    """Write a scene in the directory layout read by :func:`ingest_scene_dir`.

    ``order`` permutes the frames on disk; the reference index follows.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    fs = scene.frame_set
    order = list(range(len(fs))) if order is None else list(order)
    for i, src in enumerate(order):
        write_ppm(path / f"ldr_{i:03d}.ppm", fs.frames[src].pixels)
    (path / "exposures.txt").write_text("".join(f"{fs.frames[src].exposure_time!r}\n" for src in order))
    (path / "reference.txt").write_text(f"{order.index(fs.reference_index)}\n")
    if scene.ground_truth is not None:
        write_pfm(path / "gt.pfm", scene.ground_truth.radiance)
    return path


def find_scene_dirs(root) -> list[Path]:
    root = Path(root)
    if (root / "exposures.txt").is_file():
        return [root]
    if not root.is_dir():
        raise SceneError(root, "data path is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "exposures.txt").is_file())
    if not dirs:
        raise SceneError(root, "no scene directories (need exposures.txt in each)")
    return dirs
