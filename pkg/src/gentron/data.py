"""Synthetic datasets, dataset directories, and PPM frame files.

A dataset directory holds ``latents.npy`` (float32, (N, H, W, C) for images
or (N, T, H, W, C) for clips), ``prompts.txt`` (one prompt per line) and
``manifest.json`` describing how it was made.

Prompt grammars:

* ``gaussians``: the cluster name, one of ``alpha beta gamma delta``.
* ``shapes``: ``<color> <shape> <position>`` with color in {red, blue},
  shape in {square, cross}, position in {top-left, top-right, bottom-left,
  bottom-right}; 16 prompts in total.
* ``moving-shapes`` (clips): ``<color> <shape> moving <direction>`` with
  direction in {left, right, up, down}; the shape shifts one cell per frame,
  wrapping around the latent.
"""
import json
import os
import re
from dataclasses import dataclass
from itertools import product

import numpy as np

from gentron.errors import ConfigError, ShapeError
from gentron.numerics.rng import Rng

KINDS = ("gaussians", "shapes", "moving-shapes")
CLUSTER_NAMES = ("alpha", "beta", "gamma", "delta")
COLORS = ("red", "blue")
SHAPES = ("square", "cross")
POSITIONS = ("top-left", "top-right", "bottom-left", "bottom-right")
DIRECTIONS = ("left", "right", "up", "down")

SHAPE_PROMPTS = tuple(" ".join(p) for p in product(COLORS, SHAPES, POSITIONS))
MOTION_PROMPTS = tuple(f"{c} {s} moving {d}" for c, s, d in product(COLORS, SHAPES, DIRECTIONS))

BACKGROUND = -0.5
JITTER = 0.05
CLUSTER_STD = 0.1


@dataclass
class ImageDataset:
    latents: np.ndarray  # (N, H, W, C) float32
    prompts: list
    labels: np.ndarray = None
    meta: dict = None

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float32)
        if self.latents.ndim != 4:
            raise ShapeError(f"image latents must be (N, H, W, C), got {self.latents.shape}")
        if len(self.prompts) != len(self.latents):
            raise ShapeError(f"{len(self.latents)} latents but {len(self.prompts)} prompts")

    def __len__(self):
        return len(self.latents)


@dataclass
class VideoDataset:
    clips: np.ndarray  # (N, T, H, W, C) float32
    prompts: list
    meta: dict = None

    def __post_init__(self):
        self.clips = np.asarray(self.clips, dtype=np.float32)
        if self.clips.ndim != 5:
            raise ShapeError(f"clips must be (N, T, H, W, C), got {self.clips.shape}")
        if len(self.prompts) != len(self.clips):
            raise ShapeError(f"{len(self.clips)} clips but {len(self.prompts)} prompts")

    def __len__(self):
        return len(self.clips)


# -- generators ---------------------------------------------------------

def _shape_cells(shape):
    """Filled cells of a shape inside its 4×4 quadrant."""
    if shape == "square":
        return [(r, c) for r in range(3) for c in range(3)]
    return [(1, 0), (1, 1), (1, 2), (0, 1), (2, 1)]


def render_shape(color, shape, top, left, hw=(8, 8), channels=4):
    """A latent with one shape whose 3×3 bounding box starts at (top, left).

    Background is -0.5 everywhere. Shape cells carry the color in channels 0
    (red) and 1 (blue) as ±1, a constant +1 in channel 2, and 0 elsewhere.
    Coordinates wrap around the latent borders.
    """
    h, w = hw
    img = np.full((h, w, channels), BACKGROUND, dtype=np.float32)
    pix = np.zeros(channels, dtype=np.float32)
    pix[0] = 1.0 if color == "red" else -1.0
    pix[1] = 1.0 if color == "blue" else -1.0
    pix[2] = 1.0
    for r, c in _shape_cells(shape):
        img[(top + r) % h, (left + c) % w] = pix
    return img


def _quadrant_origin(position, hw):
    h, w = hw
    row = 0 if position.startswith("top") else h // 2
    col = 0 if position.endswith("left") else w // 2
    return row, col


def _balanced_labels(n, k, rng):
    labels = np.arange(n) % k
    return labels[rng.permutation(n)]


def gen_gaussians(n, seed, latent_shape=(8, 8, 4), n_clusters=3):
    if not 2 <= n_clusters <= len(CLUSTER_NAMES):
        raise ConfigError(f"n_clusters must be in [2, {len(CLUSTER_NAMES)}], got {n_clusters}")
    rng = Rng(seed)
    means = rng.fork("means").uniform((n_clusters,) + tuple(latent_shape), -0.6, 0.6)
    labels = _balanced_labels(n, n_clusters, rng.fork("labels"))
    noise = rng.fork("noise").normal((n,) + tuple(latent_shape))
    latents = (means[labels] + CLUSTER_STD * noise).astype(np.float32)
    meta = {
        "kind": "gaussians", "n": n, "seed": seed, "latent_shape": list(latent_shape),
        "clusters": list(CLUSTER_NAMES[:n_clusters]), "std": CLUSTER_STD,
        "means": means.astype(np.float32).tolist(),
    }
    return ImageDataset(latents, [CLUSTER_NAMES[i] for i in labels], labels, meta)


def gen_shapes(n, seed, latent_shape=(8, 8, 4)):
    h, w, ch = latent_shape
    if h < 8 or w < 8 or ch < 3:
        raise ConfigError(f"shapes needs at least an 8×8×3 latent, got {latent_shape}")
    rng = Rng(seed)
    labels = _balanced_labels(n, len(SHAPE_PROMPTS), rng.fork("labels"))
    jitter = rng.fork("jitter").normal((n, h, w, ch)) * JITTER
    latents = np.empty((n, h, w, ch), dtype=np.float32)
    prompts = []
    for i, label in enumerate(labels):
        prompt = SHAPE_PROMPTS[label]
        color, shape, position = prompt.split()
        top, left = _quadrant_origin(position, (h, w))
        latents[i] = render_shape(color, shape, top, left, (h, w), ch)
        prompts.append(prompt)
    latents += jitter.astype(np.float32)
    meta = {"kind": "shapes", "n": n, "seed": seed, "latent_shape": list(latent_shape),
            "prompts": list(SHAPE_PROMPTS), "jitter": JITTER}
    return ImageDataset(latents, prompts, labels, meta)


_STEP = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}


def gen_moving_shapes(n, seed, latent_shape=(8, 8, 4), frames=8):
    h, w, ch = latent_shape
    if ch < 3:
        raise ConfigError(f"moving-shapes needs at least 3 channels, got {latent_shape}")
    rng = Rng(seed)
    labels = _balanced_labels(n, len(MOTION_PROMPTS), rng.fork("labels"))
    starts = rng.fork("starts").integers(0, h * w, (n,))
    jitter = rng.fork("jitter").normal((n, frames, h, w, ch)) * JITTER
    clips = np.empty((n, frames, h, w, ch), dtype=np.float32)
    prompts = []
    for i, label in enumerate(labels):
        prompt = MOTION_PROMPTS[label]
        color, shape, _, direction = prompt.split()
        top, left = divmod(int(starts[i]), w)
        dr, dc = _STEP[direction]
        for f in range(frames):
            clips[i, f] = render_shape(color, shape, top + f * dr, left + f * dc, (h, w), ch)
        prompts.append(prompt)
    clips += jitter.astype(np.float32)
    meta = {"kind": "moving-shapes", "n": n, "seed": seed, "latent_shape": list(latent_shape),
            "frames": frames, "prompts": list(MOTION_PROMPTS), "jitter": JITTER}
    return VideoDataset(clips, prompts, meta)


def gen_synthetic_dataset(kind, n, seed, out_dir=None, **kwargs):
    """Generate a dataset by kind and optionally write it to ``out_dir``."""
    if n < 1:
        raise ConfigError(f"need n >= 1 samples, got {n}")
    if kind == "gaussians":
        ds = gen_gaussians(n, seed, **kwargs)
    elif kind == "shapes":
        ds = gen_shapes(n, seed, **kwargs)
    elif kind == "moving-shapes":
        ds = gen_moving_shapes(n, seed, **kwargs)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


# -- dataset directories ------------------------------------------------

def save_dataset(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    arr = ds.clips if isinstance(ds, VideoDataset) else ds.latents
    np.save(os.path.join(out_dir, "latents.npy"), arr)
    with open(os.path.join(out_dir, "prompts.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(p + "\n" for p in ds.prompts))
    meta = dict(ds.meta or {})
    meta["files"] = ["latents.npy", "prompts.txt"]
    if isinstance(ds, ImageDataset) and ds.labels is not None:
        np.save(os.path.join(out_dir, "labels.npy"), np.asarray(ds.labels, dtype=np.int64))
        meta["files"].append("labels.npy")
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_dataset(path):
    """Load a dataset directory; raises FileNotFoundError if it is missing."""
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory not found: {path}")
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    arr = np.load(os.path.join(path, "latents.npy"))
    with open(os.path.join(path, "prompts.txt"), encoding="utf-8") as fh:
        prompts = fh.read().splitlines()
    if arr.ndim == 5:
        return VideoDataset(arr, prompts, meta)
    labels_path = os.path.join(path, "labels.npy")
    labels = np.load(labels_path) if os.path.exists(labels_path) else None
    return ImageDataset(arr, prompts, labels, meta)


# -- evaluation ---------------------------------------------------------

def prompt_centroids(ds):
    """Mean latent per distinct prompt, in first-seen order."""
    names = list(dict.fromkeys(ds.prompts))
    prompts = np.asarray(ds.prompts)
    return names, np.stack([ds.latents[prompts == name].mean(axis=0) for name in names])


def nearest_centroid(samples, names, centroids):
    flat = centroids.reshape(len(centroids), -1).astype(np.float64)
    x = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    d = ((x[:, None, :] - flat[None]) ** 2).sum(-1)
    return [names[i] for i in d.argmin(axis=1)]


def classification_accuracy(samples, prompts, ds):
    names, centroids = prompt_centroids(ds)
    predicted = nearest_centroid(samples, names, centroids)
    return float(np.mean([p == q for p, q in zip(predicted, prompts)]))


# -- PPM frames ---------------------------------------------------------

def latent_to_pixels(latent):
    """Map an (H, W, C) latent in [-1, 1] to a uint8 (H, W·C) grayscale strip."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim == 2:
        latent = latent[..., None]
    if latent.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) latent, got {latent.shape}")
    q = np.clip(np.rint((latent + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w, c = q.shape
    return q.transpose(0, 2, 1).reshape(h, c * w)


def pixels_to_latent(pixels, channels):
    pixels = np.asarray(pixels)
    h, cw = pixels.shape
    if cw % channels:
        raise ShapeError(f"width {cw} is not a multiple of {channels} channels")
    panels = pixels.reshape(h, channels, cw // channels).transpose(0, 2, 1)
    return (panels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def quantize(latent):
    """The latent a PPM roundtrip recovers: clamped to [-1, 1] and 8-bit quantized."""
    latent = np.asarray(latent)
    c = latent.shape[-1] if latent.ndim == 3 else 1
    return pixels_to_latent(latent_to_pixels(latent), c)


def write_ppm(path, latent):
    """Binary P6 image; channels sit side by side as grayscale panels."""
    latent = np.asarray(latent)
    channels = latent.shape[-1] if latent.ndim == 3 else 1
    gray = latent_to_pixels(latent)
    h, w = gray.shape
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    header = f"P6\n# gentron channels={channels}\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + rgb.tobytes())


_PPM_TOKEN = re.compile(rb"#[^\n]*\n|\S+")


def read_ppm(path):
    """Read a PPM written by :func:`write_ppm`; returns the (H, W, C) latent."""
    with open(path, "rb") as fh:
        buf = fh.read()
    fields, channels, pos = [], 1, 0
    while len(fields) < 4:
        m = _PPM_TOKEN.search(buf, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PPM header")
        tok = m.group()
        pos = m.end()
        if tok.startswith(b"#"):
            cm = re.search(rb"channels=(\d+)", tok)
            if cm:
                channels = int(cm.group(1))
            continue
        fields.append(tok)
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(fields[1]), int(fields[2])
    raw = buf[pos + 1:pos + 1 + 3 * w * h]
    if len(raw) != 3 * w * h:
        raise ValueError(f"{path}: truncated PPM payload")
    rgb = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return pixels_to_latent(rgb[..., 0], channels)


def write_clip(out_dir, clip, extra=None):
    """Write (T, H, W, C) frames as frame_000.ppm... plus manifest.json."""
    clip = np.asarray(clip)
    os.makedirs(out_dir, exist_ok=True)
    names = [f"frame_{i:03d}.ppm" for i in range(len(clip))]
    for name, frame in zip(names, clip):
        write_ppm(os.path.join(out_dir, name), frame)
    manifest = {"t": len(clip), "frames": names, "latent_shape": list(clip.shape[1:])}
    manifest.update(extra or {})
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return names


def read_clip(out_dir):
    with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    return np.stack([read_ppm(os.path.join(out_dir, name)) for name in manifest["frames"]])
