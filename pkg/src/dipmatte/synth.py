"""Synthetic matting cases with exact ground truth.

The image is built with the compositing equation from a supersampled
coverage matte and two smooth colour fields, so the model holds exactly.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .engine import EngineConfig, MattingProblem, composite
from .imageio import load_alpha, load_image, load_trimap, save_alpha, save_image, save_trimap
from .trimap import TrimapMasks

KINDS = ("disk", "strands", "holed_ring")
SUPERSAMPLE = 4


@dataclass
class SyntheticCase:
    image: np.ndarray
    trimap: TrimapMasks
    gt_alpha: np.ndarray
    gt_fg: np.ndarray
    gt_bg: np.ndarray
    seed: int
    shape_kind: str
    band_px: int

    def problem(self, config=None):
        return MattingProblem(self.image, self.trimap, config or EngineConfig())


def _sample_grid(h, w):
    ys = (np.arange(h * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    xs = (np.arange(w * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    return np.meshgrid(ys, xs, indexing="ij")


def _coverage(inside, h, w):
    """Fraction of the 4x4 subsamples of each pixel that fall inside the shape."""
    return inside.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE).mean(axis=(1, 3)).astype(np.float32)


def _disk_inside(h, w):
    y, x = _sample_grid(h, w)
    r = disk_radius((h, w))
    return np.hypot(y - h / 2, x - w / 2) <= r


def disk_radius(size):
    return 5.0 * min(size) / 16.0


def ring_radii(size):
    m = min(size)
    return 0.2 * m, 0.4 * m


def _ring_inside(h, w):
    y, x = _sample_grid(h, w)
    inner, outer = ring_radii((h, w))
    d = np.hypot(y - h / 2, x - w / 2)
    return (d <= outer) & (d >= inner)


def _segment_dist(py, px, ay, ax, by, bx):
    dy, dx = by - ay, bx - ax
    t = np.clip(((py - ay) * dy + (px - ax) * dx) / max(dy * dy + dx * dx, 1e-12), 0.0, 1.0)
    return np.hypot(py - (ay + t * dy), px - (ax + t * dx))


def _strands_inside(h, w, rng):
    y, x = _sample_grid(h, w)
    m = min(h, w)
    cy, cx = h / 2, w / 2
    core = 0.18 * m
    inside = np.hypot(y - cy, x - cx) <= core
    n = int(rng.integers(20, 61))
    steps = np.linspace(0.0, 1.0, 25)
    for _ in range(n):
        theta = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.15, 0.28) * m
        bend = rng.uniform(-0.4, 0.4)
        width = rng.uniform(1.0, 2.0)
        u = np.array([np.sin(theta), np.cos(theta)])
        perp = np.array([u[1], -u[0]])
        p0 = np.array([cy, cx]) + u * core * 0.8
        p2 = p0 + u * length + perp * bend * length
        p1 = p0 + u * length * 0.5 + perp * bend * length * 0.8
        curve = ((1 - steps)[:, None] ** 2 * p0 + 2 * ((1 - steps) * steps)[:, None] * p1
                 + steps[:, None] ** 2 * p2)
        lo = np.floor((curve.min(axis=0) - width) * SUPERSAMPLE).astype(int).clip(0)
        hi = np.ceil((curve.max(axis=0) + width) * SUPERSAMPLE).astype(int)
        sy, sx = slice(lo[0], hi[0]), slice(lo[1], hi[1])
        py, px = y[sy, sx], x[sy, sx]
        hit = np.zeros(py.shape, dtype=bool)
        for a, b in zip(curve[:-1], curve[1:]):
            hit |= _segment_dist(py, px, a[0], a[1], b[0], b[1]) <= width / 2
        inside[sy, sx] |= hit
    return inside


def _color_field(rng, lo, hi, size, variation=0.12, grid=4):
    h, w = size
    base = rng.uniform(lo, hi, size=3)
    coarse = base[:, None, None] + rng.uniform(-variation, variation, size=(3, grid, grid))
    field = ndimage.zoom(coarse, (1, h / grid, w / grid), order=1, mode="nearest", grid_mode=True)
    return np.clip(field[:, :h, :w], 0.0, 1.0).astype(np.float32)


def _disk_struct(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= radius * radius


def make_trimap(gt_alpha, band_px, mark_holes_unknown=False):
    """Erode the solid regions of ``gt_alpha`` by ``band_px``; the rest is unknown.

    With ``mark_holes_unknown`` background pockets enclosed by the object are
    left unknown, as a careless trimap would.
    """
    struct = _disk_struct(band_px)
    fg = ndimage.binary_erosion(gt_alpha > 0.999, struct, border_value=1)
    bg_solid = gt_alpha < 0.001
    bg = ndimage.binary_erosion(bg_solid, struct, border_value=1)
    if mark_holes_unknown:
        labels, n = ndimage.label(bg_solid)
        edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
        enclosed = ~np.isin(labels, edge) & bg_solid
        bg &= ~enclosed
    if not fg.any() or not bg.any():
        raise ValueError(f"band_px={band_px} erodes away the whole foreground or background")
    return TrimapMasks.from_regions(fg, bg)


def synth_case(kind, size=(64, 64), band_px=4, seed=0):
    if kind not in KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    if band_px < 1:
        raise ValueError("band_px must be >= 1")
    h, w = (int(v) for v in size)
    if h < 32 or w < 32:
        raise ValueError(f"synthetic cases need at least 32x32, got {h}x{w}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), KINDS.index(kind)])))
    if kind == "disk":
        inside = _disk_inside(h, w)
    elif kind == "holed_ring":
        inside = _ring_inside(h, w)
    else:
        inside = _strands_inside(h, w, rng)
    alpha = _coverage(inside, h, w)
    while True:
        fg = _color_field(rng, 0.55, 0.95, (h, w))
        bg = _color_field(rng, 0.05, 0.45, (h, w))
        if np.linalg.norm(fg.mean(axis=(1, 2)) - bg.mean(axis=(1, 2))) >= 0.35:
            break
    image = composite(alpha, fg, bg).astype(np.float32)
    trimap = make_trimap(alpha, band_px, mark_holes_unknown=(kind == "holed_ring"))
    return SyntheticCase(image=image, trimap=trimap, gt_alpha=alpha, gt_fg=fg, gt_bg=bg,
                         seed=int(seed), shape_kind=kind, band_px=int(band_px))


def write_case(out_dir, case):
    os.makedirs(out_dir, exist_ok=True)
    save_image(os.path.join(out_dir, "image.png"), case.image)
    save_trimap(os.path.join(out_dir, "trimap.png"), case.trimap)
    save_alpha(os.path.join(out_dir, "gt_alpha.png"), case.gt_alpha)
    save_image(os.path.join(out_dir, "gt_fg.png"), case.gt_fg)
    save_image(os.path.join(out_dir, "gt_bg.png"), case.gt_bg)
    h, w = case.gt_alpha.shape
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        fh.write(f"seed={case.seed}\nkind={case.shape_kind}\nband={case.band_px}\nsize={h}x{w}\n")


def read_meta(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    return meta


def read_case(case_dir):
    """Load a case directory; the image is the 8-bit quantized version."""
    meta = read_meta(os.path.join(case_dir, "meta.txt"))
    image = load_image(os.path.join(case_dir, "image.png"))
    return SyntheticCase(
        image=image,
        trimap=load_trimap(os.path.join(case_dir, "trimap.png"), image.shape[1:]),
        gt_alpha=load_alpha(os.path.join(case_dir, "gt_alpha.png")),
        gt_fg=load_image(os.path.join(case_dir, "gt_fg.png")),
        gt_bg=load_image(os.path.join(case_dir, "gt_bg.png")),
        seed=int(meta.get("seed", 0)),
        shape_kind=meta.get("kind", "disk"),
        band_px=int(meta.get("band", 0)),
    )
