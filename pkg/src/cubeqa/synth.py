"""Seeded desk-scale stand-in for a subjective point cloud quality database.

Each content is a colored geometric primitive (sphere, box, cylinder, torus or
ellipsoid) with smooth color gradients, coarse stripes and a fine checker
texture. Distorted versions apply one of three degradations at an integer
severity level; the label is a fixed decreasing function of that level, so
every distortion type shares one quality scale.
"""

import csv
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .ply import PointCloud, write_ply

SHAPES = ("sphere", "box", "cylinder", "torus", "ellipsoid")
DISTORTIONS = ("noise", "subsample", "quantize")

# severity per level; level 0 is the identity for every type
SEVERITY = {
    "noise": (0.0, 0.002, 0.01, 0.05),  # Gaussian sigma, unit-cube units
    "subsample": (1.0, 0.5, 0.25, 0.1),  # fraction of points kept
    "quantize": (256, 24, 8, 3),  # color levels per channel
}
MAX_LEVEL = 3
LABEL_CI_HALF_WIDTH = 0.25

MANIFEST_FIELDS = ("id", "distorted", "reference", "label", "ci_low", "ci_high", "content")


def label_for_level(level):
    """MOS-like label on a 1..5 scale: pristine 5, one point lost per level."""
    return 5.0 - float(level)


def _surface_points(shape, n, rng):
    u = rng.random(n)
    v = rng.random(n)
    if shape == "sphere" or shape == "ellipsoid":
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        axes = np.array([0.5, 0.5, 0.5]) if shape == "sphere" else rng.uniform(0.25, 0.5, 3)
        return d * axes
    if shape == "box":
        half = rng.uniform(0.2, 0.5, 3)
        areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
        face = rng.choice(6, size=n, p=areas / areas.sum())
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts = (rng.random((n, 3)) * 2 - 1) * half
        pts[np.arange(n), axis] = sign * half[axis]
        return pts
    if shape == "cylinder":
        radius, height = rng.uniform(0.2, 0.5), rng.uniform(0.4, 1.0)
        cap_area = np.pi * radius**2
        side_area = 2 * np.pi * radius * height
        on_side = rng.random(n) < side_area / (side_area + 2 * cap_area)
        theta = 2 * np.pi * u
        rr = np.where(on_side, radius, radius * np.sqrt(v))
        z = np.where(on_side, (v - 0.5) * height, np.where(u < 0.5, -0.5, 0.5) * height)
        theta = np.where(on_side, theta, 2 * np.pi * rng.random(n))
        return np.stack([rr * np.cos(theta), rr * np.sin(theta), z], axis=1)
    if shape == "torus":
        big, small = rng.uniform(0.25, 0.35), rng.uniform(0.08, 0.15)
        theta, phi = 2 * np.pi * u, 2 * np.pi * v
        ring = big + small * np.cos(phi)
        return np.stack([ring * np.cos(theta), ring * np.sin(theta), small * np.sin(phi)], axis=1)
    raise ValueError(f"unknown shape {shape!r}")


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def make_content(rng, n_points=300_000, shape=None) -> PointCloud:
    """One random colored primitive."""
    shape = shape or SHAPES[rng.integers(len(SHAPES))]
    pts = _surface_points(shape, n_points, rng) @ _random_rotation(rng).T
    base = rng.uniform(0.15, 0.85, 3)
    grad = rng.uniform(-0.6, 0.6, (3, 3))
    freq = rng.uniform(10, 30)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    stripes = 0.15 * np.sign(np.sin(freq * pts @ direction))
    # fine checker so small geometric jitter scrambles visible detail
    fine = rng.uniform(60, 120)
    a, b = _random_rotation(rng)[:2]
    checker = 0.12 * np.sign(np.sin(fine * pts @ a) * np.sin(fine * pts @ b))
    rgb = base + pts @ grad + stripes[:, None] + checker[:, None]
    colors = np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8)
    return PointCloud(pts, colors)


def distort(pc: PointCloud, kind: str, level: int, rng) -> PointCloud:
    """Apply one degradation at ``level`` (0 returns an identical cloud)."""
    sev = SEVERITY[kind][level]
    if kind == "noise":
        if sev == 0:
            return PointCloud(pc.positions.copy(), pc.colors.copy())
        return PointCloud(pc.positions + rng.normal(0.0, sev, pc.positions.shape), pc.colors)
    if kind == "subsample":
        keep = max(1, int(round(len(pc) * sev)))
        idx = np.sort(rng.choice(len(pc), size=keep, replace=False))
        return PointCloud(pc.positions[idx], pc.colors[idx])
    if kind == "quantize":
        if sev >= 256:
            return PointCloud(pc.positions.copy(), pc.colors.copy())
        step = 255.0 / (sev - 1)
        q = np.rint(np.rint(pc.colors / step) * step)
        return PointCloud(pc.positions, np.clip(q, 0, 255).astype(np.uint8))
    raise ValueError(f"unknown distortion {kind!r}")


def generate_synthetic_dataset(out_dir, seed=0, n_contents=8, levels=(1, 2, 3),
                               distortions=DISTORTIONS, n_points=300_000,
                               encoding="binary_little_endian"):
    """Write reference and distorted PLYs plus ``manifest.csv`` under ``out_dir``.

    Returns the manifest path. One row per pristine reference (label 5, its own
    reference) and one per (content, distortion, level).
    """
    levels = [int(lv) for lv in levels]
    if n_contents < 1 or not levels:
        raise ValueError("need n_contents >= 1 and at least one level")
    for lv in levels:
        if not 0 <= lv <= MAX_LEVEL:
            raise ValueError(f"level {lv} outside 0..{MAX_LEVEL}")
    for kind in distortions:
        if kind not in SEVERITY:
            raise ValueError(f"unknown distortion {kind!r}")
    out = Path(out_dir)
    rows = []
    try:
        (out / "ref").mkdir(parents=True, exist_ok=True)
        (out / "dist").mkdir(parents=True, exist_ok=True)
        for c in range(n_contents):
            rng = np.random.default_rng([seed, c])
            content = f"c{c:03d}"
            ref = make_content(rng, n_points)
            ref_rel = f"ref/{content}.ply"
            (out / ref_rel).write_bytes(write_ply(ref, encoding))
            lab = label_for_level(0)
            rows.append((content, ref_rel, ref_rel, lab, content))
            for kind in distortions:
                for lv in levels:
                    drng = np.random.default_rng([seed, c, DISTORTIONS.index(kind), lv])
                    sid = f"{content}_{kind}{lv}"
                    rel = f"dist/{sid}.ply"
                    (out / rel).write_bytes(write_ply(distort(ref, kind, lv, drng), encoding))
                    rows.append((sid, rel, ref_rel, label_for_level(lv), content))
        path = out / "manifest.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_FIELDS)
            for sid, rel, ref_rel, lab, content in rows:
                w.writerow((sid, rel, ref_rel, f"{lab:g}", f"{lab - LABEL_CI_HALF_WIDTH:g}",
                            f"{lab + LABEL_CI_HALF_WIDTH:g}", content))
    except OSError as e:
        raise IoFailure(str(e)) from e
    return path
