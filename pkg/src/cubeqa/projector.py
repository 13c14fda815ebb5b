"""Six-view orthographic cube projections and the crop/resize preprocessing chain.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1]; row 0 is
the top of the picture.

Camera frames. Each face has an outward normal ``n`` (the camera sits on that
side, looking along ``-n``), an ``up`` vector and a ``right`` vector with
``right x up = n``. The side faces all use +Z as up, so a 90 degree turn about
Z simply relabels the four side faces.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import PatchTooLarge
from .ply import PointCloud

FACE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")

# (normal, up, right) per face, in FACE_NAMES order
FACE_FRAMES = np.array(
    [
        [[1, 0, 0], [0, 0, 1], [0, 1, 0]],
        [[-1, 0, 0], [0, 0, 1], [0, -1, 0]],
        [[0, 1, 0], [0, 0, 1], [-1, 0, 0]],
        [[0, -1, 0], [0, 0, 1], [1, 0, 0]],
        [[0, 0, 1], [0, 1, 0], [1, 0, 0]],
        [[0, 0, -1], [0, 1, 0], [-1, 0, 0]],
    ],
    dtype=np.float64,
)

BG_THRESHOLD = 1.0 / 255.0


@dataclass(frozen=True)
class ProjectionConfig:
    render_resolution: int = 1024
    splat_radius: int = 2
    background: tuple = (1.0, 1.0, 1.0)
    resize_min: int = 520
    crop_size: int = 384
    crop_mode: str = "center"
    crop_seed: Optional[int] = None

    def __post_init__(self):
        if self.render_resolution < 1:
            raise ValueError("render_resolution must be >= 1")
        if self.splat_radius < 0:
            raise ValueError("splat_radius must be >= 0")
        if self.crop_size > self.resize_min:
            raise ValueError("crop_size must not exceed resize_min")
        if self.crop_mode not in ("center", "random"):
            raise ValueError(f"unknown crop_mode {self.crop_mode!r}")
        if self.crop_mode == "random" and self.crop_seed is None:
            raise ValueError("random crop_mode needs a crop_seed")
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))


@dataclass(frozen=True)
class ProjectionSet:
    """Exactly six face images ordered +X, -X, +Y, -Y, +Z, -Z."""

    faces: tuple = field(default_factory=tuple)

    def __post_init__(self):
        faces = tuple(self.faces)
        if len(faces) != 6:
            raise ValueError(f"a projection set holds 6 faces, got {len(faces)}")
        object.__setattr__(self, "faces", faces)

    def __iter__(self):
        return iter(self.faces)

    def __getitem__(self, k):
        return self.faces[k]

    def __len__(self):
        return 6


def _disc_offsets(radius):
    r = int(radius)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    inside = dx * dx + dy * dy <= r * r
    return dy[inside], dx[inside]


def to_pixel(coord, resolution, radius):
    """Map a normalized coordinate in [-0.5, 0.5] to a pixel index.

    The unit interval spans pixels ``radius`` .. ``resolution - 1 - radius`` so
    splats at the box boundary stay inside the image; 0 lands on
    ``resolution // 2``.
    """
    span = max(resolution - 1 - 2 * radius, 0)
    return np.floor(radius + (np.asarray(coord) + 0.5) * span + 0.5).astype(np.int64)


def render_face(pc: PointCloud, face: int, cfg: ProjectionConfig) -> np.ndarray:
    normal, up, right = FACE_FRAMES[face]
    res = cfg.render_resolution
    r = cfg.splat_radius
    pos = pc.positions
    depth = -(pos @ normal)  # distance from the camera plane, smaller is nearer
    col = to_pixel(pos @ right, res, r)
    row = to_pixel(-(pos @ up), res, r)

    # rank points front to back; equal depths keep the lower point index first
    n = len(pos)
    by_depth = np.argsort(depth, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[by_depth] = np.arange(n)

    dy, dx = _disc_offsets(r)
    rows = (row[:, None] + dy[None, :]).ravel()
    cols = (col[:, None] + dx[None, :]).ravel()
    ranks = np.repeat(rank, len(dy))
    keep = (rows >= 0) & (rows < res) & (cols >= 0) & (cols < res)
    # one sortable key: pixel major, depth rank minor
    key = np.sort((rows[keep] * res + cols[keep]) * n + ranks[keep])
    pix, winner = np.divmod(key, n)
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]

    img = np.empty((res * res, 3), dtype=np.float64)
    img[:] = cfg.background
    img[pix[first]] = pc.colors[by_depth[winner[first]]] / 255.0
    return img.reshape(res, res, 3)


def render_cube_projections(pc: PointCloud, cfg: ProjectionConfig = ProjectionConfig()) -> ProjectionSet:
    """Render the six orthographic cube-face views of a unit-cube-normalized cloud."""
    return ProjectionSet(tuple(render_face(pc, k, cfg) for k in range(6)))


def remove_background(img: np.ndarray, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Tight crop around every pixel that differs from ``background``.

    A pixel counts as foreground when any channel differs by more than 1/255.
    An image with no foreground becomes a 1x1 background image.
    """
    bg = np.asarray(background, dtype=np.float64)
    fg = (np.abs(img - bg) > BG_THRESHOLD).any(axis=2)
    rows = np.flatnonzero(fg.any(axis=1))
    if rows.size == 0:
        return np.broadcast_to(bg, (1, 1, 3)).copy()
    cols = np.flatnonzero(fg.any(axis=0))
    return img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].copy()


def resized_shape(height, width, target):
    """(H, W) after scaling so the shorter side equals ``target``."""
    short = min(height, width)
    if height <= width:
        return target, max(1, int(round(width * target / short)))
    return max(1, int(round(height * target / short))), target


def _bilinear_axis(n_in, n_out, idx):
    # half-pixel-center sampling; returns low index, high index, high weight
    src = (np.asarray(idx, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _bilinear(img, out_h, out_w, rows, cols):
    h, w = img.shape[:2]
    r0, r1, wr = _bilinear_axis(h, out_h, rows)
    c0, c1, wc = _bilinear_axis(w, out_w, cols)
    top = img[r0]
    bot = img[r1]
    wr = wr[:, None, None]
    vert = top + (bot - top) * wr
    left = vert[:, c0]
    rightv = vert[:, c1]
    out = left + (rightv - left) * wc[None, :, None]
    return np.clip(out, 0.0, 1.0)


def resize_min_dimension(img: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize so the shorter side becomes ``target``, keeping aspect."""
    if target < 1:
        raise ValueError("target must be >= 1")
    h, w = img.shape[:2]
    oh, ow = resized_shape(h, w, target)
    if (oh, ow) == (h, w):
        return img.copy()
    return _bilinear(img, oh, ow, np.arange(oh), np.arange(ow))


def crop_origin(height, width, size, mode="center", seed=None):
    """Top-left corner (row, col) of the crop window."""
    if size > height or size > width:
        raise PatchTooLarge(f"cannot crop {size}x{size} from {height}x{width}")
    if mode == "center":
        return (height - size) // 2, (width - size) // 2
    if mode == "random":
        rng = np.random.default_rng(seed)
        return int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1))
    raise ValueError(f"unknown crop mode {mode!r}")


def crop_patch(img: np.ndarray, size: int, mode: str = "center", seed=None) -> np.ndarray:
    h, w = img.shape[:2]
    top, left = crop_origin(h, w, size, mode, seed)
    return img[top : top + size, left : left + size].copy()


def preprocess(img: np.ndarray, cfg: ProjectionConfig = ProjectionConfig(), face: int = 0) -> np.ndarray:
    """remove_background -> resize_min_dimension -> crop_patch for one face.

    Only the cropped window of the resized image is interpolated, which gives
    the same pixels as resizing in full and cropping afterwards but avoids
    materializing very elongated intermediates.
    """
    fg = remove_background(img, cfg.background)
    h, w = fg.shape[:2]
    oh, ow = resized_shape(h, w, cfg.resize_min)
    seed = None if cfg.crop_seed is None else (cfg.crop_seed, face)
    top, left = crop_origin(oh, ow, cfg.crop_size, cfg.crop_mode, seed)
    if (oh, ow) == (h, w):
        return fg[top : top + cfg.crop_size, left : left + cfg.crop_size].copy()
    rows = np.arange(top, top + cfg.crop_size)
    cols = np.arange(left, left + cfg.crop_size)
    return _bilinear(fg, oh, ow, rows, cols)


def preprocess_projections(projections: ProjectionSet, cfg: ProjectionConfig = ProjectionConfig()) -> ProjectionSet:
    return ProjectionSet(tuple(preprocess(img, cfg, k) for k, img in enumerate(projections)))
