"""Feature extractors applied to each preprocessed projection.

Two kinds are supported:

* ``native_cnn``: a small untrained convolution stack whose weights are drawn
  from a seeded Gaussian. Every layer is a ``kernel x kernel`` convolution with
  stride 2, edge-replicating "same" padding, zero bias and a rectifier. With
  ``dc_free`` (the default) each first-layer filter is shifted to zero spatial
  sum per input channel, so flat color produces no response and the features
  track local texture and contrast instead of a content's overall hue.
* ``external``: feature maps computed elsewhere (e.g. by a large pretrained
  network) and stored as ``<pcid>_f<k>_<role>.feat`` files.

Feature maps are float64 arrays of shape (H_f, W_f, C).
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FeatureFileMissing, ShapeMismatch

FEAT_MAGIC = b"PCQF"
_FEAT_HEADER = struct.Struct("<4siii")


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "native_cnn"
    role: str = "c"
    widths: tuple = (16, 32, 64)
    kernel_size: int = 3
    seed: int = 0
    dc_free: bool = True
    feature_dir: Optional[str] = None
    channels: Optional[int] = None  # declared C for external features
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("native_cnn", "external"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.role not in ("c", "s"):
            raise ValueError(f"backbone role must be 'c' or 's', got {self.role!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind == "native_cnn":
            if not self.widths or min(self.widths) < 1:
                raise ValueError("layer widths must be positive")
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError("kernel_size must be a positive odd number")
        elif self.feature_dir is None:
            raise ValueError("external backbone needs feature_dir")

    @property
    def out_channels(self):
        return self.widths[-1] if self.kind == "native_cnn" else self.channels

    def to_dict(self):
        return {
            "kind": self.kind, "role": self.role, "widths": list(self.widths),
            "kernel_size": self.kernel_size, "seed": self.seed, "dc_free": self.dc_free,
            "feature_dir": self.feature_dir, "channels": self.channels, "name": self.name,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["widths"] = tuple(d.get("widths", (16, 32, 64)))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class NativeCNN:
    spec: BackboneSpec
    in_channels: int = 3
    weights: tuple = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.spec.seed)
        k = self.spec.kernel_size
        cin = self.in_channels
        ws = []
        for cout in self.spec.widths:
            fan_in = k * k * cin
            w = rng.standard_normal((k, k, cin, cout)) * np.sqrt(2.0 / fan_in)
            if not ws and self.spec.dc_free:
                w -= w.mean(axis=(0, 1), keepdims=True)
            ws.append(w)
            cin = cout
        object.__setattr__(self, "weights", tuple(ws))

    def __call__(self, img: np.ndarray) -> np.ndarray:
        x = np.asarray(img, dtype=np.float64)
        for w in self.weights:
            x = np.maximum(conv2d_stride2(x, w), 0.0)
        return x


def conv2d_stride2(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-2 convolution (cross-correlation) with edge-replicating same padding.

    ``x`` is (H, W, Cin), ``w`` is (k, k, Cin, Cout); output is
    (ceil(H/2), ceil(W/2), Cout). Output cell (i, j) is centered on input
    pixel (2i, 2j).
    """
    k = w.shape[0]
    p = k // 2
    h, wd = x.shape[:2]
    xp = np.pad(x, ((p, p), (p, p), (0, 0)), mode="edge")
    oh, ow = (h + 1) // 2, (wd + 1) // 2
    cols = np.empty((oh, ow, k, k, x.shape[2]), dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx, :] = xp[dy : dy + 2 * oh - 1 : 2, dx : dx + 2 * ow - 1 : 2, :]
    out = cols.reshape(oh * ow, -1) @ w.reshape(-1, w.shape[3])
    return out.reshape(oh, ow, w.shape[3])


_NATIVE_CACHE = {}


def native_network(spec: BackboneSpec) -> NativeCNN:
    net = _NATIVE_CACHE.get(spec)
    if net is None:
        net = _NATIVE_CACHE.setdefault(spec, NativeCNN(spec))
    return net


def feature_filename(pcid: str, face: int, role: str) -> str:
    return f"{pcid}_f{face}_{role}.feat"


def write_feature_file(path, fm: np.ndarray) -> None:
    fm = np.asarray(fm)
    if fm.ndim != 3:
        raise ShapeMismatch(f"feature map must be (H, W, C), got {fm.shape}")
    h, w, c = fm.shape
    payload = _FEAT_HEADER.pack(FEAT_MAGIC, h, w, c) + fm.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(payload)


def read_feature_file(path, channels: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FeatureFileMissing(str(path))
    data = path.read_bytes()
    if len(data) < _FEAT_HEADER.size:
        raise ShapeMismatch(f"{path}: file too short for a feature header")
    magic, h, w, c = _FEAT_HEADER.unpack_from(data)
    if magic != FEAT_MAGIC:
        raise ShapeMismatch(f"{path}: bad magic {magic!r}")
    if min(h, w, c) < 1:
        raise ShapeMismatch(f"{path}: invalid shape {(h, w, c)}")
    if channels is not None and c != channels:
        raise ShapeMismatch(f"{path}: has {c} channels, backbone declares {channels}")
    n = h * w * c
    if len(data) - _FEAT_HEADER.size != 4 * n:
        raise ShapeMismatch(f"{path}: payload size does not match {(h, w, c)}")
    fm = np.frombuffer(data, dtype="<f4", count=n, offset=_FEAT_HEADER.size)
    fm = fm.astype(np.float64).reshape(h, w, c)
    if not np.isfinite(fm).all():
        raise ShapeMismatch(f"{path}: non-finite feature values")
    return fm


def extract_feature_map(backbone: BackboneSpec, img=None, *, pcid=None, face=None) -> np.ndarray:
    """Run ``backbone`` on one preprocessed face image.

    For external backbones the image is ignored and the stored map for
    ``(pcid, face, backbone.role)`` is loaded instead.
    """
    if backbone.kind == "native_cnn":
        if img is None:
            raise ValueError("native backbone needs an image")
        return native_network(backbone)(img)
    if pcid is None or face is None:
        raise ValueError("external backbone needs pcid and face")
    path = Path(backbone.feature_dir) / feature_filename(pcid, face, backbone.role)
    return read_feature_file(path, backbone.channels)
