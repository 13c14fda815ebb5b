"""PNG export of projections and a six-face contact sheet figure."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .projector import FACE_NAMES  # noqa: E402


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(img, path):
    Image.fromarray(to_uint8(img)).save(path)


def load_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_projection_pngs(projections, out_dir, pcid):
    """One 8-bit PNG per face, named ``<pcid>_f0.png`` .. ``<pcid>_f5.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(projections):
        p = out / f"{pcid}_f{k}.png"
        save_png(img, p)
        paths.append(p)
    return paths


def projection_sheet(projections, path, title=None, dpi=100):
    """2x3 grid of the six faces, labelled by view axis."""
    fig, axes = plt.subplots(2, 3, figsize=(9, 6.4))
    for k, ax in enumerate(axes.ravel()):
        ax.imshow(np.clip(projections[k], 0, 1), interpolation="nearest")
        ax.set_title(f"f{k}  ({FACE_NAMES[k]})", fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return Path(path)
