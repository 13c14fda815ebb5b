import numpy as np
import pytest

from cubeqa.errors import PatchTooLarge
from cubeqa.ply import PointCloud
from cubeqa.projector import (
    ProjectionConfig,
    crop_patch,
    preprocess,
    remove_background,
    render_cube_projections,
    render_face,
    resize_min_dimension,
)

RED, GREEN, BLUE = (255, 0, 0), (0, 255, 0), (0, 0, 255)


def disc_mask(res, cy, cx, r):
    yy, xx = np.mgrid[:res, :res]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def test_single_point_at_origin():
    cfg = ProjectionConfig(render_resolution=64, splat_radius=2)
    pc = PointCloud([[0, 0, 0]], [RED])
    mask = disc_mask(64, 32, 32, 2)
    for img in render_cube_projections(pc, cfg):
        assert np.array_equal(img[mask], np.tile([1.0, 0, 0], (mask.sum(), 1)))
        assert (img[~mask] == 1.0).all()


def test_two_points_depth_test():
    cfg = ProjectionConfig()
    pc = PointCloud([[0.4, 0, 0], [-0.2, 0, 0]], [GREEN, BLUE])
    faces = render_cube_projections(pc, cfg)
    c = cfg.render_resolution // 2
    assert faces[0][c, c].tolist() == [0, 1, 0]  # +X sees the nearer green point
    assert faces[1][c, c].tolist() == [0, 0, 1]  # -X sees blue
    # from +Y the points separate along the image's horizontal axis (right = -X):
    # column = floor(2 + (-x + 0.5) * 1019 + 0.5)
    assert faces[2][c, 104].tolist() == [0, 1, 0]
    assert faces[2][c, 715].tolist() == [0, 0, 1]
    # far from both splats is pure background
    assert faces[0][0, 0].tolist() == [1, 1, 1]


def test_equal_depth_tie_goes_to_first_point():
    cfg = ProjectionConfig(render_resolution=32, splat_radius=0)
    pc = PointCloud([[0, 0, 0], [0, 0, 0]], [RED, BLUE])
    assert render_face(pc, 0, cfg)[16, 16].tolist() == [1, 0, 0]


def test_render_deterministic_and_colors_exact(rng):
    pc = PointCloud(rng.uniform(-0.5, 0.5, (3000, 3)), rng.integers(0, 256, (3000, 3)))
    cfg = ProjectionConfig(render_resolution=200)
    a = render_cube_projections(pc, cfg)
    b = render_cube_projections(pc, cfg)
    palette = {tuple(c) for c in (pc.colors / 255.0).tolist()}
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
        fg = x[(x != 1.0).any(axis=2)]
        assert {tuple(p) for p in fg.tolist()} <= palette


def test_rotation_about_z_permutes_side_faces(rng):
    pts = rng.uniform(-0.5, 0.5, (500, 3))
    col = rng.integers(0, 256, (500, 3))
    rot = np.stack([-pts[:, 1], pts[:, 0], pts[:, 2]], axis=1)
    cfg = ProjectionConfig(render_resolution=96)
    a = render_cube_projections(PointCloud(pts, col), cfg)
    b = render_cube_projections(PointCloud(rot, col), cfg)
    # after the turn: +X shows old -Y, -X old +Y, +Y old +X, -Y old -X
    for new, old in ((0, 3), (1, 2), (2, 0), (3, 1)):
        assert np.array_equal(b[new], a[old])


def test_rotation_turns_top_face_single_point():
    p = np.array([[0.31, 0.17, 0.05]])
    cfg = ProjectionConfig(render_resolution=96)
    a = render_face(PointCloud(p, [RED]), 4, cfg)
    b = render_face(PointCloud([[-0.17, 0.31, 0.05]], [RED]), 4, cfg)
    assert np.array_equal(b, np.rot90(a, 1))


def test_remove_background_examples():
    white = np.ones((64, 64, 3))
    assert remove_background(white).shape == (1, 1, 3)
    assert (remove_background(white) == 1).all()
    one = white.copy()
    one[10, 20] = 0
    out = remove_background(one)
    assert out.shape == (1, 1, 3) and (out == 0).all()
    disc = white.copy()
    disc[disc_mask(64, 32, 32, 5)] = 0.2
    assert remove_background(disc).shape == (11, 11, 3)
    # differences at or below 1/255 count as background
    faint = white.copy()
    faint[5, 5] = 1 - 0.5 / 255
    assert remove_background(faint).shape == (1, 1, 3)


def test_resize_examples(rng):
    assert resize_min_dimension(rng.random((100, 200, 3)), 520).shape == (520, 1040, 3)
    img = rng.random((520, 700, 3))
    assert np.array_equal(resize_min_dimension(img, 520), img)
    const = np.full((37, 91, 3), 0.3)
    out = resize_min_dimension(const, 520)
    assert out.shape == (520, 1279, 3) and np.abs(out - 0.3).max() < 1e-15


def test_resize_matches_bilinear_oracle(rng):
    img = rng.random((5, 7, 3))
    out = resize_min_dimension(img, 10)
    assert out.shape == (10, 14, 3)

    def sample(y, x):
        y = min(max(y, 0), 4)
        x = min(max(x, 0), 6)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        y1, x1 = min(y0 + 1, 4), min(x0 + 1, 6)
        fy, fx = y - y0, x - x0
        top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
        bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
        return top * (1 - fy) + bot * fy

    for i in range(10):
        for j in range(14):
            ref = sample((i + 0.5) * 0.5 - 0.5, (j + 0.5) * 0.5 - 0.5)
            assert np.allclose(out[i, j], ref, atol=1e-12)


def test_crop_examples(rng):
    img = rng.random((384, 384, 3))
    assert np.array_equal(crop_patch(img, 384), img)
    big = rng.random((520, 520, 3))
    assert np.array_equal(crop_patch(big, 384), big[68:452, 68:452])
    a = crop_patch(big, 100, "random", seed=7)
    b = crop_patch(big, 100, "random", seed=7)
    assert np.array_equal(a, b)
    with pytest.raises(PatchTooLarge):
        crop_patch(img, 400)


def test_preprocess_equals_resize_then_crop(rng):
    img = np.ones((300, 300, 3))
    img[40:120, 30:270] = rng.random((80, 240, 3))
    cfg = ProjectionConfig(resize_min=64, crop_size=48)
    full = crop_patch(resize_min_dimension(remove_background(img), 64), 48)
    assert np.array_equal(preprocess(img, cfg), full)
    assert preprocess(img, cfg).shape == (48, 48, 3)


def test_random_crop_seeded_per_face(rng):
    img = rng.random((200, 300, 3))
    cfg = ProjectionConfig(resize_min=64, crop_size=32, crop_mode="random", crop_seed=5)
    assert np.array_equal(preprocess(img, cfg, 2), preprocess(img, cfg, 2))


def test_config_validation():
    with pytest.raises(ValueError):
        ProjectionConfig(crop_size=600)
    with pytest.raises(ValueError):
        ProjectionConfig(crop_mode="random")
