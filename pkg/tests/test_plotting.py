import numpy as np
from PIL import Image

from bevloc import homography as hg
from bevloc.plotting import OUTLINE, convergence_figure, heatmap, overlay, save_figure
from bevloc.raster import ImageBuffer


def test_convergence_figure_written(tmp_path):
    report = {"trials": 3, "converged_fraction": 1.0, "threshold_cells": 0.25,
              "convergence_curve": [3.0, 0.5, 0.1, 0.05]}
    for name in ("c.png", "c.svg"):
        save_figure(convergence_figure(report, [[3, 0.4, 0.1, 0.04]] * 3), tmp_path / name)
    assert Image.open(tmp_path / "c.png").size[0] > 100
    assert (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")


def test_overlay_identity_blends_and_outlines():
    sat = ImageBuffer(np.full((32, 32, 3), 0.2))
    bev = ImageBuffer(np.full((32, 32), 0.6))
    out = overlay(bev, sat, np.eye(3)).data
    assert np.allclose(out[16, 16], 0.4)
    assert np.allclose(out[0, 16], OUTLINE) and np.allclose(out[16, 31], OUTLINE)


def test_overlay_outline_follows_homography():
    sat = ImageBuffer(np.zeros((64, 64, 3)))
    bev = ImageBuffer(np.zeros((32, 32, 3)))
    out = overlay(bev, sat, hg.translation(10, 20)).data
    assert np.allclose(out[20, 25], OUTLINE) and np.allclose(out[35, 41], OUTLINE)
    assert np.allclose(out[5, 5], 0.0)


def test_heatmap():
    img = heatmap(np.array([[0.0, 1.0], [2.0, 3.0]]), upscale=4)
    assert img.shape == (8, 8, 3)
    assert not np.allclose(img.data[0, 0], img.data[7, 7])
    assert np.array_equal(img.data[:4, :4], np.broadcast_to(img.data[0, 0], (4, 4, 3)))
    flat = heatmap(np.ones((3, 3))).data
    assert np.array_equal(flat, np.broadcast_to(flat[0, 0], flat.shape))
