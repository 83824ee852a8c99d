"""
Tests for superpixels, the weighted ridge surrogate and explanation rendering.
"""
import json
import math

import numpy as np
import pytest

from src.augment import Image
from src.exceptions import DimensionError, InputError
from src.lime_explainer import (
    LimeExplainer,
    SuperpixelMap,
    apply_mask,
    draw_masks,
    explain,
    explanation_to_json,
    kernel_weight,
    render_overlay,
    segment_grid,
    segment_slic,
    top_segments,
    weighted_ridge,
)
from src.models import Explanation, LimeConfig


def tile_means(img, spmap):
    flat = img.pixels[:, :, 0].ravel()
    return np.bincount(spmap.labels.ravel(), weights=flat, minlength=spmap.num_segments) / spmap.sizes()


def linear_model(spmap, betas, offset=0.2):
    """Black box whose class-0 probability is linear in the segment means."""
    def model_fn(img):
        p = offset + float(np.dot(betas, tile_means(img, spmap)))
        return np.array([p, 1.0 - p])
    return model_fn


# segmentation

def test_grid_single_tile():
    """Test g=1 puts every pixel in segment 0."""
    spmap = segment_grid(Image(np.zeros((5, 7))), 1)
    assert spmap.num_segments == 1
    assert np.all(spmap.labels == 0)


def test_grid_even_split():
    """Test a 224x224 image with g=4 gives 16 tiles of 56x56."""
    spmap = segment_grid(Image(np.zeros((224, 224))), 4)
    assert spmap.num_segments == 16
    assert np.all(spmap.sizes() == 56 * 56)
    assert spmap.labels[0, 223] == 3 and spmap.labels[223, 0] == 12


def test_grid_remainder_goes_to_last_tile():
    """Test a 10x10 image with g=3 gives tile sides 3, 3 and 4."""
    spmap = segment_grid(Image(np.zeros((10, 10))), 3)
    rows = [int(np.sum(spmap.labels[:, 0] == s)) for s in (0, 3, 6)]
    assert rows == [3, 3, 4]
    assert spmap.sizes().sum() == 100


@pytest.mark.parametrize("g", [0, 11])
def test_grid_out_of_range(g):
    """Test g outside [1, min(H, W)] raises InputError."""
    with pytest.raises(InputError):
        segment_grid(Image(np.zeros((10, 12))), g)


def test_superpixel_map_requires_every_id():
    """Test empty segment ids are rejected."""
    with pytest.raises(InputError):
        SuperpixelMap(np.zeros((3, 3), dtype=int), 2)


def test_slic_labels_are_contiguous(rng):
    """Test clustering superpixels cover the image with ids 0..K-1."""
    spmap = segment_slic(Image(rng.uniform(size=(32, 32))), 16, 10.0)
    assert spmap.labels.shape == (32, 32)
    assert set(np.unique(spmap.labels)) == set(range(spmap.num_segments))


# kernel and masking

def test_kernel_weights():
    """Test proximity weights at zero, full and half removal."""
    assert kernel_weight([1, 1, 1, 1], 0.25) == 1.0
    assert kernel_weight([0, 0, 0, 0], 0.25) == pytest.approx(math.exp(-16))
    assert kernel_weight([1, 0, 1, 0], 0.25) == pytest.approx(math.exp(-4))
    with pytest.raises(InputError):
        kernel_weight([1], 0.0)


def test_apply_mask_fills_with_global_mean():
    """Test removed segments take the mean of the whole image."""
    img = Image(np.arange(16, dtype=float).reshape(4, 4) / 16)
    spmap = segment_grid(img, 2)
    out = apply_mask(img, spmap, [1, 0, 0, 1]).pixels[:, :, 0]
    mean = img.pixels.mean()
    np.testing.assert_array_equal(out[:2, :2], img.pixels[:2, :2, 0])
    assert np.all(out[:2, 2:] == mean) and np.all(out[2:, :2] == mean)
    np.testing.assert_array_equal(out[2:, 2:], img.pixels[2:, 2:, 0])


def test_apply_mask_size_mismatch():
    """Test a mask of the wrong length raises DimensionError."""
    img = Image(np.zeros((4, 4)))
    with pytest.raises(DimensionError):
        apply_mask(img, segment_grid(img, 2), [1, 0])


def test_first_mask_keeps_everything():
    """Test mask row 0 is the unperturbed image."""
    masks = draw_masks(9, 20, seed=4)
    assert masks.shape == (20, 9)
    assert np.all(masks[0] == 1)
    assert set(np.unique(masks[1:])) <= {0, 1}


# ridge

def test_ridge_normal_equation_residual(rng):
    """Test the solved system satisfies its normal equations."""
    X = rng.integers(0, 2, size=(60, 8)).astype(float)
    y = rng.uniform(size=60)
    w = rng.uniform(0.1, 1.0, size=60)
    fit = weighted_ridge(X, y, w, 1e-3)
    assert fit.normal_residual < 1e-8
    assert not fit.degenerate


def test_ridge_constant_target_is_degenerate():
    """Test identical targets give zero coefficients and the constant intercept."""
    fit = weighted_ridge(np.eye(3), np.full(3, 0.7), np.ones(3), 1e-3)
    assert fit.degenerate
    assert fit.intercept == 0.7
    assert np.all(fit.coefficients == 0.0)


def test_ridge_shape_mismatch():
    """Test disagreeing shapes raise DimensionError."""
    with pytest.raises(DimensionError):
        weighted_ridge(np.ones((3, 2)), np.ones(4), np.ones(3), 0.0)


def test_top_segments_order():
    """Test top-k ranking by magnitude with zeros dropped."""
    assert top_segments(np.array([0.1, -0.5, 0.0, 0.5, 0.2]), 3) == [1, 3, 4]
    assert top_segments(np.zeros(4), 2) == []


# explain

def test_constant_model_gives_degenerate_explanation():
    """Test a black box that ignores its input yields empty top-k."""
    img = Image(np.random.default_rng(0).uniform(size=(16, 16)))
    cfg = LimeConfig(g=4, n_samples=50, seed=1)
    expl = explain(lambda _: np.array([0.3, 0.7]), img, 1, cfg)
    assert expl.degenerate
    assert expl.intercept == pytest.approx(0.7)
    assert expl.top_k == [] and all(c == 0.0 for c in expl.coefficients)


def test_linear_black_box_is_recovered():
    """Test coefficients match beta_j * (tile mean - global mean) for a linear model."""
    img = Image(np.random.default_rng(3).uniform(size=(16, 16)))
    cfg = LimeConfig(g=2, n_samples=40, ridge_lambda=1e-8, seed=5)
    spmap = segment_grid(img, cfg.g)
    betas = np.array([0.3, -0.2, 0.1, 0.25])
    expl = explain(linear_model(spmap, betas), img, 0, cfg)
    expected = betas * (tile_means(img, spmap) - img.pixels.mean())
    np.testing.assert_allclose(expl.coefficients, expected, atol=1e-3)
    assert expl.fit_r2 == pytest.approx(1.0, abs=1e-6)
    assert expl.normal_residual < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_single_informative_tile_ranks_first(seed):
    """Test the one tile the model looks at is ranked first."""
    pixels = np.full((16, 16), 0.2)
    pixels[4:8, 8:12] = 0.9
    img = Image(pixels)
    cfg = LimeConfig(g=4, n_samples=100, seed=seed)
    spmap = segment_grid(img, cfg.g)
    betas = np.zeros(16)
    betas[6] = 0.5
    expl = explain(linear_model(spmap, betas), img, 0, cfg)
    assert expl.top_k[0] == 6
    assert expl.coefficients[6] > 0


def test_explanations_are_deterministic():
    """Test a fixed seed gives identical coefficients, also with worker threads."""
    img = Image(np.random.default_rng(8).uniform(size=(12, 12)))
    cfg = LimeConfig(g=3, n_samples=30, seed=9)
    spmap = segment_grid(img, 3)
    model_fn = linear_model(spmap, np.linspace(-0.1, 0.1, 9))
    serial = explain(model_fn, img, 0, cfg)
    threaded = LimeExplainer(cfg, jobs=4).explain(model_fn, img, 0, spmap=spmap)
    assert serial.coefficients == threaded.coefficients


def test_non_probability_output_is_rejected():
    """Test model outputs that do not sum to 1 raise InputError."""
    img = Image(np.zeros((4, 4)))
    with pytest.raises(InputError):
        explain(lambda _: np.array([0.5, 0.6]), img, 0, LimeConfig(g=2, n_samples=5))
    with pytest.raises(InputError):
        explain(lambda _: np.array([0.5, 0.5]), img, 2, LimeConfig(g=2, n_samples=5))


# rendering and serialisation

def make_explanation():
    return Explanation(target_class=0, coefficients=[0.4, -0.2, 0.0, 0.1], intercept=0.3,
                       top_k=[0, 1], fit_r2=0.9)


def test_overlay_tints_top_segments():
    """Test red/blue tints with opacity proportional to |coefficient|."""
    img = Image(np.full((4, 4), 0.4))
    spmap = segment_grid(img, 2)
    out = render_overlay(img, spmap, make_explanation()).pixels
    np.testing.assert_allclose(out[0, 0], [0.7, 0.2, 0.2])
    np.testing.assert_allclose(out[0, 2], [0.3, 0.3, 0.55])
    np.testing.assert_allclose(out[3, 3], [0.4, 0.4, 0.4])


def test_overlay_positive_only():
    """Test negative segments are left untinted when only positives are shown."""
    img = Image(np.full((4, 4), 0.4))
    out = render_overlay(img, segment_grid(img, 2), make_explanation(), positive_only=True).pixels
    np.testing.assert_allclose(out[0, 2], [0.4, 0.4, 0.4])


def test_explanation_json_keys():
    """Test the JSON document layout."""
    doc = json.loads(explanation_to_json(make_explanation()))
    assert doc == {
        "class": 0,
        "intercept": 0.3,
        "coefficients": [0.4, -0.2, 0.0, 0.1],
        "top_k": [0, 1],
        "r2": 0.9,
        "degenerate": False,
    }
