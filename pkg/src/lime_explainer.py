"""
Local surrogate explanations for any image classifier.

An image is split into superpixels, random subsets of them are replaced by the
global mean intensity, the black box is queried on every perturbed copy and a
proximity-weighted ridge regression of the target-class probability on the
keep/remove bits gives one coefficient per superpixel.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from skimage.segmentation import slic

from .augment import Image, rng_for, to_grayscale, to_rgb
from .exceptions import DimensionError, InputError
from .models import Explanation, LimeConfig

logger = logging.getLogger(__name__)

ModelFn = Callable[[Image], np.ndarray]
PROB_TOL = 1e-6
MAX_ALPHA = 0.5
RED = np.array([1.0, 0.0, 0.0])
BLUE = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SuperpixelMap:
    """Per-pixel segment ids in [0, num_segments), every id present."""
    labels: np.ndarray
    num_segments: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionError(f"superpixel labels must be [H, W], got {labels.shape}")
        if labels.min() < 0 or labels.max() >= self.num_segments:
            raise InputError(f"segment ids must lie in [0, {self.num_segments})")
        counts = np.bincount(labels.ravel(), minlength=self.num_segments)
        if np.any(counts == 0):
            raise InputError(f"segments without pixels: {np.flatnonzero(counts == 0)[:5].tolist()}")
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_segments)


def segment_grid(img: Image, g: int) -> SuperpixelMap:
    """g x g axis-aligned tiles; the last row/column of tiles absorbs the remainder."""
    if g < 1 or g > min(img.height, img.width):
        raise InputError(f"grid size g={g} must lie in [1, {min(img.height, img.width)}]")
    rows = np.minimum(np.arange(img.height) // (img.height // g), g - 1)
    cols = np.minimum(np.arange(img.width) // (img.width // g), g - 1)
    return SuperpixelMap(rows[:, None] * g + cols[None, :], g * g)


def segment_slic(img: Image, n_segments: int, compactness: float) -> SuperpixelMap:
    """Clustering-based superpixels from scikit-image, relabelled to contiguous ids."""
    raw = slic(img.pixels, n_segments=n_segments, compactness=compactness, channel_axis=-1, start_label=0)
    unique, labels = np.unique(raw, return_inverse=True)
    return SuperpixelMap(labels.reshape(raw.shape), len(unique))


def segment(img: Image, cfg: LimeConfig) -> SuperpixelMap:
    if cfg.segmenter == "slic":
        return segment_slic(img, cfg.slic_segments, cfg.slic_compactness)
    return segment_grid(img, cfg.g)


def kernel_weight(mask: Sequence[int], sigma: float) -> float:
    """exp(-d^2 / sigma^2) with d the fraction of segments removed."""
    if sigma <= 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    mask = np.asarray(mask)
    distance = 1.0 - np.count_nonzero(mask) / mask.size
    return float(np.exp(-(distance ** 2) / sigma ** 2))


def apply_mask(img: Image, spmap: SuperpixelMap, mask: Sequence[int]) -> Image:
    """Keep segments whose bit is 1; fill the rest with the image's global mean intensity."""
    mask = np.asarray(mask)
    if spmap.labels.shape != (img.height, img.width):
        raise DimensionError(f"superpixel map {spmap.labels.shape} does not match image {img.height}x{img.width}")
    if mask.shape != (spmap.num_segments,):
        raise DimensionError(f"mask has {mask.size} bits for {spmap.num_segments} segments")
    keep = mask.astype(bool)[spmap.labels]
    fill = img.pixels.mean()
    return Image(np.where(keep[:, :, None], img.pixels, fill))


@dataclass(frozen=True)
class Perturbation:
    mask: np.ndarray
    prediction: np.ndarray
    weight: float


@dataclass(frozen=True)
class RidgeFit:
    coefficients: np.ndarray
    intercept: float
    normal_residual: float
    r2: float
    degenerate: bool


def weighted_ridge(X: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> RidgeFit:
    """Minimise sum_i w_i (y_i - b - x_i.beta)^2 + lam |beta|^2; the intercept b is not penalised."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, k = X.shape
    if y.shape != (n,) or w.shape != (n,):
        raise DimensionError(f"ridge: X{X.shape}, y{y.shape}, w{w.shape} disagree")
    if lam < 0 or np.any(w < 0):
        raise InputError("ridge penalty and sample weights must be non-negative")

    if np.ptp(y) == 0.0:
        return RidgeFit(np.zeros(k), float(y[0]), 0.0, 1.0, True)

    design = np.hstack([X, np.ones((n, 1))])
    weighted = design * w[:, None]
    lhs = design.T @ weighted
    lhs[np.arange(k), np.arange(k)] += lam
    rhs = weighted.T @ y
    try:
        theta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        theta = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    residual = float(np.max(np.abs(lhs @ theta - rhs)))

    fitted = design @ theta
    y_bar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - y_bar) ** 2)
    ss_res = np.sum(w * (y - fitted) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RidgeFit(theta[:k], float(theta[k]), residual, float(r2), False)


def _check_prediction(pred: np.ndarray, target_class: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if target_class >= pred.size:
        raise InputError(f"target class {target_class} outside {pred.size} model outputs")
    if abs(pred.sum() - 1.0) > PROB_TOL:
        raise InputError(f"model_fn must return probabilities summing to 1, got {pred.sum():.8f}")
    return pred


def draw_masks(num_segments: int, n_samples: int, seed: int) -> np.ndarray:
    """Bernoulli(0.5) keep/remove bits; row 0 is always the all-ones mask."""
    masks = rng_for(seed, 0).integers(0, 2, size=(n_samples, num_segments), dtype=np.int64)
    masks[0] = 1
    return masks


def sample_perturbations(model_fn: ModelFn, img: Image, spmap: SuperpixelMap, target_class: int,
                         cfg: LimeConfig, jobs: int = 1) -> List[Perturbation]:
    """Query ``model_fn`` on every masked copy; output order follows the mask order."""
    masks = draw_masks(spmap.num_segments, cfg.n_samples, cfg.seed)

    def evaluate(mask: np.ndarray) -> np.ndarray:
        return _check_prediction(model_fn(apply_mask(img, spmap, mask)), target_class)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            predictions = list(pool.map(evaluate, masks))
    else:
        predictions = [evaluate(mask) for mask in masks]
    return [Perturbation(mask, pred, kernel_weight(mask, cfg.sigma)) for mask, pred in zip(masks, predictions)]


def top_segments(coefficients: np.ndarray, k: int) -> List[int]:
    """Ids of the k largest |coefficient| values, zeros excluded, ties by id."""
    order = np.argsort(-np.abs(coefficients), kind="stable")
    return [int(i) for i in order if coefficients[i] != 0.0][:k]


def explain(model_fn: ModelFn, img: Image, target_class: int, cfg: LimeConfig,
            spmap: Optional[SuperpixelMap] = None, jobs: int = 1) -> Explanation:
    """Fit the weighted linear surrogate around ``img`` for ``target_class``."""
    spmap = spmap if spmap is not None else segment(img, cfg)
    if cfg.n_samples < spmap.num_segments + 1:
        logger.warning("n_samples=%d is below K+1=%d; the surrogate is underdetermined",
                       cfg.n_samples, spmap.num_segments + 1)
    perturbations = sample_perturbations(model_fn, img, spmap, target_class, cfg, jobs=jobs)
    X = np.stack([p.mask for p in perturbations]).astype(np.float64)
    y = np.array([p.prediction[target_class] for p in perturbations])
    w = np.array([p.weight for p in perturbations])
    fit = weighted_ridge(X, y, w, cfg.ridge_lambda)
    logger.debug("explained class %d over K=%d segments: r2=%.4f residual=%.2e",
                 target_class, spmap.num_segments, fit.r2, fit.normal_residual)
    return Explanation(
        target_class=target_class,
        coefficients=fit.coefficients.tolist(),
        intercept=fit.intercept,
        top_k=top_segments(fit.coefficients, cfg.top_k),
        fit_r2=fit.r2,
        normal_residual=fit.normal_residual,
        degenerate=fit.degenerate,
    )


def render_overlay(img: Image, spmap: SuperpixelMap, expl: Explanation, positive_only: bool = False) -> Image:
    """Grayscale base with red (positive) / blue (negative) tints on the top-k segments.

    Tint opacity is 0.5 * |c| / max|c| over the top-k segments.
    """
    base = to_rgb(to_grayscale(img)).pixels.copy()
    coefficients = np.asarray(expl.coefficients)
    if coefficients.size != spmap.num_segments:
        raise DimensionError(f"explanation has {coefficients.size} coefficients for {spmap.num_segments} segments")
    shown = [s for s in expl.top_k if coefficients[s] > 0 or not positive_only]
    peak = max((abs(coefficients[s]) for s in shown), default=0.0)
    if peak == 0.0:
        return Image(base)
    for seg in shown:
        alpha = MAX_ALPHA * abs(coefficients[seg]) / peak
        color = RED if coefficients[seg] > 0 else BLUE
        region = spmap.labels == seg
        base[region] = (1.0 - alpha) * base[region] + alpha * color
    return Image(np.clip(base, 0.0, 1.0))


def explanation_to_json(expl: Explanation) -> str:
    document = {
        "class": expl.target_class,
        "intercept": expl.intercept,
        "coefficients": expl.coefficients,
        "top_k": expl.top_k,
        "r2": expl.fit_r2,
        "degenerate": expl.degenerate,
    }
    return json.dumps(document, indent=2)


class LimeExplainer:
    """Explainer bound to one configuration and worker count."""

    def __init__(self, cfg: LimeConfig, jobs: int = 1):
        self.cfg = cfg
        self.jobs = jobs

    def segment(self, img: Image) -> SuperpixelMap:
        return segment(img, self.cfg)

    def explain(self, model_fn: ModelFn, img: Image, target_class: int,
                spmap: Optional[SuperpixelMap] = None) -> Explanation:
        return explain(model_fn, img, target_class, self.cfg, spmap=spmap, jobs=self.jobs)
