"""Training losses and image metrics.

All image losses take channel-last arrays (H, W, C) and accept either plain
numpy arrays or autodiff variables; gradients flow through the first argument
(predictions), ground truth is treated as constant. Reductions are means so
values are comparable across resolutions and point counts.
"""

from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .diffcore import engine

SMOOTH_EPS = 1e-8
IOU_EPS = 1e-6

# term registries: which named terms each stage total consumes
GUIDE_TERMS = ("hr", "sil", "lr", "lmk", "reg", "lap")
GAUSSIAN_TERMS = ("hr", "vgg", "lr", "lmk", "reg")


@dataclass
class LossWeights:
    sil: float = 0.1
    lr: float = 0.1
    lmk: float = 0.1
    reg: float = 0.001
    lap: float = 100.0
    vgg: float = 0.1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _val(x):
    return x.value if isinstance(x, engine.Var) else np.asarray(x, dtype=np.float64)


def _check_same_shape(a, b, what):
    if _val(a).shape != _val(b).shape:
        raise ValueError(
            f"{what}: shape mismatch {_val(a).shape} vs {_val(b).shape}")


def smooth_norm(d, axis=-1, eps=SMOOTH_EPS):
    """‖d‖₂ smoothed at the origin: sqrt(‖d‖² + ε²) − ε."""
    return engine.sqrt(engine.vsum(d * d, axis=axis) + eps * eps) - eps


def photometric_l1(img, img_gt):
    """Mean absolute difference between prediction and ground truth."""
    _check_same_shape(img, img_gt, "photometric_l1")
    return engine.vmean(engine.absolute(img - engine.constant(_val(img_gt))))


def silhouette_loss(mask, mask_gt):
    """1 − soft-IoU between a soft mask in [0,1] and a binary reference."""
    _check_same_shape(mask, mask_gt, "silhouette_loss")
    gt = _val(mask_gt)
    if _val(mask).sum() == 0.0 and gt.sum() == 0.0:
        return engine.constant(0.0)
    gt = engine.constant(gt)
    inter = engine.vsum(mask * gt)
    union = engine.vsum(mask) + engine.vsum(gt) - inter + IOU_EPS
    return 1.0 - inter / union


def lowres_rgb_loss(feat_img, img_gt):
    """Mean absolute difference of the first 3 feature channels vs RGB truth.

    feat_img: (H, W, F) with F >= 3; img_gt: (H, W, 3) at the same resolution.
    """
    fv, gv = _val(feat_img), _val(img_gt)
    if fv.ndim != 3 or fv.shape[2] < 3:
        raise ValueError(f"lowres_rgb_loss: need (H, W, F>=3), got {fv.shape}")
    if gv.shape != (fv.shape[0], fv.shape[1], 3):
        raise ValueError(
            f"lowres_rgb_loss: ground truth {gv.shape} does not match "
            f"({fv.shape[0]}, {fv.shape[1]}, 3)")
    rgb = feat_img[:, :, :3] if isinstance(feat_img, engine.Var) else fv[:, :, :3]
    return engine.vmean(engine.absolute(rgb - engine.constant(gv)))


def landmark_loss(pts, pts_gt):
    """Mean Euclidean distance between matched landmark sets (K, 3)."""
    pv, gv = _val(pts), _val(pts_gt)
    if pv.shape != gv.shape:
        raise ValueError(
            f"landmark_loss: {pv.shape[0]} landmarks vs {gv.shape[0]} reference")
    return engine.vmean(smooth_norm(pts - engine.constant(gv), axis=1))


def displacement_reg(delta_id, delta_exp):
    """Mean per-point magnitude of both deformation fields."""
    return (engine.vmean(smooth_norm(delta_id, axis=1))
            + engine.vmean(smooth_norm(delta_exp, axis=1)))


@lru_cache(maxsize=4)
def _perceptual_bank(seed, in_channels=3):
    """Fixed random strided conv stack; weights never trained."""
    rng = np.random.default_rng(seed)
    chans = (in_channels, 8, 16, 16)
    layers = []
    for c_in, c_out in zip(chans[:-1], chans[1:]):
        w = rng.normal(scale=1.0 / np.sqrt(c_in * 9), size=(c_out, c_in, 3, 3))
        layers.append((w, np.zeros(c_out)))
    return layers


def perceptual_loss(img, img_gt, seed=0):
    """Sum of per-layer L1 feature distances under a fixed random conv bank.

    Stands in for a pretrained perceptual network: the bank is seeded,
    never trained, and identical across runs, so the term is deterministic
    while still penalizing high-frequency mismatch.
    """
    _check_same_shape(img, img_gt, "perceptual_loss")
    iv = _val(img)
    if iv.ndim != 3 or iv.shape[2] != 3:
        raise ValueError(f"perceptual_loss: need (H, W, 3), got {iv.shape}")
    x = engine.transpose(img if isinstance(img, engine.Var)
                         else engine.constant(iv), (2, 0, 1))
    y = engine.constant(np.transpose(_val(img_gt), (2, 0, 1)))
    total = engine.constant(0.0)
    for w, b in _perceptual_bank(seed):
        wc, bc = engine.constant(w), engine.constant(b)
        x = engine.silu(engine.conv2d(x, wc, bc, stride=2, pad=1))
        y = engine.silu(engine.conv2d(y, wc, bc, stride=2, pad=1))
        total = total + engine.vmean(engine.absolute(x - y))
    return total


def _weighted_total(terms, registry, coeffs, what):
    unknown = set(terms) - set(registry)
    if unknown:
        raise ValueError(f"{what}: unknown terms {sorted(unknown)}; "
                         f"expected {list(registry)}")
    missing = set(registry) - set(terms)
    if missing:
        raise ValueError(f"{what}: missing terms {sorted(missing)}")
    total = engine.constant(0.0)
    for name in registry:
        total = total + coeffs[name] * terms[name]
    return total


def total_guide_loss(terms, weights=None):
    """Stage-1 total: hr + sil/lr/lmk/reg/lap terms with their weights."""
    w = weights or LossWeights()
    coeffs = {"hr": 1.0, "sil": w.sil, "lr": w.lr, "lmk": w.lmk,
              "reg": w.reg, "lap": w.lap}
    return _weighted_total(terms, GUIDE_TERMS, coeffs, "total_guide_loss")


def total_gaussian_loss(terms, weights=None):
    """Stage-2 total: hr + vgg/lr/lmk/reg terms; no mesh smoothness term."""
    w = weights or LossWeights()
    coeffs = {"hr": 1.0, "vgg": w.vgg, "lr": w.lr, "lmk": w.lmk, "reg": w.reg}
    return _weighted_total(terms, GAUSSIAN_TERMS, coeffs, "total_gaussian_loss")


def downsample_area(img, factor):
    """Box (area-average) downsample of an (H, W, C) array. Ground-truth side
    only, so plain numpy."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError(
            f"downsample_area: {img.shape[:2]} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor,
                       *img.shape[2:]).mean(axis=(1, 3))


def binarize_mask(alpha, threshold=0.5):
    """Binary float mask from a soft coverage map."""
    return (np.asarray(alpha) >= threshold).astype(np.float64)


def psnr(img, img_gt):
    """Peak signal-to-noise ratio in dB for [0,1] images; inf on exact match."""
    a, b = np.asarray(img, dtype=np.float64), np.asarray(img_gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(img, img_gt, window_size=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean structural similarity over valid Gaussian-weighted windows."""
    a, b = np.asarray(img, dtype=np.float64), np.asarray(img_gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < window_size or a.shape[1] < window_size:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than the "
                         f"{window_size}x{window_size} window")
    w = _gaussian_window(window_size, sigma)

    def filt(x):
        win = np.lib.stride_tricks.sliding_window_view(
            x, (window_size, window_size), axis=(0, 1))
        return np.einsum("hwckl,kl->hwc", win, w, optimize=True)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
