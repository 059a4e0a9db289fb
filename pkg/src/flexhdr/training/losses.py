from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import hdr_scale, tonemap_mu
from ..layers import init_conv
from ..numerics import Tensor, absolute, add, as_tensor, clip, conv2d, leaky_relu, mean, mul, sub

VGG_WEIGHT = 1e-3


@dataclass
class LossReport:
    l_tm: float
    l_phot: float
    l_vgg: float
    l_total: float

    def as_row(self) -> dict[str, float]:
        return {"l_tm": self.l_tm, "l_phot": self.l_phot, "l_vgg": self.l_vgg, "l_total": self.l_total}


def _check(pred, gt):
    if as_tensor(pred).shape != as_tensor(gt).shape:
        raise ValueError(f"loss shape mismatch: {as_tensor(pred).shape} vs {as_tensor(gt).shape}")


def loss_tonemapped(pred, gt) -> Tensor:
    """Mean absolute difference of the mu-law tonemapped images (inputs already in [0, 1])."""
    _check(pred, gt)
    return mean(absolute(sub(tonemap_mu(as_tensor(pred)), tonemap_mu(as_tensor(gt)))))


def loss_photometric(f_w, f_r, e_r) -> Tensor:
    """Mean of |F_w - F_r| * E_r. Callers pass F_r and E_r detached."""
    return mean(mul(absolute(sub(f_w, f_r)), e_r))


class FeatureExtractor:
    """Fixed random conv stack with three tap points, standing in for a pretrained VGG.

    Six 3x3 conv + leaky ReLU layers; taps after layers 2, 4 and 6. Weights
    come from a fixed seed and never receive updates.
    """

    widths = (8, 8, 16, 16, 32, 32)
    strides = (1, 1, 2, 1, 2, 1)
    taps = (1, 3, 5)

    def __init__(self, seed: int = 1234, dtype=np.float32):
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        cin = 3
        for i, cout in enumerate(self.widths):
            init_conv(params, f"l{i}", 3, cin, cout, rng)
            cin = cout
        self.params = {k: Tensor(v.astype(dtype)) for k, v in params.items()}

    def __call__(self, x) -> list[Tensor]:
        feats = []
        h = as_tensor(x)
        for i, s in enumerate(self.strides):
            h = leaky_relu(conv2d(h, self.params[f"l{i}.w"], self.params[f"l{i}.b"], stride=s))
            if i in self.taps:
                feats.append(h)
        return feats


_default_extractor: dict = {}


def default_extractor(dtype=np.float32) -> FeatureExtractor:
    key = np.dtype(dtype).str
    if key not in _default_extractor:
        _default_extractor[key] = FeatureExtractor(dtype=dtype)
    return _default_extractor[key]


def loss_perceptual(pred, gt, extractor: FeatureExtractor | None = None) -> Tensor:
    """Sum over taps of mean absolute feature differences of the tonemapped images."""
    _check(pred, gt)
    pred = as_tensor(pred)
    extractor = extractor or default_extractor(pred.dtype)
    fp = extractor(tonemap_mu(pred))
    fg = extractor(tonemap_mu(as_tensor(gt)))
    total = None
    for a, b in zip(fp, fg):
        term = mean(absolute(sub(a, Tensor(b.data))))
        total = term if total is None else add(total, term)
    return total


def total_loss(
    pred,
    gt: np.ndarray,
    phot_terms,
    extractor: FeatureExtractor | None = None,
    scales: np.ndarray | None = None,
) -> tuple[Tensor, LossReport]:
    """L_tm + L_phot + 1e-3 L_vgg on HDR normalized by the ground truth's 99th percentile.

    ``pred`` and ``gt`` are B x H x W x 3; ``scales`` holds one normalizer
    per batch element. ``phot_terms`` is (F_w, F_r, E_r) or None when the
    batch has no non-reference frames.
    """
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=pred.dtype)
    if scales is None:
        scales = np.array([hdr_scale(g) for g in gt])
    inv = Tensor((1.0 / np.asarray(scales)).reshape(-1, 1, 1, 1).astype(pred.dtype))
    p_n = clip(mul(pred, inv), 0.0, 1.0)
    g_n = Tensor(np.clip(gt * inv.data, 0.0, 1.0))
    l_tm = loss_tonemapped(p_n, g_n)
    l_vgg = loss_perceptual(p_n, g_n, extractor)
    if phot_terms is None:
        l_phot = Tensor(np.zeros((), dtype=pred.dtype))
    else:
        l_phot = loss_photometric(*phot_terms)
    total = add(add(l_tm, l_phot), mul(l_vgg, VGG_WEIGHT))
    report = LossReport(float(l_tm.data), float(l_phot.data), float(l_vgg.data), float(total.data))
    return total, report
