"""Training objectives for the decomposition-enhancement GAN.

All losses operate on torch tensors in network space [-1, 1] and preserve
the input dtype, so the same code runs the float32 training path and the
float64 gradient-check path. Scalars are returned as 0-dim tensors.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

# Dyadic-pyramid level weights from the multiscale structural similarity
# literature; truncated and renormalized when fewer levels are used.
MS_SSIM_LEVEL_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class RegConfig:
    """Penalty keeping a decomposition factor away from +-1."""

    C: float = 1.0
    denom_floor: float = 1e-2
    target_factor: str = "R"  # "R" or "I"

    def __post_init__(self):
        if self.C < 1.0:
            raise ValueError("C must be >= 1")
        if not 0.0 < self.denom_floor < self.C:
            raise ValueError("denom_floor must lie in (0, C)")
        if self.target_factor not in ("R", "I"):
            raise ValueError(f"bad target_factor {self.target_factor!r}")


@dataclass
class SsimConfig:
    """Gaussian-window structural similarity settings."""

    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window_size: int = 11
    sigma: float = 1.5
    levels: int = 3

    def level_weights(self):
        w = torch.tensor(MS_SSIM_LEVEL_WEIGHTS[: self.levels], dtype=torch.float64)
        return (w / w.sum()).tolist()

    def min_dim(self):
        return self.window_size * 2 ** (self.levels - 1)


@dataclass
class LossWeights:
    lambda_rec: float = 1.0
    lambda_dec: float = 1.0
    lambda_com: float = 10.0
    lambda_cgan: float = 1.0
    alpha: float = 0.84


@dataclass
class LossFlags:
    use_smooth_l1: bool = True
    use_ssim: bool = True
    use_gan: bool = True


@dataclass
class LossBreakdown:
    """Per-term scalar values of one optimization step."""

    rec_x: float = 0.0
    rec_y: float = 0.0
    reg: float = 0.0
    dec: float = 0.0
    enh: float = 0.0
    ssim_ms: float = 0.0
    com: float = 0.0
    cgan_g: float = 0.0
    cgan_d: float = 0.0
    total: float = 0.0

    FIELDS = ("rec_x", "rec_y", "reg", "dec", "enh", "ssim_ms", "com",
              "cgan_g", "cgan_d", "total")

    def as_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}


def smooth_l1(a, b):
    """Mean Huber penalty: 0.5*d^2 below unit error, d - 0.5 above."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    d = (a - b).abs()
    return torch.where(d < 1.0, 0.5 * d * d, d - 0.5).mean()


def l1(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def distance(a, b, use_smooth_l1=True):
    """The pixel distance used by every reconstruction-style term."""
    return smooth_l1(a, b) if use_smooth_l1 else l1(a, b)


def reg_loss(factor, cfg=None):
    """Mean of 1 / max(C - |v|, floor): cheap near 0, expensive near +-C."""
    cfg = cfg or RegConfig()
    denom = torch.clamp(cfg.C - factor.abs(), min=cfg.denom_floor)
    return (1.0 / denom).mean()


def rec_loss(x, y, dec_x, dec_y, strategy, reg_cfg=None, use_smooth_l1=True):
    """Reconstruction terms of both branches plus the anti-collapse penalty.

    Returns (rec_x, rec_y, reg); reg is nonzero only for the S3 strategy
    and averages the penalty of the target factor over the two branches.
    """
    from .model import compose_tensors, Strategy

    rx = distance(x, compose_tensors(dec_x.R, dec_x.I), use_smooth_l1)
    ry = distance(y, compose_tensors(dec_y.R, dec_y.I), use_smooth_l1)
    if strategy is Strategy.S3:
        cfg = reg_cfg or RegConfig()
        fx = dec_x.R if cfg.target_factor == "R" else dec_x.I
        fy = dec_y.R if cfg.target_factor == "R" else dec_y.I
        reg = 0.5 * (reg_loss(fx, cfg) + reg_loss(fy, cfg))
    else:
        reg = torch.zeros((), dtype=x.dtype, device=x.device)
    return rx, ry, reg


def dec_loss(dec_x, dec_y, use_smooth_l1=True, tie_factor="I"):
    """Tie the shared factor of the two branches together.

    The default ties the illumination factor; the analysis-consistent
    preset ties the reflectance factor instead.
    """
    if tie_factor == "I":
        return distance(dec_x.I, dec_y.I, use_smooth_l1)
    if tie_factor == "R":
        return distance(dec_x.R, dec_y.R, use_smooth_l1)
    raise ValueError(f"bad tie_factor {tie_factor!r}")


def enh_loss(y, R_x, I_x_enh, use_smooth_l1=True):
    """Distance between the recomposed enhanced image and the reference."""
    from .model import compose_tensors

    return distance(y, compose_tensors(R_x, I_x_enh), use_smooth_l1)


def _gaussian_window(size, sigma, dtype, device):
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=dtype, device=device) - half
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    win = torch.outer(g, g)
    return win / win.sum()


def _local_stats(a, b, cfg):
    """Gaussian-windowed means, variances and covariance with reflect pad."""
    if a.dim() == 3:
        a = a[None]
        b = b[None]
    n, c, h, w = a.shape
    size = cfg.window_size
    if min(h, w) < size:
        raise ValueError(f"image {h}x{w} smaller than {size}x{size} window")
    win = _gaussian_window(size, cfg.sigma, a.dtype, a.device)
    kernel = win.expand(c, 1, size, size)
    pad = size // 2

    def filt(t):
        t = F.pad(t, (pad, pad, pad, pad), mode="reflect")
        return F.conv2d(t, kernel, groups=c)

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def ssim_map(a, b, cfg=None):
    """Per-pixel structural similarity with an 11x11 Gaussian window."""
    cfg = cfg or SsimConfig()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    squeeze = a.dim() == 3
    mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, cfg)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    out = num / den
    return out[0] if squeeze else out


def _luminance_contrast(a, b, cfg):
    mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, cfg)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return lum.mean(), cs.mean()


def ssim_loss(a, b, cfg=None):
    """1 - mean structural similarity."""
    return 1.0 - ssim_map(a, b, cfg).mean()


def ms_ssim_loss(a, b, cfg=None):
    """Multiscale structural similarity loss over a dyadic pyramid.

    Contrast-structure means enter at every level below the top; the top
    level contributes the mean of the full per-pixel similarity map
    (luminance times contrast-structure). Exponents are the renormalized
    canonical level weights, the top exponent serving as the luminance
    exponent. With a single level this reduces exactly to ssim_loss.
    """
    cfg = cfg or SsimConfig()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w = a.shape[-2:]
    if min(h, w) < cfg.min_dim():
        raise ValueError(
            f"image {h}x{w} too small for {cfg.levels} levels "
            f"(needs min dim {cfg.min_dim()})"
        )
    squeeze = a.dim() == 3
    if squeeze:
        a = a[None]
        b = b[None]
    betas = cfg.level_weights()
    ms = None
    for j in range(cfg.levels):
        if j == cfg.levels - 1:
            base = ssim_map(a, b, cfg).mean()
        else:
            _, base = _luminance_contrast(a, b, cfg)
        # fractional powers need a positive base; far from the clamp for
        # any correlated image pair
        term = torch.clamp(base, min=1e-6) ** betas[j]
        ms = term if ms is None else ms * term
        if j < cfg.levels - 1:
            a = F.avg_pool2d(a, kernel_size=2, stride=2)
            b = F.avg_pool2d(b, kernel_size=2, stride=2)
    return 1.0 - ms


def com_loss(enh, ssim_ms, alpha=0.84, use_ssim=True):
    """Blend of pixel distance and multiscale structural dissimilarity."""
    if not use_ssim:
        return enh
    return alpha * enh + (1.0 - alpha) * ssim_ms


def cgan_losses(score_real, score_fake):
    """Discriminator and non-saturating generator losses on patch scores.

    Scores are probabilities in (0, 1); log arguments are clamped at 1e-8.
    """
    eps = 1e-8
    d = -torch.log(score_real.clamp(min=eps)).mean() \
        - torch.log((1.0 - score_fake).clamp(min=eps)).mean()
    g = -torch.log(score_fake.clamp(min=eps)).mean()
    return d, g


def total_loss(rec_x, rec_y, reg, dec, com, cgan_g, weights, strategy, flags):
    """Weighted multi-task objective the generator descends."""
    from .model import Strategy

    parts = [rec_x, rec_y, reg, dec, com, cgan_g]
    names = ["rec_x", "rec_y", "reg", "dec", "com", "cgan_g"]
    for name, p in zip(names, parts):
        val = p.item() if torch.is_tensor(p) else p
        if not torch.isfinite(torch.as_tensor(val)):
            raise FloatingPointError(f"non-finite loss component {name}={val}")
    rec = rec_x + rec_y
    if strategy is Strategy.S3:
        rec = rec + reg
    total = weights.lambda_rec * rec + weights.lambda_dec * dec \
        + weights.lambda_com * com
    if flags.use_gan:
        total = total + weights.lambda_cgan * cgan_g
    return total
