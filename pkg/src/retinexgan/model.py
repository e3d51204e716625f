"""Networks: shared decomposition U-Net, enhancement U-Net, composition
operator and the conditional patch discriminator.

The generator is W-shaped: one decomposition U-Net applied (with the same
weights) to the low-light input and, during training, to the reference,
plus an enhancement U-Net acting on the illumination factor. Composition
is an elementwise product in network space.
"""

import enum
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn


class Strategy(enum.Enum):
    """Decomposition channel layouts; S3 additionally enables the
    anti-collapse regularizer."""

    S1 = "S1"  # 3-channel reflectance, 1-channel illumination
    S2 = "S2"  # both factors 3-channel
    S3 = "S3"  # S2 channels + regularization loss

    @property
    def illum_channels(self):
        return 1 if self is Strategy.S1 else 3


@dataclass
class Decomposition:
    R: torch.Tensor  # (B, 3, H, W) reflectance factor
    I: torch.Tensor  # (B, 1 or 3, H, W) illumination factor


@dataclass
class GeneratorOutput:
    dec_x: Decomposition
    dec_y: Optional[Decomposition]
    I_x_enh: torch.Tensor
    x_hat: torch.Tensor


def compose_tensors(R, I):
    """Elementwise Retinex product; 1-channel I broadcasts over R."""
    if R.shape[-2:] != I.shape[-2:]:
        raise ValueError(f"spatial mismatch {tuple(R.shape)} vs {tuple(I.shape)}")
    return R * I


def check_divisible(height, width, depth):
    d = 2**depth
    if height % d or width % d:
        raise ValueError(
            f"input {height}x{width} not divisible by 2^{depth}={d}; "
            "pick a shallower network or pad the input"
        )


class _UnetBlock(nn.Module):
    """One encoder/decoder level of a pix2pix-style U-Net with skip concat."""

    def __init__(self, outer_ch, inner_ch, submodule=None, innermost=False):
        super().__init__()
        self.innermost = innermost
        self.down = nn.Sequential(
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(outer_ch, inner_ch, kernel_size=4, stride=2, padding=1),
        )
        if innermost:
            self.submodule = None
            up_in = inner_ch
        else:
            self.submodule = submodule
            self.down.append(nn.InstanceNorm2d(inner_ch, affine=True))
            up_in = inner_ch * 2
        self.up = nn.Sequential(
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(up_in, outer_ch, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(outer_ch, affine=True),
        )

    def forward(self, x):
        mid = self.down(x)
        if self.submodule is not None:
            mid = self.submodule(mid)
        return torch.cat([x, self.up(mid)], dim=1)


class UNet(nn.Module):
    """Encoder-decoder with skip connections at every level and a tanh head."""

    def __init__(self, in_channels, out_channels, depth=7, base_width=64,
                 max_width=512):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        widths = [min(base_width * 2**i, max_width) for i in range(depth)]
        block = _UnetBlock(widths[-2] if depth > 1 else base_width,
                          widths[-1], innermost=True) if depth > 1 else None
        for i in range(depth - 3, -1, -1):
            block = _UnetBlock(widths[i], widths[i + 1], submodule=block)
        self.head = nn.Conv2d(in_channels, widths[0], kernel_size=4, stride=2,
                              padding=1)
        self.body = block
        body_out = widths[0] * 2 if depth > 1 else widths[0]
        self.tail = nn.Sequential(
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(body_out, out_channels, kernel_size=4, stride=2,
                               padding=1),
            nn.Tanh(),
        )

    def forward(self, x):
        check_divisible(x.shape[-2], x.shape[-1], self.depth)
        h = self.head(x)
        if self.body is not None:
            h = self.body(h)
        return self.tail(h)


class Decomposer(nn.Module):
    """Splits an image into reflectance and illumination factors."""

    def __init__(self, strategy, depth=7, base_width=64):
        super().__init__()
        self.strategy = strategy
        self.unet = UNet(3, 3 + strategy.illum_channels, depth=depth,
                         base_width=base_width)

    def forward(self, img):
        if img.shape[-3] != 3:
            raise ValueError(f"decomposer expects 3 channels, got {img.shape[-3]}")
        out = self.unet(img)
        return Decomposition(R=out[:, :3], I=out[:, 3:])


class Enhancer(nn.Module):
    """Maps the low-light illumination factor to an enhanced one.

    Optionally also sees the reflectance factor (channel-concatenated).
    """

    def __init__(self, strategy, depth=7, base_width=64, sees_reflectance=False):
        super().__init__()
        self.strategy = strategy
        self.sees_reflectance = sees_reflectance
        in_ch = strategy.illum_channels + (3 if sees_reflectance else 0)
        self.unet = UNet(in_ch, strategy.illum_channels, depth=depth,
                         base_width=base_width)

    def forward(self, I_x, R_x=None):
        if I_x.shape[-3] != self.strategy.illum_channels:
            raise ValueError(
                f"enhancer expects {self.strategy.illum_channels} channels, "
                f"got {I_x.shape[-3]}"
            )
        if self.sees_reflectance:
            if R_x is None:
                raise ValueError("enhancer configured to see reflectance")
            return self.unet(torch.cat([I_x, R_x], dim=1))
        return self.unet(I_x)


class PatchDiscriminator(nn.Module):
    """Conditional patch classifier with a 46x46 receptive field.

    Three stride-2 blocks then one stride-1 head: widths 64/128/256/1,
    kernel 4, sigmoid scores. The condition image is concatenated to the
    candidate on the channel axis.
    """

    WIDTHS = (64, 128, 256)

    def __init__(self, in_channels=6):
        super().__init__()
        layers = []
        prev = in_channels
        for i, w in enumerate(self.WIDTHS):
            layers.append(nn.Conv2d(prev, w, kernel_size=4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(w, affine=True))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            prev = w
        layers.append(nn.Conv2d(prev, 1, kernel_size=4, stride=1, padding=1))
        layers.append(nn.Sigmoid())
        self.net = nn.Sequential(*layers)

    def forward(self, condition, candidate):
        if condition.shape[-2:] != candidate.shape[-2:]:
            raise ValueError("condition/candidate spatial dims differ")
        return self.net(torch.cat([condition, candidate], dim=1))

    @staticmethod
    def receptive_field():
        """Receptive field of one output unit via r <- r + (k-1)*j."""
        r, j = 1, 1
        for _, stride in ((4, 2), (4, 2), (4, 2), (4, 1)):
            r += 3 * j
            j *= stride
        return r


class Generator(nn.Module):
    """Shared decomposer + enhancer; the W-shaped generator."""

    def __init__(self, strategy, depth=7, base_width=64, enhancer_sees_reflectance=False):
        super().__init__()
        self.strategy = strategy
        self.decomposer = Decomposer(strategy, depth=depth, base_width=base_width)
        self.enhancer = Enhancer(strategy, depth=depth, base_width=base_width,
                                 sees_reflectance=enhancer_sees_reflectance)

    def forward(self, x, y=None):
        dec_x = self.decomposer(x)
        dec_y = self.decomposer(y) if y is not None else None
        I_x_enh = self.enhancer(dec_x.I, dec_x.R)
        x_hat = compose_tensors(dec_x.R, I_x_enh)
        return GeneratorOutput(dec_x=dec_x, dec_y=dec_y, I_x_enh=I_x_enh,
                               x_hat=x_hat)


def init_weights(module, seed):
    """Gaussian(0, 0.02) conv weights, zero biases, unit norm gains;
    deterministic per seed."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.data.normal_(0.0, 0.02, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
    return module


def init_params(seed, strategy, depth=7, base_width=64,
                enhancer_sees_reflectance=False):
    """Build and deterministically initialize generator and discriminator."""
    g = Generator(strategy, depth=depth, base_width=base_width,
                  enhancer_sees_reflectance=enhancer_sees_reflectance)
    d = PatchDiscriminator()
    init_weights(g, seed)
    init_weights(d, seed + 1)
    return g, d
