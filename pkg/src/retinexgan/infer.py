"""Checkpoint-backed enhancement of single images.

Inputs whose dimensions are not divisible by 2^depth are reflect-padded,
run through the generator, and cropped back.
"""

import numpy as np
import torch
import torch.nn.functional as F

from . import imgcore
from .imgcore import ImageTensor, Space


def _pad_to_multiple(t, depth):
    d = 2**depth
    h, w = t.shape[-2:]
    ph = (-h) % d
    pw = (-w) % d
    if ph or pw:
        t = F.pad(t, (0, pw, 0, ph), mode="reflect")
    return t, h, w


def _to_storage(t):
    arr = ((t.detach().numpy() + 1.0) / 2.0).clip(0.0, 1.0)
    return ImageTensor(arr, Space.STORAGE01)


class GeneratorEnhancer:
    """Callable enhancer: storage01 image in, storage01 image out.

    output="composite" returns the recomposed enhanced image;
    output="illumination" returns the enhanced illumination factor itself.
    """

    def __init__(self, generator, depth, output="composite"):
        if output not in ("composite", "illumination"):
            raise ValueError(f"bad output mode {output!r}")
        self.generator = generator
        self.depth = depth
        self.output = output

    def forward_parts(self, img):
        """Run the test-time path; returns (dec, I_x_enh, x_hat) tensors
        cropped to the input size."""
        if img.space is not Space.STORAGE01:
            raise imgcore.SpaceError("enhancer expects a storage01 image")
        data = img.data
        if data.shape[0] == 1:
            data = np.repeat(data, 3, axis=0)
        x = torch.from_numpy(data * 2.0 - 1.0)[None]
        x, h, w = _pad_to_multiple(x, self.depth)
        with torch.no_grad():
            gout = self.generator(x)
        crop = lambda t: t[0, :, :h, :w]
        return (crop(gout.dec_x.R), crop(gout.dec_x.I),
                crop(gout.I_x_enh), crop(gout.x_hat))

    def __call__(self, img):
        R, I, I_enh, x_hat = self.forward_parts(img)
        if self.output == "composite":
            return _to_storage(x_hat)
        if I_enh.shape[0] == 1:
            I_enh = I_enh.expand(3, -1, -1)
        return _to_storage(I_enh)

    def decompose_views(self, img):
        """Reflectance and illumination factors mapped to storage01 for
        inspection."""
        R, I, _, _ = self.forward_parts(img)
        if I.shape[0] == 1:
            I = I.expand(3, -1, -1)
        return _to_storage(R), _to_storage(I)
