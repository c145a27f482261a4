"""Semantic-conditioned inpainting of dis-occluded regions.

The generator is a small U-Net whose encoder uses mask-aware (partial)
convolutions on image features and ordinary convolutions on the semantic
condition. Two discriminators score realism: one per frame, one over the
whole predicted clip with spatiotemporal kernels. Both see the frames
concatenated with the soft semantic maps.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class InpaintLossWeights:
    perceptual: float = 2.0  # lambda
    frame_adversarial: float = 2.0  # gamma
    clip_adversarial: float = 1.0  # eta

    def __post_init__(self):
        if min(self.perceptual, self.frame_adversarial, self.clip_adversarial) < 0:
            raise ValueError("loss weights must be non-negative")


def partial_conv(x, mask, weight, bias=None, stride=1, padding=0):
    """Convolution renormalized over the valid inputs of each window.

    ``mask`` is ``(B, 1, H, W)`` with 1 for valid pixels. Returns the
    features and the updated mask (1 wherever any input was valid).
    Windows without valid input produce 0, bias included. Zero padding
    counts as valid input, so an all-valid mask gives exactly the ordinary
    convolution.
    """
    kh, kw = weight.shape[-2:]
    ones = torch.ones(1, 1, kh, kw, dtype=x.dtype, device=x.device)
    pad = padding if isinstance(padding, tuple) else (padding, padding)
    with torch.no_grad():
        padded = F.pad(mask, (pad[1], pad[1], pad[0], pad[0]), value=1.0)
        coverage = F.conv2d(padded, ones, stride=stride)
        new_mask = (coverage > 0).to(x.dtype)
        ratio = (kh * kw) / coverage.clamp_min(1.0) * new_mask
    out = F.conv2d(x * mask, weight, None, stride=stride, padding=padding) * ratio
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1) * new_mask
    return out, new_mask


class PartialConv2d(nn.Conv2d):
    def forward(self, x, mask):
        return partial_conv(x, mask, self.weight, self.bias, self.stride, self.padding)


class InpaintGenerator(nn.Module):
    """U-Net with partial-convolution encoder and semantic conditioning.

    Inputs are the anchor frame (B, 3, H, W), the validity mask
    (B, 1, H, W; 1 = co-visible) and the soft semantic map (B, C, H, W).
    """

    def __init__(self, num_classes: int, channels=(16, 32, 48, 64)):
        super().__init__()
        self.num_classes = num_classes
        self.enc_img = nn.ModuleList()
        self.enc_cond = nn.ModuleList()
        prev = 3
        for ch in channels:
            self.enc_img.append(PartialConv2d(prev, ch, 4, stride=2, padding=1))
            self.enc_cond.append(nn.Conv2d(num_classes, ch, 4, stride=2, padding=1))
            prev = ch
        self.dec = nn.ModuleList()
        skips = [3 + num_classes, *channels[:-1]]
        for skip in reversed(skips):
            out = max(skip, 16)
            self.dec.append(nn.Conv2d(prev + skip, out, 3, padding=1))
            prev = out
        self.head = nn.Conv2d(prev, 3, 3, padding=1)

    def forward(self, anchor, valid, condition):
        x, m = anchor, valid
        skips = [torch.cat([anchor * valid, condition], dim=1)]
        cond = condition
        for img_conv, cond_conv in zip(self.enc_img, self.enc_cond):
            feat, m = img_conv(x, m)
            x = F.relu(feat + cond_conv(cond))
            cond = F.avg_pool2d(cond, 2)
            skips.append(x)
        skips.pop()  # the deepest features are the decoder input, not a skip
        for conv in self.dec:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(conv(torch.cat([x, skips.pop()], dim=1)))
        return torch.sigmoid(self.head(x))


class FrameDiscriminator(nn.Module):
    """Patch discriminator over a frame and its soft semantic map."""

    def __init__(self, num_classes: int, channels: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3 + num_classes, channels, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, 2 * channels, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * channels, 1, 3, padding=1),
        )

    def forward(self, frame, condition):
        return self.net(torch.cat([frame, condition], dim=1))


class ClipDiscriminator(nn.Module):
    """Spatiotemporal patch discriminator over (B, K, 3 + C, H, W) clips."""

    def __init__(self, num_classes: int, channels: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv3d(3 + num_classes, channels, (3, 4, 4), stride=(1, 2, 2), padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv3d(channels, 2 * channels, (3, 4, 4), stride=(1, 2, 2), padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv3d(2 * channels, 1, 3, padding=1),
        )

    def forward(self, frames, conditions):
        x = torch.cat([frames, conditions], dim=2).transpose(1, 2)  # (B, 3+C, K, H, W)
        return self.net(x)


class RandomFeaturePyramid(nn.Module):
    """Frozen random convolutional features at three scales.

    Stands in for a pretrained perceptual network; the weights come from a
    fixed seed and never train.
    """

    def __init__(self, seed: int = 1234, channels: int = 8, scales: int = 3):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.scales = scales
        w1 = torch.randn(channels, 3, 3, 3, generator=gen) / 3.0
        w2 = torch.randn(channels, channels, 3, 3, generator=gen) / (3.0 * channels**0.5)
        self.register_buffer("w1", w1)
        self.register_buffer("w2", w2)

    def features(self, x):
        feats = []
        for s in range(self.scales):
            if s:
                x = F.avg_pool2d(x, 2)
            h = F.relu(F.conv2d(x, self.w1, padding=1))
            feats.append(F.conv2d(h, self.w2, padding=1))
        return feats

    def forward(self, pred, target):
        """Mean-L1 feature distance summed over scales, per sample."""
        total = 0.0
        for a, b in zip(self.features(pred), self.features(target)):
            total = total + (a - b).abs().flatten(1).mean(1)
        return total


def reconstruction_term(pred, anchor, disocc):
    """Co-visible L1 to the anchor: sum over horizon of the per-pixel mean.

    ``pred``/``anchor`` (B, K, 3, H, W); ``disocc`` (B, K, H, W), 1 where
    dis-occluded. Returns one value per sample.
    """
    keep = (1.0 - disocc).unsqueeze(2)
    per_pixel = (keep * (pred - anchor).abs()).sum(2)  # channel L1
    return per_pixel.flatten(2).mean(2).sum(1)


def lsgan_generator_term(score):
    return ((score - 1.0) ** 2).flatten(1).mean(1)


def loss_inpaint(pred, anchor, real, disocc, conditions, weights: InpaintLossWeights,
                 perceptual=None, frame_disc=None, clip_disc=None):
    """Generator objective; returns (scalar total, dict of batch-mean terms).

    Terms with a zero weight, or without their network, are skipped.
    """
    b, k = pred.shape[:2]
    recon = reconstruction_term(pred, anchor, disocc)
    terms = {"reconstruction": recon.mean()}
    total = recon
    if weights.perceptual and perceptual is not None:
        per = perceptual(pred.flatten(0, 1), real.flatten(0, 1)).view(b, k).sum(1)
        terms["perceptual"] = per.mean()
        total = total + weights.perceptual * per
    if weights.frame_adversarial and frame_disc is not None:
        score = frame_disc(pred.flatten(0, 1), conditions.flatten(0, 1))
        adv = lsgan_generator_term(score).view(b, k).sum(1)
        terms["frame_adversarial"] = adv.mean()
        total = total + weights.frame_adversarial * adv
    if weights.clip_adversarial and clip_disc is not None:
        adv = lsgan_generator_term(clip_disc(pred, conditions))
        terms["clip_adversarial"] = adv.mean()
        total = total + weights.clip_adversarial * adv
    return total.mean(), terms


def discriminator_loss(disc_real, disc_fake):
    """Least-squares discriminator objective."""
    return 0.5 * (((disc_real - 1.0) ** 2).mean() + (disc_fake**2).mean())
