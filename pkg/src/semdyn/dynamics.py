"""Per-class recurrent dynamics for semantic maps and flow fields.

Every class owns its own encoder, decoder, context perceptron and decoding
heads. They are evaluated together with grouped convolutions: channel block
``k`` of every grouped tensor belongs to class ``k + 1``. Tensors use the
``(B, C, H, W)`` layout and 0-based class indices.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

PROB_FLOOR = 1e-8
VAR_FLOOR = 1e-6


@dataclass
class DynamicsConfig:
    num_classes: int = 3
    hidden_channels: int = 32
    downsample: int = 4
    horizon: int = 5
    observed_len: int = 5
    alpha: float = 5.0
    boundary_variance: float = 9.0
    beta: float = 0.1
    stochastic: bool = False
    context_channels: int = 16
    mlp_hidden: int = 64
    fusion_channels: int = 16
    # Baseline: one ungrouped recurrence over the concatenated masks and flow.
    single_class: bool = False

    def __post_init__(self):
        for name in ("num_classes", "hidden_channels", "downsample", "horizon", "observed_len",
                     "context_channels", "mlp_hidden", "fusion_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.boundary_variance <= 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha, beta must be >= 0 and boundary_variance > 0")

    @property
    def groups(self) -> int:
        return 1 if self.single_class else self.num_classes

    def to_dict(self) -> dict:
        return asdict(self)


def init_uniform(module: nn.Module, scale: float = 0.05) -> None:
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            nn.init.zeros_(p)
        else:
            nn.init.uniform_(p, -scale, scale)


class GroupedConvLSTMCell(nn.Module):
    """ConvLSTM whose channels are split into independent groups.

    ``in_channels`` and ``hidden_channels`` are per group. Gates are ordered
    (input, forget, output, candidate) inside each group.
    """

    def __init__(self, groups: int, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.groups = groups
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.conv = nn.Conv2d(
            groups * (in_channels + hidden_channels),
            groups * 4 * hidden_channels,
            kernel_size,
            padding=kernel_size // 2,
            groups=groups,
        )
        self.reset_parameters()

    def reset_parameters(self, scale: float = 0.05, forget_bias: float = 1.0) -> None:
        nn.init.uniform_(self.conv.weight, -scale, scale)
        with torch.no_grad():
            bias = self.conv.bias.view(self.groups, 4, self.hidden_channels)
            bias.zero_()
            bias[:, 1] = forget_bias

    def init_state(self, batch: int, height: int, width: int, like: torch.Tensor):
        shape = (batch, self.groups * self.hidden_channels, height, width)
        return like.new_zeros(shape), like.new_zeros(shape)

    def forward(self, x, state):
        h, c = state
        b, _, height, width = x.shape
        g = self.groups
        xh = torch.cat([x.view(b, g, -1, height, width), h.view(b, g, -1, height, width)], dim=2)
        gates = self.conv(xh.view(b, -1, height, width)).view(b, g, 4, self.hidden_channels, height, width)
        i, f, o, cand = gates.unbind(2)
        c = torch.sigmoid(f) * c.view(b, g, -1, height, width) + torch.sigmoid(i) * torch.tanh(cand)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h.reshape(b, -1, height, width), c.reshape(b, -1, height, width)


class ContextMLP(nn.Module):
    """One two-layer perceptron per class over the pooled states of all classes."""

    def __init__(self, groups: int, hidden_channels: int, mlp_hidden: int, out_channels: int):
        super().__init__()
        n_in = groups * hidden_channels
        self.w1 = nn.Parameter(torch.empty(groups, n_in, mlp_hidden))
        self.b1 = nn.Parameter(torch.zeros(groups, mlp_hidden))
        self.w2 = nn.Parameter(torch.empty(groups, mlp_hidden, out_channels))
        self.b2 = nn.Parameter(torch.zeros(groups, out_channels))
        nn.init.uniform_(self.w1, -0.05, 0.05)
        nn.init.uniform_(self.w2, -0.05, 0.05)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        """(B, G*hid, h, w) -> (B, G, out)."""
        pooled = states.mean(dim=(2, 3))
        hidden = torch.tanh(torch.einsum("bi,gij->bgj", pooled, self.w1) + self.b1)
        return torch.einsum("bgj,gjk->bgk", hidden, self.w2) + self.b2


class FusionNet(nn.Module):
    """Three-layer ConvNet fusing per-class mask logits into a soft map.

    The network predicts a residual on top of the stacked logits, so a
    zeroed last layer passes the per-class logits straight to the softmax.
    """

    def __init__(self, num_classes: int, channels: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(num_classes, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv3 = nn.Conv2d(channels, num_classes, 3, padding=1)
        init_uniform(self)

    def forward(self, logits: torch.Tensor) -> torch.Tensor:
        x = torch.tanh(self.conv1(logits))
        x = torch.tanh(self.conv2(x))
        return torch.softmax(logits + self.conv3(x), dim=1)


class PosteriorCell(nn.Module):
    """Recurrent per-class update of the posterior mean and variance."""

    def __init__(self, groups: int, in_channels: int, hidden_channels: int):
        super().__init__()
        self.groups = groups
        self.hidden_channels = hidden_channels
        self.conv = nn.Conv2d(
            groups * (in_channels + 2 * hidden_channels),
            groups * 2 * hidden_channels,
            3,
            padding=1,
            groups=groups,
        )
        init_uniform(self)

    def forward(self, x, mean, var):
        b, _, height, width = x.shape
        g = self.groups
        stacked = torch.cat(
            [t.view(b, g, -1, height, width) for t in (x, mean, var)], dim=2
        ).view(b, -1, height, width)
        raw = self.conv(stacked).view(b, g, 2, self.hidden_channels, height, width)
        mean = raw[:, :, 0].reshape(b, -1, height, width)
        var = F.softplus(raw[:, :, 1]).reshape(b, -1, height, width) + VAR_FLOOR
        return mean, var


class SemanticDynamicsNet(nn.Module):
    def __init__(self, config: DynamicsConfig):
        super().__init__()
        self.config = config
        c, d, hid, g = config.num_classes, config.downsample, config.hidden_channels, config.groups
        if config.single_class:
            in_per_group, mask_out = (c + 2) * d * d, c
        else:
            in_per_group, mask_out = 3 * d * d, 1
        self.encoder = GroupedConvLSTMCell(g, in_per_group, hid)
        self.context = ContextMLP(g, hid, config.mlp_hidden, config.context_channels)
        self.decoder = GroupedConvLSTMCell(g, config.context_channels, hid)
        self.mask_head = nn.Conv2d(g * hid, g * mask_out, 3, padding=1, groups=g)
        self.flow_head = nn.Conv2d(g * hid, g * 2, 3, padding=1, groups=g)
        init_uniform(self.mask_head)
        init_uniform(self.flow_head)
        self.fusion = FusionNet(c, config.fusion_channels)
        self.posterior = PosteriorCell(g, in_per_group, hid) if config.stochastic else None

    # -- building blocks ----------------------------------------------------

    def encode_inputs(self, masks: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
        """One-hot masks (B, C, H, W) and flow (B, 2, H, W) -> grouped low-res input."""
        if masks.shape[1] != self.config.num_classes:
            raise ValueError(f"expected {self.config.num_classes} class masks, got {masks.shape[1]}")
        if self.config.single_class:
            x = torch.cat([masks, flow], dim=1)
        else:
            b, c, height, width = masks.shape
            x = torch.cat([masks.unsqueeze(2), masks.unsqueeze(2) * flow.unsqueeze(1)], dim=2)
            x = x.view(b, c * 3, height, width)
        return F.pixel_unshuffle(x, self.config.downsample)

    def encode_step(self, x, state):
        return self.encoder(x, state)

    def context_summary(self, states: torch.Tensor) -> torch.Tensor:
        return self.context(states)

    def decode_step(self, state, context: torch.Tensor):
        """Returns (new_state, embedding, low-res mask logits, low-res flows)."""
        b, g, k = context.shape
        height, width = state[0].shape[-2:]
        inp = context.reshape(b, g * k, 1, 1).expand(b, g * k, height, width)
        state = self.decoder(inp, state)
        emb = state[0]
        return state, emb, self.mask_head(emb), self.flow_head(emb)

    def upsample(self, x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=self.config.downsample, mode="bilinear", align_corners=False)

    # -- full rollout -------------------------------------------------------

    def forward(self, masks, flows, horizon=None, future=None, noise=None, generator=None):
        """Roll the model out over ``horizon`` future steps.

        ``masks`` (B, T, C, H, W) one-hot and ``flows`` (B, T, 2, H, W) are
        the observed past. In stochastic mode ``future`` = (masks, flows) of
        the ground-truth future drives the posterior (training); without it
        the noise is drawn from the standard normal prior. ``noise`` fixes
        the standard-normal draw explicitly.
        """
        cfg = self.config
        horizon = horizon or cfg.horizon
        b, t_obs, _, height, width = masks.shape
        d = cfg.downsample
        if height % d or width % d:
            raise ValueError(f"H and W must be divisible by the downsample factor {d}")
        h, w = height // d, width // d
        state = self.encoder.init_state(b, h, w, masks)
        for t in range(t_obs):
            state = self.encode_step(self.encode_inputs(masks[:, t], flows[:, t]), state)

        summary = state[0]
        post_mean = post_var = None
        if cfg.stochastic:
            if noise is None:
                noise = torch.randn(summary.shape, generator=generator, dtype=summary.dtype)
            if future is not None:
                post_mean, post_var = self.posterior_rollout(future[0], future[1], summary)
                z = post_mean + torch.sqrt(post_var) * noise
            else:
                z = noise
            summary = summary + z
        context = self.context_summary(summary)

        logits, class_flows = [], []
        for _ in range(horizon):
            state, _, mask_lr, flow_lr = self.decode_step(state, context)
            logits.append(self.upsample(mask_lr))
            class_flows.append(self.upsample(flow_lr))
        logits = torch.stack(logits, 1)  # (B, K, C, H, W)
        probs = self.fusion(logits.flatten(0, 1)).view_as(logits)
        if cfg.single_class:
            fused = torch.stack(class_flows, 1)  # (B, K, 2, H, W)
            class_flows = None
        else:
            class_flows = torch.stack(class_flows, 1).view(b, horizon, cfg.num_classes, 2, height, width)
            fused = fuse_flows(probs, class_flows)
        return {
            "probs": probs,
            "flows": fused,
            "mask_logits": logits,
            "class_flows": class_flows,
            "post_mean": post_mean,
            "post_var": post_var,
        }

    def posterior_init(self, summary: torch.Tensor):
        return summary, torch.ones_like(summary)

    def posterior_step(self, x, mean, var):
        if not self.training:
            raise RuntimeError("the posterior is only used during training; sample the prior at test time")
        return self.posterior(x, mean, var)

    def posterior_rollout(self, masks, flows, summary):
        mean, var = self.posterior_init(summary)
        for t in range(masks.shape[1]):
            mean, var = self.posterior_step(self.encode_inputs(masks[:, t], flows[:, t]), mean, var)
        return mean, var


# -- fusion and losses ----------------------------------------------------------


def fuse_flows(probs: torch.Tensor, class_flows: torch.Tensor) -> torch.Tensor:
    """Per-pixel convex combination of class flows.

    ``probs`` (..., C, H, W), ``class_flows`` (..., C, 2, H, W) -> (..., 2, H, W).
    """
    if class_flows.shape[:-3] != probs.shape[:-2] or class_flows.shape[-3] != 2:
        raise ValueError(f"soft map {tuple(probs.shape)} and class flows {tuple(class_flows.shape)} disagree")
    return (probs.unsqueeze(-3) * class_flows).sum(dim=-4)


def loss_flow(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Summed L1 over horizon, components and pixels; averaged over the batch."""
    diff = (pred - truth).abs()
    return diff.reshape(diff.shape[0], -1).sum(1).mean()


def loss_semantic(probs: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Boundary-weighted cross-entropy.

    ``probs`` (B, K, C, H, W); ``targets`` (B, K, H, W) 0-based class
    indices; ``weights`` (B, K, H, W).
    """
    p_true = probs.gather(2, targets.unsqueeze(2)).squeeze(2)
    ce = -torch.log(p_true.clamp_min(PROB_FLOOR))
    return (weights * ce).reshape(ce.shape[0], -1).sum(1).mean()


def loss_kl(mean: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, var) || N(0, I)) summed over classes and dimensions."""
    kl = 0.5 * (mean**2 + var - 1.0 - torch.log(var))
    return kl.reshape(kl.shape[0], -1).sum(1).mean()


def loss_dynamic(l_flow, l_sem, l_kl=None, beta: float = 0.1):
    total = l_flow + l_sem
    if l_kl is not None:
        total = total + beta * l_kl
    return total
