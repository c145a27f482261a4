"""Scikit-learn style estimators wrapping the dynamics and inpainting networks.

Sequences are passed as numpy arrays in channel-last layout:

* ``maps``   ``(N, L, H, W)`` 1-based labels
* ``flows``  ``(N, L, H, W, 2)`` backward flow
* ``frames`` ``(N, L, H, W, 3)`` in ``[0, 1]``

``fit`` consumes clips of length ``observed_len + horizon``; ``predict``
uses the first ``observed_len`` steps of whatever it is given.
"""
from __future__ import annotations

import logging
import time
from fractions import Fraction

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import dynamics as dyn
from . import inpaint as inp
from . import warp
from .core import boundary_weights
from .validation import check_sequences

log = logging.getLogger(__name__)


def step_lr(epoch: int, base_lr: float = 1e-3, decay: float = 0.8, every: int = 20) -> float:
    """Step schedule ``base_lr * decay ** (epoch // every)``.

    Evaluated in exact decimal arithmetic so that e.g. epoch 20 gives
    ``0.0008`` rather than ``0.0008000000000000001``.
    """
    k = epoch // every
    return float(Fraction(repr(base_lr)) * Fraction(repr(decay)) ** k)


def epoch_seed(seed: int, epoch: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([seed, epoch, stream]).generate_state(1)[0])


def onehot_torch(labels: np.ndarray, num_classes: int, dtype=torch.float32) -> torch.Tensor:
    """1-based labels (..., H, W) -> one-hot (..., C, H, W)."""
    lab = torch.as_tensor(np.asarray(labels) - 1, dtype=torch.long)
    return torch.nn.functional.one_hot(lab, num_classes).movedim(-1, -3).to(dtype)


def flows_torch(flows: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.asarray(flows)).movedim(-1, -3).to(dtype)


def future_boundary_weights(maps: np.ndarray, alpha: float, variance: float) -> np.ndarray:
    """Boundary weights for every map of a (N, K, H, W) stack."""
    out = np.empty(maps.shape, dtype=np.float32)
    for idx in np.ndindex(maps.shape[:2]):
        out[idx] = boundary_weights(maps[idx], alpha, variance).weights
    return out


class SemanticDynamicsPredictor(BaseEstimator):
    """Predicts future semantic maps and flow fields from past ones.

    ``fit`` runs Adam with a step learning-rate schedule for ``epochs``
    epochs. With ``warm_start=True`` a fitted estimator continues from its
    current epoch up to ``epochs``, which reproduces an uninterrupted run
    exactly because every epoch's shuffling and noise are seeded from
    ``(seed, epoch)``.
    """

    def __init__(
        self,
        num_classes=3,
        hidden_channels=32,
        downsample=4,
        observed_len=5,
        horizon=5,
        alpha=5.0,
        boundary_variance=9.0,
        beta=0.1,
        stochastic=False,
        single_class=False,
        context_channels=16,
        mlp_hidden=64,
        fusion_channels=16,
        learning_rate=1e-3,
        lr_decay=0.8,
        decay_every=20,
        epochs=10,
        batch_size=8,
        seed=0,
        warm_start=False,
        time_budget=None,
        verbose=0,
    ):
        self.num_classes = num_classes
        self.hidden_channels = hidden_channels
        self.downsample = downsample
        self.observed_len = observed_len
        self.horizon = horizon
        self.alpha = alpha
        self.boundary_variance = boundary_variance
        self.beta = beta
        self.stochastic = stochastic
        self.single_class = single_class
        self.context_channels = context_channels
        self.mlp_hidden = mlp_hidden
        self.fusion_channels = fusion_channels
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.warm_start = warm_start
        self.time_budget = time_budget
        self.verbose = verbose

    def make_config(self) -> dyn.DynamicsConfig:
        return dyn.DynamicsConfig(
            num_classes=self.num_classes,
            hidden_channels=self.hidden_channels,
            downsample=self.downsample,
            horizon=self.horizon,
            observed_len=self.observed_len,
            alpha=self.alpha,
            boundary_variance=self.boundary_variance,
            beta=self.beta,
            stochastic=self.stochastic,
            context_channels=self.context_channels,
            mlp_hidden=self.mlp_hidden,
            fusion_channels=self.fusion_channels,
            single_class=self.single_class,
        )

    def _initialize(self):
        torch.manual_seed(self.seed)
        self.config_ = self.make_config()
        self.model_ = dyn.SemanticDynamicsNet(self.config_)
        self.optimizer_ = torch.optim.Adam(self.model_.parameters(), lr=self.learning_rate)
        self.epoch_ = 0
        self.history_ = []

    def n_parameters(self, include_posterior: bool = False) -> int:
        check_is_fitted(self, "model_")
        return sum(
            p.numel()
            for name, p in self.model_.named_parameters()
            if include_posterior or not name.startswith("posterior.")
        )

    def lr_at(self, epoch: int) -> float:
        return step_lr(epoch, self.learning_rate, self.lr_decay, self.decay_every)

    def _batch_tensors(self, maps, flows, weights, index):
        t_obs, k = self.observed_len, self.horizon
        m = onehot_torch(maps[index], self.num_classes)
        f = flows_torch(flows[index])
        targets = torch.as_tensor(maps[index, t_obs : t_obs + k] - 1, dtype=torch.long)
        w = torch.as_tensor(weights[index])
        return m, f, targets, w

    def batch_loss(self, m, f, targets, w, generator=None, noise=None):
        """Loss terms for one batch of full-length one-hot/flow tensors."""
        t_obs, k = self.observed_len, self.horizon
        future = (m[:, t_obs : t_obs + k], f[:, t_obs : t_obs + k]) if self.stochastic else None
        out = self.model_(m[:, :t_obs], f[:, :t_obs], k, future=future, noise=noise, generator=generator)
        l_flow = dyn.loss_flow(out["flows"], f[:, t_obs : t_obs + k])
        l_sem = dyn.loss_semantic(out["probs"], targets, w)
        l_kl = dyn.loss_kl(out["post_mean"], out["post_var"]) if self.stochastic else None
        total = dyn.loss_dynamic(l_flow, l_sem, l_kl, self.beta)
        return total, {"flow": l_flow.item(), "semantic": l_sem.item(), "kl": 0.0 if l_kl is None else l_kl.item()}

    def fit(self, maps, flows, y=None):
        maps, flows = check_sequences(maps, flows, self.num_classes)
        t_obs, k = self.observed_len, self.horizon
        if maps.shape[1] < t_obs + k:
            raise ValueError(f"clips need at least observed_len + horizon = {t_obs + k} steps")
        if not (self.warm_start and hasattr(self, "model_")):
            self._initialize()
        weights = future_boundary_weights(maps[:, t_obs : t_obs + k], self.alpha, self.boundary_variance)
        flows = flows.astype(np.float32)
        n = maps.shape[0]
        start = time.monotonic()
        self.model_.train()
        while self.epoch_ < self.epochs:
            epoch = self.epoch_
            for group in self.optimizer_.param_groups:
                group["lr"] = self.lr_at(epoch)
            order = np.random.default_rng(epoch_seed(self.seed, epoch)).permutation(n)
            gen = torch.Generator().manual_seed(epoch_seed(self.seed, epoch, 1))
            totals, parts = [], []
            for s in range(0, n, self.batch_size):
                idx = np.sort(order[s : s + self.batch_size])
                batch = self._batch_tensors(maps, flows, weights, idx)
                self.optimizer_.zero_grad()
                loss, terms = self.batch_loss(*batch, generator=gen)
                loss.backward()
                self.optimizer_.step()
                totals.append(loss.item())
                parts.append(terms)
            record = {
                "epoch": epoch,
                "lr": self.lr_at(epoch),
                "loss": float(np.mean(totals)),
                **{key: float(np.mean([p[key] for p in parts])) for key in parts[0]},
            }
            self.history_.append(record)
            self.epoch_ += 1
            if self.verbose:
                log.info("dynamics epoch %d: %s", epoch, record)
            if self.time_budget is not None and time.monotonic() - start > self.time_budget:
                break
        self.model_.eval()
        return self

    def evaluate_loss(self, maps, flows, batch_size=32) -> float:
        """Mean deterministic-mode loss (flow + semantic) over clips."""
        check_is_fitted(self, "model_")
        maps, flows = check_sequences(maps, flows, self.num_classes)
        t_obs, k = self.observed_len, self.horizon
        weights = future_boundary_weights(maps[:, t_obs : t_obs + k], self.alpha, self.boundary_variance)
        total, count = 0.0, 0
        self.model_.eval()
        gen = torch.Generator().manual_seed(self.seed)
        with torch.no_grad():
            for s in range(0, maps.shape[0], batch_size):
                idx = np.arange(s, min(s + batch_size, maps.shape[0]))
                m, f, targets, w = self._batch_tensors(maps, flows.astype(np.float32), weights, idx)
                out = self.model_(m[:, :t_obs], f[:, :t_obs], k, generator=gen)
                l = dyn.loss_flow(out["flows"], f[:, t_obs:]) + dyn.loss_semantic(out["probs"], targets, w)
                total += l.item() * len(idx)
                count += len(idx)
        return total / count

    def predict(self, maps, flows, class_order=None, seed=None, batch_size=32, return_class_flows=False):
        """Predict ``horizon`` future soft maps and flows.

        Returns ``(probs, flows)`` shaped ``(N, K, H, W, C)`` and
        ``(N, K, H, W, 2)``. ``class_order[j] = i`` routes class ``i``'s
        masks and flows through the networks of class ``j`` (1-based), for
        class-swap experiments; output channel ``j`` then carries class
        ``i``'s segment. In stochastic mode the prior noise is drawn from
        ``seed`` (defaults to the estimator seed).
        """
        check_is_fitted(self, "model_")
        maps, flows = check_sequences(maps, flows, self.num_classes)
        t_obs = self.observed_len
        maps, flows = maps[:, :t_obs], flows[:, :t_obs].astype(np.float32)
        perm = None
        if class_order is not None:
            perm = np.asarray(class_order) - 1
            if sorted(perm.tolist()) != list(range(self.num_classes)):
                raise ValueError(f"class_order must be a permutation of 1..{self.num_classes}")
        gen = torch.Generator().manual_seed(self.seed if seed is None else seed)
        dtype = next(self.model_.parameters()).dtype
        probs_out, flows_out, class_out = [], [], []
        self.model_.eval()
        with torch.no_grad():
            for s in range(0, maps.shape[0], batch_size):
                m = onehot_torch(maps[s : s + batch_size], self.num_classes, dtype)
                if perm is not None:
                    m = m[:, :, perm]
                f = flows_torch(flows[s : s + batch_size], dtype)
                out = self.model_(m, f, self.horizon, generator=gen)
                probs_out.append(out["probs"].movedim(2, -1).numpy())
                flows_out.append(out["flows"].movedim(2, -1).numpy())
                if return_class_flows and out["class_flows"] is not None:
                    class_out.append(out["class_flows"].movedim(3, -1).numpy())
        probs = np.concatenate(probs_out).astype(np.float64)
        fused = np.concatenate(flows_out).astype(np.float64)
        if return_class_flows:
            return probs, fused, (np.concatenate(class_out) if class_out else None)
        return probs, fused

    def predict_labels(self, maps, flows, **kwargs) -> np.ndarray:
        probs, _ = self.predict(maps, flows, **kwargs)
        return np.argmax(probs, axis=-1) + 1


class DisocclusionInpainter(BaseEstimator):
    """Completes dis-occluded regions of warped anchor frames.

    Arrays are ``(N, K, H, W, ...)`` clips: ``anchors`` (…, 3), boolean
    ``disocclusion`` masks (True = dis-occluded), soft semantic
    ``conditions`` (…, C) and, for ``fit``, the real ``frames`` (…, 3).
    Training alternates one least-squares discriminator step with one
    generator step per batch.
    """

    def __init__(
        self,
        num_classes=3,
        channels=(16, 32, 48, 64),
        disc_channels=16,
        perceptual_weight=2.0,
        frame_adversarial_weight=2.0,
        clip_adversarial_weight=1.0,
        learning_rate=1e-3,
        lr_decay=0.8,
        decay_every=20,
        epochs=5,
        batch_size=8,
        seed=0,
        warm_start=False,
        time_budget=None,
        verbose=0,
    ):
        self.num_classes = num_classes
        self.channels = channels
        self.disc_channels = disc_channels
        self.perceptual_weight = perceptual_weight
        self.frame_adversarial_weight = frame_adversarial_weight
        self.clip_adversarial_weight = clip_adversarial_weight
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.warm_start = warm_start
        self.time_budget = time_budget
        self.verbose = verbose

    @property
    def loss_weights(self) -> inp.InpaintLossWeights:
        return inp.InpaintLossWeights(
            self.perceptual_weight, self.frame_adversarial_weight, self.clip_adversarial_weight
        )

    def _initialize(self):
        torch.manual_seed(self.seed)
        self.generator_ = inp.InpaintGenerator(self.num_classes, tuple(self.channels))
        self.frame_disc_ = inp.FrameDiscriminator(self.num_classes, self.disc_channels)
        self.clip_disc_ = inp.ClipDiscriminator(self.num_classes, self.disc_channels)
        self.perceptual_ = inp.RandomFeaturePyramid()
        self.g_optimizer_ = torch.optim.Adam(self.generator_.parameters(), lr=self.learning_rate)
        self.d_optimizer_ = torch.optim.Adam(
            [*self.frame_disc_.parameters(), *self.clip_disc_.parameters()], lr=self.learning_rate
        )
        self.epoch_ = 0
        self.history_ = []

    def lr_at(self, epoch: int) -> float:
        return step_lr(epoch, self.learning_rate, self.lr_decay, self.decay_every)

    @staticmethod
    def _tensors(anchors, disocc, conditions, frames=None):
        a = torch.as_tensor(np.asarray(anchors, np.float32)).movedim(-1, -3)
        m = torch.as_tensor(np.asarray(disocc, np.float32))
        c = torch.as_tensor(np.asarray(conditions, np.float32)).movedim(-1, -3)
        if frames is None:
            return a, m, c
        return a, m, c, torch.as_tensor(np.asarray(frames, np.float32)).movedim(-1, -3)

    def _generate(self, a, m, c):
        """(B, K, ...) tensors -> (B, K, 3, H, W) completed frames."""
        b, k = a.shape[:2]
        out = self.generator_(a.flatten(0, 1), 1.0 - m.flatten(0, 1).unsqueeze(1), c.flatten(0, 1))
        return out.view(b, k, *out.shape[1:])

    def train_step(self, a, m, c, x):
        """One discriminator update followed by one generator update."""
        w = self.loss_weights
        fake = self._generate(a, m, c)
        use_adv = w.frame_adversarial > 0 or w.clip_adversarial > 0
        d_loss = torch.zeros(())
        if use_adv:
            self.d_optimizer_.zero_grad()
            fd, cd = self.frame_disc_, self.clip_disc_
            f_real = fd(x.flatten(0, 1), c.flatten(0, 1))
            f_fake = fd(fake.detach().flatten(0, 1), c.flatten(0, 1))
            d_loss = inp.discriminator_loss(f_real, f_fake) + inp.discriminator_loss(cd(x, c), cd(fake.detach(), c))
            d_loss.backward()
            self.d_optimizer_.step()
        self.g_optimizer_.zero_grad()
        for p in [*self.frame_disc_.parameters(), *self.clip_disc_.parameters()]:
            p.requires_grad_(False)
        g_loss, terms = inp.loss_inpaint(
            fake, a, x, m, c, w, self.perceptual_, self.frame_disc_, self.clip_disc_
        )
        g_loss.backward()
        for p in [*self.frame_disc_.parameters(), *self.clip_disc_.parameters()]:
            p.requires_grad_(True)
        self.g_optimizer_.step()
        record = {key: v.item() for key, v in terms.items()}
        record.update(generator=g_loss.item(), discriminator=d_loss.item())
        return record

    def fit(self, anchors, disocclusion, conditions, frames):
        anchors = np.asarray(anchors)
        if anchors.ndim != 5:
            raise ValueError("expected (N, K, H, W, 3) anchor clips")
        if np.asarray(conditions).shape[-1] != self.num_classes:
            raise ValueError(f"conditions must have {self.num_classes} channels")
        if not (self.warm_start and hasattr(self, "generator_")):
            self._initialize()
        n = anchors.shape[0]
        start = time.monotonic()
        while self.epoch_ < self.epochs:
            epoch = self.epoch_
            for opt in (self.g_optimizer_, self.d_optimizer_):
                for group in opt.param_groups:
                    group["lr"] = self.lr_at(epoch)
            order = np.random.default_rng(epoch_seed(self.seed, epoch)).permutation(n)
            records = []
            for s in range(0, n, self.batch_size):
                idx = np.sort(order[s : s + self.batch_size])
                batch = self._tensors(anchors[idx], disocclusion[idx], conditions[idx], frames[idx])
                records.append(self.train_step(*batch))
            summary = {key: float(np.mean([r[key] for r in records])) for key in records[0]}
            self.history_.append({"epoch": epoch, "lr": self.lr_at(epoch), **summary})
            self.epoch_ += 1
            if self.verbose:
                log.info("inpaint epoch %d: %s", epoch, self.history_[-1])
            if self.time_budget is not None and time.monotonic() - start > self.time_budget:
                break
        return self

    def transform(self, anchors, disocclusion, conditions, batch_size=32):
        """Complete frames; accepts ``(N, K, ...)`` clips or ``(N, ...)`` frames."""
        check_is_fitted(self, "generator_")
        anchors = np.asarray(anchors)
        single = anchors.ndim == 4
        if single:
            anchors, disocclusion, conditions = anchors[:, None], np.asarray(disocclusion)[:, None], np.asarray(conditions)[:, None]
        outs = []
        with torch.no_grad():
            for s in range(0, anchors.shape[0], batch_size):
                a, m, c = self._tensors(anchors[s : s + batch_size], disocclusion[s : s + batch_size],
                                        conditions[s : s + batch_size])
                outs.append(self._generate(a, m, c).movedim(-3, -1).numpy())
        out = np.concatenate(outs).astype(np.float64)
        return out[:, 0] if single else out


def warp_and_detect(prev_frames, prev_maps, probs, flows):
    """Warp a batch of frames one step and detect dis-occlusions.

    ``prev_frames`` (N, H, W, 3), ``prev_maps`` (N, H, W), ``probs``
    (N, H, W, C) and ``flows`` (N, H, W, 2) for the target step.
    """
    labels = np.argmax(probs, axis=-1) + 1
    anchors = np.stack([warp.warp_frame(prev_frames[i], flows[i]) for i in range(len(flows))])
    masks = [warp.detect_disocclusion(labels[i], prev_maps[i], flows[i]) for i in range(len(flows))]
    return anchors, masks, labels


def teacher_forced_inputs(dynamics: SemanticDynamicsPredictor, frames, maps, flows):
    """Inpainting training inputs built from stage-1 predictions.

    Each future anchor is the true previous frame warped with the predicted
    flow; dis-occlusions compare the predicted labels with the true previous
    map. Returns ``(anchors, disocclusion, conditions, targets)``.
    """
    maps, flows, frames = check_sequences(maps, flows, dynamics.num_classes, frames)
    t_obs, k = dynamics.observed_len, dynamics.horizon
    probs, pred_flows = dynamics.predict(maps, flows)
    anchors = np.empty((maps.shape[0], k, *frames.shape[2:]))
    disocc = np.empty((maps.shape[0], k, *maps.shape[2:]), dtype=bool)
    for step in range(k):
        a, masks, _ = warp_and_detect(frames[:, t_obs + step - 1], maps[:, t_obs + step - 1],
                                      probs[:, step], pred_flows[:, step])
        anchors[:, step] = a
        disocc[:, step] = np.stack([m.mask for m in masks])
    return anchors, disocc, probs, frames[:, t_obs : t_obs + k]


class VideoPredictor(BaseEstimator):
    """Full pipeline: dynamics -> warping -> dis-occlusion -> inpainting.

    Frames are produced recursively: each future frame is the previous
    prediction (the last observed frame at first) warped with the predicted
    flow and completed by the inpainter.
    """

    def __init__(self, dynamics=None, inpainter=None):
        self.dynamics = dynamics
        self.inpainter = inpainter

    def fit(self, frames, maps, flows):
        self.dynamics.fit(maps, flows)
        inputs = teacher_forced_inputs(self.dynamics, frames, maps, flows)
        self.inpainter.fit(*inputs)
        return self

    def predict(self, frames, maps, flows, seed=None):
        maps, flows, frames = check_sequences(maps, flows, self.dynamics.num_classes, frames)
        t_obs, k = self.dynamics.observed_len, self.dynamics.horizon
        probs, pred_flows = self.dynamics.predict(maps, flows, seed=seed)
        n = maps.shape[0]
        out_frames = np.empty((n, k, *frames.shape[2:]))
        anchors = np.empty_like(out_frames)
        disocc = np.empty((n, k, *maps.shape[2:]), dtype=bool)
        provenance = np.empty_like(disocc, dtype=np.uint8)
        prev_frames, prev_maps = frames[:, t_obs - 1], maps[:, t_obs - 1]
        for step in range(k):
            a, masks, labels = warp_and_detect(prev_frames, prev_maps, probs[:, step], pred_flows[:, step])
            disocc[:, step] = np.stack([m.mask for m in masks])
            provenance[:, step] = np.stack([m.provenance for m in masks])
            anchors[:, step] = a
            out_frames[:, step] = self.inpainter.transform(a, disocc[:, step], probs[:, step])
            prev_frames, prev_maps = out_frames[:, step], labels
        return {
            "frames": out_frames,
            "probs": probs,
            "flows": pred_flows,
            "anchors": anchors,
            "disocclusion": disocc,
            "provenance": provenance,
        }
