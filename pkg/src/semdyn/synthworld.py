"""Synthetic layered worlds with analytic frames, maps, flows and dis-occlusions.

A world is a stack of layers drawn back to front. The first layer is the
background; it fills the canvas and moves with the camera pan. Every other
layer is a textured rectangle or disc that moves under its own motion law,
so each semantic class has a distinct, known dynamics.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .core import Clip, pixel_grid


class WorldSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Motion:
    """Layer offset as a function of time: ``static``, ``drift`` or ``oscillate``.

    ``drift`` moves by ``velocity`` pixels per frame. ``oscillate`` follows
    ``amplitude * sin(2*pi*t/period + phase)``; a ``None`` phase is drawn
    from the clip seed.
    """

    kind: str = "static"
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 8.0
    phase: float | None = None

    def offset(self, t, phase: float = 0.0) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)[..., None]
        if self.kind == "static":
            return np.zeros(t.shape[:-1] + (2,))
        if self.kind == "drift":
            return t * np.asarray(self.velocity, dtype=np.float64)
        if self.kind == "oscillate":
            return np.asarray(self.amplitude) * np.sin(2 * np.pi * t / self.period + phase)
        raise WorldSpecError(f"unknown motion kind {self.kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    class_id: int
    shape: str = "rect"  # background | rect | disc
    size: tuple[float, float] = (12.0, 12.0)  # rect: (w, h); disc: (radius, radius)
    motion: Motion = field(default_factory=Motion)
    texture: str = "smooth"  # smooth | flat


@dataclass(frozen=True)
class WorldSpec:
    height: int = 64
    width: int = 64
    layers: tuple[LayerSpec, ...] = ()
    pan: tuple[float, float] = (0.0, 0.0)
    length: int = 10
    seed: int = 0
    subpixel: bool = False

    @property
    def num_classes(self) -> int:
        return len(self.layers)

    def validate(self) -> "WorldSpec":
        ids = [layer.class_id for layer in self.layers]
        if not ids:
            raise WorldSpecError("a world needs at least a background layer")
        if len(set(ids)) != len(ids):
            raise WorldSpecError(f"class ids must be distinct, got {ids}")
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise WorldSpecError(f"class ids must be exactly 1..C, got {ids}")
        if self.layers[0].shape != "background":
            raise WorldSpecError("the first layer must be the background")
        if any(layer.shape == "background" for layer in self.layers[1:]):
            raise WorldSpecError("only the first layer may be the background")
        if self.height < 4 or self.width < 4 or self.length < 2:
            raise WorldSpecError("canvas must be at least 4x4 and clips at least 2 frames")
        return self

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]


def default_world_spec(seed: int = 0, pan: tuple[float, float] = (1.0, 0.0), length: int = 10) -> WorldSpec:
    """Background with camera pan, a drifting rectangle and an oscillating disc."""
    return WorldSpec(
        height=64,
        width=64,
        layers=(
            LayerSpec(1, "background"),
            LayerSpec(2, "rect", (14.0, 10.0), Motion("drift", velocity=(3.0, 0.0))),
            LayerSpec(3, "disc", (7.0, 7.0), Motion("oscillate", amplitude=(0.0, 2.5), period=8.0)),
        ),
        pan=pan,
        length=length,
        seed=seed,
    )


def static_world_spec(seed: int = 0, length: int = 10) -> WorldSpec:
    spec = default_world_spec(seed=seed, pan=(0.0, 0.0), length=length)
    layers = tuple(replace(layer, motion=Motion()) for layer in spec.layers)
    return replace(spec, layers=layers)


@dataclass
class OracleClip:
    """Rendered clip plus exact flows, dis-occlusion masks and occupancy counts.

    Index ``i`` is time ``t = i``; flows and masks at ``i`` relate frame ``i``
    to frame ``i - 1`` (time ``-1`` is evaluated analytically).
    """

    spec: WorldSpec
    frames: np.ndarray  # (L, H, W, 3)
    maps: np.ndarray  # (L, H, W) labels 1..C
    flows: np.ndarray  # (L, H, W, 2) backward
    disocclusion: np.ndarray  # (L, H, W) bool
    occupancy: np.ndarray  # (L, H, W) int, targets landing on each source pixel
    offsets: np.ndarray  # (num_layers, L + 1, 2), time -1 .. L-1
    positions: np.ndarray  # (num_layers, 2) anchor positions at t = 0 before motion
    phases: np.ndarray  # (num_layers,)

    def to_clip(self, observed_len: int) -> Clip:
        return Clip(self.frames, self.flows, self.maps, self.spec.num_classes, observed_len)

    def class_velocity(self, class_id: int, t: int) -> np.ndarray:
        """Backward flow of a class at frame ``t`` (offset(t-1) - offset(t))."""
        k = [layer.class_id for layer in self.spec.layers].index(class_id)
        return self.offsets[k, t] - self.offsets[k, t + 1]


class _World:
    """Per-clip geometry: layer anchors, phases, textures and snapped offsets."""

    def __init__(self, spec: WorldSpec):
        self.spec = spec.validate()
        rng = np.random.default_rng(spec.seed)
        n = len(spec.layers)
        self.phases = np.zeros(n)
        self.anchors = np.zeros((n, 2))
        self.textures = []
        times = np.arange(-1, spec.length)
        for k, layer in enumerate(spec.layers):
            motion = layer.motion
            phase = motion.phase if motion.phase is not None else rng.uniform(0, 2 * np.pi)
            self.phases[k] = phase
            self.textures.append(self._draw_texture(rng, layer.texture))
            if layer.shape == "background":
                continue
            self.anchors[k] = self._draw_anchor(rng, layer, motion.offset(times, phase))
        self.offsets = np.stack([self.offset(k, times) for k in range(n)])

    def _draw_texture(self, rng, kind: str) -> dict:
        base = rng.uniform(0.25, 0.75, size=3)
        if kind == "flat":
            return {"base": base, "waves": []}
        waves = []
        for _ in range(3):
            wavelength = rng.uniform(14.0, 32.0)
            angle = rng.uniform(0, np.pi)
            waves.append(
                (
                    rng.uniform(0.03, 0.07, size=3),
                    np.cos(angle) / wavelength,
                    np.sin(angle) / wavelength,
                    rng.uniform(0, 2 * np.pi),
                )
            )
        return {"base": base, "waves": waves}

    def _draw_anchor(self, rng, layer: LayerSpec, path: np.ndarray) -> np.ndarray:
        # Keep at least `keep` pixels of the shape on canvas along the whole path.
        h, w = self.spec.height, self.spec.width
        if layer.shape == "rect":
            sw, sh = layer.size
            keep = min(6.0, sw / 2, sh / 2)
            lo = np.array([keep - sw, keep - sh]) - path.min(0)
            hi = np.array([w - keep, h - keep]) - path.max(0)
        elif layer.shape == "disc":
            r = layer.size[0]
            keep = r
            lo = np.array([keep - r, keep - r]) - path.min(0)
            hi = np.array([w - 1 - keep + r, h - 1 - keep + r]) - path.max(0)
        else:
            raise WorldSpecError(f"unknown shape {layer.shape!r}")
        if np.any(hi < lo):
            raise WorldSpecError(f"motion of class {layer.class_id} cannot stay on canvas")
        anchor = rng.uniform(lo, hi)
        return anchor if self.spec.subpixel else np.floor(anchor + 0.5)

    def offset(self, k: int, t) -> np.ndarray:
        layer = self.spec.layers[k]
        t = np.asarray(t, dtype=np.float64)
        if layer.shape == "background":
            raw = t[..., None] * np.asarray(self.spec.pan, dtype=np.float64)
        else:
            raw = self.anchors[k] + layer.motion.offset(t, self.phases[k])
        return raw if self.spec.subpixel else np.floor(raw + 0.5)

    def contains(self, k: int, points: np.ndarray, off: np.ndarray) -> np.ndarray:
        layer = self.spec.layers[k]
        local = points - off
        if layer.shape == "background":
            return np.ones(points.shape[:-1], dtype=bool)
        if layer.shape == "rect":
            sw, sh = layer.size
            return (local[..., 0] >= 0) & (local[..., 0] < sw) & (local[..., 1] >= 0) & (local[..., 1] < sh)
        r = layer.size[0]
        return local[..., 0] ** 2 + local[..., 1] ** 2 <= r * r

    def texture(self, k: int, local: np.ndarray) -> np.ndarray:
        tex = self.textures[k]
        color = np.broadcast_to(tex["base"], local.shape[:-1] + (3,)).copy()
        for amp, fx, fy, phase in tex["waves"]:
            arg = 2 * np.pi * (fx * local[..., 0] + fy * local[..., 1]) + phase
            color += amp * np.sin(arg)[..., None]
        return np.clip(color, 0.0, 1.0)

    def top_layer(self, points: np.ndarray, time_index: int) -> np.ndarray:
        """Index of the front-most layer covering each continuous point."""
        top = np.zeros(points.shape[:-1], dtype=np.intp)
        for k in range(1, len(self.spec.layers)):
            top[self.contains(k, points, self.offsets[k, time_index])] = k
        return top


def _render(world: _World, grid: np.ndarray, time_index: int):
    top = world.top_layer(grid, time_index)
    frame = np.zeros(grid.shape[:-1] + (3,))
    for k in range(len(world.spec.layers)):
        sel = top == k
        if sel.any():
            frame[sel] = world.texture(k, grid[sel] - world.offsets[k, time_index])
    return top, frame


def generate(spec: WorldSpec) -> OracleClip:
    """Render a clip with its analytic flows, dis-occlusions and occupancy."""
    world = _World(spec)
    h, w, length = spec.height, spec.width, spec.length
    grid = pixel_grid(h, w)
    class_ids = np.array([layer.class_id for layer in spec.layers])

    frames = np.zeros((length, h, w, 3))
    maps = np.zeros((length, h, w), dtype=np.int64)
    flows = np.zeros((length, h, w, 2))
    disocc = np.zeros((length, h, w), dtype=bool)
    occupancy = np.zeros((length, h, w), dtype=np.int64)
    for i in range(length):
        ti = i + 1  # offsets[:, 0] is time -1
        top, frame = _render(world, grid, ti)
        frames[i] = frame
        maps[i] = class_ids[top]
        step = world.offsets[:, ti - 1] - world.offsets[:, ti]
        flows[i] = step[top]
        src = grid + flows[i]
        disocc[i], occupancy[i] = _visibility(world, src, top, ti - 1)

    return OracleClip(
        spec=spec,
        frames=frames,
        maps=maps,
        flows=flows,
        disocclusion=disocc,
        occupancy=occupancy,
        offsets=world.offsets,
        positions=world.anchors.copy(),
        phases=world.phases.copy(),
    )


def _visibility(world: _World, src: np.ndarray, top: np.ndarray, prev_index: int):
    h, w = top.shape
    xi = np.floor(src[..., 0] + 0.5).astype(np.intp)
    yi = np.floor(src[..., 1] + 0.5).astype(np.intp)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    prev_top = world.top_layer(src, prev_index)
    disocc = ~inside | (prev_top != top)
    occupancy = np.zeros((h, w), dtype=np.int64)
    np.add.at(occupancy, (yi[inside], xi[inside]), 1)
    return disocc, occupancy


def oracle_disocclusion(clip: OracleClip, t: int, per_layer: bool = False) -> np.ndarray:
    """Exact dis-occlusion mask of frame ``t`` relative to frame ``t - 1``.

    With ``per_layer`` the result is ``(num_layers, H, W)``: slot ``k`` marks
    dis-occluded pixels that show layer ``k`` at time ``t``.
    """
    world = _World(clip.spec)
    h, w = clip.spec.height, clip.spec.width
    grid = pixel_grid(h, w)
    top = world.top_layer(grid, t + 1)
    mask, _ = _visibility(world, grid + clip.flows[t], top, t)
    if not per_layer:
        return mask
    return np.stack([mask & (top == k) for k in range(len(clip.spec.layers))])


# -- datasets -----------------------------------------------------------------


@dataclass
class SynthDataset:
    """Batched arrays for a split of synthetic clips."""

    frames: np.ndarray  # (N, L, H, W, 3)
    maps: np.ndarray  # (N, L, H, W)
    flows: np.ndarray  # (N, L, H, W, 2)
    disocclusion: np.ndarray  # (N, L, H, W)
    num_classes: int
    split: str = "train"
    specs: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def subset(self, index) -> "SynthDataset":
        index = np.atleast_1d(np.asarray(index))
        specs = [self.specs[i] for i in index] if self.specs else []
        return SynthDataset(
            self.frames[index],
            self.maps[index],
            self.flows[index],
            self.disocclusion[index],
            self.num_classes,
            self.split,
            specs,
        )

    def merge_classes(self, merge_map: dict[int, int]) -> "SynthDataset":
        """Relabel classes with a surjective map onto 1..C'."""
        targets = sorted(set(merge_map.values()))
        if sorted(merge_map) != list(range(1, self.num_classes + 1)):
            raise ValueError(f"merge map must cover classes 1..{self.num_classes}")
        if targets != list(range(1, len(targets) + 1)):
            raise ValueError(f"merge map must be onto 1..C', got targets {targets}")
        lut = np.zeros(self.num_classes + 1, dtype=np.int64)
        for src, dst in merge_map.items():
            lut[src] = dst
        return SynthDataset(
            self.frames, lut[self.maps], self.flows, self.disocclusion, len(targets), self.split, self.specs
        )


def sample_specs(n: int, seed: int, base: WorldSpec | None = None, pans=((-1.0, 0.0), (0.0, 0.0), (1.0, 0.0))):
    """``n`` per-clip specs with independent seeds and a randomly chosen pan."""
    base = base or default_world_spec()
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=n)
    choice = rng.integers(0, len(pans), size=n)
    return [replace(base, seed=int(s), pan=tuple(pans[c])) for s, c in zip(seeds, choice)]


def build_dataset(specs, split: str = "train") -> SynthDataset:
    clips = [generate(spec) for spec in specs]
    return SynthDataset(
        frames=np.stack([c.frames for c in clips]).astype(np.float32),
        maps=np.stack([c.maps for c in clips]).astype(np.int64),
        flows=np.stack([c.flows for c in clips]).astype(np.float32),
        disocclusion=np.stack([c.disocclusion for c in clips]),
        num_classes=specs[0].num_classes,
        split=split,
        specs=list(specs),
    )


def make_splits(n_train: int = 500, n_test: int = 100, seed: int = 0, base: WorldSpec | None = None):
    train = build_dataset(sample_specs(n_train, seed, base), "train")
    test = build_dataset(sample_specs(n_test, seed + 1_000_003, base), "test")
    return train, test


def write_dataset(root, datasets) -> Path:
    """Write clips as PNG/.flo files plus a ``manifest.jsonl`` index."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for ds in datasets:
        for i in range(len(ds)):
            clip_dir = root / ds.split / f"clip_{i:05d}"
            clip_dir.mkdir(parents=True, exist_ok=True)
            rec = {
                "clip": f"{ds.split}/{i:05d}",
                "split": ds.split,
                "num_classes": ds.num_classes,
                "spec_hash": ds.specs[i].digest() if ds.specs else None,
                "spec": asdict(ds.specs[i]) if ds.specs else None,
                "frames": [],
                "maps": [],
                "flows": [],
                "disocclusion": [],
            }
            for t in range(ds.frames.shape[1]):
                names = (f"frame_{t:02d}.png", f"map_{t:02d}.png", f"flow_{t:02d}.flo", f"disocc_{t:02d}.png")
                io.write_frame(clip_dir / names[0], ds.frames[i, t])
                io.write_semantic_map(clip_dir / names[1], ds.maps[i, t])
                io.write_flo(clip_dir / names[2], ds.flows[i, t])
                io.write_mask(clip_dir / names[3], ds.disocclusion[i, t], provenance={"source": "oracle"})
                for key, name in zip(("frames", "maps", "flows", "disocclusion"), names):
                    rec[key].append(str((clip_dir / name).relative_to(root)))
            records.append(rec)
    manifest = root / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest


def read_dataset(root, split: str) -> SynthDataset:
    root = Path(root)
    frames, maps, flows, disocc, specs = [], [], [], [], []
    num_classes = None
    with open(root / "manifest.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["split"] != split:
                continue
            num_classes = rec["num_classes"]
            frames.append([io.read_frame(root / p) for p in rec["frames"]])
            maps.append([io.read_semantic_map(root / p) for p in rec["maps"]])
            flows.append([io.read_flo(root / p) for p in rec["flows"]])
            disocc.append([io.read_mask(root / p) for p in rec["disocclusion"]])
            if rec.get("spec"):
                specs.append(spec_from_dict(rec["spec"]))
    if num_classes is None:
        raise ValueError(f"no clips with split {split!r} under {root}")
    return SynthDataset(
        np.asarray(frames, np.float32),
        np.asarray(maps, np.int64),
        np.asarray(flows, np.float32),
        np.asarray(disocc, bool),
        num_classes,
        split,
        specs,
    )


def spec_from_dict(d: dict) -> WorldSpec:
    layers = tuple(
        LayerSpec(
            class_id=l["class_id"],
            shape=l["shape"],
            size=tuple(l["size"]),
            motion=Motion(**{**l["motion"], "velocity": tuple(l["motion"]["velocity"]),
                             "amplitude": tuple(l["motion"]["amplitude"])}),
            texture=l.get("texture", "smooth"),
        )
        for l in d["layers"]
    )
    return WorldSpec(**{**d, "layers": layers, "pan": tuple(d["pan"])})
