"""Synthetic benchmark generator with a controllable frame-length confounder.

Each (verb, noun) class carries a latent motion frequency (from the verb)
and an appearance vector (from the noun). A clip's features are sampled at
uniformly spaced frame indices, so the phase coverage of the sinusoidal
motion channels depends on the clip's frame length: longer clips are
sampled more sparsely in time. Shifting the test-set length distribution
by `bias_shift` therefore injects a real train/test bias into the motion
channels while leaving the appearance channels untouched.

Frame lengths are log-normal (long-tailed with outliers); a positive shift
reproduces the test-longer regime, a negative one the opposite.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Clip, FeatureMatrix, Manifest, save_features, save_manifest

MOTION_CHANNELS = 4  # sin, cos, and their scaled time derivatives


@dataclass
class GenConfig:
    n_verbs: int = 10
    n_nouns: int = 5
    pairs_per_split: int = 20
    clips_per_class_train: int = 50
    clips_per_class_test: int = 15
    feature_dim: int = 16
    sampled_frames: int = 8
    base_len_mu: float = 5.0
    base_len_sigma: float = 0.45
    class_mu_spread: float = 0.35
    bias_shift: float = 120.0
    noise_sigma: float = 0.05
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.sampled_frames < 1:
            raise ValueError("sampled_frames must be >= 1")
        if min(self.n_verbs, self.n_nouns, self.pairs_per_split,
               self.clips_per_class_train, self.clips_per_class_test) < 1:
            raise ValueError("all counts must be >= 1")
        if self.pairs_per_split > self.n_verbs * self.n_nouns:
            raise ValueError("pairs_per_split exceeds the verb x noun grid")
        if self.feature_dim < MOTION_CHANNELS + 1:
            raise ValueError(
                f"feature_dim must be >= {MOTION_CHANNELS + 1} for the channel layout"
            )
        if self.fps <= 0:
            raise ValueError("fps must be positive")


def sample_frames(t: int, m: int) -> list[int]:
    """Uniformly spaced frame indices: floor((i + 0.5) * T / M), clamped to [0, T-1]."""
    if t < 1:
        raise ValueError("clip length must be >= 1")
    return [min(int((i + 0.5) * t / m), t - 1) for i in range(m)]


def _draw_length(rng: np.random.Generator, mu: float, sigma: float, shift: float, floor: int) -> int:
    return max(floor, int(round(rng.lognormal(mu, sigma) + shift)))


def generate(config: GenConfig) -> tuple[Manifest, Manifest, FeatureMatrix, dict]:
    """Build (train manifest, test manifest, features, truth) for one seed.

    Both manifests share one feature matrix with disjoint row blocks. The
    truth dict records the latent class parameters for oracle tests only;
    nothing downstream of generation may read it.
    """
    rng = np.random.default_rng(config.seed)
    n_app = config.feature_dim - MOTION_CHANNELS

    omega = rng.uniform(0.25, 1.5, size=config.n_verbs)
    appearance = rng.normal(size=(config.n_nouns, n_app))
    appearance /= np.linalg.norm(appearance, axis=1, keepdims=True)

    grid = [(v, n) for v in range(config.n_verbs) for n in range(config.n_nouns)]
    picked = rng.choice(len(grid), size=config.pairs_per_split, replace=False)
    classes = sorted(grid[i] for i in picked)
    class_mu = {
        key: config.base_len_mu + config.class_mu_spread * rng.uniform(-1.0, 1.0)
        for key in classes
    }

    verb_dict = {v: f"verb_{v}" for v in range(config.n_verbs)}
    noun_dict = {n: f"noun_{n}" for n in range(config.n_nouns)}

    rows_per_clip = config.sampled_frames
    feature_rows: list[np.ndarray] = []
    lengths_truth: dict[str, int] = {}

    def make_clip(split: str, serial: int, key: tuple[int, int], shift: float) -> Clip:
        v, n = key
        t = _draw_length(rng, class_mu[key], config.base_len_sigma, shift, config.sampled_frames)
        block = np.empty((rows_per_clip, config.feature_dim))
        for r, frame in enumerate(sample_frames(t, rows_per_clip)):
            tau = frame / config.fps
            phase = omega[v] * tau
            block[r, :n_app] = appearance[n]
            block[r, n_app + 0] = np.sin(phase)
            block[r, n_app + 1] = np.cos(phase)
            block[r, n_app + 2] = omega[v] * np.cos(phase)
            block[r, n_app + 3] = -omega[v] * np.sin(phase)
        block += rng.normal(scale=config.noise_sigma, size=block.shape)
        row0 = len(feature_rows) * rows_per_clip
        feature_rows.append(block)
        clip_id = f"{split}_{serial:05d}"
        lengths_truth[clip_id] = t
        return Clip(
            clip_id=clip_id,
            split_tag=split,
            verb_classes=frozenset({v}),
            noun_classes=frozenset({n}),
            caption=((verb_dict[v], "action"), (noun_dict[n], "entity")),
            frame_length=t,
            fps=config.fps,
            feature_row=row0,
            feature_rows=rows_per_clip,
        )

    train_clips, test_clips = [], []
    serial = 0
    for key in classes:
        for _ in range(config.clips_per_class_train):
            train_clips.append(make_clip("train", serial, key, 0.0))
            serial += 1
    serial = 0
    for key in classes:
        for _ in range(config.clips_per_class_test):
            test_clips.append(make_clip("test", serial, key, config.bias_shift))
            serial += 1

    # Pre-quantise to float32 so in-memory data matches a write/read round trip.
    data = np.vstack(feature_rows).astype(np.float32).astype(np.float64)
    features = FeatureMatrix(data)

    def manifest(clips):
        return Manifest(
            clips=clips,
            verb_dict=dict(verb_dict),
            noun_dict=dict(noun_dict),
            feature_file="features.fvb",
            feature_dim=config.feature_dim,
        )

    truth = {
        "config": asdict(config),
        "classes": [list(k) for k in classes],
        "omega": {str(v): float(w) for v, w in enumerate(omega)},
        "class_mu": {f"{v},{n}": float(mu) for (v, n), mu in class_mu.items()},
        "appearance": appearance.tolist(),
        "clip_lengths": lengths_truth,
    }
    return manifest(train_clips), manifest(test_clips), features, truth


def write_benchmark(config: GenConfig, out_dir) -> dict[str, Path]:
    """Generate and write train.jsonl, test.jsonl, features.fvb and truth.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test, features, truth = generate(config)
    paths = {
        "train": out_dir / "train.jsonl",
        "test": out_dir / "test.jsonl",
        "features": out_dir / "features.fvb",
        "truth": out_dir / "truth.json",
    }
    save_manifest(train, paths["train"])
    save_manifest(test, paths["test"])
    save_features(features, paths["features"])
    paths["truth"].write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    return paths
