"""Stratified training over frame-length splits and similarity-matrix fusion.

One matcher is trained per length stratum with an identical config and
seed; their per-stratum similarity matrices are combined element-wise,
either as a plain sum or weighted by each stratum's empirical share of the
training set. With a single stratum the pipeline reduces exactly to the
baseline. An ensemble control (same fusion, but members trained on the
full set with different seeds) isolates the effect of stratification from
the effect of summing several models.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import FeatureMatrix, Manifest
from .model import ModelParams, SimilarityMatrix, TrainConfig, build_vocab, similarity_matrix, train
from .splitter import SplitPlan, materialize

WEIGHT_MODES = ("uniform_sum", "proportional")


@dataclass
class FusionSpec:
    weight_mode: str
    split_sizes: list[int]
    model_refs: list[str]

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight_mode '{self.weight_mode}'")
        if not self.split_sizes or len(self.split_sizes) != len(self.model_refs):
            raise ValueError("split_sizes and model_refs must be non-empty and of equal length")
        if any(s < 1 for s in self.split_sizes):
            raise ValueError("split sizes must be positive")


def proportional_weights(sizes: Sequence[int]) -> list[Fraction]:
    """Exact per-stratum weights size_k / N; they sum to 1 as rationals."""
    total = sum(sizes)
    return [Fraction(s, total) for s in sizes]


def train_split_models(
    train_manifest: Manifest,
    plan: SplitPlan,
    features: FeatureMatrix,
    config: TrainConfig,
    jobs: int = 1,
) -> list[ModelParams]:
    """One model per plan part, identical config and seed, shared vocabulary.

    The vocabulary is built from the full training manifest so every split
    model embeds captions from a common token space. Parts may be trained
    concurrently; outputs match plan order either way.
    """
    parts = materialize(train_manifest, plan)
    for k, part in enumerate(parts):
        if len(part.clips) < config.batch_size:
            raise ValueError(
                f"split {k} has {len(part.clips)} clips, fewer than batch_size={config.batch_size}"
            )
    vocab = build_vocab(train_manifest)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(train, part, features, config, vocab) for part in parts]
            return [f.result() for f in futures]
    return [train(part, features, config, vocab) for part in parts]


def fuse(matrices: Sequence[SimilarityMatrix], spec: FusionSpec) -> SimilarityMatrix:
    """Element-wise combination of per-stratum similarity matrices."""
    if len(matrices) != len(spec.split_sizes):
        raise ValueError(f"expected {len(spec.split_sizes)} matrices, got {len(matrices)}")
    shape = matrices[0].values.shape
    orientation = matrices[0].orientation
    for m in matrices[1:]:
        if m.values.shape != shape:
            raise ValueError("similarity matrices differ in shape")
        if m.orientation != orientation:
            raise ValueError("similarity matrices differ in orientation")
    if spec.weight_mode == "uniform_sum":
        out = matrices[0].values.copy()
        for m in matrices[1:]:
            out += m.values
    else:
        weights = proportional_weights(spec.split_sizes)
        out = float(weights[0]) * matrices[0].values
        for w, m in zip(weights[1:], matrices[1:]):
            out += float(w) * m.values
    return SimilarityMatrix(values=out, orientation=orientation)


def split_similarity_matrices(
    models: Sequence[ModelParams],
    test: Manifest,
    features: FeatureMatrix,
    orientation: str = "T2V",
) -> list[SimilarityMatrix]:
    return [similarity_matrix(m, test, test, features, orientation) for m in models]


def causal_similarity(
    train_manifest: Manifest,
    test: Manifest,
    features: FeatureMatrix,
    config: TrainConfig,
    plan: SplitPlan,
    weight_mode: str = "uniform_sum",
    jobs: int = 1,
    orientation: str = "T2V",
) -> SimilarityMatrix:
    """Full stratified pipeline: train per part, score the test corpus, fuse."""
    models = train_split_models(train_manifest, plan, features, config, jobs=jobs)
    matrices = split_similarity_matrices(models, test, features, orientation)
    spec = FusionSpec(
        weight_mode=weight_mode,
        split_sizes=list(plan.sizes),
        model_refs=[f"split_{k}" for k in range(plan.m)],
    )
    return fuse(matrices, spec)


def ensemble(
    train_manifest: Manifest,
    test: Manifest,
    features: FeatureMatrix,
    config: TrainConfig,
    seeds: Sequence[int],
    orientation: str = "T2V",
) -> SimilarityMatrix:
    """Control: sum of matrices from full-set models trained with distinct seeds."""
    if len(set(seeds)) != len(seeds):
        raise ValueError("ensemble seeds must be distinct")
    vocab = build_vocab(train_manifest)
    out = None
    for seed in seeds:
        params = train(train_manifest, features, replace(config, seed=int(seed)), vocab)
        values = similarity_matrix(params, test, test, features, orientation).values
        out = values if out is None else out + values
    return SimilarityMatrix(values=out, orientation=orientation)
