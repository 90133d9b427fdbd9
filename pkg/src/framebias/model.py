"""Two-tower caption/video matcher with hand-rolled analytic gradients.

The text tower builds a small graph per caption (one event node holding the
mean token embedding, one node per action token, one per entity token; edges
event-action and action-entity), scales each node embedding by its role row,
runs one residual graph-attention layer with scaled-dot-product weights, and
reads out event / action-mean / entity-mean vectors. The video tower
soft-attention-pools projected frame features at the same three levels. The
match score is the sum of the three per-level cosines, trained with a
two-sided hinged margin loss over in-batch negatives.

Everything is float64 numpy; training is plain mini-batch SGD with momentum
and is a pure function of (data, config). Batches are (frame block, caption)
pairs; gradients returned by `batch_loss` are exact derivatives of the loss,
checkable against central finite differences via `grad_check`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import FeatureMatrix, Manifest, ROLE_ACTION, ROLE_ENTITY

LEVELS = ("event", "action", "object")
ROLE_ROW = {"event": 0, ROLE_ACTION: 1, ROLE_ENTITY: 2}
PARAM_KEYS = ("token_table", "role_matrix", "graph_matrix", "video_proj", "video_attn")

INIT_SCALE = 0.08
NEGATIVE_STRATEGIES = ("hardest", "all")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    margin: float = 0.2
    negative_strategy: str = "hardest"
    seed: int = 0
    d: int = 16

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the loss needs in-batch negatives)")
        if self.negative_strategy not in NEGATIVE_STRATEGIES:
            raise ValueError(f"unknown negative_strategy '{self.negative_strategy}'")
        if self.epochs < 0 or self.learning_rate <= 0 or self.d < 1:
            raise ValueError("invalid training configuration")


@dataclass
class ModelParams:
    vocab: list[str]
    token_table: np.ndarray  # (V, d)
    role_matrix: np.ndarray  # (3, d): event, action, entity rows
    graph_matrix: np.ndarray  # (d, d)
    video_proj: np.ndarray  # (3, D, d), level order event/action/object
    video_attn: np.ndarray  # (3, D)
    config: TrainConfig | None = None
    _token_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._token_index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def d(self) -> int:
        return self.token_table.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.video_proj.shape[1]

    def token_index(self, token: str) -> int:
        try:
            return self._token_index[token]
        except KeyError:
            raise ValueError(f"token '{token}' not in model vocabulary") from None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_KEYS}

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays().items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            vocab=list(self.vocab),
            config=self.config,
            **{k: v.copy() for k, v in self.arrays().items()},
        )


@dataclass
class SimilarityMatrix:
    """Query x gallery match scores; each entry is a sum of three cosines in [-3, 3]."""

    values: np.ndarray
    orientation: str = "T2V"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def build_vocab(*manifests: Manifest) -> list[str]:
    tokens: set[str] = set()
    for m in manifests:
        for clip in m.clips:
            tokens.update(t for t, _ in clip.caption)
    if not tokens:
        raise ValueError("no caption tokens found")
    return sorted(tokens)


def init_params(vocab: Sequence[str], d: int, feature_dim: int, seed: int, config: TrainConfig | None = None) -> ModelParams:
    """Seeded uniform(-0.08, 0.08) initialisation, draw order fixed by PARAM_KEYS."""
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    return ModelParams(
        vocab=list(vocab),
        token_table=u(len(vocab), d),
        role_matrix=u(3, d),
        graph_matrix=u(d, d),
        video_proj=u(3, feature_dim, d),
        video_attn=u(3, feature_dim),
        config=config,
    )


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# text tower


def _caption_graph(caption, params: ModelParams):
    idx = np.array([params.token_index(t) for t, _ in caption], dtype=np.int64)
    action_pos = [k for k, (_, r) in enumerate(caption) if r == ROLE_ACTION]
    entity_pos = [k for k, (_, r) in enumerate(caption) if r == ROLE_ENTITY]
    if not action_pos or not entity_pos:
        raise ValueError("caption needs at least one action and one entity token (missing role)")
    return idx, action_pos, entity_pos


def _text_forward(caption, params: ModelParams) -> dict:
    """Caption graph forward pass; the cache carries everything backward needs."""
    idx, action_pos, entity_pos = _caption_graph(caption, params)
    emb = params.token_table[idx]  # (n_tokens, d)
    n_a, n_o = len(action_pos), len(entity_pos)
    raw = np.vstack([emb.mean(axis=0), emb[action_pos], emb[entity_pos]])
    role_rows = np.array([0] + [1] * n_a + [2] * n_o)
    g0 = raw * params.role_matrix[role_rows]

    # node 0 is the event; actions are 1..n_a; entities follow
    actions = np.arange(1, 1 + n_a)
    entities = np.arange(1 + n_a, 1 + n_a + n_o)
    neighbors = [actions]
    neighbors += [np.concatenate(([0], entities)) for _ in range(n_a)]
    neighbors += [actions for _ in range(n_o)]

    inv_sqrt_d = 1.0 / math.sqrt(params.d)
    betas, msgs = [], np.empty_like(g0)
    for i, nb in enumerate(neighbors):
        beta = _softmax(g0[nb] @ g0[i] * inv_sqrt_d)
        betas.append(beta)
        msgs[i] = beta @ g0[nb]
    g1 = g0 + msgs @ params.graph_matrix

    return {
        "idx": idx,
        "n_tokens": len(idx),
        "action_pos": action_pos,
        "entity_pos": entity_pos,
        "raw": raw,
        "role_rows": role_rows,
        "g0": g0,
        "neighbors": neighbors,
        "betas": betas,
        "msgs": msgs,
        "out": (g1[0], g1[actions].mean(axis=0), g1[entities].mean(axis=0)),
        "n_a": n_a,
        "n_o": n_o,
    }


def _text_backward(cache: dict, d_out: tuple[np.ndarray, np.ndarray, np.ndarray], params: ModelParams, grads: dict) -> None:
    n_a, n_o = cache["n_a"], cache["n_o"]
    g0, msgs = cache["g0"], cache["msgs"]
    d_ce, d_ca, d_co = d_out

    dg1 = np.zeros_like(g0)
    dg1[0] += d_ce
    dg1[1 : 1 + n_a] += d_ca / n_a
    dg1[1 + n_a :] += d_co / n_o

    grads["graph_matrix"] += msgs.T @ dg1
    dmsgs = dg1 @ params.graph_matrix.T
    dg0 = dg1.copy()  # residual path

    inv_sqrt_d = 1.0 / math.sqrt(params.d)
    for i, nb in enumerate(cache["neighbors"]):
        beta, dm = cache["betas"][i], dmsgs[i]
        dbeta = g0[nb] @ dm
        dg0[nb] += np.outer(beta, dm)
        dscore = beta * (dbeta - beta @ dbeta)
        dg0[i] += (dscore @ g0[nb]) * inv_sqrt_d
        dg0[nb] += np.outer(dscore, g0[i]) * inv_sqrt_d

    raw, role_rows = cache["raw"], cache["role_rows"]
    draw = dg0 * params.role_matrix[role_rows]
    np.add.at(grads["role_matrix"], role_rows, dg0 * raw)

    idx = cache["idx"]
    np.add.at(grads["token_table"], idx[cache["action_pos"]], draw[1 : 1 + n_a])
    np.add.at(grads["token_table"], idx[cache["entity_pos"]], draw[1 + n_a :])
    np.add.at(grads["token_table"], idx, np.tile(draw[0] / cache["n_tokens"], (cache["n_tokens"], 1)))


def encode_text(caption, params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Event, action and entity level embeddings (c_e, c_a, c_o) of a caption."""
    return _text_forward(caption, params)["out"]


# ---------------------------------------------------------------------------
# video tower


def _video_forward(frames: np.ndarray, params: ModelParams) -> dict:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.feature_dim:
        raise ValueError(f"expected (rows, {params.feature_dim}) frame block, got {frames.shape}")
    alphas, pooled, outs = [], [], []
    for x in range(3):
        alpha = _softmax(frames @ params.video_attn[x])
        z = alpha @ frames  # (D,)
        alphas.append(alpha)
        pooled.append(z)
        outs.append(z @ params.video_proj[x])
    return {"frames": frames, "alphas": alphas, "pooled": pooled, "out": tuple(outs)}


def _video_backward(cache: dict, d_out, params: ModelParams, grads: dict) -> None:
    frames = cache["frames"]
    for x in range(3):
        dv = d_out[x]
        grads["video_proj"][x] += np.outer(cache["pooled"][x], dv)
        dz = params.video_proj[x] @ dv
        alpha = cache["alphas"][x]
        dalpha = frames @ dz
        dscore = alpha * (dalpha - alpha @ dalpha)
        grads["video_attn"][x] += frames.T @ dscore


def encode_video(frames: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Attention-pooled level embeddings (v_e, v_a, v_o) of one clip's frame block."""
    return _video_forward(frames, params)["out"]


# ---------------------------------------------------------------------------
# matching


def similarity(video_emb, text_emb) -> float:
    """Sum of the three per-level cosines; range [-3, 3]."""
    total = 0.0
    for v, c in zip(video_emb, text_emb):
        nv, nc = np.linalg.norm(v), np.linalg.norm(c)
        if nv == 0.0 or nc == 0.0:
            raise ValueError("zero-norm embedding")
        total += float(v @ c) / (nv * nc)
    return total


def _stack_embeddings(embs: list[tuple[np.ndarray, ...]]) -> list[np.ndarray]:
    return [np.stack([e[x] for e in embs]) for x in range(3)]


def _cosine_blocks(v_levels, c_levels):
    """Per-level normalised embeddings, norms and cosine matrices."""
    blocks = []
    for v, c in zip(v_levels, c_levels):
        nv = np.linalg.norm(v, axis=1)
        nc = np.linalg.norm(c, axis=1)
        if (nv == 0.0).any() or (nc == 0.0).any():
            raise ValueError("zero-norm embedding in batch")
        vh, ch = v / nv[:, None], c / nc[:, None]
        blocks.append((vh, ch, nv, nc, vh @ ch.T))
    return blocks


def _margin_loss(s: np.ndarray, margin: float, strategy: str) -> tuple[float, np.ndarray]:
    """Loss value and dLoss/dS for the two-sided hinged margin objective.

    Each bracket [margin + s(negative) - s(positive)] is hinged at zero;
    `hardest` keeps the max-violating in-batch negative per anchor (caption
    negatives along the anchor's row, video negatives along its column),
    `all` averages the hinged brackets over every in-batch negative. The
    loss is the mean over anchors.
    """
    b = s.shape[0]
    ds = np.zeros_like(s)
    diag = np.diag(s).copy()
    idx = np.arange(b)
    if strategy == "hardest":
        masked = s.copy()
        np.fill_diagonal(masked, -np.inf)
        j_star = masked.argmax(axis=1)  # hardest caption negative per anchor
        i_star = masked.argmax(axis=0)  # hardest video negative per anchor
        b1 = margin + s[idx, j_star] - diag
        b2 = margin + s[i_star, idx] - diag
        a1, a2 = b1 > 0, b2 > 0
        total = float(b1[a1].sum() + b2[a2].sum())
        ds[idx[a1], j_star[a1]] += 1.0
        ds[i_star[a2], idx[a2]] += 1.0
        ds[idx, idx] -= a1.astype(np.float64) + a2.astype(np.float64)
    else:
        off = ~np.eye(b, dtype=bool)
        w = 1.0 / (b - 1)
        b1 = margin + s - diag[:, None]  # caption negatives, anchored per row
        b2 = margin + s - diag[None, :]  # video negatives, anchored per column
        a1 = (b1 > 0) & off
        a2 = (b2 > 0) & off
        total = w * float(b1[a1].sum() + b2[a2].sum())
        ds += w * a1
        ds += w * a2
        ds[idx, idx] -= w * (a1.sum(axis=1) + a2.sum(axis=0))
    return total / b, ds / b


def _batch_embed(batch, params: ModelParams):
    """Video caches per item and one text cache per distinct caption."""
    video_caches = [_video_forward(frames, params) for frames, _ in batch]
    text_caches: dict[tuple, dict] = {}
    members: dict[tuple, list[int]] = {}
    for k, (_, caption) in enumerate(batch):
        key = tuple(caption)
        if key not in text_caches:
            text_caches[key] = _text_forward(caption, params)
            members[key] = []
        members[key].append(k)
    v_levels = _stack_embeddings([vc["out"] for vc in video_caches])
    c_rows = [None] * len(batch)
    for key, rows in members.items():
        for k in rows:
            c_rows[k] = text_caches[key]["out"]
    c_levels = _stack_embeddings(c_rows)
    return video_caches, text_caches, members, v_levels, c_levels


def batch_loss(batch, params: ModelParams, config: TrainConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients over a batch of (frame block, caption) positive pairs."""
    if len(batch) < 2:
        raise ValueError("batch must contain at least 2 pairs")
    video_caches, text_caches, members, v_levels, c_levels = _batch_embed(batch, params)
    blocks = _cosine_blocks(v_levels, c_levels)
    s = sum(blk[4] for blk in blocks)
    loss, ds = _margin_loss(s, config.margin, config.negative_strategy)

    grads = params.zero_grads()
    dv_levels, dc_levels = [], []
    for vh, ch, nv, nc, cos in blocks:
        dv = (ds @ ch - (ds * cos).sum(axis=1, keepdims=True) * vh) / nv[:, None]
        dc = (ds.T @ vh - (ds * cos).sum(axis=0)[:, None] * ch) / nc[:, None]
        dv_levels.append(dv)
        dc_levels.append(dc)
    for k, vc in enumerate(video_caches):
        _video_backward(vc, [dv_levels[x][k] for x in range(3)], params, grads)
    for key, rows in members.items():
        d_out = tuple(dc_levels[x][rows].sum(axis=0) for x in range(3))
        _text_backward(text_caches[key], d_out, params, grads)
    return loss, grads


def _loss_value(batch, params: ModelParams, config: TrainConfig) -> float:
    """Forward-only loss, used by the finite-difference checker."""
    _, _, _, v_levels, c_levels = _batch_embed(batch, params)
    s = sum(blk[4] for blk in _cosine_blocks(v_levels, c_levels))
    return _margin_loss(s, config.margin, config.negative_strategy)[0]


# ---------------------------------------------------------------------------
# training and scoring


def clip_batch(clips, features: FeatureMatrix) -> list[tuple[np.ndarray, tuple]]:
    return [(features.block(c), c.caption) for c in clips]


def train(
    manifest: Manifest,
    features: FeatureMatrix,
    config: TrainConfig,
    vocab: Sequence[str] | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> ModelParams:
    """Seeded mini-batch SGD with momentum; deterministic per (data, config).

    `vocab` defaults to the manifest's own tokens; pass a shared vocabulary
    when several models must embed captions from a common token space.
    """
    if vocab is None:
        vocab = build_vocab(manifest)
    params = init_params(vocab, config.d, features.dim, config.seed, config=config)
    arrays = params.arrays()
    velocity = params.zero_grads()
    rng = np.random.default_rng(config.seed)
    n = len(manifest.clips)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            chunk = order[start : start + config.batch_size]
            if len(chunk) < 2:
                continue
            batch = clip_batch([manifest.clips[i] for i in chunk], features)
            loss, grads = batch_loss(batch, params, config)
            epoch_losses.append(loss)
            for key in PARAM_KEYS:
                velocity[key] = config.momentum * velocity[key] - config.learning_rate * grads[key]
                arrays[key] += velocity[key]
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(epoch_losses)) if epoch_losses else 0.0)
    return params


def similarity_matrix(
    params: ModelParams,
    queries: Manifest,
    gallery: Manifest,
    features: FeatureMatrix,
    orientation: str = "T2V",
) -> SimilarityMatrix:
    """All-pairs match scores. T2V rows are caption queries against video
    gallery items; V2T is the transposed pairing over the same corpora."""
    if orientation not in ("T2V", "V2T"):
        raise ValueError(f"unknown orientation '{orientation}'")

    def texts(manifest):
        cache: dict[tuple, tuple] = {}
        out = []
        for c in manifest.clips:
            key = tuple(c.caption)
            if key not in cache:
                cache[key] = encode_text(c.caption, params)
            out.append(cache[key])
        return _stack_embeddings(out)

    def videos(manifest):
        return _stack_embeddings([encode_video(features.block(c), params) for c in manifest.clips])

    if orientation == "T2V":
        rows, cols = texts(queries), videos(gallery)
    else:
        rows, cols = videos(queries), texts(gallery)
    values = np.zeros((rows[0].shape[0], cols[0].shape[0]))
    for x in range(3):
        r, c = rows[x], cols[x]
        nr = np.linalg.norm(r, axis=1)
        nc = np.linalg.norm(c, axis=1)
        if (nr == 0.0).any() or (nc == 0.0).any():
            raise ValueError("zero-norm embedding")
        values += (r / nr[:, None]) @ (c / nc[:, None]).T
    return SimilarityMatrix(values=values, orientation=orientation)


def grad_check(
    params: ModelParams,
    batch,
    config: TrainConfig,
    h: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    corrupt: tuple[str, int, float] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every coordinate, or a seeded random subset of `max_coords` for
    large parameter sets. The relative-error denominator is floored at 1e-3
    so near-zero coordinates are compared on an absolute scale. `corrupt`
    = (param key, flat index, amount) perturbs the analytic gradient, for
    negative-control tests; the corrupted coordinate is always checked.
    """
    _, grads = batch_loss(batch, params, config)
    if corrupt is not None:
        key, flat, amount = corrupt
        grads[key].ravel()[flat] += amount
    arrays = params.arrays()
    coords = [(key, i) for key in PARAM_KEYS for i in range(arrays[key].size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        subset = [coords[i] for i in sorted(picked)]
        if corrupt is not None and (corrupt[0], corrupt[1]) not in subset:
            subset.append((corrupt[0], corrupt[1]))
        coords = subset
    worst = 0.0
    for key, i in coords:
        flat = arrays[key].ravel()
        orig = flat[i]
        flat[i] = orig + h
        up = _loss_value(batch, params, config)
        flat[i] = orig - h
        down = _loss_value(batch, params, config)
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        analytic = grads[key].ravel()[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# serialization


def save_params(params: ModelParams, path) -> None:
    obj = {
        "vocab": params.vocab,
        "config": asdict(params.config) if params.config else None,
        **{k: v.tolist() for k, v in params.arrays().items()},
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_params(path) -> ModelParams:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = TrainConfig(**obj["config"]) if obj.get("config") else None
    return ModelParams(
        vocab=list(obj["vocab"]),
        config=cfg,
        **{k: np.array(obj[k], dtype=np.float64) for k in PARAM_KEYS},
    )
