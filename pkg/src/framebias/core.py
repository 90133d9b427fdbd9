"""Data model and file I/O for clip manifests and frame-feature files.

Two on-disk formats are owned here:

* Manifest: UTF-8 JSON Lines. Line 1 is a header object
  ``{"version": 1, "feature_file": ..., "feature_dim": D,
  "verb_dict": {...}, "noun_dict": {...}}``; every following line is one
  clip object with keys ``clip_id``, ``split``, ``verb_classes``,
  ``noun_classes``, ``caption`` (array of ``{"t": token, "r": role}``),
  ``frame_length``, ``fps``, ``feature_row``, ``feature_rows``.
* Feature file "FVB1": bytes 0-3 are ASCII ``FVB1``, bytes 4-7 a u32
  little-endian row count, bytes 8-11 a u32 little-endian dim, then
  rows*dim float32 little-endian values, row-major.

Floats are stored on disk as 32-bit; everything in memory is 64-bit.
Loaded manifests and feature matrices are treated as immutable and are
safe to share across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"FVB1"

ROLE_ACTION = "action"
ROLE_ENTITY = "entity"
ROLES = (ROLE_ACTION, ROLE_ENTITY)

SPLIT_TAGS = ("train", "test")


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest data."""


class FeatureFileError(ValueError):
    """Raised for malformed FVB1 feature files."""


@dataclass(frozen=True)
class Clip:
    """One trimmed video clip with its role-tagged caption and feature block."""

    clip_id: str
    split_tag: str
    verb_classes: frozenset[int]
    noun_classes: frozenset[int]
    caption: tuple[tuple[str, str], ...]
    frame_length: int
    fps: float
    feature_row: int
    feature_rows: int

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ManifestError(f"clip '{self.clip_id}': unknown split tag '{self.split_tag}'")
        if not self.verb_classes or not self.noun_classes:
            raise ManifestError(f"clip '{self.clip_id}': verb and noun class sets must be non-empty")
        if any(v < 0 for v in self.verb_classes) or any(n < 0 for n in self.noun_classes):
            raise ManifestError(f"clip '{self.clip_id}': class ids must be non-negative")
        if self.frame_length < 1:
            raise ManifestError(f"clip '{self.clip_id}': frame_length must be >= 1")
        if self.fps <= 0:
            raise ManifestError(f"clip '{self.clip_id}': fps must be positive")
        if self.feature_row < 0 or self.feature_rows < 1:
            raise ManifestError(f"clip '{self.clip_id}': invalid feature block")
        for token, role in self.caption:
            if role not in ROLES:
                raise ManifestError(f"clip '{self.clip_id}': unknown role '{role}' for token '{token}'")

    def class_pairs(self) -> set[tuple[int, int]]:
        """All (verb id, noun id) pairs this clip belongs to (the cross product)."""
        return {(v, n) for v in self.verb_classes for n in self.noun_classes}


@dataclass
class Manifest:
    """An ordered clip collection plus the class dictionaries and feature file reference."""

    clips: list[Clip]
    verb_dict: dict[int, str]
    noun_dict: dict[int, str]
    feature_file: str
    feature_dim: int
    _by_id: dict[str, Clip] = field(init=False, repr=False)

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ManifestError("feature_dim must be positive")
        by_id: dict[str, Clip] = {}
        for clip in self.clips:
            if clip.clip_id in by_id:
                raise ManifestError(f"duplicate clip_id '{clip.clip_id}'")
            by_id[clip.clip_id] = clip
            self._check_classes(clip)
        self._by_id = by_id

    def _check_classes(self, clip: Clip) -> None:
        for v in clip.verb_classes:
            if v not in self.verb_dict:
                raise ManifestError(f"clip '{clip.clip_id}': verb class {v} absent from verb_dict")
        for n in clip.noun_classes:
            if n not in self.noun_dict:
                raise ManifestError(f"clip '{clip.clip_id}': noun class {n} absent from noun_dict")
        # Every caption token must name one of the clip's own classes.
        verb_names = {self.verb_dict[v] for v in clip.verb_classes}
        noun_names = {self.noun_dict[n] for n in clip.noun_classes}
        for token, role in clip.caption:
            if role == ROLE_ACTION and token not in verb_names:
                raise ManifestError(
                    f"clip '{clip.clip_id}': action token '{token}' maps to no verb class of the clip"
                )
            if role == ROLE_ENTITY and token not in noun_names:
                raise ManifestError(
                    f"clip '{clip.clip_id}': entity token '{token}' maps to no noun class of the clip"
                )

    def __len__(self) -> int:
        return len(self.clips)

    def clip_ids(self) -> list[str]:
        return [c.clip_id for c in self.clips]

    def get(self, clip_id: str) -> Clip:
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise ManifestError(f"unknown clip_id '{clip_id}'") from None

    def frame_lengths(self) -> np.ndarray:
        return np.array([c.frame_length for c in self.clips], dtype=np.float64)

    def subset(self, clip_ids) -> "Manifest":
        """New manifest containing the given clips, in this manifest's order."""
        wanted = set(clip_ids)
        missing = wanted - self._by_id.keys()
        if missing:
            raise ManifestError(f"unknown clip_id '{sorted(missing)[0]}'")
        return Manifest(
            clips=[c for c in self.clips if c.clip_id in wanted],
            verb_dict=dict(self.verb_dict),
            noun_dict=dict(self.noun_dict),
            feature_file=self.feature_file,
            feature_dim=self.feature_dim,
        )


@dataclass
class FeatureMatrix:
    """Frame-wise features, one row per sampled frame. In-memory dtype is float64."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise FeatureFileError("feature data must be 2-D (rows x dim)")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def block(self, clip: Clip) -> np.ndarray:
        """The (feature_rows x dim) block backing one clip."""
        return self.data[clip.feature_row : clip.feature_row + clip.feature_rows]


@dataclass
class ValidationReport:
    issues: list[str]

    @property
    def ok(self) -> bool:
        return not self.issues


def _parse_clip(obj: dict) -> Clip:
    caption = tuple((e["t"], e["r"]) for e in obj["caption"])
    return Clip(
        clip_id=obj["clip_id"],
        split_tag=obj["split"],
        verb_classes=frozenset(int(v) for v in obj["verb_classes"]),
        noun_classes=frozenset(int(n) for n in obj["noun_classes"]),
        caption=caption,
        frame_length=int(obj["frame_length"]),
        fps=float(obj["fps"]),
        feature_row=int(obj["feature_row"]),
        feature_rows=int(obj["feature_rows"]),
    )


def load_manifest(path) -> Manifest:
    """Read a JSON-Lines manifest, preserving clip order from the file."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest file")

    def parse_line(i: int) -> dict:
        try:
            return json.loads(lines[i])
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}: line {i + 1}: {e.msg}") from None

    header = parse_line(0)
    if header.get("version") != 1:
        raise ManifestError(f"{path}: line 1: unsupported manifest version {header.get('version')!r}")
    clips = []
    for i in range(1, len(lines)):
        if not lines[i].strip():
            continue
        obj = parse_line(i)
        try:
            clips.append(_parse_clip(obj))
        except (KeyError, TypeError) as e:
            raise ManifestError(f"{path}: line {i + 1}: missing or malformed field ({e})") from None
    return Manifest(
        clips=clips,
        verb_dict={int(k): str(v) for k, v in header["verb_dict"].items()},
        noun_dict={int(k): str(v) for k, v in header["noun_dict"].items()},
        feature_file=str(header["feature_file"]),
        feature_dim=int(header["feature_dim"]),
    )


def _clip_json(clip: Clip) -> str:
    obj = {
        "clip_id": clip.clip_id,
        "split": clip.split_tag,
        "verb_classes": sorted(clip.verb_classes),
        "noun_classes": sorted(clip.noun_classes),
        "caption": [{"t": t, "r": r} for t, r in clip.caption],
        "frame_length": clip.frame_length,
        "fps": clip.fps,
        "feature_row": clip.feature_row,
        "feature_rows": clip.feature_rows,
    }
    return json.dumps(obj, separators=(",", ":"))


def save_manifest(manifest: Manifest, path) -> None:
    """Write a manifest in canonical form (stable key order, sorted class lists)."""
    header = {
        "version": 1,
        "feature_file": manifest.feature_file,
        "feature_dim": manifest.feature_dim,
        "verb_dict": {str(k): manifest.verb_dict[k] for k in sorted(manifest.verb_dict)},
        "noun_dict": {str(k): manifest.noun_dict[k] for k in sorted(manifest.noun_dict)},
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    lines.extend(_clip_json(c) for c in manifest.clips)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path) -> FeatureMatrix:
    """Read an FVB1 feature file into a float64 matrix."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic, not an FVB1 file")
    rows, dim = struct.unpack("<II", raw[4:12])
    if dim < 1:
        raise FeatureFileError(f"{path}: dim must be positive")
    expected = rows * dim * 4
    payload = raw[12:]
    if len(payload) < expected:
        raise FeatureFileError(
            f"{path}: truncated payload, header declares {rows}x{dim} "
            f"({expected} bytes) but only {len(payload)} present"
        )
    if len(payload) > expected:
        raise FeatureFileError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise FeatureFileError(f"{path}: non-finite value at ({r},{c})")
    return FeatureMatrix(values.astype(np.float64))


def save_features(data, path) -> None:
    """Write a 2-D array as an FVB1 file (values down-cast to float32 LE)."""
    if isinstance(data, FeatureMatrix):
        data = data.data
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if arr.ndim != 2:
        raise FeatureFileError("feature data must be 2-D (rows x dim)")
    if not np.isfinite(arr).all():
        raise FeatureFileError("refusing to write non-finite feature values")
    rows, dim = arr.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", rows, dim))
        f.write(arr.astype("<f4").tobytes())


def validate(manifest: Manifest, features: FeatureMatrix) -> ValidationReport:
    """Cross-check a manifest against its feature matrix. Never raises, never mutates."""
    issues: list[str] = []
    if manifest.feature_dim != features.dim:
        issues.append(
            f"dimension mismatch: manifest declares {manifest.feature_dim}, feature file has {features.dim}"
        )
    blocks = []
    for clip in manifest.clips:
        start, stop = clip.feature_row, clip.feature_row + clip.feature_rows
        if stop > features.rows:
            issues.append(
                f"clip '{clip.clip_id}': block [{start},{stop}) out of range (file has {features.rows} rows)"
            )
        blocks.append((start, stop, clip.clip_id))
    blocks.sort()
    for (s0, e0, id0), (s1, e1, id1) in zip(blocks, blocks[1:]):
        if s1 < e0:
            issues.append(f"clips '{id0}' and '{id1}': overlapping blocks")
    return ValidationReport(issues)
