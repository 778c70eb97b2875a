"""Shared continuous embedding space for object categories and observations.

Category vectors and the spatial image grid live in one unit-norm space, so
a grid cell containing only category c has cosine 1 with c's vector. The
synthetic mode derives each category vector from a hash of (seed, name),
which makes lookups stable across runs and machines; the file mode serves
externally precomputed vectors.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .categories import GOAL_SET
from .errors import FormatError, UnknownCategoryError
from .sim import HALF_FOV, VIS_RANGE, Observation

DEFAULT_DIM = 64
DEFAULT_GRID = 7
_NORM_TOL = 1e-9  # rows this close to unit norm are kept verbatim on load


def _synthetic_vector(seed: int, category: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x1f{category}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    if n < 1e-12:
        v = np.zeros(dim)
        v[0] = 1.0
        return v
    return v / n


class EmbeddingProvider:
    """Immutable category -> unit vector table; all lookups deterministic."""

    def __init__(self, dim: int, mode: str, seed: int | None = None,
                 table: dict[str, np.ndarray] | None = None):
        if mode not in ("synthetic", "file"):
            raise ValueError(f"unknown provider mode {mode!r}")
        self.dim = int(dim)
        self.mode = mode
        self.seed = seed
        self._table: dict[str, np.ndarray] = dict(table or {})

    @classmethod
    def synthetic(cls, dim: int = DEFAULT_DIM, seed: int = 0) -> "EmbeddingProvider":
        return cls(dim=dim, mode="synthetic", seed=seed)

    def object_embedding(self, category: str) -> np.ndarray:
        vec = self._table.get(category)
        if vec is None:
            if self.mode == "file":
                raise UnknownCategoryError(f"category {category!r} not in embedding table")
            vec = _synthetic_vector(self.seed or 0, category, self.dim)
            self._table[category] = vec
        return vec

    def known_categories(self) -> tuple[str, ...]:
        return tuple(sorted(self._table))


def object_embedding(provider: EmbeddingProvider, category: str) -> np.ndarray:
    return provider.object_embedding(category)


def image_feature(provider: EmbeddingProvider, observation: Observation,
                  grid: int = DEFAULT_GRID) -> np.ndarray:
    """Splat visible objects into a G x G x D grid.

    Column index bins bearing over [-45, +45]; row index bins distance over
    [0, 1.5]. Cells holding several objects average their embeddings and
    renormalize; empty cells stay exactly zero.
    """
    g = int(grid)
    out = np.zeros((g, g, provider.dim))
    counts = np.zeros((g, g), dtype=int)
    for s in observation.visible:
        col = int((s.bearing + HALF_FOV) / (2 * HALF_FOV) * g)
        row = int(s.distance / VIS_RANGE * g)
        col = min(max(col, 0), g - 1)
        row = min(max(row, 0), g - 1)
        out[row, col] += provider.object_embedding(s.category)
        counts[row, col] += 1
    for row, col in zip(*np.nonzero(counts)):
        cell = out[row, col] / counts[row, col]
        n = np.linalg.norm(cell)
        # keep already-unit means verbatim so idempotent cases stay exact
        if n > 1e-12 and abs(n - 1.0) > 1e-12:
            cell = cell / n
        out[row, col] = cell
    return out


def observation_feature(provider: EmbeddingProvider, observation: Observation) -> np.ndarray:
    """Mean embedding of the goal-category detections in one view; zero when
    nothing is detected. Single-view analog of the sweep feature."""
    total = np.zeros(provider.dim)
    n = 0
    for s in observation.visible:
        if s.category in GOAL_SET:
            total += provider.object_embedding(s.category)
            n += 1
    return total / n if n else total


# ---------------------------------------------------------------------------
# Embedding file format (embeddings-v1)


def embeddings_to_text(provider: EmbeddingProvider, categories=None) -> str:
    cats = sorted(categories) if categories is not None else list(provider.known_categories())
    lines = [f"embeddings-v1 D={provider.dim}"]
    for cat in cats:
        vec = provider.object_embedding(cat)
        lines.append(cat + " " + " ".join(repr(float(v)) for v in vec))
    return "\n".join(lines) + "\n"


def save_embeddings(provider: EmbeddingProvider, path, categories=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(embeddings_to_text(provider, categories))


def embeddings_from_text(text: str) -> EmbeddingProvider:
    lines = [l for l in text.splitlines()]
    if not lines or not lines[0].startswith("embeddings-v1 "):
        raise FormatError("line 1: not an embeddings-v1 file")
    try:
        dim = int(lines[0].split("D=", 1)[1])
    except (IndexError, ValueError):
        raise FormatError("line 1: missing or bad D=<int>") from None
    table: dict[str, np.ndarray] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        cat = parts[0]
        if cat in table:
            raise FormatError(f"line {i}: duplicate category {cat!r}")
        if len(parts) - 1 != dim:
            raise FormatError(f"line {i}: expected {dim} floats, got {len(parts) - 1}")
        try:
            vec = np.array([float(p) for p in parts[1:]])
        except ValueError:
            raise FormatError(f"line {i}: unparsable float") from None
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"line {i}: non-finite value")
        n = np.linalg.norm(vec)
        if n < 1e-12:
            raise FormatError(f"line {i}: zero vector cannot be normalized")
        if abs(n - 1.0) > _NORM_TOL:
            vec = vec / n
        table[cat] = vec
    return EmbeddingProvider(dim=dim, mode="file", table=table)


def load_embeddings(path) -> EmbeddingProvider:
    with open(path, "r", encoding="utf-8") as fh:
        return embeddings_from_text(fh.read())
