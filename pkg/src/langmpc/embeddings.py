"""Text embedding providers, PCA compression, and the coverage gate.

Three interchangeable providers: a deterministic in-process mock (structured
bag-of-tokens, used by tests and the default config), a fixture provider that
replays pre-computed vectors from a JSONL file, and an HTTP client for a real
embedding service.

The coverage gate scores a new embedding against the raw training embeddings
stacked as columns of E: the coefficient norm ||pinv(E) e|| grows when e needs
an unusually large combination of training directions, and the relative
residual ||e - E pinv(E) e|| / ||e|| grows when e leaves their span entirely.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .grammar import DIRECTIONS
from .sim import OBJECT_NAMES

MOCK_DIM = 64
_N_BAG = 47
_NUMERIC = 47
_OVERFLOW = 48
_DIR0 = 49
_OBJ0 = 55
_OVERFLOW_KNEE = 1.3
_OVERFLOW_GAIN = 20.0
_PINV_RCOND = 1e-10


def _bag_slot(token: str) -> int:
    digest = hashlib.sha1(token.encode("utf-8")).hexdigest()
    return int(digest, 16) % _N_BAG


def _parse_float(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


class MockEmbedder:
    """Deterministic 64-dim embedding with explicit structure.

    Layout: 47 hashed token-bag slots, 1 numeric channel (sum of parsed
    numbers, scaled by 10), 1 numeric-overflow channel, 6 direction
    indicators, 8 object-name indicators, 1 bias.

    The numeric channel is linear in the commanded distance, so nominal
    commands are near-exact combinations of each other. The overflow channel
    is zero up to a fixed magnitude knee and ramps steeply past it; unusually
    large numbers therefore drift off the manifold the nominal commands span,
    the same qualitative behavior real text encoders show on out-of-
    distribution magnitudes.
    """

    dim = MOCK_DIM

    def embed(self, texts: str | list[str]) -> np.ndarray:
        if isinstance(texts, str):
            return self.embed([texts])[0]
        out = np.zeros((len(texts), MOCK_DIM))
        dir_names = list(DIRECTIONS)
        for i, text in enumerate(texts):
            vec = out[i]
            for token in text.lower().split():
                value = _parse_float(token)
                if value is not None:
                    scaled = 10.0 * value
                    vec[_NUMERIC] += scaled
                    vec[_OVERFLOW] += _OVERFLOW_GAIN * max(0.0, abs(scaled) - _OVERFLOW_KNEE)
                    continue
                vec[_bag_slot(token)] += 1.0
                if token in DIRECTIONS:
                    vec[_DIR0 + dir_names.index(token)] += 1.0
                if token in OBJECT_NAMES:
                    vec[_OBJ0 + OBJECT_NAMES.index(token)] += 1.0
            vec[-1] = 1.0
        return out


class FixtureEmbedder:
    """Replays embeddings recorded in a JSONL file of {"text", "embedding"} rows."""

    def __init__(self, path: str):
        self._table: dict[str, np.ndarray] = {}
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                row = json.loads(line)
                self._table[row["text"]] = np.asarray(row["embedding"], dtype=float)
        if not self._table:
            raise ValueError(f"no embeddings in fixture file {path}")
        dims = {v.shape[0] for v in self._table.values()}
        if len(dims) != 1:
            raise ValueError("fixture embeddings have inconsistent dimensions")
        self.dim = dims.pop()

    def embed(self, texts: str | list[str]) -> np.ndarray:
        if isinstance(texts, str):
            return self.embed([texts])[0]
        rows = []
        for text in texts:
            if text not in self._table:
                raise KeyError(f"no fixture embedding for text {text!r}")
            rows.append(self._table[text])
        return np.stack(rows) if rows else np.zeros((0, self.dim))


class HttpEmbedder:
    """Client for an embedding service: POST {url}/embed {"texts": [...]}."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 1):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = max(0, int(retries))
        self.dim: int | None = None

    def embed(self, texts: str | list[str]) -> np.ndarray:
        import httpx

        if isinstance(texts, str):
            return self.embed([texts])[0]
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = httpx.post(f"{self.base_url}/embed", json={"texts": texts},
                                  timeout=self.timeout)
                resp.raise_for_status()
            except httpx.HTTPError as e:
                last_error = e
                continue
            payload = resp.json()
            emb = np.asarray(payload["embeddings"], dtype=float)
            if emb.shape != (len(texts), payload["dim"]):
                raise ValueError("embedding service returned a malformed response")
            self.dim = int(payload["dim"])
            return emb
        raise last_error


def make_embedder(kind: str, **kwargs):
    if kind == "mock":
        return MockEmbedder()
    if kind == "fixture":
        return FixtureEmbedder(kwargs["path"])
    if kind == "http":
        return HttpEmbedder(kwargs["base_url"], timeout=kwargs.get("timeout", 30.0),
                            retries=kwargs.get("retries", 1))
    raise ValueError(f"unknown embedder kind {kind!r}")


# ---------------------------------------------------------------------------
# PCA compression of the raw embeddings.

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray            # (d,)
    components: np.ndarray      # (d, z), orthonormal columns
    singular_values: np.ndarray  # (z,)

    @property
    def z(self) -> int:
        return self.components.shape[1]

    def project(self, emb: np.ndarray) -> np.ndarray:
        emb = np.asarray(emb, dtype=float)
        return (emb - self.mean) @ self.components


def fit_pca(embeddings: np.ndarray, z: int) -> PcaModel:
    """PCA via SVD of the row-centered embedding matrix."""
    emb = np.asarray(embeddings, dtype=float)
    n, d = emb.shape
    if not 1 <= z <= min(n, d):
        raise ValueError(f"z={z} out of range for {n} embeddings of dim {d}")
    mean = emb.mean(axis=0)
    _, s, vt = np.linalg.svd(emb - mean, full_matrices=False)
    return PcaModel(mean=mean, components=vt[:z].T.copy(), singular_values=s[:z].copy())


# ---------------------------------------------------------------------------
# Coverage gate on the raw (uncompressed) embeddings.

@dataclass(frozen=True)
class CoverageReport:
    coefficient: float
    residual: float
    threshold: float
    residual_max: float

    @property
    def in_coverage(self) -> bool:
        return self.coefficient <= self.threshold and self.residual <= self.residual_max


@dataclass(frozen=True)
class CoverageModel:
    basis: np.ndarray   # (d, T): training embeddings as columns
    pinv: np.ndarray    # (T, d)
    threshold: float = 3.0
    residual_max: float = 0.5

    def check(self, emb: np.ndarray) -> CoverageReport:
        emb = np.asarray(emb, dtype=float)
        coef = self.pinv @ emb
        norm = float(np.linalg.norm(emb))
        if norm < 1e-12:
            residual = 1.0  # a zero embedding explains nothing
        else:
            residual = float(np.linalg.norm(emb - self.basis @ coef)) / norm
        return CoverageReport(float(np.linalg.norm(coef)), residual,
                              self.threshold, self.residual_max)


def fit_coverage(embeddings: np.ndarray, threshold: float = 3.0,
                 residual_max: float = 0.5) -> CoverageModel:
    """Build the gate from training embeddings given as rows."""
    basis = np.asarray(embeddings, dtype=float).T
    return CoverageModel(basis=basis, pinv=np.linalg.pinv(basis, rcond=_PINV_RCOND),
                         threshold=threshold, residual_max=residual_max)
