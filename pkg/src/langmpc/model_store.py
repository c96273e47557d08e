"""Learned-model bundle and its versioned binary container.

File layout: 8-byte magic "DMST0001", a little-endian uint64 byte length, a
JSON metadata block (sorted keys), then the declared float64 arrays back to
back in little-endian byte order: pca mean, pca components (row-major), pca
singular values, the mapping layers (weights then bias per layer), the feature
scales m, the optional constraint parameters, and the example embeddings
(row-major). Saving a loaded model reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintParams
from .embeddings import CoverageModel, PcaModel, fit_coverage
from .features import FEATURE_KIND
from .mapping import MlpParams, mlp_forward
from .sim import DynamicsModel

MAGIC = b"DMST0001"
MODEL_VERSION = "1"


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or of an unrecognized version."""


@dataclass
class LearnedModel:
    embedder_kind: str
    embed_dim: int
    grammar_version: str
    n_objects: int
    pca: PcaModel
    mlp: MlpParams
    m: np.ndarray
    example_embeddings: np.ndarray        # (T, d) raw embeddings, rows
    example_descriptions: list[str]
    dyn: DynamicsModel
    horizon: int
    rho: ConstraintParams | None = None
    threshold: float = 3.0
    residual_max: float = 0.5
    feature_kind: str = FEATURE_KIND
    version: str = MODEL_VERSION
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.example_embeddings = np.asarray(self.example_embeddings, dtype=float)
        if self.pca.mean.shape[0] != self.embed_dim:
            raise ValueError("pca dimension does not match the embedder dimension")
        if self.mlp.layers[0] != self.pca.z:
            raise ValueError("mapping input width must equal the pca width")
        if self.mlp.layers[-1] != 6 * self.n_objects + 2:
            raise ValueError("mapping output width does not match the feature count")
        if self.example_embeddings.shape != (len(self.example_descriptions), self.embed_dim):
            raise ValueError("example embeddings must be one row per description")

    @property
    def z(self) -> int:
        return self.pca.z

    @property
    def p(self) -> int:
        return self.mlp.layers[-1]

    def coverage_model(self) -> CoverageModel:
        return fit_coverage(self.example_embeddings, self.threshold, self.residual_max)

    def predict_theta(self, raw_embedding: np.ndarray) -> np.ndarray:
        """Raw embedding -> compressed embedding -> task weights."""
        out, _ = mlp_forward(self.mlp, self.pca.project(raw_embedding))
        return out


def _metadata(model: LearnedModel) -> dict:
    arrays = _array_manifest(model)
    return {
        "magic_version": MAGIC.decode(),
        "version": model.version,
        "embedder_kind": model.embedder_kind,
        "embed_dim": model.embed_dim,
        "grammar_version": model.grammar_version,
        "feature_kind": model.feature_kind,
        "n_objects": model.n_objects,
        "mlp_layers": model.mlp.layers,
        "threshold": model.threshold,
        "residual_max": model.residual_max,
        "dynamics": {"dt": model.dyn.dt, "n_steps": model.dyn.n_steps, "u_max": model.dyn.u_max},
        "horizon": model.horizon,
        "rho_family": model.rho.family if model.rho is not None else None,
        "example_descriptions": model.example_descriptions,
        "provenance": model.provenance,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }


def _array_manifest(model: LearnedModel) -> list[tuple[str, np.ndarray]]:
    arrays = [
        ("pca.mean", model.pca.mean),
        ("pca.components", model.pca.components),
        ("pca.singular_values", model.pca.singular_values),
    ]
    for i, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
        arrays.append((f"mlp.w{i}", w))
        arrays.append((f"mlp.b{i}", b))
    arrays.append(("m", model.m))
    if model.rho is not None:
        arrays.append(("rho.center", model.rho.center))
        arrays.append(("rho.shape", model.rho.shape))
    arrays.append(("example_embeddings", model.example_embeddings))
    return arrays


def save_model(model: LearnedModel, path: str):
    meta = json.dumps(_metadata(model), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(meta)))
        f.write(meta)
        for _, arr in _array_manifest(model):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str) -> LearnedModel:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len))
        if meta.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unrecognized model version {meta.get('version')!r}")
        arrays: dict[str, np.ndarray] = {}
        for spec in meta["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ModelFormatError(f"truncated array block {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise ModelFormatError("trailing bytes after declared arrays")

    layers = meta["mlp_layers"]
    mlp = MlpParams(
        weights=[arrays[f"mlp.w{i}"] for i in range(len(layers) - 1)],
        biases=[arrays[f"mlp.b{i}"] for i in range(len(layers) - 1)],
    )
    rho = None
    if meta["rho_family"] is not None:
        rho = ConstraintParams(meta["rho_family"], arrays["rho.center"], arrays["rho.shape"])
    return LearnedModel(
        embedder_kind=meta["embedder_kind"],
        embed_dim=meta["embed_dim"],
        grammar_version=meta["grammar_version"],
        n_objects=meta["n_objects"],
        pca=PcaModel(arrays["pca.mean"], arrays["pca.components"], arrays["pca.singular_values"]),
        mlp=mlp,
        m=arrays["m"],
        example_embeddings=arrays["example_embeddings"],
        example_descriptions=list(meta["example_descriptions"]),
        dyn=DynamicsModel(**meta["dynamics"]),
        horizon=meta["horizon"],
        rho=rho,
        threshold=meta["threshold"],
        residual_max=meta["residual_max"],
        feature_kind=meta["feature_kind"],
        version=meta["version"],
        provenance=meta["provenance"],
    )
