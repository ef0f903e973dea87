"""Gated-MLP encoder: MFCC frames in, per-frame timestamp embeddings out.

The model is a stack of identical blocks over a (frames, dim) sequence.
Each block pre-normalizes, expands to a hidden width with exact GELU,
splits the hidden channels into a value half and a gate half, mixes the
gate half across time with a learned frames-by-frames matrix, multiplies
the halves, projects back down, and adds the input back. A final layer
norm is applied at whatever depth embeddings are read from.

Weights live in a flat dict of named float32 arrays. The names double as
the on-disk tensor names, the optimizer state keys and the gradient keys,
so there is exactly one naming scheme in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters; defaults are the full-size model."""

    n_mfcc: int = 40
    n_frames: int = 98
    dim: int = 64
    hidden_dim: int = 256
    depth: int = 12
    n_classes: int = 35

    def __post_init__(self):
        for name in ("n_mfcc", "n_frames", "dim", "hidden_dim", "depth", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even (it is split into halves)")

    @property
    def half_dim(self) -> int:
        return self.hidden_dim // 2


def tensor_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in serialization order."""
    shapes: dict[str, tuple[int, ...]] = {
        "P0": (config.n_mfcc, config.dim),
        "P0.bias": (config.dim,),
    }
    for i in range(config.depth):
        p = f"block.{i}."
        shapes[p + "pre_norm.scale"] = (config.dim,)
        shapes[p + "pre_norm.shift"] = (config.dim,)
        shapes[p + "U"] = (config.dim, config.hidden_dim)
        shapes[p + "U.bias"] = (config.hidden_dim,)
        shapes[p + "gate_norm.scale"] = (config.half_dim,)
        shapes[p + "gate_norm.shift"] = (config.half_dim,)
        shapes[p + "G"] = (config.n_frames, config.n_frames)
        shapes[p + "G.bias"] = (config.n_frames,)
        shapes[p + "V"] = (config.half_dim, config.dim)
        shapes[p + "V.bias"] = (config.dim,)
    shapes["final_norm.scale"] = (config.dim,)
    shapes["final_norm.shift"] = (config.dim,)
    shapes["head.W"] = (config.dim, config.n_classes)
    shapes["head.bias"] = (config.n_classes,)
    return shapes


@dataclass
class EncoderWeights:
    """A config plus the flat name-to-array tensor dict it describes."""

    config: EncoderConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = tensor_shapes(self.config)
        missing = expected.keys() - self.tensors.keys()
        extra = self.tensors.keys() - expected.keys()
        if missing or extra:
            raise ValueError(
                f"tensor set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(
                    f"tensor {name!r} has shape {self.tensors[name].shape}, expected {shape}"
                )

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def astype(self, dtype) -> "EncoderWeights":
        return EncoderWeights(
            self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_weights(config: EncoderConfig | None = None, seed: int = 0) -> EncoderWeights:
    """Fresh float32 weights.

    Projection matrices (P0, U, V, head.W) draw uniform Glorot values; their
    biases start at zero. The time-mixing matrix G starts at zero with its
    bias at one, so every block begins as a near-identity: the gate path
    passes the value half through unchanged. Norm scales start at one.
    """
    if config is None:
        config = EncoderConfig()
    rng = np.random.default_rng(seed)

    def glorot(shape: tuple[int, ...]) -> np.ndarray:
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-limit, limit, shape).astype(np.float32)

    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("P0", "head.W") or leaf in ("U", "V"):
            tensors[name] = glorot(shape)
        elif leaf == "G":
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif name.endswith("G.bias") or leaf == "scale":
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:  # projection biases and norm shifts
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return EncoderWeights(config, tensors)


def gelu(u: np.ndarray) -> np.ndarray:
    """Exact GELU, u * Phi(u) with the Gaussian CDF via erf."""
    return 0.5 * u * (1.0 + erf(u / math.sqrt(2.0)))


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Normalize over the last axis to zero mean, unit variance, then affine."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + LN_EPS) * scale + shift


def patch_embed(features: np.ndarray, tensors: dict[str, np.ndarray]) -> np.ndarray:
    """(n_mfcc, frames) features to a (frames, dim) sequence."""
    return features.T @ tensors["P0"] + tensors["P0.bias"]


def block_forward(x: np.ndarray, tensors: dict[str, np.ndarray], index: int) -> np.ndarray:
    """One gated-MLP block on a (frames, dim) sequence."""
    p = f"block.{index}."
    half = tensors[p + "U"].shape[1] // 2
    normed = layer_norm(x, tensors[p + "pre_norm.scale"], tensors[p + "pre_norm.shift"])
    hidden = gelu(normed @ tensors[p + "U"] + tensors[p + "U.bias"])
    value, gate = hidden[:, :half], hidden[:, half:]
    gate = layer_norm(gate, tensors[p + "gate_norm.scale"], tensors[p + "gate_norm.shift"])
    mixed = tensors[p + "G"] @ gate + tensors[p + "G.bias"][:, None]
    branch = (value * mixed) @ tensors[p + "V"] + tensors[p + "V.bias"]
    return x + branch


def extract_timestamps(
    features: np.ndarray, weights: EncoderWeights, depth: int | None = None
) -> np.ndarray:
    """Timestamp embeddings: one dim-sized vector per MFCC frame.

    depth selects how many blocks to run (default: all of them); the final
    norm is applied whatever the depth, so embeddings from different depths
    live on the same scale.
    """
    config = weights.config
    if features.shape != (config.n_mfcc, config.n_frames):
        raise ValueError(
            f"features shape {features.shape} != ({config.n_mfcc}, {config.n_frames})"
        )
    if depth is None:
        depth = config.depth
    if not 0 <= depth <= config.depth:
        raise ValueError(f"depth {depth} outside [0, {config.depth}]")
    t = weights.tensors
    x = patch_embed(features, t)
    for i in range(depth):
        x = block_forward(x, t, i)
    return layer_norm(x, t["final_norm.scale"], t["final_norm.shift"])


def classify(features: np.ndarray, weights: EncoderWeights) -> np.ndarray:
    """Class logits: mean-pool the full-depth timestamps, then the head."""
    pooled = extract_timestamps(features, weights).mean(axis=0)
    return pooled @ weights.tensors["head.W"] + weights.tensors["head.bias"]


def toeplitz_score(matrix: np.ndarray) -> float:
    """How constant-along-diagonals a square matrix is, in [~0, 1].

    1 - (mean per-diagonal variance / total variance). Exactly Toeplitz
    gives 1.0; iid noise lands near 0. A matrix with no variance at all
    scores 1.0 by convention.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("toeplitz_score expects a square matrix")
    total = m.var()
    if total < np.finfo(np.float64).tiny:
        return 1.0
    n = m.shape[0]
    diag_vars = [m.diagonal(k).var() for k in range(-(n - 1), n)]
    return float(1.0 - np.mean(diag_vars) / total)
