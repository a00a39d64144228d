"""HyperScore helpers."""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np
from scipy.special import erf

from .exceptions import ArgumentError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def philox(*key: int) -> np.random.Generator:
    """Return a counter-based generator keyed by the given integers."""
    seed = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(seed))


def name_key(name: str) -> int:
    """Stable 32-bit key derived from a text label."""
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of the exact GELU."""
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Softmax with max subtraction."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def softmax_backward(weights: np.ndarray, grad: np.ndarray, axis: int = 0) -> np.ndarray:
    """Gradient of the logits given the gradient of the softmax output."""
    inner = np.sum(weights * grad, axis=axis, keepdims=True)
    return weights * (grad - inner)


def require_positive(**dims: int) -> None:
    """Raise ArgumentError unless every named dimension is at least 1."""
    for name, value in dims.items():
        if int(value) < 1:
            raise ArgumentError(f"{name} must be >= 1, got {value}")


def canonical_json(data: Any) -> str:
    """Sorted-key compact JSON used for hashing."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def header_lines(config: dict[str, Any]) -> list[str]:
    """Comment lines echoing the config hash and seed for output files."""
    return [
        f"# config_hash: {config_hash(config)}",
        f"# seed: {config.get('seed')}",
    ]
