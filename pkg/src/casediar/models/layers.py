"""Layer stacks shared by the embedder, VAD and CPD networks."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import ndiff as nd


def add_mlp(params: nd.ParamStore, prefix: str, dims: Sequence[int]) -> None:
    """Register affine layers ``prefix.i.W``/``prefix.i.b`` for consecutive widths."""
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params.add(f"{prefix}.{i}.W", a, b)
        params.add(f"{prefix}.{i}.b", 1, b, init="zeros")


def mlp(params: nd.ParamStore, prefix: str, x: nd.Tensor, n_layers: int,
        relu_last: bool = False) -> nd.Tensor:
    h = x
    for i in range(n_layers):
        h = nd.affine(h, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"])
        if i < n_layers - 1 or relu_last:
            h = nd.relu(h)
    return h


def context_index(centers: np.ndarray, left: int, right: int, T: int) -> np.ndarray:
    """Frame indices centers[i] + k for k in [-left, right], clipped to [0, T)."""
    offsets = np.arange(-left, right + 1)
    return np.clip(np.asarray(centers)[:, None] + offsets[None, :], 0, T - 1)


def gather_context(frames: np.ndarray, centers: np.ndarray, left: int, right: int) -> np.ndarray:
    """Spliced rows for selected frames of one stream (edge frames replicated)."""
    idx = context_index(centers, left, right, frames.shape[0])
    return frames[idx].reshape(len(centers), -1)
