"""Residual vector quantization.

Tokens are 1-based in every public API (``1..M``). Internally the torch path
uses 0-based indices and converts at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

COMMITMENT_BETA = 1.0
KMEANS_ITERS = 50

# (rows x M x K) elements evaluated per chunk in the nearest-neighbour search
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class QuantizationResult:
    tokens: np.ndarray  # (N,) int, 1-based
    quantized: np.ndarray  # (K,)
    residuals: np.ndarray  # (N + 1, K); residuals[0] is the input


def nearest_codevector(residual: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """0-based index of the nearest row of ``codebook`` for each row of ``residual``.

    Distances are computed from explicit differences (not the expanded
    quadratic form) so exact ties resolve to the smallest index.
    """
    flat = residual.reshape(-1, residual.shape[-1])
    step = max(1, _CHUNK_ELEMENTS // max(1, codebook.numel()))
    out = []
    for start in range(0, flat.shape[0], step):
        chunk = flat[start : start + step]
        dist = (chunk[:, None, :] - codebook[None]).pow(2).sum(-1)
        out.append(dist.argmin(-1))
    idx = torch.cat(out) if out else flat.new_zeros(0, dtype=torch.long)
    return idx.reshape(residual.shape[:-1])


class ResidualQuantizer(nn.Module):
    """N stages of M codevectors of dimension K, stored as one ``(N, M, K)`` parameter."""

    def __init__(self, num_stages: int, codebook_size: int, dim: int, codebooks=None):
        super().__init__()
        if num_stages < 2:
            raise ValueError(f"RVQ needs at least 2 stages, got {num_stages}")
        if codebook_size < 2 or dim < 1:
            raise ValueError(f"invalid codebook shape M={codebook_size}, K={dim}")
        if codebooks is None:
            codebooks = torch.randn(num_stages, codebook_size, dim) * 0.1
        codebooks = torch.as_tensor(codebooks)
        if not codebooks.is_floating_point():
            codebooks = codebooks.float()
        if codebooks.shape != (num_stages, codebook_size, dim):
            raise ValueError(f"codebooks shape {tuple(codebooks.shape)} != {(num_stages, codebook_size, dim)}")
        self.codebooks = nn.Parameter(codebooks.clone())

    @property
    def num_stages(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]

    def codebook(self, stage: int) -> np.ndarray:
        """Codevectors of ``stage`` (1-based) as an ``(M, K)`` float64 array."""
        if not 1 <= stage <= self.num_stages:
            raise ValueError(f"stage {stage} outside 1..{self.num_stages}")
        return self.codebooks[stage - 1].detach().double().numpy()

    def forward(self, z: torch.Tensor, beta: float = COMMITMENT_BETA):
        """Quantize ``(..., K)`` latents.

        Returns ``(quantized, tokens, loss)`` where ``quantized`` carries a
        straight-through gradient to ``z``, ``tokens`` is ``(..., N)`` 1-based
        and ``loss`` is the per-frame quantization loss averaged over frames.
        """
        if z.shape[-1] != self.dim:
            raise ValueError(f"latent dimension {z.shape[-1]} != codebook dimension {self.dim}")
        residual = z
        quantized = torch.zeros_like(z)
        tokens = []
        loss = z.new_zeros(())
        for n in range(self.num_stages):
            cb = self.codebooks[n]
            idx = nearest_codevector(residual.detach(), cb.detach())
            w = cb[idx]
            loss = loss + (residual - w.detach()).pow(2).sum(-1).mean()
            loss = loss + beta * (residual.detach() - w).pow(2).sum(-1).mean()
            quantized = quantized + w
            residual = residual - w.detach()
            tokens.append(idx + 1)
        quantized_st = z + (quantized - z).detach()
        return quantized_st, torch.stack(tokens, -1), loss

    def embed(self, tokens: torch.Tensor, up_to: int | None = None) -> torch.Tensor:
        """Sum of looked-up codevectors for 1-based ``tokens`` of shape ``(..., n)``."""
        up_to = tokens.shape[-1] if up_to is None else up_to
        if not 1 <= up_to <= min(tokens.shape[-1], self.num_stages):
            raise ValueError(f"up_to={up_to} outside 1..{min(tokens.shape[-1], self.num_stages)}")
        if tokens.numel() and (tokens[..., :up_to].min() < 1 or tokens[..., :up_to].max() > self.codebook_size):
            raise ValueError(f"tokens must lie in 1..{self.codebook_size}")
        out = 0
        for n in range(up_to):
            out = out + self.codebooks[n][tokens[..., n] - 1]
        return out


# --------------------------------------------------------------------------- functional API


def lookup(token: int, codebook: np.ndarray) -> np.ndarray:
    """Row ``token`` (1-based) of an ``(M, K)`` codebook."""
    codebook = np.asarray(codebook)
    if not 1 <= int(token) <= codebook.shape[0]:
        raise ValueError(f"token {token} outside 1..{codebook.shape[0]}")
    return codebook[int(token) - 1]


def quantize(z, q: ResidualQuantizer) -> QuantizationResult:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (q.dim,):
        raise ValueError(f"expected a {q.dim}-vector, got shape {z.shape}")
    residuals = [z]
    tokens = []
    quantized = 0
    for n in range(1, q.num_stages + 1):
        cb = q.codebook(n)
        idx = int(nearest_codevector(torch.from_numpy(residuals[-1])[None], torch.from_numpy(cb))[0])
        tokens.append(idx + 1)
        quantized = quantized + cb[idx]
        residuals.append(residuals[-1] - cb[idx])
    return QuantizationResult(np.array(tokens), quantized, np.stack(residuals))


def dequantize(tokens, q: ResidualQuantizer, up_to: int | None = None) -> np.ndarray:
    tokens = np.asarray(tokens)
    up_to = q.num_stages if up_to is None else up_to
    if not 1 <= up_to <= q.num_stages:
        raise ValueError(f"up_to={up_to} outside 1..{q.num_stages}")
    return sum(lookup(tokens[n - 1], q.codebook(n)) for n in range(1, up_to + 1))


def quantization_loss(z, result: QuantizationResult, beta: float = COMMITMENT_BETA) -> float:
    """Commitment plus codebook term, evaluated in the forward direction.

    Gradient stopping only changes which side receives gradient, so both
    terms have the value ``||r_n - w_n||^2 = ||r_{n+1}||^2`` here.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != result.residuals[0].shape:
        raise ValueError(f"latent shape {z.shape} does not match result {result.residuals[0].shape}")
    energy = float(np.sum(result.residuals[1:] ** 2))
    return (1.0 + beta) * energy


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int) -> np.ndarray:
    # k-means++ seeding
    centroids = [points[rng.integers(len(points))]]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(len(points), p=d2 / total) if total > 0 else rng.integers(len(points))
        centroids.append(points[i])
        d2 = np.minimum(d2, np.sum((points - points[i]) ** 2, axis=1))
    centroids = np.array(centroids)
    pts = torch.from_numpy(points)
    for _ in range(iters):
        assign = nearest_codevector(pts, torch.from_numpy(centroids)).numpy()
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, points)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
    return centroids


def init_codebooks(samples, num_stages: int, codebook_size: int, seed: int = 0,
                   iters: int = KMEANS_ITERS) -> ResidualQuantizer:
    """Stage-wise k-means: stage n is fit to the residuals left by stages 1..n-1."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"samples must be (count, K), got shape {samples.shape}")
    if samples.shape[0] < codebook_size:
        raise ValueError(f"need at least M={codebook_size} samples, got {samples.shape[0]}")
    rng = np.random.default_rng(seed)
    residual = samples.copy()
    books = []
    for _ in range(num_stages):
        cb = _kmeans(residual, codebook_size, rng, iters)
        idx = nearest_codevector(torch.from_numpy(residual), torch.from_numpy(cb)).numpy()
        residual = residual - cb[idx]
        books.append(cb)
    return ResidualQuantizer(num_stages, codebook_size, samples.shape[1], np.stack(books))
