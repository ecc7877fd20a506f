"""Hand-rolled forward/backward primitives shared by the toy networks.

Everything here is plain numpy with explicit gradients so that each loss
can be checked against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .data import ZeroVectorError


def logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return float(e / (1.0 + e))


def normalize_rows(pre: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize each row; returns (normalized, norms)."""
    norms = np.linalg.norm(pre, axis=-1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("cannot normalize a zero vector")
    return pre / norms[..., None], norms


def normalize_rows_backward(grad_out: np.ndarray, normalized: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Backprop through row-wise L2 normalization: (g - (g.y) y) / r."""
    dot = np.sum(grad_out * normalized, axis=-1, keepdims=True)
    return (grad_out - dot * normalized) / norms[..., None]


def sequence_nll(
    summary: np.ndarray,
    tokens: tuple[int, ...],
    head_w: np.ndarray,
    head_b: np.ndarray,
    token_emb: np.ndarray,
    bos_emb: np.ndarray,
) -> tuple[float, dict]:
    """Autoregressive token negative log-likelihood, summed over positions.

    Position i is predicted from concat(summary, embedding of token i-1);
    position 0 conditions on the begin-token embedding.  Returns the loss and
    a cache for the backward pass.
    """
    if len(tokens) == 0:
        raise ValueError("token sequence must be non-empty")
    vocab = head_w.shape[0]
    for t in tokens:
        if not 0 <= t < vocab:
            raise ValueError(f"token id {t} outside vocabulary of size {vocab}")
    d = summary.shape[0]
    prev = np.empty((len(tokens), token_emb.shape[1]))
    prev[0] = bos_emb
    for i in range(1, len(tokens)):
        prev[i] = token_emb[tokens[i - 1]]
    inputs = np.concatenate([np.tile(summary, (len(tokens), 1)), prev], axis=1)  # (m, 2d)
    logits = inputs @ head_w.T + head_b  # (m, V)
    loss = 0.0
    probs = np.empty_like(logits)
    for i, t in enumerate(tokens):
        lse = logsumexp(logits[i])
        loss += lse - logits[i, t]
        probs[i] = np.exp(logits[i] - lse)
    cache = {"inputs": inputs, "probs": probs, "tokens": tokens, "d": d}
    return float(loss), cache


def sequence_nll_backward(cache: dict, head_w: np.ndarray, scale: float = 1.0) -> dict:
    """Gradients of sequence_nll wrt head, token table, bos, and summary."""
    inputs = cache["inputs"]
    probs = cache["probs"]
    tokens = cache["tokens"]
    d = cache["d"]
    dlogits = probs.copy()
    for i, t in enumerate(tokens):
        dlogits[i, t] -= 1.0
    dlogits *= scale
    d_head_w = dlogits.T @ inputs
    d_head_b = dlogits.sum(axis=0)
    d_inputs = dlogits @ head_w  # (m, 2d)
    d_summary = d_inputs[:, :d].sum(axis=0)
    d_prev = d_inputs[:, d:]
    d_token_emb = np.zeros((head_w.shape[0], d_prev.shape[1]))
    d_bos = d_prev[0].copy()
    for i in range(1, len(tokens)):
        d_token_emb[tokens[i - 1]] += d_prev[i]
    return {
        "head_w": d_head_w,
        "head_b": d_head_b,
        "token_emb": d_token_emb,
        "bos_emb": d_bos,
        "summary": d_summary,
    }


def add_grads(total: dict[str, np.ndarray], extra: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    for key, val in extra.items():
        if key in total:
            total[key] = total[key] + val
        else:
            total[key] = np.array(val, dtype=float)
    return total


def grad_norms(grads: dict[str, np.ndarray]) -> dict[str, float]:
    return {k: float(np.linalg.norm(v)) for k, v in grads.items()}
