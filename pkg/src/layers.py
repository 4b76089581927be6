"""
אבני בניין משותפות: שכבה לינארית, MLP, בלוק קשב רב-ראשי ואתחול
"""
from typing import Dict, List, Optional

import numpy as np

from src.numerics import (
    Tensor, dropout, layernorm, matmul, reshape, softmax_rows, tanh, transpose,
)

Params = Dict[str, Tensor]


def init_linear(params: Params, rng: np.random.Generator, prefix: str, fan_in: int, fan_out: int,
                gain: float = 1.0) -> None:
    """משקלים N(0, gain^2/fan_in) בצורה (in, out), הטיה אפס"""
    params[f"{prefix}.weight"] = Tensor(rng.normal(0.0, gain / np.sqrt(fan_in), (fan_in, fan_out)), requires_grad=True)
    params[f"{prefix}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)


def init_layernorm(params: Params, prefix: str, dim: int) -> None:
    params[f"{prefix}.gain"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{prefix}.bias"] = Tensor(np.zeros(dim), requires_grad=True)


def linear(params: Params, prefix: str, x: Tensor) -> Tensor:
    return matmul(x, params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]


def norm(params: Params, prefix: str, x: Tensor) -> Tensor:
    return layernorm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def init_mlp(params: Params, rng: np.random.Generator, prefix: str, dims: List[int]) -> None:
    for j, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        init_linear(params, rng, f"{prefix}.{j}", fan_in, fan_out)


def mlp(params: Params, prefix: str, x: Tensor, n_layers: int, activate_last: bool = False,
        hidden_dropout: float = 0.0, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """שרשרת לינאריות עם tanh ביניהן; dropout אופציונלי על השכבות הנסתרות"""
    for j in range(n_layers):
        x = linear(params, f"{prefix}.{j}", x)
        if j < n_layers - 1 or activate_last:
            x = tanh(x)
            if j < n_layers - 1:
                x = dropout(x, hidden_dropout, train, rng)
    return x


# ---------------------------------------------------------------------------
# קשב רב-ראשי ללא קידוד מיקום

def init_attention_block(params: Params, rng: np.random.Generator, prefix: str, dim: int, hidden: int,
                         fixed: bool = False) -> None:
    init_layernorm(params, f"{prefix}.ln1", dim)
    projections = ("ctx_q", "ctx_k", "v", "o") if fixed else ("q", "k", "v", "o")
    for name in projections:
        init_linear(params, rng, f"{prefix}.{name}", dim, dim)
    init_layernorm(params, f"{prefix}.ln2", dim)
    init_linear(params, rng, f"{prefix}.ffn1", dim, hidden)
    init_linear(params, rng, f"{prefix}.ffn2", hidden, dim)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., N, E) -> (..., h, N, E/h)"""
    *lead, n, dim = x.shape
    x = reshape(x, (*lead, n, heads, dim // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., h, N, d) -> (..., N, h*d)"""
    *lead, heads, n, depth = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return reshape(transpose(x, axes), (*lead, n, heads * depth))


def attention_weights(q: Tensor, k: Tensor, heads: int) -> Tensor:
    """softmax(Q K^T / sqrt(d)) לכל ראש"""
    qh, kh = split_heads(q, heads), split_heads(k, heads)
    depth = q.shape[-1] // heads
    kt = transpose(kh, list(range(kh.ndim - 2)) + [kh.ndim - 1, kh.ndim - 2])
    return softmax_rows(matmul(qh, kt) * (1.0 / np.sqrt(depth)))


def fixed_attention_weights(params: Params, prefix: str, context_tokens: Tensor, heads: int) -> Tensor:
    """משקלי קשב שתלויים בהקשר בלבד: (h, N, N)"""
    q = linear(params, f"{prefix}.ctx_q", context_tokens)
    k = linear(params, f"{prefix}.ctx_k", context_tokens)
    return attention_weights(q, k, heads)


def attention_block(params: Params, prefix: str, x: Tensor, heads: int,
                    attention: Optional[Tensor] = None) -> Tensor:
    """בלוק pre-LN: x + MHA(LN(x)), ואז x + FFN(LN(x)); x בצורה (B, N, E)"""
    h = norm(params, f"{prefix}.ln1", x)
    if attention is None:
        attention = attention_weights(linear(params, f"{prefix}.q", h), linear(params, f"{prefix}.k", h), heads)
    v = split_heads(linear(params, f"{prefix}.v", h), heads)
    mixed = merge_heads(matmul(attention, v))
    x = x + linear(params, f"{prefix}.o", mixed)
    h = norm(params, f"{prefix}.ln2", x)
    return x + linear(params, f"{prefix}.ffn2", tanh(linear(params, f"{prefix}.ffn1", h)))
