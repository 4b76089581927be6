"""
ספירת פרמטרים ו-FLOPs אנליטית לכל ארכיטקטורה, ודוח עלויות
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import pandas as pd

from src.data_schemas import ArchitectureKind, ArchitectureSpec, ContextEncoderKind

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["name", "params_abs", "params_rel", "flops_abs", "flops_rel", "compile_flops"]
COUNTING_CONVENTION = (
    "FLOPs = 2*M*N per linear map; attention Q.K^T and A.V counted as 2*N^2*E each; "
    "softmax, layernorm, activations and bias adds excluded; log_std excluded from params"
)


@dataclass(frozen=True)
class InferenceCost:
    params: int
    flops: int


def linear_flops(in_dim: int, out_dim: int) -> int:
    """FLOPs של שכבה לינארית M->N: בדיוק 2*M*N"""
    if in_dim <= 0 or out_dim <= 0:
        raise ValueError(f"Linear dims must be positive, got {in_dim}x{out_dim}")
    return 2 * in_dim * out_dim


def _linear_params(in_dim: int, out_dim: int) -> int:
    return in_dim * out_dim + out_dim


def _chain_cost(dims: Sequence[int]) -> InferenceCost:
    pairs = list(zip(dims[:-1], dims[1:]))
    return InferenceCost(
        params=sum(_linear_params(m, n) for m, n in pairs),
        flops=sum(linear_flops(m, n) for m, n in pairs),
    )


def _attention_block_params(dim: int, hidden: int) -> int:
    return 4 * dim + 4 * _linear_params(dim, dim) + _linear_params(dim, hidden) + _linear_params(hidden, dim)


def _attention_block_flops(dim: int, hidden: int, n_limbs: int, fixed: bool) -> int:
    """הקרנות, ציוני קשב וערבוב, ו-FFN; בקשב קבוע רק V ו-O תלויים במצב"""
    projections = 2 if fixed else 4
    attention_products = 1 if fixed else 2
    return (projections * n_limbs * linear_flops(dim, dim)
            + attention_products * 2 * n_limbs * n_limbs * dim
            + n_limbs * (linear_flops(dim, hidden) + linear_flops(hidden, dim)))


def compiled_cost(spec: ArchitectureSpec, n_limbs: int) -> InferenceCost:
    hidden, state_dim, action_dim = spec.hidden_width, spec.state_dim_per_limb, spec.action_dim_per_limb
    depth = spec.hidden_layers - 1
    params = (n_limbs * _linear_params(state_dim, hidden)
              + depth * _linear_params(hidden, hidden)
              + n_limbs * _linear_params(hidden, action_dim))
    flops = (linear_flops(n_limbs * state_dim, hidden)
             + depth * linear_flops(hidden, hidden)
             + linear_flops(hidden, n_limbs * action_dim))
    return InferenceCost(params, flops)


def inference_cost(spec: ArchitectureSpec, n_limbs: int) -> InferenceCost:
    """פרמטרים ו-FLOPs לצעד הסקה אחד על רובוט עם n_limbs איברים"""
    if n_limbs < 1:
        raise ValueError("n_limbs must be positive")
    state_dim, action_dim, context_dim = spec.state_dim_per_limb, spec.action_dim_per_limb, spec.context_dim

    if spec.kind in (ArchitectureKind.HYPERNETWORK, ArchitectureKind.COMPILED_MLP):
        return compiled_cost(spec, n_limbs)

    if spec.kind == ArchitectureKind.MULTI_ROBOT_MLP:
        return _chain_cost([spec.n_max * (state_dim + context_dim)]
                           + [spec.hidden_width] * spec.hidden_layers
                           + [spec.n_max * action_dim])

    if spec.kind == ArchitectureKind.SINGLE_ROBOT_MLP:
        return _chain_cost([n_limbs * state_dim] + [spec.hidden_width] * spec.hidden_layers + [n_limbs * action_dim])

    if spec.kind == ArchitectureKind.TRANSFORMER:
        dim, hidden = spec.embed_dim, spec.attn_hidden
        decoder = _chain_cost([dim, spec.decoder_hidden, action_dim])
        params = (_linear_params(state_dim + context_dim, dim)
                  + spec.attn_layers * _attention_block_params(dim, hidden)
                  + decoder.params)
        if spec.fixed_attention:
            params += _linear_params(context_dim, dim)
        flops = (n_limbs * linear_flops(state_dim + context_dim, dim)
                 + spec.attn_layers * _attention_block_flops(dim, hidden, n_limbs, spec.fixed_attention)
                 + n_limbs * decoder.flops)
        return InferenceCost(params, flops)

    raise ValueError(f"Unknown architecture kind: {spec.kind}")


def hn_compile_cost(spec: ArchitectureSpec, n_limbs: int) -> int:
    """עלות חד-פעמית: קידוד ההקשר וכל ראשי רשת-העל"""
    if spec.kind != ArchitectureKind.HYPERNETWORK:
        raise ValueError("hn_compile_cost requires a hypernetwork spec")
    embed, context_dim = spec.context_embed_dim, spec.context_dim
    hidden, state_dim, action_dim = spec.hidden_width, spec.state_dim_per_limb, spec.action_dim_per_limb

    if spec.context_encoder == ContextEncoderKind.MLP:
        encoder = n_limbs * (linear_flops(context_dim, embed) + (spec.encoder_layers - 1) * linear_flops(embed, embed))
    else:
        encoder = (n_limbs * linear_flops(context_dim, embed)
                   + spec.encoder_layers * _attention_block_flops(embed, spec.encoder_hidden, n_limbs, fixed=False))

    heads = (n_limbs * (linear_flops(embed, hidden * state_dim) + linear_flops(embed, hidden))
             + (spec.hidden_layers - 1) * (linear_flops(embed, hidden * hidden) + linear_flops(embed, hidden))
             + n_limbs * (linear_flops(embed, action_dim * hidden) + linear_flops(embed, action_dim)))
    return encoder + heads


def attention_precompute_cost(spec: ArchitectureSpec, n_limbs: int) -> int:
    """קשב קבוע: הטמעת הקשר, הקרנות Q/K וציונים, פעם אחת לרובוט"""
    if spec.kind != ArchitectureKind.TRANSFORMER or not spec.fixed_attention:
        return 0
    dim = spec.embed_dim
    per_layer = 2 * n_limbs * linear_flops(dim, dim) + 2 * n_limbs * n_limbs * dim
    return n_limbs * linear_flops(spec.context_dim, dim) + spec.attn_layers * per_layer


def compile_cost(spec: ArchitectureSpec, n_limbs: int) -> int:
    if spec.kind == ArchitectureKind.HYPERNETWORK:
        return hn_compile_cost(spec, n_limbs)
    return attention_precompute_cost(spec, n_limbs)


def hypernetwork_param_count(spec: ArchitectureSpec) -> int:
    """מספר הפרמטרים של רשת-העל עצמה (ללא log_std)"""
    if spec.kind != ArchitectureKind.HYPERNETWORK:
        raise ValueError("hypernetwork_param_count requires a hypernetwork spec")
    embed = spec.context_embed_dim
    hidden, state_dim, action_dim = spec.hidden_width, spec.state_dim_per_limb, spec.action_dim_per_limb
    if spec.context_encoder == ContextEncoderKind.MLP:
        encoder = _chain_cost([spec.context_dim] + [embed] * spec.encoder_layers).params
    else:
        encoder = (_linear_params(spec.context_dim, embed)
                   + spec.encoder_layers * _attention_block_params(embed, spec.encoder_hidden)
                   + 2 * embed)
    heads = (_linear_params(embed, hidden * state_dim) + _linear_params(embed, hidden)
             + (spec.hidden_layers - 1) * (_linear_params(embed, hidden * hidden) + _linear_params(embed, hidden))
             + _linear_params(embed, action_dim * hidden) + _linear_params(embed, action_dim))
    return encoder + heads


# ---------------------------------------------------------------------------
# דוח

@dataclass
class CostReport:
    frame: pd.DataFrame
    convention: str = COUNTING_CONVENTION

    def to_csv(self) -> str:
        return f"# {self.convention}\n" + self.frame.to_csv(index=False)


def _is_baseline(spec: ArchitectureSpec) -> bool:
    return spec.kind in (ArchitectureKind.HYPERNETWORK, ArchitectureKind.COMPILED_MLP)


def emit_report(entries: Sequence[Tuple[str, ArchitectureSpec]], n_limbs: int) -> CostReport:
    """שורה לכל ארכיטקטורה, ערכים מוחלטים ויחסיים למדיניות המקומפלת"""
    baselines = [spec for _, spec in entries if _is_baseline(spec)]
    if not baselines:
        raise ValueError("Cost report is missing the compiled HyperDistill baseline row")
    base = inference_cost(baselines[0], n_limbs)

    rows = []
    for name, spec in entries:
        cost = inference_cost(spec, n_limbs)
        rows.append({
            "name": name,
            "params_abs": cost.params,
            "params_rel": cost.params / base.params,
            "flops_abs": cost.flops,
            "flops_rel": cost.flops / base.flops,
            "compile_flops": compile_cost(spec, n_limbs),
        })
        if spec.kind == ArchitectureKind.HYPERNETWORK:
            logger.info(f"{name}: hypernetwork holds {hypernetwork_param_count(spec)} parameters")
    logger.info(f"Cost report for N={n_limbs}: {len(rows)} rows")
    return CostReport(frame=pd.DataFrame(rows, columns=REPORT_COLUMNS))


def cost_table_specs(env: str = "ft", state_dim: int = 13, action_dim: int = 1,
                 context_dim: int = 15) -> List[Tuple[str, ArchitectureSpec]]:
    """חמש השורות של טבלת העלויות לסביבות ft / vt / obstacle"""
    if env not in ("ft", "vt", "obstacle"):
        raise ValueError(f"Unknown environment preset: {env}")
    base = dict(state_dim_per_limb=state_dim, action_dim_per_limb=action_dim, context_dim=context_dim)
    base_layers = 2 if env == "ft" else 3
    compressed = dict(attn_layers=1, attn_heads=1, attn_hidden=256) if env == "ft" \
        else dict(attn_layers=2, attn_heads=1, attn_hidden=128)
    transformer = dict(kind=ArchitectureKind.TRANSFORMER, embed_dim=128, decoder_hidden=64, **base)
    return [
        ("modumorph_oracle", ArchitectureSpec(
            fixed_attention=True, attn_layers=5, attn_heads=2, attn_hidden=1024, **transformer)),
        ("tf_compressed", ArchitectureSpec(**compressed, **transformer)),
        ("modumorph_compressed", ArchitectureSpec(
            fixed_attention=True, attn_layers=1, attn_heads=1, attn_hidden=128, **transformer)),
        ("multi_robot_mlp", ArchitectureSpec(
            kind=ArchitectureKind.MULTI_ROBOT_MLP, hidden_layers=base_layers, hidden_width=256, **base)),
        ("hyperdistill", ArchitectureSpec(
            kind=ArchitectureKind.HYPERNETWORK, hidden_layers=base_layers, hidden_width=256, **base)),
    ]
