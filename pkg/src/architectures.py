"""
ארכיטקטורות המדיניות: MLP רב-רובוטי, טרנספורמר (רגיל ועם קשב קבוע),
רשת-העל HyperDistill וה-MLP המקומפל לכל רובוט
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from src.data_schemas import ArchitectureKind, ArchitectureSpec, ContextEncoderKind, DropoutSite
from src.layers import (
    Params, attention_block, fixed_attention_weights, init_attention_block, init_layernorm,
    init_linear, init_mlp, linear, mlp, norm,
)
from src.morphology import Morphology, context_features
from src.numerics import (
    DimensionError, Tensor, clip, dropout, matmul, reduce_mean, reduce_sum, reshape, take, tanh, transpose,
)

logger = logging.getLogger(__name__)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class ForwardMode:
    """מצב הרצה: אימון (עם dropout) או הערכה"""
    train: bool = False
    dropout_p: float = 0.0
    dropout_site: DropoutSite = DropoutSite.NONE
    rng: Optional[np.random.Generator] = None

    def _p(self, site: DropoutSite) -> float:
        return self.dropout_p if self.train and self.dropout_site == site else 0.0

    @property
    def context_dropout(self) -> float:
        return self._p(DropoutSite.CONTEXT_EMBEDDING)

    @property
    def hidden_dropout(self) -> float:
        return self._p(DropoutSite.BASE_MLP_HIDDEN)


EVAL = ForwardMode()


@dataclass
class GaussianAction:
    """ממוצע (B, N*A) ו-log_std גלובלי (N*A) של התפלגות הפעולה"""
    mean: Tensor
    log_std: Tensor


def _check_states(states: np.ndarray, n_limbs: int, state_dim: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    if states.ndim != 3 or states.shape[1:] != (n_limbs, state_dim):
        raise DimensionError(f"Expected states of shape (B, {n_limbs}, {state_dim}), got {states.shape}")
    return states


def _check_context(context: np.ndarray, spec: ArchitectureSpec) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 2 or context.shape[1] != spec.context_dim:
        raise DimensionError(f"Expected context of shape (N, {spec.context_dim}), got {context.shape}")
    if context.shape[0] > spec.n_max:
        raise DimensionError(f"Limb count {context.shape[0]} exceeds n_max={spec.n_max}")
    return context


def limb_log_std(params: Params, n_limbs: int) -> Tensor:
    """וקטור log_std גלובלי לכל ממד פעולה, משוכפל לכל האיברים וחתוך ל-[-5, 2]"""
    action_dim = params["log_std"].shape[0]
    return clip(take(params["log_std"], np.tile(np.arange(action_dim), n_limbs)), LOG_STD_MIN, LOG_STD_MAX)


def _init_log_std(params: Params, action_dim: int, value: float = 0.0) -> None:
    params["log_std"] = Tensor(np.full(action_dim, value), requires_grad=True)


# ---------------------------------------------------------------------------
# מחלקת בסיס

class BasePolicy:
    """מדיניות: מפרט ארכיטקטורה ומילון פרמטרים בעלי שם"""

    kind: ArchitectureKind

    def __init__(self, spec: ArchitectureSpec, params: Params):
        if spec.kind != self.kind:
            raise ValueError(f"{type(self).__name__} expects kind={self.kind.value}, got {spec.kind.value}")
        self.spec = spec
        self.params = params

    @classmethod
    def initialize(cls, spec: ArchitectureSpec, rng: np.random.Generator) -> "BasePolicy":
        params: Params = {}
        cls._init_params(spec, rng, params)
        return cls(spec, params)

    @classmethod
    def _init_params(cls, spec: ArchitectureSpec, rng: np.random.Generator, params: Params) -> None:
        raise NotImplementedError

    @classmethod
    def from_arrays(cls, spec: ArchitectureSpec, arrays: Dict[str, np.ndarray]) -> "BasePolicy":
        expected = cls.initialize(spec, np.random.default_rng(0)).params
        if set(expected) != set(arrays):
            missing, extra = set(expected) - set(arrays), set(arrays) - set(expected)
            raise ValueError(f"Parameter names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        params = {}
        for name, template in expected.items():
            if arrays[name].shape != template.shape:
                raise DimensionError(f"Parameter '{name}' has shape {arrays[name].shape}, expected {template.shape}")
            params[name] = Tensor(arrays[name], requires_grad=True)
        return cls(spec, params)

    def context_matrix(self, morphology: Morphology) -> np.ndarray:
        return context_features(morphology, absolute=self.spec.feature_transform)

    def forward(self, context: np.ndarray, states: np.ndarray, mode: ForwardMode = EVAL) -> GaussianAction:
        raise NotImplementedError

    def act(self, morphology: Morphology, states: np.ndarray, mode: ForwardMode = EVAL) -> GaussianAction:
        return self.forward(self.context_matrix(morphology), states, mode)

    def parameter_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in sorted(self.params.items())}

    def parameter_count(self) -> int:
        """מספר הסקלרים המאוחסנים, ללא וקטור ה-log_std"""
        return int(sum(t.size for name, t in self.params.items() if name != "log_std"))

    def copy(self) -> "BasePolicy":
        return type(self).from_arrays(self.spec, self.parameter_arrays())

    def freeze(self) -> "BasePolicy":
        for t in self.params.values():
            t.requires_grad = False
        return self


# ---------------------------------------------------------------------------
# MLP רב-רובוטי עם ריפוד אפסים

def pad_inputs(states: np.ndarray, context: np.ndarray, n_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """ריפוד מצבים (B, N, S) והקשר (N, C) עד n_max איברים, שטוח"""
    batch, n_limbs, state_dim = states.shape
    padded_states = np.zeros((batch, n_max, state_dim))
    padded_states[:, :n_limbs] = states
    padded_context = np.zeros((n_max, context.shape[1]))
    padded_context[:n_limbs] = context
    return padded_states.reshape(batch, -1), padded_context.reshape(-1)


def mlp_policy_forward(params: Params, spec: ArchitectureSpec, padded_state: np.ndarray,
                       padded_context: np.ndarray, mode: ForwardMode = EVAL) -> GaussianAction:
    """x_i = [s_i, c_i] לכל חריץ, שרשור שטוח, ואז MLP; הפלט באורך n_max*A"""
    state_len = spec.n_max * spec.state_dim_per_limb
    context_len = spec.n_max * spec.context_dim
    padded_state = np.asarray(padded_state, dtype=np.float64)
    if padded_state.ndim == 1:
        padded_state = padded_state[None]
    if padded_state.shape[-1] != state_len or np.shape(padded_context) != (context_len,):
        raise DimensionError(
            f"Expected padded state length {state_len} and context length {context_len}, "
            f"got {padded_state.shape} and {np.shape(padded_context)}"
        )
    batch = padded_state.shape[0]
    slots = np.concatenate([
        padded_state.reshape(batch, spec.n_max, spec.state_dim_per_limb),
        np.broadcast_to(np.reshape(padded_context, (1, spec.n_max, spec.context_dim)),
                        (batch, spec.n_max, spec.context_dim)),
    ], axis=-1)
    x = Tensor(slots.reshape(batch, -1))
    mean = mlp(params, "mlp", x, spec.hidden_layers + 1,
               hidden_dropout=mode.hidden_dropout, train=mode.train, rng=mode.rng)
    return GaussianAction(mean=mean, log_std=limb_log_std(params, spec.n_max))


class MultiRobotMLP(BasePolicy):
    kind = ArchitectureKind.MULTI_ROBOT_MLP

    @classmethod
    def _init_params(cls, spec, rng, params):
        dims = ([spec.n_max * (spec.state_dim_per_limb + spec.context_dim)]
                + [spec.hidden_width] * spec.hidden_layers
                + [spec.n_max * spec.action_dim_per_limb])
        init_mlp(params, rng, "mlp", dims)
        _init_log_std(params, spec.action_dim_per_limb)

    def forward(self, context, states, mode=EVAL):
        context = _check_context(context, self.spec)
        n_limbs = context.shape[0]
        states = _check_states(states, n_limbs, self.spec.state_dim_per_limb)
        padded_state, padded_context = pad_inputs(states, context, self.spec.n_max)
        action = mlp_policy_forward(self.params, self.spec, padded_state, padded_context, mode)
        width = n_limbs * self.spec.action_dim_per_limb
        return GaussianAction(mean=take(action.mean, (slice(None), slice(0, width))),
                              log_std=limb_log_std(self.params, n_limbs))


# ---------------------------------------------------------------------------
# טרנספורמר

def precompute_attention(params: Params, spec: ArchitectureSpec, context: np.ndarray) -> List[Tensor]:
    """משקלי הקשב הקבועים של כל שכבה, מחושבים מההקשר בלבד (פעם אחת לרובוט)"""
    tokens = linear(params, "ctx_embed", Tensor(context))
    return [fixed_attention_weights(params, f"block.{j}", tokens, spec.attn_heads) for j in range(spec.attn_layers)]


def transformer_policy_forward(params: Params, spec: ArchitectureSpec, context: np.ndarray, states: np.ndarray,
                               mode: ForwardMode = EVAL,
                               attention: Optional[Sequence[Tensor]] = None) -> GaussianAction:
    """הטמעה לכל איבר של [s_i, c_i], בלוקי קשב בין איברים, ומפענח MLP לכל איבר"""
    context = _check_context(context, spec)
    n_limbs = context.shape[0]
    states = _check_states(states, n_limbs, spec.state_dim_per_limb)
    batch = states.shape[0]

    tokens = np.concatenate([states, np.broadcast_to(context, (batch, *context.shape))], axis=-1)
    x = linear(params, "embed", Tensor(tokens))
    if spec.fixed_attention and attention is None:
        attention = precompute_attention(params, spec, context)
    for j in range(spec.attn_layers):
        x = attention_block(params, f"block.{j}", x, spec.attn_heads,
                            attention[j] if spec.fixed_attention else None)
    out = mlp(params, "decoder", x, 2)
    mean = reshape(out, (batch, n_limbs * spec.action_dim_per_limb))
    return GaussianAction(mean=mean, log_std=limb_log_std(params, n_limbs))


class TransformerPolicy(BasePolicy):
    kind = ArchitectureKind.TRANSFORMER

    @classmethod
    def _init_params(cls, spec, rng, params):
        init_linear(params, rng, "embed", spec.state_dim_per_limb + spec.context_dim, spec.embed_dim)
        if spec.fixed_attention:
            init_linear(params, rng, "ctx_embed", spec.context_dim, spec.embed_dim)
        for j in range(spec.attn_layers):
            init_attention_block(params, rng, f"block.{j}", spec.embed_dim, spec.attn_hidden, spec.fixed_attention)
        init_mlp(params, rng, "decoder", [spec.embed_dim, spec.decoder_hidden, spec.action_dim_per_limb])
        _init_log_std(params, spec.action_dim_per_limb)

    def precompute_attention(self, context: np.ndarray) -> List[Tensor]:
        if not self.spec.fixed_attention:
            raise ValueError("precompute_attention requires a fixed-attention transformer")
        return precompute_attention(self.params, self.spec, _check_context(context, self.spec))

    def forward(self, context, states, mode=EVAL, attention=None):
        return transformer_policy_forward(self.params, self.spec, context, states, mode, attention)


# ---------------------------------------------------------------------------
# HyperDistill

def context_encode(params: Params, spec: ArchitectureSpec, context: np.ndarray,
                   mode: ForwardMode = EVAL) -> Tuple[Tensor, Tensor]:
    """הטמעת הקשר לכל איבר e_i (N x E) וממוצע e_m (E)

    dropout מופעל על e_i, אחר כך ממוצע, ואחר כך dropout על e_m.
    """
    c = Tensor(context)
    if spec.context_encoder == ContextEncoderKind.MLP:
        e = mlp(params, "encoder.mlp", c, spec.encoder_layers, activate_last=True)
    else:
        n_limbs = context.shape[0]
        x = reshape(linear(params, "encoder.embed", c), (1, n_limbs, spec.context_embed_dim))
        for j in range(spec.encoder_layers):
            x = attention_block(params, f"encoder.block.{j}", x, spec.encoder_heads)
        e = reshape(norm(params, "encoder.norm", x), (n_limbs, spec.context_embed_dim))
    e = dropout(e, mode.context_dropout, mode.train, mode.rng)
    e_m = dropout(reduce_mean(e, axis=0), mode.context_dropout, mode.train, mode.rng)
    return e, e_m


@dataclass
class GeneratedLayers:
    """פרמטרי ה-MLP הבסיסי כטנזורים (עדיין מחוברים לגרף של רשת-העל)"""
    input_weight: Tensor            # (N, H, S)
    input_bias: Tensor              # (N, H)
    hidden: List[Tuple[Tensor, Tensor]]  # (H, H), (H,)
    output_weight: Tensor           # (N, A, H)
    output_bias: Tensor             # (N, A)


def generate_layers(params: Params, spec: ArchitectureSpec, context: np.ndarray,
                    mode: ForwardMode = EVAL) -> GeneratedLayers:
    e, e_m = context_encode(params, spec, context, mode)
    n_limbs = context.shape[0]
    hidden_width, state_dim, action_dim = spec.hidden_width, spec.state_dim_per_limb, spec.action_dim_per_limb
    pooled = reshape(e_m, (1, spec.context_embed_dim))
    hidden = [
        (reshape(linear(params, f"head.hidden_weight.{l}", pooled), (hidden_width, hidden_width)),
         reshape(linear(params, f"head.hidden_bias.{l}", pooled), (hidden_width,)))
        for l in range(spec.hidden_layers - 1)
    ]
    return GeneratedLayers(
        input_weight=reshape(linear(params, "head.in_weight", e), (n_limbs, hidden_width, state_dim)),
        input_bias=linear(params, "head.in_bias", e),
        hidden=hidden,
        output_weight=reshape(linear(params, "head.out_weight", e), (n_limbs, action_dim, hidden_width)),
        output_bias=linear(params, "head.out_bias", e),
    )


def base_mlp_forward(layers: GeneratedLayers, states: np.ndarray, mode: ForwardMode = EVAL) -> Tensor:
    """h0 = tanh(sum_i W_i s_i + b_i), שכבות נסתרות משותפות, a_i = W_i^out h + b_i^out"""
    n_limbs, hidden_width, state_dim = layers.input_weight.shape
    action_dim = layers.output_weight.shape[1]
    batch = states.shape[0]
    x = Tensor(states.reshape(batch, n_limbs * state_dim))
    w_in = reshape(transpose(layers.input_weight, (0, 2, 1)), (n_limbs * state_dim, hidden_width))
    h = tanh(matmul(x, w_in) + reduce_sum(layers.input_bias, axis=0))
    h = dropout(h, mode.hidden_dropout, mode.train, mode.rng)
    for weight, bias in layers.hidden:
        h = tanh(matmul(h, transpose(weight)) + bias)
        h = dropout(h, mode.hidden_dropout, mode.train, mode.rng)
    w_out = transpose(reshape(layers.output_weight, (n_limbs * action_dim, hidden_width)))
    return matmul(h, w_out) + reshape(layers.output_bias, (n_limbs * action_dim,))


def hyperdistill_forward(params: Params, spec: ArchitectureSpec, context: np.ndarray, states: np.ndarray,
                         mode: ForwardMode = EVAL) -> GaussianAction:
    """יצירת הפרמטרים והרצת ה-MLP הבסיסי, גזיר מקצה לקצה; x_i = s_i בלבד"""
    context = _check_context(context, spec)
    states = _check_states(states, context.shape[0], spec.state_dim_per_limb)
    layers = generate_layers(params, spec, context, mode)
    return GaussianAction(mean=base_mlp_forward(layers, states, mode),
                          log_std=limb_log_std(params, context.shape[0]))


def _init_head(params: Params, rng: np.random.Generator, prefix: str, embed_dim: int, out_dim: int,
               fan_in: int, with_bias: bool) -> None:
    """משקלי ראש בהגבר 1/sqrt(E); ההטיה מעניקה לפרמטרים הנוצרים שונות 1/fan_in"""
    weight = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, out_dim)) / np.sqrt(fan_in)
    bias = rng.normal(0.0, 1.0 / np.sqrt(fan_in), out_dim) if with_bias else np.zeros(out_dim)
    params[f"{prefix}.weight"] = Tensor(weight, requires_grad=True)
    params[f"{prefix}.bias"] = Tensor(bias, requires_grad=True)


class HyperDistillPolicy(BasePolicy):
    kind = ArchitectureKind.HYPERNETWORK

    @classmethod
    def _init_params(cls, spec, rng, params):
        embed = spec.context_embed_dim
        if spec.context_encoder == ContextEncoderKind.MLP:
            init_mlp(params, rng, "encoder.mlp", [spec.context_dim] + [embed] * spec.encoder_layers)
        else:
            init_linear(params, rng, "encoder.embed", spec.context_dim, embed)
            for j in range(spec.encoder_layers):
                init_attention_block(params, rng, f"encoder.block.{j}", embed, spec.encoder_hidden)
            init_layernorm(params, "encoder.norm", embed)

        hidden_width, state_dim, action_dim = spec.hidden_width, spec.state_dim_per_limb, spec.action_dim_per_limb
        # ה-fan-in של שכבת הקלט סוכם על פני כמחצית מהאיברים האפשריים
        input_fan_in = state_dim * max(1, spec.n_max // 2)
        _init_head(params, rng, "head.in_weight", embed, hidden_width * state_dim, input_fan_in, True)
        _init_head(params, rng, "head.in_bias", embed, hidden_width, input_fan_in, False)
        for l in range(spec.hidden_layers - 1):
            _init_head(params, rng, f"head.hidden_weight.{l}", embed, hidden_width * hidden_width, hidden_width, True)
            _init_head(params, rng, f"head.hidden_bias.{l}", embed, hidden_width, hidden_width, False)
        _init_head(params, rng, "head.out_weight", embed, action_dim * hidden_width, hidden_width, True)
        _init_head(params, rng, "head.out_bias", embed, action_dim, hidden_width, False)
        _init_log_std(params, action_dim)

    def forward(self, context, states, mode=EVAL):
        return hyperdistill_forward(self.params, self.spec, context, states, mode)

    def compile(self, morphology: Morphology) -> "CompiledPolicy":
        return hn_generate(self.params, self.spec, self.context_matrix(morphology))


# ---------------------------------------------------------------------------
# MLP מקומפל

class CompiledPolicy:
    """MLP לרובוט יחיד שנוצר על ידי רשת-העל; רץ בלי רשת-העל"""

    kind = ArchitectureKind.COMPILED_MLP

    def __init__(self, spec: ArchitectureSpec, input_weight: np.ndarray, input_bias: np.ndarray,
                 hidden_weights: Sequence[np.ndarray], hidden_biases: Sequence[np.ndarray],
                 output_weight: np.ndarray, output_bias: np.ndarray, log_std: np.ndarray):
        self.input_weight = np.array(input_weight, dtype=np.float64)
        self.input_bias = np.array(input_bias, dtype=np.float64)
        self.hidden_weights = [np.array(w, dtype=np.float64) for w in hidden_weights]
        self.hidden_biases = [np.array(b, dtype=np.float64) for b in hidden_biases]
        self.output_weight = np.array(output_weight, dtype=np.float64)
        self.output_bias = np.array(output_bias, dtype=np.float64)
        self.log_std = np.array(log_std, dtype=np.float64)

        n_limbs, hidden_width, state_dim = self.input_weight.shape
        action_dim = self.output_weight.shape[1]
        expected = {
            "input_bias": ((n_limbs, hidden_width), self.input_bias.shape),
            "output_weight": ((n_limbs, action_dim, hidden_width), self.output_weight.shape),
            "output_bias": ((n_limbs, action_dim), self.output_bias.shape),
            "log_std": ((n_limbs * action_dim,), self.log_std.shape),
        }
        for name, (want, got) in expected.items():
            if want != got:
                raise DimensionError(f"CompiledPolicy {name} has shape {got}, expected {want}")
        if len(self.hidden_weights) != len(self.hidden_biases):
            raise DimensionError("Hidden weight and bias counts differ")
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            if w.shape != (hidden_width, hidden_width) or b.shape != (hidden_width,):
                raise DimensionError(f"Hidden layer shapes {w.shape}, {b.shape} do not match width {hidden_width}")

        self.spec = spec.model_copy(update={
            "kind": ArchitectureKind.COMPILED_MLP,
            "hidden_layers": len(self.hidden_weights) + 1,
            "hidden_width": hidden_width,
            "state_dim_per_limb": state_dim,
            "action_dim_per_limb": action_dim,
        })

    @property
    def limb_count(self) -> int:
        return self.input_weight.shape[0]

    def layers(self) -> GeneratedLayers:
        return GeneratedLayers(
            input_weight=Tensor(self.input_weight),
            input_bias=Tensor(self.input_bias),
            hidden=[(Tensor(w), Tensor(b)) for w, b in zip(self.hidden_weights, self.hidden_biases)],
            output_weight=Tensor(self.output_weight),
            output_bias=Tensor(self.output_bias),
        )

    def context_matrix(self, morphology: Morphology) -> np.ndarray:
        return context_features(morphology, absolute=self.spec.feature_transform)

    def forward(self, context: Optional[np.ndarray], states: np.ndarray, mode: ForwardMode = EVAL) -> GaussianAction:
        """ההקשר מתעלם: הוא כבר מקודד בפרמטרים"""
        return compiled_forward(self, states)

    def act(self, morphology: Morphology, states: np.ndarray, mode: ForwardMode = EVAL) -> GaussianAction:
        if morphology.limb_count != self.limb_count:
            raise DimensionError(f"Policy compiled for {self.limb_count} limbs, got {morphology.limb_count}")
        return compiled_forward(self, states)

    def parameter_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {
            "input_weight": self.input_weight,
            "input_bias": self.input_bias,
            "output_weight": self.output_weight,
            "output_bias": self.output_bias,
            "log_std": self.log_std,
        }
        for l, (w, b) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            arrays[f"hidden_weight.{l}"] = w
            arrays[f"hidden_bias.{l}"] = b
        return {name: arrays[name].copy() for name in sorted(arrays)}

    def parameter_count(self) -> int:
        return int(sum(a.size for name, a in self.parameter_arrays().items() if name != "log_std"))

    @classmethod
    def from_arrays(cls, spec: ArchitectureSpec, arrays: Dict[str, np.ndarray]) -> "CompiledPolicy":
        depth = spec.hidden_layers - 1
        try:
            return cls(
                spec,
                arrays["input_weight"], arrays["input_bias"],
                [arrays[f"hidden_weight.{l}"] for l in range(depth)],
                [arrays[f"hidden_bias.{l}"] for l in range(depth)],
                arrays["output_weight"], arrays["output_bias"], arrays["log_std"],
            )
        except KeyError as e:
            raise ValueError(f"Compiled policy is missing parameter {e}") from None


def hn_generate(params: Params, spec: ArchitectureSpec, context: np.ndarray,
                mode: ForwardMode = EVAL) -> CompiledPolicy:
    """קומפילציה: הרצת רשת-העל פעם אחת והעתקת הפרמטרים שנוצרו"""
    context = _check_context(context, spec)
    layers = generate_layers(params, spec, context, mode)
    log_std = limb_log_std(params, context.shape[0])
    return CompiledPolicy(
        spec,
        layers.input_weight.data, layers.input_bias.data,
        [w.data for w, _ in layers.hidden], [b.data for _, b in layers.hidden],
        layers.output_weight.data, layers.output_bias.data, log_std.data,
    )


def compiled_forward(policy: CompiledPolicy, states: np.ndarray) -> GaussianAction:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    if states.ndim != 3 or states.shape[1] != policy.limb_count:
        raise DimensionError(f"Policy compiled for {policy.limb_count} limbs, got states of shape {states.shape}")
    states = _check_states(states, policy.limb_count, policy.spec.state_dim_per_limb)
    return GaussianAction(mean=base_mlp_forward(policy.layers(), states), log_std=Tensor(policy.log_std))


# ---------------------------------------------------------------------------
# MLP לרובוט יחיד (מורים פרטניים)

class SingleRobotMLP(BasePolicy):
    """MLP רגיל לרובוט אחד: מצבים משורשרים (N*S) -> ממוצעים (N*A); n_max = N"""

    kind = ArchitectureKind.SINGLE_ROBOT_MLP

    @classmethod
    def _init_params(cls, spec, rng, params):
        dims = ([spec.n_max * spec.state_dim_per_limb]
                + [spec.hidden_width] * spec.hidden_layers
                + [spec.n_max * spec.action_dim_per_limb])
        init_mlp(params, rng, "mlp", dims)
        _init_log_std(params, spec.action_dim_per_limb, value=-1.0)

    def forward(self, context, states, mode=EVAL):
        states = _check_states(states, self.spec.n_max, self.spec.state_dim_per_limb)
        x = Tensor(states.reshape(states.shape[0], -1))
        mean = mlp(self.params, "mlp", x, self.spec.hidden_layers + 1)
        return GaussianAction(mean=mean, log_std=limb_log_std(self.params, self.spec.n_max))


POLICY_CLASSES: Dict[ArchitectureKind, Type[BasePolicy]] = {
    ArchitectureKind.MULTI_ROBOT_MLP: MultiRobotMLP,
    ArchitectureKind.TRANSFORMER: TransformerPolicy,
    ArchitectureKind.HYPERNETWORK: HyperDistillPolicy,
    ArchitectureKind.SINGLE_ROBOT_MLP: SingleRobotMLP,
}


def build_policy(spec: ArchitectureSpec, rng: np.random.Generator) -> BasePolicy:
    try:
        cls = POLICY_CLASSES[spec.kind]
    except KeyError:
        raise ValueError(f"Cannot initialize a policy of kind {spec.kind.value}") from None
    policy = cls.initialize(spec, rng)
    logger.debug(f"Initialized {spec.kind.value} policy with {policy.parameter_count()} parameters")
    return policy


def policy_from_arrays(spec: ArchitectureSpec, arrays: Dict[str, np.ndarray]):
    if spec.kind == ArchitectureKind.COMPILED_MLP:
        return CompiledPolicy.from_arrays(spec, arrays)
    return POLICY_CLASSES[spec.kind].from_arrays(spec, arrays)
