"""
סכימות נתונים ולוולידציה למערכת HyperDistill
"""
from typing import Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from enum import Enum


class JointType(str, Enum):
    HINGE_X = "hinge_x"
    HINGE_Y = "hinge_y"
    HINGE_Z = "hinge_z"


class ArchitectureKind(str, Enum):
    MULTI_ROBOT_MLP = "multi_robot_mlp"
    TRANSFORMER = "transformer"
    HYPERNETWORK = "hypernetwork"
    COMPILED_MLP = "compiled_mlp"
    SINGLE_ROBOT_MLP = "single_robot_mlp"


class ContextEncoderKind(str, Enum):
    MLP = "mlp"
    TRANSFORMER = "transformer"


class DropoutSite(str, Enum):
    NONE = "none"
    CONTEXT_EMBEDDING = "context_embedding"
    BASE_MLP_HIDDEN = "base_mlp_hidden"


class LrSchedule(str, Enum):
    """קצב למידה קבוע או דעיכת קוסינוס עד lr * lr_floor"""
    CONSTANT = "constant"
    COSINE = "cosine"


class TeacherMode(str, Enum):
    UNIVERSAL_ORACLE = "universal_oracle"
    PER_ROBOT_MLPS = "per_robot_mlps"


class StudentKind(str, Enum):
    """תפריט הסטודנטים להשוואה"""
    HYPERDISTILL = "hyperdistill"
    MULTI_ROBOT_MLP = "multi_robot_mlp"
    TRANSFORMER_COMPRESSED = "transformer_compressed"
    TRANSFORMER_ORACLE_SIZED = "transformer_oracle_sized"


class AblationKind(str, Enum):
    TEACHER_CHOICE = "teacher_choice"
    PD_COUNT = "pd_count"
    DROPOUT = "dropout"
    CONTEXT_ENCODER = "context_encoder"
    FEATURE_TRANSFORM = "feature_transform"
    STUDENT_MENU = "student_menu"
    SINGLE_ROBOT_COMPRESSION = "single_robot_compression"


class ArchitectureSpec(BaseModel):
    """היפר-פרמטרים של כל אחת מארכיטקטורות המדיניות"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ArchitectureKind
    hidden_layers: int = Field(2, ge=1)
    hidden_width: int = Field(256, ge=1)
    embed_dim: int = Field(128, ge=1)
    attn_layers: int = Field(5, ge=1)
    attn_heads: int = Field(2, ge=1)
    attn_hidden: int = Field(1024, ge=1)
    decoder_hidden: int = Field(64, ge=1)
    fixed_attention: bool = False
    context_encoder: ContextEncoderKind = ContextEncoderKind.TRANSFORMER
    context_embed_dim: int = Field(64, ge=1)
    encoder_layers: int = Field(2, ge=1)
    encoder_heads: int = Field(2, ge=1)
    encoder_hidden: int = Field(128, ge=1)
    state_dim_per_limb: int = Field(13, ge=1)
    action_dim_per_limb: int = Field(1, ge=1)
    context_dim: int = Field(15, ge=1)
    n_max: int = Field(12, ge=1)
    feature_transform: bool = True

    @model_validator(mode="after")
    def validate_heads(self):
        if self.embed_dim % self.attn_heads != 0:
            raise ValueError(
                f"embed_dim ({self.embed_dim}) must be divisible by attn_heads ({self.attn_heads})"
            )
        if self.context_embed_dim % self.encoder_heads != 0:
            raise ValueError(
                f"context_embed_dim ({self.context_embed_dim}) must be divisible by "
                f"encoder_heads ({self.encoder_heads})"
            )
        return self


class DistillConfig(BaseModel):
    """הגדרות לולאת הזיקוק"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(150, ge=0)
    minibatch: int = Field(5120, ge=1)
    lr: float = Field(3e-4, gt=0)
    lr_schedule: LrSchedule = LrSchedule.CONSTANT
    lr_floor: float = Field(0.1, ge=0, le=1)
    grad_clip: float = Field(0.5, gt=0)
    dropout_p: float = Field(0.1, ge=0, lt=1)
    dropout_site: DropoutSite = DropoutSite.CONTEXT_EMBEDDING
    seed: int = Field(0, ge=0)
    log_every: int = Field(10, ge=1)


class TeacherFitConfig(BaseModel):
    """הגדרות התאמת מורים פרטניים לכל רובוט"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(100, ge=0)
    minibatch: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    samples: int = Field(512, ge=1)
    hidden_width: int = Field(64, ge=1)
    hidden_layers: int = Field(2, ge=1)
    seed: int = Field(0, ge=0)


class ExperimentConfig(BaseModel):
    """קובץ ההגדרות השטוח (key = value) של כל הצינור"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0)

    # מורפולוגיות
    n_train_morphs: int = Field(16, ge=1)
    n_test_morphs: int = Field(16, ge=1)
    pd_counts: List[int] = Field(default_factory=lambda: [16, 32, 64])
    variants_per_base: int = Field(3, ge=0)
    min_limbs: int = Field(3, ge=1)
    max_limbs: int = Field(7, ge=1)
    n_max: int = Field(12, ge=1)
    state_dim: int = Field(6, ge=1)
    action_dim: int = Field(1, ge=1)

    # נתונים והערכה
    transitions_per_morph: int = Field(512, ge=1)
    n_eval_states: int = Field(256, ge=1)
    repeats: int = Field(5, ge=1)
    teacher_mode: TeacherMode = TeacherMode.UNIVERSAL_ORACLE

    # זיקוק
    epochs: int = Field(150, ge=0)
    ablation_epochs: Optional[int] = Field(None, ge=0)
    minibatch: int = Field(512, ge=1)
    lr: float = Field(3e-4, gt=0)
    lr_schedule: LrSchedule = LrSchedule.CONSTANT
    lr_floor: float = Field(0.1, ge=0, le=1)
    grad_clip: float = Field(0.5, gt=0)
    dropout_p: float = Field(0.1, ge=0, lt=1)
    dropout_site: DropoutSite = DropoutSite.CONTEXT_EMBEDDING

    # סטודנט HyperDistill
    context_encoder: ContextEncoderKind = ContextEncoderKind.TRANSFORMER
    feature_transform: bool = True
    student_hidden_layers: int = Field(2, ge=1)
    student_hidden_width: int = Field(64, ge=1)
    student_embed_dim: int = Field(32, ge=1)
    encoder_layers: int = Field(2, ge=1)
    encoder_heads: int = Field(2, ge=1)
    encoder_hidden: int = Field(64, ge=1)

    # מורה אוניברסלי (טרנספורמר עם קשב קבוע)
    oracle_embed_dim: int = Field(32, ge=1)
    oracle_layers: int = Field(2, ge=1)
    oracle_heads: int = Field(2, ge=1)
    oracle_hidden: int = Field(64, ge=1)
    oracle_decoder_hidden: int = Field(32, ge=1)

    # טרנספורמר דחוס
    compressed_embed_dim: int = Field(32, ge=1)
    compressed_layers: int = Field(1, ge=1)
    compressed_heads: int = Field(1, ge=1)
    compressed_hidden: int = Field(64, ge=1)

    # מורים פרטניים
    teacher_fit_epochs: int = Field(100, ge=0)
    teacher_fit_lr: float = Field(1e-3, gt=0)
    teacher_fit_hidden: int = Field(64, ge=1)

    workers: int = Field(1, ge=1)
    record_wall_time: bool = False

    @field_validator("pd_counts", mode="before")
    @classmethod
    def split_pd_counts(cls, v):
        if isinstance(v, str):
            return [int(item) for item in v.split(",") if item.strip()]
        return v

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.max_limbs < self.min_limbs:
            raise ValueError("max_limbs must be greater than or equal to min_limbs")
        if self.max_limbs > self.n_max:
            raise ValueError("max_limbs must not exceed n_max")
        if not self.pd_counts:
            raise ValueError("pd_counts must not be empty")
        for count in self.pd_counts:
            if count < self.n_train_morphs or count % self.n_train_morphs != 0:
                raise ValueError(
                    f"pd_counts entry {count} must be a positive multiple of n_train_morphs "
                    f"({self.n_train_morphs})"
                )
        return self

    def distill_config(self, seed: Optional[int] = None, ablation: bool = False) -> DistillConfig:
        epochs = self.ablation_epochs if ablation and self.ablation_epochs is not None else self.epochs
        return DistillConfig(
            epochs=epochs,
            minibatch=self.minibatch,
            lr=self.lr,
            lr_schedule=self.lr_schedule,
            lr_floor=self.lr_floor,
            grad_clip=self.grad_clip,
            dropout_p=self.dropout_p,
            dropout_site=self.dropout_site,
            seed=self.seed if seed is None else seed,
        )

    def teacher_fit_config(self, seed: Optional[int] = None) -> TeacherFitConfig:
        return TeacherFitConfig(
            epochs=self.teacher_fit_epochs,
            minibatch=min(64, self.transitions_per_morph),
            lr=self.teacher_fit_lr,
            samples=self.transitions_per_morph,
            hidden_width=self.teacher_fit_hidden,
            seed=self.seed if seed is None else seed,
        )

    def _base_fields(self) -> Dict[str, int]:
        return {
            "state_dim_per_limb": self.state_dim,
            "action_dim_per_limb": self.action_dim,
            "n_max": self.n_max,
        }

    def oracle_spec(self) -> ArchitectureSpec:
        return ArchitectureSpec(
            kind=ArchitectureKind.TRANSFORMER,
            embed_dim=self.oracle_embed_dim,
            attn_layers=self.oracle_layers,
            attn_heads=self.oracle_heads,
            attn_hidden=self.oracle_hidden,
            decoder_hidden=self.oracle_decoder_hidden,
            fixed_attention=True,
            **self._base_fields(),
        )

    def student_spec(self, kind: StudentKind = StudentKind.HYPERDISTILL, **overrides) -> ArchitectureSpec:
        """מפרט הסטודנט לפי סוגו, עם דריסות אופציונליות (לאבלציות)"""
        if kind == StudentKind.HYPERDISTILL:
            fields = dict(
                kind=ArchitectureKind.HYPERNETWORK,
                hidden_layers=self.student_hidden_layers,
                hidden_width=self.student_hidden_width,
                context_encoder=self.context_encoder,
                context_embed_dim=self.student_embed_dim,
                encoder_layers=self.encoder_layers,
                encoder_heads=self.encoder_heads,
                encoder_hidden=self.encoder_hidden,
                feature_transform=self.feature_transform,
            )
        elif kind == StudentKind.MULTI_ROBOT_MLP:
            fields = dict(
                kind=ArchitectureKind.MULTI_ROBOT_MLP,
                hidden_layers=self.student_hidden_layers,
                hidden_width=self.student_hidden_width,
                feature_transform=self.feature_transform,
            )
        elif kind == StudentKind.TRANSFORMER_COMPRESSED:
            fields = dict(
                kind=ArchitectureKind.TRANSFORMER,
                embed_dim=self.compressed_embed_dim,
                attn_layers=self.compressed_layers,
                attn_heads=self.compressed_heads,
                attn_hidden=self.compressed_hidden,
                decoder_hidden=self.compressed_embed_dim,
                feature_transform=self.feature_transform,
            )
        elif kind == StudentKind.TRANSFORMER_ORACLE_SIZED:
            fields = self.oracle_spec().model_dump(exclude=set(self._base_fields()))
            fields["feature_transform"] = self.feature_transform
        else:
            raise ValueError(f"Unknown student kind: {kind}")
        fields.update(self._base_fields())
        fields.update(overrides)
        return ArchitectureSpec(**fields)


class EvaluationResult(BaseModel):
    """תוצאת הערכה מול המורה"""
    per_morphology: Dict[str, float]
    mean_kl: float
    stderr: float


class RunManifest(BaseModel):
    """תיעוד ריצה: גרסה, גיבוב הגדרות, תקצירי קבצי קלט ופלט"""
    tool_version: str
    command: str
    config_hash: str
    seed: int
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
