"""
מנוע הניסויים: מורה אוניברסלי זרוע, איסוף נתונים, הערכה ואבלציות
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.architectures import EVAL, BasePolicy, CompiledPolicy, TransformerPolicy, build_policy
from src.data_generator import MorphologyGenerator
from src.data_schemas import (
    AblationKind, ArchitectureSpec, ContextEncoderKind, DropoutSite, EvaluationResult, ExperimentConfig,
    StudentKind, TeacherMode,
)
from src.distillation import (
    TEACHER_LOG_STD, PerRobotTeachers, Teacher, TransitionDataset, distill, fit_single_robot_teachers,
    kl_elementwise,
)
from src.morphology import Morphology, context_features
from src.numerics import derive_seed, seed_stream

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["ablation", "arm", "seed", "split", "mean_kl", "stderr", "epochs", "wall_seconds"]


# ---------------------------------------------------------------------------
# מורה אוניברסלי

class UniversalOracle:
    """טרנספורמר קפוא עם קשב קבוע; log_std קבוע -1"""

    def __init__(self, policy: TransformerPolicy):
        if not policy.spec.fixed_attention:
            raise ValueError("The universal oracle must use fixed attention")
        self.policy = policy.freeze()
        self.policy.params["log_std"].data[:] = TEACHER_LOG_STD
        self.spec = policy.spec

    def act(self, morphology: Morphology, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """ממוצעים (B, N*A) ו-log_std (B, N*A); ההקשר תמיד במיקומים מוחלטים"""
        action = self.policy.forward(context_features(morphology), states)
        return action.mean.data, np.broadcast_to(action.log_std.data, action.mean.shape).copy()


def make_oracle(seed: int, spec: ArchitectureSpec) -> UniversalOracle:
    if not spec.fixed_attention:
        spec = spec.model_copy(update={"fixed_attention": True})
    policy = build_policy(spec, seed_stream(seed, "oracle"))
    logger.info(f"Built universal oracle (seed={seed}, {policy.parameter_count()} parameters)")
    return UniversalOracle(policy)


# ---------------------------------------------------------------------------
# איסוף והערכה

def collect(teacher: Teacher, morphologies: Sequence[Morphology], transitions_per_morph: int,
            rng: np.random.Generator, state_dim: int) -> TransitionDataset:
    """מצבים לכל איבר מ-N(0,1), ותשובות המורה עליהם"""
    dataset = TransitionDataset()
    for morphology in morphologies:
        states = rng.standard_normal((transitions_per_morph, morphology.limb_count, state_dim))
        means, log_stds = teacher.act(morphology, states)
        dataset.add(morphology.id, states, means, log_stds)
    logger.info(f"Collected {len(dataset)} transitions from {len(morphologies)} morphologies")
    return dataset


def evaluate(student, oracle: Teacher, morphologies: Sequence[Morphology], n_eval_states: int,
             rng: np.random.Generator, state_dim: int) -> EvaluationResult:
    """KL(oracle||student) ממוצע לממד פעולה על מצבים טריים, לכל מורפולוגיה ובממוצע"""
    per_morphology: Dict[str, float] = {}
    for morphology in morphologies:
        states = rng.standard_normal((n_eval_states, morphology.limb_count, state_dim))
        teacher_mean, teacher_log_std = oracle.act(morphology, states)
        if isinstance(student, (BasePolicy, CompiledPolicy)):
            action = student.act(morphology, states, EVAL)
            student_mean, student_log_std = action.mean.data, action.log_std.data
        else:
            student_mean, student_log_std = student.act(morphology, states)
        kl = kl_elementwise(teacher_mean, teacher_log_std, student_mean, student_log_std)
        per_morphology[morphology.id] = float(np.mean(kl.data))
    values = np.array(list(per_morphology.values()))
    stderr = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return EvaluationResult(per_morphology=per_morphology, mean_kl=float(np.mean(values)), stderr=stderr)


# ---------------------------------------------------------------------------
# אבלציות

@dataclass(frozen=True)
class ArmPlan:
    """זרוע אחת של אבלציה"""
    name: str
    student: StudentKind = StudentKind.HYPERDISTILL
    teacher_mode: TeacherMode = TeacherMode.UNIVERSAL_ORACLE
    n_pd: Optional[int] = None
    dropout_site: Optional[DropoutSite] = None
    spec_overrides: Tuple[Tuple[str, object], ...] = ()
    single_robot: bool = False
    robot_eval: bool = False


def ablation_arms(which: AblationKind, config: ExperimentConfig) -> List[ArmPlan]:
    if which == AblationKind.TEACHER_CHOICE:
        return [
            ArmPlan(f"{teacher.value}->{student.value}", student=student, teacher_mode=teacher)
            for teacher in TeacherMode
            for student in (StudentKind.HYPERDISTILL, StudentKind.TRANSFORMER_ORACLE_SIZED)
        ]
    if which == AblationKind.PD_COUNT:
        return [
            ArmPlan(f"{student.value}/pd_{count}", student=student, n_pd=count)
            for student in (StudentKind.HYPERDISTILL, StudentKind.TRANSFORMER_ORACLE_SIZED)
            for count in config.pd_counts
        ]
    if which == AblationKind.DROPOUT:
        return [ArmPlan(site.value, dropout_site=site) for site in DropoutSite]
    if which == AblationKind.CONTEXT_ENCODER:
        return [ArmPlan(kind.value, spec_overrides=(("context_encoder", kind),)) for kind in ContextEncoderKind]
    if which == AblationKind.FEATURE_TRANSFORM:
        return [
            ArmPlan("absolute", spec_overrides=(("feature_transform", True),)),
            ArmPlan("relative", spec_overrides=(("feature_transform", False),)),
        ]
    if which == AblationKind.STUDENT_MENU:
        return [ArmPlan(kind.value, student=kind) for kind in StudentKind]
    if which == AblationKind.SINGLE_ROBOT_COMPRESSION:
        return [
            ArmPlan("universal", student=StudentKind.TRANSFORMER_COMPRESSED, robot_eval=True),
            ArmPlan("single_robot", student=StudentKind.TRANSFORMER_COMPRESSED, single_robot=True, robot_eval=True),
        ]
    raise ValueError(f"Unknown ablation: {which}")


@dataclass
class _ArmOutcome:
    rows: List[Dict[str, object]] = field(default_factory=list)
    loss_trace: List[float] = field(default_factory=list)


def _run_arm(which: AblationKind, plan: ArmPlan, config: ExperimentConfig, seed: int) -> _ArmOutcome:
    """ריצת זרוע אחת על זרע אחד; כל האקראיות מזרמים בעלי שם"""
    started = time.perf_counter()
    generator = MorphologyGenerator(config.n_max)
    variants = (plan.n_pd // config.n_train_morphs - 1) if plan.n_pd else config.variants_per_base
    splits = generator.generate_splits(config, seed, variants)
    train, test = splits["train"], splits["test"]
    oracle = make_oracle(derive_seed(seed, "oracle"), config.oracle_spec())

    if plan.teacher_mode == TeacherMode.PER_ROBOT_MLPS:
        fits = fit_single_robot_teachers(
            oracle, train, config.state_dim, config.action_dim,
            config.teacher_fit_config(derive_seed(seed, "teacher-fit")),
        )
        teacher: Teacher = PerRobotTeachers({fit.morphology_id: fit.policy for fit in fits})
    else:
        teacher = oracle
    # בבחירת המורה שני המורים מקבלים את אותם רובוטים ואותה כמות רשומות
    pd_set = train if which == AblationKind.TEACHER_CHOICE else splits["pd"]

    if plan.single_robot:
        pd_set, train, test = train[:1], train[:1], []
    per_morph = max(1, (config.transitions_per_morph * config.n_train_morphs) // len(pd_set)) \
        if plan.n_pd else config.transitions_per_morph
    dataset = collect(teacher, pd_set, per_morph, seed_stream(seed, "collect"), config.state_dim)

    overrides = dict(plan.spec_overrides)
    spec = config.student_spec(plan.student, **overrides)
    student = build_policy(spec, seed_stream(seed, "init"))
    distill_config = config.distill_config(seed=seed, ablation=True)
    if plan.dropout_site is not None:
        distill_config = distill_config.model_copy(update={"dropout_site": plan.dropout_site})
    result = distill(student, dataset, pd_set, distill_config)

    wall = time.perf_counter() - started if config.record_wall_time else 0.0
    eval_rng = seed_stream(seed, "eval")
    outcome = _ArmOutcome(loss_trace=list(result.loss_trace))
    splits_to_eval = [("robot", train[:1])] if plan.robot_eval else [("train", train), ("test", test)]
    for split, morphs in splits_to_eval:
        evaluation = evaluate(student, oracle, morphs, config.n_eval_states, eval_rng, config.state_dim)
        outcome.rows.append({
            "ablation": which.value, "arm": plan.name, "seed": seed, "split": split,
            "mean_kl": evaluation.mean_kl, "stderr": evaluation.stderr,
            "epochs": distill_config.epochs, "wall_seconds": round(wall, 3),
        })
    logger.info(
        f"[{which.value}] arm={plan.name} seed={seed}: "
        + ", ".join(f"{row['split']} KL={row['mean_kl']:.5f}" for row in outcome.rows)
    )
    return outcome


def _failed_rows(which: AblationKind, plan: ArmPlan, seed: int, epochs: int) -> List[Dict[str, object]]:
    splits = ["robot"] if plan.robot_eval else ["train", "test"]
    return [
        {"ablation": which.value, "arm": plan.name, "seed": seed, "split": split,
         "mean_kl": float("nan"), "stderr": float("nan"), "epochs": epochs, "wall_seconds": 0.0}
        for split in splits
    ]


@dataclass
class AblationResult:
    results: pd.DataFrame
    summary: pd.DataFrame
    loss_traces: Dict[Tuple[str, int], List[float]]


def repeat_seeds(config: ExperimentConfig) -> List[int]:
    return [derive_seed(config.seed, f"repeat/{r}") for r in range(config.repeats)]


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """חציון, ממוצע ושגיאת תקן על פני הזרעים לכל זרוע ופיצול"""
    grouped = results.groupby(["ablation", "arm", "split"], sort=False)["mean_kl"]
    summary = grouped.agg(
        median_kl="median",
        mean_kl="mean",
        stderr=lambda s: float(s.std(ddof=1) / np.sqrt(s.count())) if s.count() > 1 else 0.0,
        seeds="count",
    )
    return summary.reset_index()


def run_ablation(which: AblationKind, config: ExperimentConfig,
                 progress: Optional[Callable[[str], None]] = None) -> AblationResult:
    """כל צירופי הזרועות והזרעים, במקביל, ממוזגים בסדר מפתחות קבוע"""
    which = AblationKind(which)
    arms = ablation_arms(which, config)
    seeds = repeat_seeds(config)
    jobs = [(arm_index, seed_index, plan, seed)
            for arm_index, plan in enumerate(arms) for seed_index, seed in enumerate(seeds)]
    logger.info(f"Running ablation {which.value}: {len(arms)} arms x {len(seeds)} seeds")

    outcomes: Dict[Tuple[int, int], _ArmOutcome] = {}
    epochs = config.distill_config(ablation=True).epochs
    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        future_to_job = {executor.submit(_run_arm, which, plan, config, seed): (a, s, plan, seed)
                         for a, s, plan, seed in jobs}
        for future in as_completed(future_to_job):
            arm_index, seed_index, plan, seed = future_to_job[future]
            try:
                outcomes[(arm_index, seed_index)] = future.result()
            except Exception as e:
                logger.warning(f"Sub-run {plan.name} seed={seed} failed: {e}")
                outcomes[(arm_index, seed_index)] = _ArmOutcome(rows=_failed_rows(which, plan, seed, epochs))
            if progress is not None:
                progress(f"{plan.name}/{seed}")

    rows, traces = [], {}
    for arm_index, seed_index, plan, seed in jobs:
        outcome = outcomes[(arm_index, seed_index)]
        rows.extend(outcome.rows)
        traces[(plan.name, seed)] = outcome.loss_trace
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return AblationResult(results=results, summary=summarize(results), loss_traces=traces)
