"""
זיקוק מדיניות: מאגר מעברים, מטרת KL ולולאת האימון
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from src.architectures import EVAL, BasePolicy, ForwardMode, SingleRobotMLP, build_policy
from src.data_schemas import ArchitectureKind, ArchitectureSpec, DistillConfig, LrSchedule, TeacherFitConfig
from src.morphology import Morphology
from src.numerics import (
    AdamState, NumericalError, Tensor, adam_step, as_tensor, backward, clip_global_norm, exp,
    named_gradients, reduce_mean, reduce_sum, seed_stream,
)

logger = logging.getLogger(__name__)

TEACHER_LOG_STD = -1.0


class DistillationError(ValueError):
    """מאגר ריק או מזהה מורפולוגיה שאינו קיים"""


class Teacher(Protocol):
    def act(self, morphology: Morphology, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...


# ---------------------------------------------------------------------------
# מאגר מעברים

@dataclass(frozen=True)
class TransitionRecord:
    """דגימת זיקוק יחידה"""
    morphology_id: str
    states: np.ndarray          # (N, S)
    teacher_mean: np.ndarray    # (N*A,)
    teacher_log_std: np.ndarray  # (N*A,)


@dataclass
class _Group:
    states: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray


class TransitionDataset:
    """מאגר מעברים המקובץ לפי מורפולוגיה, בסדר ההוספה"""

    def __init__(self):
        self._groups: Dict[str, _Group] = {}
        self._codes: List[np.ndarray] = []
        self._rows: List[np.ndarray] = []
        # מטמון השרשור; מתאפס בכל add
        self._flat: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def add(self, morphology_id: str, states: np.ndarray, means: np.ndarray, log_stds: np.ndarray) -> None:
        states = np.asarray(states, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        log_stds = np.asarray(log_stds, dtype=np.float64)
        if states.ndim != 3 or means.shape != log_stds.shape or means.shape[0] != states.shape[0]:
            raise DistillationError(
                f"Inconsistent record shapes for {morphology_id}: {states.shape}, {means.shape}, {log_stds.shape}"
            )
        if means.shape[1] % states.shape[1] != 0:
            raise DistillationError(f"Action width {means.shape[1]} is not a multiple of limb count {states.shape[1]}")
        for name, array in (("states", states), ("means", means), ("log_stds", log_stds)):
            if not np.all(np.isfinite(array)):
                raise DistillationError(f"Non-finite {name} for {morphology_id}")

        if morphology_id in self._groups:
            group = self._groups[morphology_id]
            if group.states.shape[1:] != states.shape[1:] or group.means.shape[1] != means.shape[1]:
                raise DistillationError(f"Records for {morphology_id} change shape")
            start = group.states.shape[0]
            group.states = np.concatenate([group.states, states])
            group.means = np.concatenate([group.means, means])
            group.log_stds = np.concatenate([group.log_stds, log_stds])
        else:
            start = 0
            self._groups[morphology_id] = _Group(states, means, log_stds)
        code = list(self._groups).index(morphology_id)
        self._codes.append(np.full(states.shape[0], code, dtype=np.int64))
        self._rows.append(np.arange(start, start + states.shape[0], dtype=np.int64))
        self._flat = None

    def __len__(self) -> int:
        return int(sum(len(rows) for rows in self._rows))

    @property
    def morphology_ids(self) -> List[str]:
        return list(self._groups)

    def _flattened(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._flat is None:
            if self._codes:
                codes, rows = np.concatenate(self._codes), np.concatenate(self._rows)
            else:
                codes, rows = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
            codes.flags.writeable = False
            rows.flags.writeable = False
            self._flat = (codes, rows)
        return self._flat

    @property
    def codes(self) -> np.ndarray:
        return self._flattened()[0]

    @property
    def rows(self) -> np.ndarray:
        return self._flattened()[1]

    def group(self, morphology_id: str) -> _Group:
        return self._groups[morphology_id]

    def records(self) -> Iterator[TransitionRecord]:
        ids = self.morphology_ids
        for code, row in zip(self.codes, self.rows):
            group = self._groups[ids[code]]
            yield TransitionRecord(ids[code], group.states[row], group.means[row], group.log_stds[row])

    def subset(self, morphology_ids: Iterable[str]) -> "TransitionDataset":
        subset = TransitionDataset()
        for morphology_id in morphology_ids:
            group = self._groups[morphology_id]
            subset.add(morphology_id, group.states, group.means, group.log_stds)
        return subset


# ---------------------------------------------------------------------------
# KL

def kl_elementwise(mean1, log_std1, mean2, log_std2) -> Tensor:
    """KL(p1||p2) לכל ממד, עבור גאוסיאנים אלכסוניים

    log(s2/s1) + (s1^2 + (m1-m2)^2) / (2 s2^2) - 1/2, כשיחס השונויות מחושב
    כ-exp(2(log s1 - log s2)) כך ש-KL(p||p) יוצא אפס בדיוק.
    """
    mean1, log_std1, mean2, log_std2 = (as_tensor(x) for x in (mean1, log_std1, mean2, log_std2))
    for t in (mean1, log_std1, mean2, log_std2):
        if not np.all(np.isfinite(t.data)):
            raise NumericalError("kl_diag_gaussian received non-finite input")
    delta = mean1 - mean2
    variance_ratio = exp((log_std1 - log_std2) * 2.0)
    return (log_std2 - log_std1) + variance_ratio * 0.5 + delta * delta * exp(log_std2 * -2.0) * 0.5 - 0.5


def kl_diag_gaussian(mean1, log_std1, mean2, log_std2) -> Tensor:
    """סכום ה-KL על כל הממדים (סקלר)"""
    mean1, mean2 = as_tensor(mean1), as_tensor(mean2)
    if mean1.shape != mean2.shape:
        raise ValueError(f"Mean shapes differ: {mean1.shape} vs {mean2.shape}")
    return reduce_sum(kl_elementwise(mean1, log_std1, mean2, log_std2))


# ---------------------------------------------------------------------------
# לולאת הזיקוק

@dataclass
class DistillResult:
    student: BasePolicy
    loss_trace: List[float] = field(default_factory=list)

    @property
    def final_kl(self) -> Optional[float]:
        return self.loss_trace[-1] if self.loss_trace else None


def iterate_minibatches(n_records: int, minibatch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """ערבוב וחלוקה למיני-באצ'ים; כל רשומה מופיעה פעם אחת בדיוק"""
    order = rng.permutation(n_records)
    for start in range(0, n_records, minibatch):
        yield order[start:start + minibatch]


def minibatch_kl(student: BasePolicy, dataset: TransitionDataset, contexts: Dict[str, np.ndarray],
                 indices: np.ndarray, mode: ForwardMode = EVAL) -> Tuple[Tensor, int]:
    """KL ממוצע לממד פעולה על המיני-באץ'; כל מורפולוגיה מורצת כקבוצה אחת"""
    ids = dataset.morphology_ids
    codes, rows = dataset.codes[indices], dataset.rows[indices]
    total: Optional[Tensor] = None
    dims = 0
    for code in np.unique(codes):
        group = dataset.group(ids[code])
        selected = rows[codes == code]
        action = student.forward(contexts[ids[code]], group.states[selected], mode)
        term = reduce_sum(kl_elementwise(group.means[selected], group.log_stds[selected], action.mean, action.log_std))
        total = term if total is None else total + term
        dims += group.means[selected].size
    return total * (1.0 / dims), dims


def scheduled_lr(config: DistillConfig, step: int, total_steps: int) -> float:
    """קצב הלמידה לצעד step (מאפס); בקוסינוס יורד מ-lr ל-lr * lr_floor בצעד האחרון"""
    if config.lr_schedule == LrSchedule.CONSTANT or total_steps <= 1:
        return config.lr
    progress = min(step, total_steps - 1) / (total_steps - 1)
    floor = config.lr * config.lr_floor
    return floor + 0.5 * (config.lr - floor) * (1.0 + np.cos(np.pi * progress))


def distill(student: BasePolicy, dataset: TransitionDataset, morphologies: Sequence[Morphology],
            config: DistillConfig) -> DistillResult:
    """זיקוק: ערבוב זרוע, KL(מורה||סטודנט), חיתוך נורמה גלובלית ואז Adam"""
    if len(dataset) == 0:
        raise DistillationError("Cannot distill from an empty dataset")
    by_id = {m.id: m for m in morphologies}
    missing = [mid for mid in dataset.morphology_ids if mid not in by_id]
    if missing:
        raise DistillationError(f"Dataset references unknown morphologies: {missing[:5]}")
    contexts = {}
    for mid in dataset.morphology_ids:
        if by_id[mid].limb_count != dataset.group(mid).states.shape[1]:
            raise DistillationError(f"Records for {mid} do not match its limb count {by_id[mid].limb_count}")
        contexts[mid] = student.context_matrix(by_id[mid])

    shuffle_rng = seed_stream(config.seed, "shuffle")
    mode = ForwardMode(train=True, dropout_p=config.dropout_p, dropout_site=config.dropout_site,
                       rng=seed_stream(config.seed, "dropout"))
    state = AdamState()
    result = DistillResult(student=student)
    total_steps = config.epochs * -(-len(dataset) // config.minibatch)

    logger.info(
        f"Distilling {student.spec.kind.value} on {len(dataset)} records from "
        f"{len(dataset.morphology_ids)} morphologies for {config.epochs} epochs"
    )
    for epoch in range(config.epochs):
        weighted, total_dims = 0.0, 0
        for batch_index, indices in enumerate(iterate_minibatches(len(dataset), config.minibatch, shuffle_rng)):
            loss, dims = minibatch_kl(student, dataset, contexts, indices, mode)
            value = loss.item()
            if not np.isfinite(value):
                logger.error(f"Non-finite loss at epoch {epoch}, minibatch {batch_index}")
                raise NumericalError(f"Non-finite distillation loss at epoch {epoch}, minibatch {batch_index}")
            grads, _ = clip_global_norm(named_gradients(student.params, backward(loss)), config.grad_clip)
            state = adam_step(student.params, grads, state, lr=scheduled_lr(config, state.step, total_steps))
            weighted += value * dims
            total_dims += dims
        result.loss_trace.append(weighted / total_dims)
        if (epoch + 1) % config.log_every == 0 or epoch == config.epochs - 1:
            logger.info(f"Epoch {epoch + 1}/{config.epochs}: mean KL per action dim {result.loss_trace[-1]:.6f}")
    return result


def dataset_kl(student: BasePolicy, dataset: TransitionDataset, morphologies: Sequence[Morphology]) -> float:
    """KL ממוצע לממד על כל המאגר, במצב הערכה"""
    by_id = {m.id: m for m in morphologies}
    contexts = {mid: student.context_matrix(by_id[mid]) for mid in dataset.morphology_ids}
    loss, _ = minibatch_kl(student, dataset, contexts, np.arange(len(dataset)))
    return loss.item()


# ---------------------------------------------------------------------------
# מורים פרטניים לכל רובוט

@dataclass
class TeacherFit:
    morphology_id: str
    policy: SingleRobotMLP
    mse: float
    diverged: bool = False


def _fit_one(teacher: Teacher, morphology: Morphology, spec: ArchitectureSpec, config: TeacherFitConfig,
             seed: int) -> TeacherFit:
    policy = build_policy(spec, seed_stream(seed, f"teacher-init/{morphology.id}"))
    rng = seed_stream(seed, f"teacher-data/{morphology.id}")
    states = rng.standard_normal((config.samples, morphology.limb_count, spec.state_dim_per_limb))
    targets, _ = teacher.act(morphology, states)
    shuffle_rng = seed_stream(seed, f"teacher-shuffle/{morphology.id}")
    state = AdamState()

    for epoch in range(config.epochs):
        for indices in iterate_minibatches(config.samples, config.minibatch, shuffle_rng):
            residual = policy.forward(None, states[indices]).mean - targets[indices]
            loss = reduce_mean(residual * residual)
            if not np.isfinite(loss.item()):
                logger.warning(f"Teacher fit for {morphology.id} diverged at epoch {epoch}")
                return TeacherFit(morphology.id, policy, float("nan"), diverged=True)
            state = adam_step(policy.params, named_gradients(policy.params, backward(loss)), state, lr=config.lr)

    residual = policy.forward(None, states).mean.data - targets
    mse = float(np.mean(residual ** 2))
    return TeacherFit(morphology.id, policy.freeze(), mse, diverged=not np.isfinite(mse))


def fit_single_robot_teachers(teacher: Teacher, morphologies: Sequence[Morphology], state_dim: int,
                              action_dim: int, config: TeacherFitConfig) -> List[TeacherFit]:
    """התאמה עצמאית של MLP לכל רובוט לממוצעי המורה (MSE, זרע נפרד לכל רובוט)"""
    fits = []
    for morphology in morphologies:
        spec = ArchitectureSpec(
            kind=ArchitectureKind.SINGLE_ROBOT_MLP,
            hidden_layers=config.hidden_layers,
            hidden_width=config.hidden_width,
            state_dim_per_limb=state_dim,
            action_dim_per_limb=action_dim,
            n_max=morphology.limb_count,
        )
        fit = _fit_one(teacher, morphology, spec, config, config.seed)
        logger.info(f"Teacher fit {morphology.id}: mse={fit.mse:.6f}" + (" (diverged)" if fit.diverged else ""))
        fits.append(fit)
    return fits


class PerRobotTeachers:
    """אוסף מורים פרטניים, כל אחד לרובוט שלו"""

    def __init__(self, fits: Dict[str, SingleRobotMLP]):
        self.fits = fits

    def act(self, morphology: Morphology, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        try:
            policy = self.fits[morphology.id]
        except KeyError:
            raise DistillationError(f"No per-robot teacher for {morphology.id}") from None
        action = policy.forward(None, states)
        return action.mean.data, np.broadcast_to(action.log_std.data, action.mean.shape).copy()
