"""
מחולל מורפולוגיות: רובוטים אקראיים, מוטציות ומשפחות PD
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.data_schemas import ExperimentConfig, JointType
from src.morphology import N_MAX, LimbContext, Morphology
from src.numerics import seed_stream

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 100
PERTURB_SCALE = 0.2

_Tree = Tuple[List[int], List[LimbContext]]


class MorphologyGenerator:
    """מחלקה ליצירת רובוטים ומשפחות מוטציות"""

    def __init__(self, n_max: int = N_MAX):
        if not 2 <= n_max <= N_MAX:
            raise ValueError(f"n_max must be in [2, {N_MAX}], got {n_max}")
        self.n_max = n_max

        # גבולות דגימה לפרמטרי איבר
        self.position_bound = 0.3
        self.orientation_bound = np.pi
        self.mass_range = (0.5, 5.0)
        self.radius_range = (0.02, 0.1)
        self.length_range = (0.1, 0.5)
        self.joint_low_range = (-1.2, 0.0)
        self.joint_high_range = (0.0, 1.2)
        self.gear_range = (50.0, 300.0)

        self.mutations = ("add_leaf", "delete_leaf", "perturb", "reparent_leaf")

    def random_limb(self, rng: np.random.Generator) -> LimbContext:
        return LimbContext(
            rel_position=tuple(rng.uniform(-self.position_bound, self.position_bound, 3)),
            orientation=tuple(rng.uniform(-self.orientation_bound, self.orientation_bound, 3)),
            mass=float(rng.uniform(*self.mass_range)),
            shape_params=(float(rng.uniform(*self.radius_range)), float(rng.uniform(*self.length_range))),
            joint_type=list(JointType)[int(rng.integers(len(JointType)))],
            joint_range=(float(rng.uniform(*self.joint_low_range)), float(rng.uniform(*self.joint_high_range))),
            motor_gear=float(rng.uniform(*self.gear_range)),
        )

    def random_morphology(self, rng: np.random.Generator, morph_id: str, n_limbs: int) -> Morphology:
        """עץ אקראי: לכל איבר הורה באינדקס נמוך ממנו"""
        if not 1 <= n_limbs <= self.n_max:
            raise ValueError(f"n_limbs must be in [1, {self.n_max}], got {n_limbs}")
        parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n_limbs)]
        limbs = [self.random_limb(rng) for _ in range(n_limbs)]
        root = limbs[0].model_copy(update={"rel_position": (0.0, 0.0, 0.0)})
        return Morphology(id=morph_id, parents=tuple(parents), limbs=(root, *limbs[1:]))

    # ------------------------------------------------------------------
    # מוטציות אטומיות; כל אחת מחזירה None כשאינה אפשרית

    @staticmethod
    def _leaves(parents: List[int]) -> List[int]:
        has_child = {p for p in parents if p >= 0}
        return [i for i, p in enumerate(parents) if p != -1 and i not in has_child]

    def _add_leaf(self, tree: _Tree, rng: np.random.Generator) -> Optional[_Tree]:
        parents, limbs = tree
        if len(parents) >= self.n_max:
            return None
        anchor = int(rng.integers(len(parents)))
        return parents + [anchor], limbs + [self.random_limb(rng)]

    def _delete_leaf(self, tree: _Tree, rng: np.random.Generator) -> Optional[_Tree]:
        parents, limbs = tree
        leaves = self._leaves(parents)
        if len(parents) <= 2 or not leaves:
            return None
        victim = leaves[int(rng.integers(len(leaves)))]
        remap = {old: new for new, old in enumerate(i for i in range(len(parents)) if i != victim)}
        new_parents = [-1 if parents[i] == -1 else remap[parents[i]] for i in range(len(parents)) if i != victim]
        new_limbs = [limb for i, limb in enumerate(limbs) if i != victim]
        return new_parents, new_limbs

    def _perturb(self, tree: _Tree, rng: np.random.Generator) -> Optional[_Tree]:
        parents, limbs = tree
        target = int(rng.integers(len(limbs)))
        limb = limbs[target]

        def jitter(values):
            factors = rng.uniform(1.0 - PERTURB_SCALE, 1.0 + PERTURB_SCALE, len(values))
            return tuple(float(v * f) for v, f in zip(values, factors))

        low, high = sorted(jitter(limb.joint_range))
        perturbed = LimbContext(
            rel_position=jitter(limb.rel_position),
            orientation=jitter(limb.orientation),
            mass=jitter((limb.mass,))[0],
            shape_params=jitter(limb.shape_params),
            joint_type=limb.joint_type,
            joint_range=(low, high),
            motor_gear=jitter((limb.motor_gear,))[0],
        )
        return parents, limbs[:target] + [perturbed] + limbs[target + 1:]

    def _reparent_leaf(self, tree: _Tree, rng: np.random.Generator) -> Optional[_Tree]:
        parents, limbs = tree
        leaves = self._leaves(parents)
        if not leaves:
            return None
        leaf = leaves[int(rng.integers(len(leaves)))]
        candidates = [j for j in range(len(parents)) if j != leaf and j != parents[leaf]]
        if not candidates:
            return None
        new_parents = list(parents)
        new_parents[leaf] = candidates[int(rng.integers(len(candidates)))]
        return new_parents, limbs

    def mutate(self, morphology: Morphology, rng: np.random.Generator, morph_id: Optional[str] = None) -> Morphology:
        """m ~ U{1,2,3} מוטציות אטומיות ברצף; מוטציה לא אפשרית נדגמת מחדש"""
        tree: _Tree = (list(morphology.parents), list(morphology.limbs))
        operations = {
            "add_leaf": self._add_leaf,
            "delete_leaf": self._delete_leaf,
            "perturb": self._perturb,
            "reparent_leaf": self._reparent_leaf,
        }
        count = int(rng.integers(1, 4))
        for _ in range(count):
            for _attempt in range(MAX_ATTEMPTS):
                name = self.mutations[int(rng.integers(len(self.mutations)))]
                result = operations[name](tree, rng)
                if result is not None:
                    tree = result
                    break
            else:
                logger.debug(f"No feasible mutation for {morphology.id} after {MAX_ATTEMPTS} attempts")

        # רובוט חד-איברי גדל לשני איברים לפחות
        while len(tree[0]) < 2:
            tree = self._add_leaf(tree, rng)

        parents, limbs = tree
        return Morphology(id=morph_id or morphology.id, parents=tuple(parents), limbs=tuple(limbs))

    def generate_family(
        self, base_set: List[Morphology], variants_per_base: int, rng: np.random.Generator
    ) -> List[Morphology]:
        """קבוצת הבסיס ואחריה variants_per_base וריאנטים לכל בסיס"""
        if not base_set:
            raise ValueError("generate_family requires a non-empty base set")
        if variants_per_base < 0:
            raise ValueError("variants_per_base must be non-negative")
        family = list(base_set)
        for base in base_set:
            for k in range(1, variants_per_base + 1):
                family.append(self.mutate(base, rng, morph_id=f"{base.id}-v{k}"))
        logger.info(f"Generated family of {len(family)} morphologies from {len(base_set)} bases")
        return family

    def generate_split(
        self, rng: np.random.Generator, prefix: str, count: int, min_limbs: int, max_limbs: int
    ) -> List[Morphology]:
        return [
            self.random_morphology(rng, f"{prefix}-{i:03d}", int(rng.integers(min_limbs, max_limbs + 1)))
            for i in range(count)
        ]

    def generate_splits(self, config: ExperimentConfig, seed: int, variants_per_base: int) -> Dict[str, List[Morphology]]:
        """חלוקה ל-train/test/pd; כל חלוקה מזרם אקראיות נפרד"""
        train = self.generate_split(
            seed_stream(seed, "morph-gen/train"), "train", config.n_train_morphs, config.min_limbs, config.max_limbs
        )
        test = self.generate_split(
            seed_stream(seed, "morph-gen/test"), "test", config.n_test_morphs, config.min_limbs, config.max_limbs
        )
        pd_set = self.generate_family(train, variants_per_base, seed_stream(seed, "morph-gen/pd"))
        return {"train": train, "test": test, "pd": pd_set}


def mutate(morphology: Morphology, rng: np.random.Generator, n_max: int = N_MAX) -> Morphology:
    return MorphologyGenerator(n_max).mutate(morphology, rng)


def generate_family(
    base_set: List[Morphology], variants_per_base: int, rng: np.random.Generator, n_max: int = N_MAX
) -> List[Morphology]:
    return MorphologyGenerator(n_max).generate_family(base_set, variants_per_base, rng)
