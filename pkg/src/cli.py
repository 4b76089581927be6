"""
נקודת הכניסה בשורת הפקודה: כל תת-פקודה מפעילה שלב אחד של הצינור
ומסיימת בכתיבת manifest.json

שימוש: python -m src.cli <command> [--config FILE] [--seed N] [--out-dir DIR] [--format csv|json-lines]
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import pandas as pd

from src import __version__
from src.analysis import emit_report, cost_table_specs
from src.architectures import CompiledPolicy, HyperDistillPolicy, build_policy
from src.config import ConfigError, config_hash, load_config, load_spec_file
from src.data_generator import MorphologyGenerator
from src.data_schemas import AblationKind, ExperimentConfig, RunManifest, StudentKind
from src.distillation import DistillationError, PerRobotTeachers, distill, fit_single_robot_teachers
from src.harness import collect, evaluate, make_oracle, run_ablation
from src.morphology import (
    Morphology, MorphologyFormatError, TopologyError, load_morphology, load_morphology_dir, save_morphology,
)
from src.numerics import DimensionError, NumericalError, derive_seed, seed_stream
from src.reporting import plot_ablation, plot_loss_trace, table_path, write_table
from src.storage import (
    FormatError, file_digest, load_dataset, load_oracle, load_policy, save_dataset, save_policy, write_manifest,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class Run:
    """הקשר של פקודה אחת: הגדרות, קבצי קלט ופלט, ותחום תיקיית הפלט"""

    def __init__(self, args: argparse.Namespace, config: ExperimentConfig):
        self.args = args
        self.config = config
        self.fmt = args.format
        self.out_dir = Path(args.out_dir)
        self.inputs: Dict[str, str] = {}
        self.outputs: List[Path] = []
        if args.config is not None:
            self.input("config", args.config)

    def input(self, key: str, value: Optional[str], directory: bool = False) -> Path:
        if value is None:
            raise ConfigError(f"{key}: required input is missing")
        path = Path(value)
        exists = path.is_dir() if directory else path.is_file()
        if not exists:
            raise ConfigError(f"{key}: input not found: {path}")
        files = sorted(p for p in path.rglob("*") if p.is_file()) if directory else [path]
        for file in files:
            self.inputs[str(file)] = file_digest(file)
        return path

    def output(self, relative: str) -> Path:
        """נתיב בתוך --out-dir; נתיב שבורח ממנה הוא שגיאת הגדרות"""
        root = self.out_dir.resolve()
        path = (root / relative).resolve()
        if path != root and root not in path.parents:
            raise ConfigError(f"out: path escapes --out-dir: {relative}")
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def produced(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def table(self, df: pd.DataFrame, stem: str, header: Optional[str] = None) -> Path:
        path = self.output(table_path(".", stem, self.fmt).name)
        return self.produced(write_table(df, path, self.fmt, header=header))

    def finish(self) -> Path:
        root = self.out_dir.resolve()
        manifest = RunManifest(
            tool_version=__version__,
            command=self.args.command,
            config_hash=config_hash(self.config),
            seed=self.config.seed,
            inputs=dict(sorted(self.inputs.items())),
            outputs={str(p.relative_to(root)): file_digest(p) for p in sorted(set(self.outputs))},
        )
        return write_manifest(root, manifest)


def _load_morphs(run: Run, key: str, value: Optional[str]) -> List[Morphology]:
    path = run.input(key, value, directory=value is not None and Path(value).is_dir())
    morphs = load_morphology_dir(path) if path.is_dir() else [load_morphology(path)]
    if not morphs:
        raise ConfigError(f"{key}: no .morph files in {path}")
    return morphs


# ---------------------------------------------------------------------------
# תת-פקודות

def cmd_generate_morphs(run: Run) -> None:
    """Generate train/test/PD morphology files"""
    config = run.config
    splits = MorphologyGenerator(config.n_max).generate_splits(config, config.seed, config.variants_per_base)
    for split, morphs in splits.items():
        for morph in morphs:
            run.produced(save_morphology(morph, run.output(f"morphs/{split}/{morph.id}.morph")))
        logger.info(f"Wrote {len(morphs)} {split} morphologies")


def cmd_make_oracle(run: Run) -> None:
    """Build the seeded universal oracle"""
    oracle = make_oracle(derive_seed(run.config.seed, "oracle"), run.config.oracle_spec())
    run.produced(save_policy(run.output(run.args.out or "oracle.ckpt"), oracle.policy))


def cmd_collect(run: Run) -> None:
    """Collect teacher transitions on morphologies"""
    args = run.args
    morphs = _load_morphs(run, "morphs", args.morphs)
    if args.teachers:
        directory = run.input("teachers", args.teachers, directory=True)
        teacher = PerRobotTeachers({p.stem: load_policy(p) for p in sorted(directory.glob("*.ckpt"))})
    else:
        teacher = load_oracle(run.input("oracle", args.oracle))
    dataset = collect(teacher, morphs, run.config.transitions_per_morph,
                      seed_stream(run.config.seed, "collect"), run.config.state_dim)
    run.produced(save_dataset(run.output(args.out or "dataset.hdd"), dataset))


def cmd_distill(run: Run) -> None:
    """Distill a student from a transition dataset"""
    args = run.args
    dataset = load_dataset(run.input("dataset", args.dataset))
    morphs = _load_morphs(run, "morphs", args.morphs)
    try:
        kind = StudentKind(args.student)
    except ValueError:
        raise ConfigError(f"student: unknown student kind {args.student}") from None
    student = build_policy(run.config.student_spec(kind), seed_stream(run.config.seed, "init"))
    result = distill(student, dataset, morphs, run.config.distill_config())
    run.produced(save_policy(run.output(args.out or "student.ckpt"), result.student))
    trace = pd.DataFrame({"epoch": range(1, len(result.loss_trace) + 1), "mean_kl": result.loss_trace})
    run.table(trace, "loss_trace")
    run.produced(plot_loss_trace({kind.value: result.loss_trace}, run.output("loss_trace.svg")))


def cmd_fit_teachers(run: Run) -> None:
    """Fit one MLP teacher per robot to the oracle"""
    args = run.args
    oracle = load_oracle(run.input("oracle", args.oracle))
    morphs = _load_morphs(run, "morphs", args.morphs)
    fits = fit_single_robot_teachers(oracle, morphs, run.config.state_dim, run.config.action_dim,
                                     run.config.teacher_fit_config())
    for fit in fits:
        run.produced(save_policy(run.output(f"teachers/{fit.morphology_id}.ckpt"), fit.policy))
    table = pd.DataFrame([{"morphology_id": f.morphology_id, "mse": f.mse, "diverged": f.diverged} for f in fits])
    run.table(table, "teacher_fits")


def cmd_evaluate(run: Run) -> None:
    """Mean KL of a student against the oracle"""
    args = run.args
    student = load_policy(run.input("student", args.student))
    oracle = load_oracle(run.input("oracle", args.oracle))
    morphs = _load_morphs(run, "morphs", args.morphs)
    if isinstance(student, CompiledPolicy):
        kept = [m for m in morphs if m.limb_count == student.limb_count]
        if not kept:
            raise ConfigError(f"morphs: no morphology with {student.limb_count} limbs for the compiled policy")
        morphs = kept
    result = evaluate(student, oracle, morphs, run.config.n_eval_states,
                      seed_stream(run.config.seed, "eval"), run.config.state_dim)
    rows = [{"morphology_id": mid, "mean_kl": kl, "stderr": float("nan")} for mid, kl in result.per_morphology.items()]
    rows.append({"morphology_id": "mean", "mean_kl": result.mean_kl, "stderr": result.stderr})
    run.table(pd.DataFrame(rows), "evaluation")
    logger.info(f"Mean KL over {len(morphs)} morphologies: {result.mean_kl:.6f} ± {result.stderr:.6f}")


def cmd_analyze_costs(run: Run) -> None:
    """Parameter and FLOPs report"""
    args = run.args
    if args.specs:
        entries = load_spec_file(run.input("specs", args.specs))
    else:
        entries = cost_table_specs(args.env)
    try:
        report = emit_report(entries, args.limbs)
    except ValueError as e:
        raise ConfigError(f"specs: {e}") from None
    run.table(report.frame, "costs", header=report.convention)


def cmd_ablate(run: Run) -> None:
    """Run one ablation over all repeat seeds"""
    try:
        which = AblationKind(run.args.which)
    except ValueError:
        raise ConfigError(f"which: unknown ablation {run.args.which}") from None
    result = run_ablation(which, run.config)
    run.table(result.results, f"ablation_{which.value}")
    run.table(result.summary, f"ablation_{which.value}_summary")
    run.produced(plot_ablation(result.summary, run.output(f"ablation_{which.value}.svg"), title=which.value))
    traces = {f"{arm}/{seed}": trace for (arm, seed), trace in result.loss_traces.items() if trace}
    if traces:
        run.produced(plot_loss_trace(traces, run.output(f"ablation_{which.value}_loss.svg"), title=which.value))


def cmd_compile_policy(run: Run) -> None:
    """Compile a hypernetwork checkpoint for one morphology"""
    args = run.args
    policy = load_policy(run.input("checkpoint", args.checkpoint))
    if not isinstance(policy, HyperDistillPolicy):
        raise ConfigError(f"checkpoint: expected a hypernetwork checkpoint, got {policy.spec.kind.value}")
    morph = load_morphology(run.input("morph", args.morph))
    compiled = policy.compile(morph)
    run.produced(save_policy(run.output(args.out or "policy.ckpt"), compiled))
    logger.info(f"Compiled policy for {morph.id}: {compiled.parameter_count()} parameters")


COMMANDS: Dict[str, Callable[[Run], None]] = {
    "generate-morphs": cmd_generate_morphs,
    "make-oracle": cmd_make_oracle,
    "collect": cmd_collect,
    "distill": cmd_distill,
    "fit-teachers": cmd_fit_teachers,
    "evaluate": cmd_evaluate,
    "analyze-costs": cmd_analyze_costs,
    "ablate": cmd_ablate,
    "compile-policy": cmd_compile_policy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperdistill", description="HyperDistill experiment pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, help=COMMANDS[name].__doc__) for name in COMMANDS}

    for p in parsers.values():
        p.add_argument("--config", type=str, default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        p.add_argument("--out-dir", type=str, default="out", help="All outputs are written under this directory")
        p.add_argument("--format", type=str, default="csv", choices=["csv", "json-lines"], help="Table format")
        p.add_argument("--verbose", action="store_true", help="Debug logging")

    parsers["make-oracle"].add_argument("--out", type=str, default=None)

    parsers["collect"].add_argument("--oracle", type=str, default=None, help="Oracle checkpoint")
    parsers["collect"].add_argument("--teachers", type=str, default=None, help="Directory of per-robot teachers")
    parsers["collect"].add_argument("--morphs", type=str, default=None)
    parsers["collect"].add_argument("--out", type=str, default=None)

    parsers["distill"].add_argument("--dataset", type=str, default=None)
    parsers["distill"].add_argument("--morphs", type=str, default=None)
    parsers["distill"].add_argument("--student", type=str, default=StudentKind.HYPERDISTILL.value,
                                    help="|".join(kind.value for kind in StudentKind))
    parsers["distill"].add_argument("--out", type=str, default=None)

    parsers["fit-teachers"].add_argument("--oracle", type=str, default=None)
    parsers["fit-teachers"].add_argument("--morphs", type=str, default=None)

    parsers["evaluate"].add_argument("--student", type=str, default=None, help="Student or compiled checkpoint")
    parsers["evaluate"].add_argument("--oracle", type=str, default=None)
    parsers["evaluate"].add_argument("--morphs", type=str, default=None, help=".morph file or directory")

    parsers["analyze-costs"].add_argument("--specs", type=str, default=None, help="name.field = value spec file")
    parsers["analyze-costs"].add_argument("--env", type=str, default="ft", choices=["ft", "vt", "obstacle"])
    parsers["analyze-costs"].add_argument("--limbs", type=int, default=10)

    parsers["ablate"].add_argument("--which", type=str, required=True,
                                   help="|".join(kind.value for kind in AblationKind))

    parsers["compile-policy"].add_argument("--checkpoint", type=str, default=None)
    parsers["compile-policy"].add_argument("--morph", type=str, default=None)
    parsers["compile-policy"].add_argument("--out", type=str, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        config = load_config(args.config, seed=args.seed)
        run = Run(args, config)
        COMMANDS[args.command](run)
        run.finish()
    except (ConfigError, FormatError, MorphologyFormatError, TopologyError, DistillationError,
            DimensionError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"{args.command} failed with a numerical error: {e}")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
