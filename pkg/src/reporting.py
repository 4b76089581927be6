"""
כתיבת טבלאות (csv / json-lines) וגרפים וקטוריים דטרמיניסטיים
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

TABLE_FORMATS = ("csv", "json-lines")
TABLE_SUFFIX = {"csv": ".csv", "json-lines": ".jsonl"}

# מזהי SVG קבועים, כדי שאותו קלט ייתן אותם בתים
plt.rcParams["svg.hashsalt"] = "hyperdistill"
plt.rcParams["font.family"] = ["DejaVu Sans"]


def table_path(out_dir: Union[str, Path], stem: str, fmt: str) -> Path:
    return Path(out_dir) / f"{stem}{TABLE_SUFFIX[fmt]}"


def write_table(df: pd.DataFrame, path: Union[str, Path], fmt: str = "csv", header: Optional[str] = None) -> Path:
    """כתיבת טבלה; ב-csv אפשר להוסיף שורת הערה אחת בראש הקובץ"""
    if fmt not in TABLE_FORMATS:
        raise ValueError(f"Unknown table format: {fmt}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        body = df.to_csv(index=False, lineterminator="\n")
        path.write_text((f"# {header}\n" if header else "") + body, encoding="utf-8")
    else:
        path.write_text(df.to_json(orient="records", lines=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if path.suffix == ".jsonl":
        return pd.read_json(path, orient="records", lines=True)
    return pd.read_csv(path, comment="#")


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote plot {path}")
    return path


def plot_loss_trace(traces: Dict[str, Sequence[float]], path: Union[str, Path],
                    title: str = "Distillation loss") -> Path:
    """עקומות KL ממוצע לממד לכל אפוק"""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, trace in traces.items():
        ax.plot(range(1, len(trace) + 1), list(trace), label=label)
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Mean KL per action dim")
    ax.set_yscale("log")
    ax.set_title(title)
    if len(traces) > 1:
        ax.legend(fontsize="small")
    ax.grid(True)
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(summary: pd.DataFrame, path: Union[str, Path], title: str = "Ablation") -> Path:
    """עמודות חציון KL לכל זרוע, מקובצות לפי פיצול, עם שגיאת תקן"""
    splits = list(dict.fromkeys(summary["split"]))
    arms = list(dict.fromkeys(summary["arm"]))
    width = 0.8 / max(1, len(splits))
    fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(arms)), 4))
    for offset, split in enumerate(splits):
        rows = summary[summary["split"] == split].set_index("arm").reindex(arms)
        positions = [i + offset * width for i in range(len(arms))]
        ax.bar(positions, rows["median_kl"], width, yerr=rows["stderr"], label=split, capsize=3)
    ax.set_xticks([i + width * (len(splits) - 1) / 2 for i in range(len(arms))])
    ax.set_xticklabels(arms, rotation=20, ha="right", fontsize="small")
    ax.set_ylabel("Median KL to oracle")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, axis="y")
    fig.tight_layout()
    return _save(fig, path)
