"""Loss logs, run comparison, charts and image export."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

from .config import LossRecord  # noqa: E402

COMPONENTS = ("l_dir", "l_patch", "l_content", "l_tv")
COMPONENT_TITLES = {"l_dir": "global CLIP", "l_patch": "patch CLIP", "l_content": "content", "l_tv": "TV"}


class LogSchemaError(ValueError):
    pass


# ------------------------------------------------------------------- images


def load_image(path, size: int | None = None) -> torch.Tensor:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BICUBIC)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).contiguous()


def to_uint8(image: torch.Tensor) -> np.ndarray:
    if image.dim() == 4:
        image = image[0]
    arr = image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy()
    return np.round(arr * 255).astype(np.uint8)


def save_image(image: torch.Tensor, path) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def enhance_contrast(image: torch.Tensor, factor: float) -> torch.Tensor:
    """Stretch around mid-grey: ``clamp(0.5 + factor * (x - 0.5), 0, 1)``."""
    if not factor > 0:
        raise ValueError(f"contrast factor must be positive, got {factor}")
    return (0.5 + factor * (image - 0.5)).clamp(0.0, 1.0)


# --------------------------------------------------------------------- logs


def write_loss_csv(records: Sequence[LossRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LossRecord.COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.as_row().items()})


def read_loss_csv(path) -> list[LossRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(LossRecord.COLUMNS):
            raise LogSchemaError(f"{path}: expected columns {LossRecord.COLUMNS}, got {reader.fieldnames}")
        try:
            return [LossRecord(iteration=int(row["iteration"]),
                               **{k: float(row[k]) for k in LossRecord.COLUMNS[1:]})
                    for row in reader]
        except (TypeError, ValueError) as e:
            raise LogSchemaError(f"{path}: malformed row: {e}") from e


# --------------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    baseline: dict[str, float]
    optimized: dict[str, float]
    lower_or_equal: dict[str, bool]
    dominance: bool
    charts: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def compare_runs(baseline_log: Sequence[LossRecord], optimized_log: Sequence[LossRecord]) -> ComparisonReport:
    """Compare final-iteration component losses; dominance uses ``<=``."""
    if not baseline_log or not optimized_log:
        raise ValueError("both loss logs must be nonempty")
    for log in (baseline_log, optimized_log):
        if not all(isinstance(r, LossRecord) for r in log):
            raise LogSchemaError("loss logs must contain LossRecord rows")
    b, o = baseline_log[-1], optimized_log[-1]
    base = {c: getattr(b, c) for c in COMPONENTS}
    opt = {c: getattr(o, c) for c in COMPONENTS}
    le = {c: opt[c] <= base[c] for c in COMPONENTS}
    return ComparisonReport(base, opt, le, all(le.values()))


# ------------------------------------------------------------------- charts


def line_chart_figure(logs: Mapping[str, Sequence[LossRecord]]):
    """One panel per component, one line per run in every panel."""
    if not logs or any(len(v) == 0 for v in logs.values()):
        raise ValueError("need at least one nonempty loss log")
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, comp in zip(axes.ravel(), COMPONENTS):
        for run, records in logs.items():
            ax.plot([r.iteration for r in records], [getattr(r, comp) for r in records],
                    label=f"{run}: {comp}")
        ax.set_title(COMPONENT_TITLES[comp])
        ax.set_xlabel("iteration")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def render_loss_line_chart(logs: Mapping[str, Sequence[LossRecord]], path) -> Path:
    fig = line_chart_figure(logs)
    try:
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)
    return Path(path)


def bar_chart_figure(report: ComparisonReport, names=("baseline", "optimized")):
    if not report.baseline or not report.optimized:
        raise ValueError("report has no losses to plot")
    x = np.arange(len(COMPONENTS))
    width = 0.38
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.bar(x - width / 2, [report.baseline[c] for c in COMPONENTS], width, label=names[0])
    ax.bar(x + width / 2, [report.optimized[c] for c in COMPONENTS], width, label=names[1])
    ax.set_xticks(x, [COMPONENT_TITLES[c] for c in COMPONENTS])
    ax.set_ylabel("final loss")
    ax.legend()
    fig.tight_layout()
    return fig


def render_loss_bar_chart(report: ComparisonReport, path, names=("baseline", "optimized")) -> Path:
    fig = bar_chart_figure(report, names)
    try:
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)
    return Path(path)
