"""Figure builders for the ablation table and training logs.

Rendering is deterministic: fixed style, fixed fonts, no timestamps, so the
same CSV always produces the same bytes. Schema problems raise SchemaError
before any output file is touched.
"""

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ABLATION_COLUMNS = ("budget", "strategy", "objective", "seed")
TRAINING_COLUMNS = ("episode", "discounted_objective")

# display order for strategy bars, weakest baseline first
STRATEGY_ORDER = (
    ("none", "No Attack"),
    ("greedy", "Greedy"),
    ("ddpg", "DDPG"),
    ("decomposed-greedy", "Decomposed Greedy"),
    ("ablation-low", "Low Only"),
    ("ablation-high", "High Only"),
    ("hmarl", "HMARL"),
)

_STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "plots",
}


class SchemaError(ValueError):
    """The CSV does not match the expected result schema."""


def read_table(path, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty CSV, no header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _as_float(row: dict, column: str) -> float:
    try:
        return float(row[column])
    except (TypeError, ValueError):
        raise SchemaError(f"non-numeric value {row[column]!r} in column {column!r}") from None


def _save(fig, out_path) -> None:
    out = Path(out_path)
    fmt = out.suffix.lower().lstrip(".")
    if fmt not in ("png", "svg"):
        raise ValueError(f"unsupported image format {out.suffix!r}: use .png or .svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    # strip the only volatile metadata each writer would add; the salted ids
    # inside SVG output are pinned by svg.hashsalt
    metadata = {"Software": None} if fmt == "png" else {"Date": None}
    with plt.rc_context(_STYLE):
        fig.savefig(out, format=fmt, metadata=metadata)
    plt.close(fig)


def _strategy_slots(strategies: list[str]) -> list[tuple[str, str]]:
    known = [pair for pair in STRATEGY_ORDER if pair[0] in strategies]
    extra = [(s, s) for s in strategies if s not in dict(STRATEGY_ORDER)]
    return known + extra


def ablation_figure(rows: list[dict]):
    """Grouped mean-objective bars, one panel per budget."""
    seen = set()
    table: dict[float, dict[str, list[float]]] = {}
    order_seen: list[str] = []
    for row in rows:
        budget = _as_float(row, "budget")
        objective = _as_float(row, "objective")
        strategy = row["strategy"]
        key = (budget, strategy, row["seed"])
        if key in seen:
            raise SchemaError(f"duplicate (budget, strategy, seed) row: {key}")
        seen.add(key)
        table.setdefault(budget, {}).setdefault(strategy, []).append(objective)
        if strategy not in order_seen:
            order_seen.append(strategy)

    budgets = sorted(table)
    slots = _strategy_slots(order_seen)
    cmap = plt.get_cmap("tab10")
    palette = {name: cmap(i % 10) for i, (name, _) in enumerate(STRATEGY_ORDER)}
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(
            1, len(budgets), figsize=(1.1 + 2.4 * len(budgets), 3.4),
            sharey=True, squeeze=False,
        )
        for ax, budget in zip(axes[0], budgets):
            names = [(s, label) for s, label in slots if s in table[budget]]
            values = [float(np.mean(table[budget][s])) for s, _ in names]
            colors = [palette.get(s, (0.5, 0.5, 0.5, 1.0)) for s, _ in names]
            ax.bar(range(len(names)), values, color=colors)
            ax.set_xticks(range(len(names)))
            ax.set_xticklabels([label for _, label in names], rotation=45, ha="right")
            ax.set_title(f"budget = {budget:g}")
        axes[0][0].set_ylabel("discounted objective")
        fig.tight_layout()
    return fig


def plot_ablation(csv_path, out_path) -> int:
    """Render the strategy-by-budget bar figure; returns the panel count."""
    rows = read_table(csv_path, ABLATION_COLUMNS)
    fig = ablation_figure(rows)
    panels = len(fig.axes)
    _save(fig, out_path)
    return panels


def training_figure(rows: list[dict]):
    """Per-episode objective with a trailing moving average (window <= 10)."""
    episodes = [_as_float(r, "episode") for r in rows]
    objective = np.array([_as_float(r, "discounted_objective") for r in rows])
    window = min(10, len(objective))
    averaged = np.convolve(objective, np.full(window, 1.0 / window), mode="valid")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.4))
        ax.plot(episodes, objective, marker=".", linewidth=1.0,
                color="0.6", label="per episode")
        ax.plot(episodes[window - 1:], averaged, linewidth=1.8,
                color="tab:blue", label=f"moving average (w={window})")
        ax.set_xlabel("episode")
        ax.set_ylabel("discounted objective")
        ax.legend(loc="best")
        fig.tight_layout()
    return fig


def plot_training(csv_path, out_path) -> int:
    """Render the training curve; returns the number of episodes plotted."""
    rows = read_table(csv_path, TRAINING_COLUMNS)
    fig = training_figure(rows)
    _save(fig, out_path)
    return len(rows)
