"""Dependency-free SVG line charts for training curves and ROC plots."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")
WIDTH, HEIGHT = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 50, 60

Series = Tuple[str, Sequence[float], Sequence[float]]


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _bounds(values: Sequence[float], pad: float = 0.05) -> Tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def line_chart(
    series: Sequence[Series],
    title: str,
    x_label: str,
    y_label: str,
    x_range: Optional[Tuple[float, float]] = None,
    y_range: Optional[Tuple[float, float]] = None,
    diagonal: bool = False,
) -> str:
    """Render one polyline per series; ``diagonal`` adds a dashed y = x reference line."""
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    if not xs:
        raise ValueError("nothing to plot")
    x0, x1 = x_range or _bounds(xs, 0.0)
    y0, y1 = y_range or _bounds(ys)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x: float) -> float:
        return LEFT + (x - x0) / (x1 - x0) * pw if x1 != x0 else LEFT + pw / 2

    def py(y: float) -> float:
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.1f}" y="28" text-anchor="middle" font-family="sans-serif" font-size="16">{_escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>',
    ]
    for i in range(5):
        fx, fy = x0 + (x1 - x0) * i / 4, y0 + (y1 - y0) * i / 4
        out.append(
            f'<text x="{px(fx):.1f}" y="{TOP + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{fx:.3g}</text>'
        )
        out.append(
            f'<text x="{LEFT - 6}" y="{py(fy) + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{fy:.3g}</text>'
        )
    out.append(
        f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 16}" text-anchor="middle" font-family="sans-serif" font-size="13">{_escape(x_label)}</text>'
    )
    out.append(
        f'<text x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {TOP + ph / 2:.1f})">{_escape(y_label)}</text>'
    )
    if diagonal:
        out.append(
            f'<line class="chance" x1="{px(x0):.2f}" y1="{py(y0):.2f}" x2="{px(x1):.2f}" y2="{py(y1):.2f}" '
            'stroke="#999999" stroke-dasharray="5,4"/>'
        )
    for i, (name, sx, sy) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy))
        out.append(f'<polyline data-series="{_escape(name)}" fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = TOP + 16 + 20 * i
        out.append(f'<line x1="{WIDTH - RIGHT + 12}" y1="{ly - 4}" x2="{WIDTH - RIGHT + 36}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 42}" y="{ly}" font-family="sans-serif" font-size="12">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def history_charts(records) -> Tuple[str, str]:
    """Return ``(accuracy_svg, loss_svg)`` for a non-empty epoch history."""
    if not records:
        raise ValueError("empty history")
    epochs = [r.epoch for r in records]
    acc = line_chart(
        [("train", epochs, [r.train_accuracy for r in records]), ("validation", epochs, [r.val_accuracy for r in records])],
        "Training and validation accuracy", "epoch", "accuracy",
    )
    loss = line_chart(
        [("train", epochs, [r.train_loss for r in records]), ("validation", epochs, [r.val_loss for r in records])],
        "Training and validation loss", "epoch", "loss",
    )
    return acc, loss


def roc_chart(points: Sequence[Tuple[float, float]], auc_value: Optional[float] = None) -> str:
    title = "ROC curve" if auc_value is None else f"ROC curve (AUC = {auc_value:.3f})"
    return line_chart(
        [("ROC", [p[0] for p in points], [p[1] for p in points])],
        title, "false positive rate", "true positive rate",
        x_range=(0.0, 1.0), y_range=(0.0, 1.0), diagonal=True,
    )


def write_svg(path, svg: str) -> None:
    Path(path).write_text(svg, encoding="utf-8")
