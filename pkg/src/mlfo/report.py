"""Figures rendered from a trace: a sequence diagram and a pipeline timeline.

Uses the object-oriented matplotlib API with the Agg canvas, so rendering
never touches pyplot's global state and works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Patch

from .trace import TraceEvent

OPERATOR_LANE = "operator"

STATE_COLORS = {
    "Requested": "#c6dbef",
    "Deploying": "#6baed6",
    "Running": "#31a354",
    "TearingDown": "#fd8d3c",
    "Terminated": "#bdbdbd",
}

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _lanes(trace: Sequence[TraceEvent], order: Optional[Sequence[str]]) -> List[str]:
    lanes = [OPERATOR_LANE]
    for d in order or ():
        if d not in lanes:
            lanes.append(d)
    for ev in trace:
        for d in (ev.domain, ev.details.get("recipient")):
            if d and d not in lanes:
                lanes.append(d)
    return lanes


def sequence_figure(trace: Sequence[TraceEvent], domains: Optional[Sequence[str]] = None) -> Figure:
    """Message sequence chart: one lifeline per domain, time flowing down."""
    lanes = _lanes(trace, domains)
    x = {d: i for i, d in enumerate(lanes)}
    rows: List[Tuple[TraceEvent, str]] = []
    for ev in trace:
        if ev.event in ("IntentSent", "MonitoringSent", "IntentRejected", "ConflictResolved"):
            rows.append((ev, ev.event))
        elif ev.event == "IntentReceived" and ev.details.get("origin") == OPERATOR_LANE:
            rows.append((ev, "operator"))
        elif ev.event == "PipelineStateChanged" and ev.details.get("to") in ("Running", "Terminated"):
            rows.append((ev, "state"))

    height = max(3.0, 0.38 * len(rows) + 1.5)
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(2.4 * len(lanes) + 1.5, height))
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(111)
        for d, xi in x.items():
            ax.plot([xi, xi], [0, len(rows) + 1], color="#999999", lw=0.8, ls="--" if d == OPERATOR_LANE else "-")
        for y, (ev, kind) in enumerate(rows, start=1):
            src = x[ev.domain]
            if kind == "operator":
                ax.annotate("", xy=(src, y), xytext=(x[OPERATOR_LANE], y),
                            arrowprops=dict(arrowstyle="->", color="black"))
                ax.text((src + x[OPERATOR_LANE]) / 2, y - 0.15, f"{ev.details.get('intent_id')} (operator intent)",
                        ha="center", va="bottom")
            elif kind in ("IntentSent", "MonitoringSent"):
                dst = x.get(ev.details.get("recipient", ev.domain), src)
                color = "#08519c" if kind == "IntentSent" else "#a63603"
                label = ev.details.get("intent_id") if kind == "IntentSent" else ev.details.get("kind", "")
                if ev.details.get("pipeline_id") and kind == "MonitoringSent":
                    label = f"{label} {ev.details['pipeline_id']}"
                if dst == src:
                    ax.annotate("", xy=(src, y + 0.25), xytext=(src, y - 0.25),
                                arrowprops=dict(arrowstyle="->", color=color, connectionstyle="arc3,rad=-1.2"))
                    ax.text(src + 0.12, y, f"{label} (internal)", va="center", color=color)
                else:
                    ax.annotate("", xy=(dst, y), xytext=(src, y), arrowprops=dict(arrowstyle="->", color=color))
                    ax.text((src + dst) / 2, y - 0.15, label, ha="center", va="bottom", color=color)
            elif kind == "state":
                to = ev.details["to"]
                ax.plot([src], [y], marker="s", color=STATE_COLORS.get(to, "black"), ms=7)
                ax.text(src + 0.08, y, f"{ev.details.get('pipeline_id')} g{ev.details.get('generation')} {to}",
                        va="center", fontsize=8)
            else:
                ax.plot([src], [y], marker="x", color="crimson")
                ax.text(src + 0.08, y, f"{ev.event} {ev.details.get('intent_id', '')}", va="center",
                        fontsize=8, color="crimson")
            ax.text(-0.6, y, f"t={ev.t}", va="center", ha="right", fontsize=7, color="#555555")
        ax.set_xticks(range(len(lanes)))
        ax.set_xticklabels(lanes)
        ax.xaxis.tick_top()
        ax.set_yticks([])
        ax.set_xlim(-1.0, len(lanes) - 0.2)
        ax.set_ylim(len(rows) + 1, 0)
        ax.spines["left"].set_visible(False)
        ax.spines["bottom"].set_visible(False)
        ax.set_title("Orchestration workflow", pad=24)
        fig.tight_layout()
    return fig


def lifecycle_figure(trace: Sequence[TraceEvent]) -> Figure:
    """One bar per (domain, pipeline, generation), coloured by lifecycle state."""
    spans: Dict[Tuple[str, str, str], List[Tuple[int, str]]] = {}
    for ev in trace:
        if ev.event != "PipelineStateChanged":
            continue
        key = (ev.domain, ev.details.get("pipeline_id", "?"), ev.details.get("generation", "0"))
        spans.setdefault(key, []).append((ev.t, ev.details.get("to", "")))
    end = max((ev.t for ev in trace), default=0) + 1
    keys = list(spans)
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(8, max(2.5, 0.45 * len(keys) + 1.2)))
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(111)
        for row, key in enumerate(keys):
            changes = spans[key]
            for (t0, state), nxt in zip(changes, changes[1:] + [(end, "")]):
                if state == "Terminated":
                    ax.plot([t0], [row], marker="|", color="black", ms=10)
                    continue
                ax.barh(row, max(nxt[0] - t0, 0.15), left=t0, height=0.6, color=STATE_COLORS.get(state, "grey"))
        ax.set_yticks(range(len(keys)))
        ax.set_yticklabels([f"{p} g{g} @ {d}" for d, p, g in keys])
        ax.invert_yaxis()
        ax.set_xlabel("logical time")
        ax.set_xlim(0, end)
        ax.legend(handles=[Patch(color=c, label=s) for s, c in STATE_COLORS.items()],
                  loc="upper center", bbox_to_anchor=(0.5, -0.18), ncol=5, frameon=False)
        ax.set_title("Pipeline lifecycles")
        fig.tight_layout()
    return fig


def render_report(trace: Sequence[TraceEvent], out_dir: Path, domains: Optional[Sequence[str]] = None,
                  fmt: str = "png") -> List[Path]:
    """Write ``sequence.<fmt>`` and ``lifecycle.<fmt>`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fig in (("sequence", sequence_figure(trace, domains)), ("lifecycle", lifecycle_figure(trace))):
        path = out_dir / f"{name}.{fmt}"
        fig.savefig(path, bbox_inches="tight")
        written.append(path)
    return written
