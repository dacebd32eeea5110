"""Report figures and delimited output for simulator runs.

Renders a track-state timeline and a per-client convergence chart as PNGs,
plus the convergence table as CSV, from a report dict. Uses the Agg backend
so it works headless.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Patch

logger = logging.getLogger(__name__)

# same palette the track panel uses
STATE_COLORS = {
    "empty": "#d9d9d9",
    "selected": "#3a6fd8",
    "recording": "#d94343",
    "playing": "#3fae5a",
    "muted": "#8c8c8c",
}


def _panel_label(payload: dict, index: int) -> str:
    state = payload["tracks"][index]["state"]
    if state == "empty" and index in set(payload["cursors"].values()):
        return "selected"
    return state


def save_timeline_png(report: dict, path: str | Path) -> None:
    """Horizontal per-track state spans over virtual time."""
    log = report["state_log"]
    total = report["config"]["num_users"] * report["config"]["tracks_per_user"]
    end = max(
        report["quiescence_ms"] + report["broadcast_interval_ms"],
        report["last_event_ms"],
        1.0,
    )
    fig, ax = plt.subplots(figsize=(9, 0.5 * total + 1.5))
    for i in range(total):
        for j, (t_ms, payload) in enumerate(log):
            t_next = log[j + 1][0] if j + 1 < len(log) else end
            label = _panel_label(payload, i)
            ax.barh(
                i,
                t_next - t_ms,
                left=t_ms,
                height=0.8,
                color=STATE_COLORS.get(label, "#000000"),
                edgecolor="none",
            )
    for e in report["events_applied"]:
        ax.axvline(e["t_ms"], color="#00000030", linewidth=0.8, zorder=0)
    ax.set_yticks(range(total))
    ax.set_yticklabels(
        [f"u{t['owner']} trk {t['index']}" for t in log[0][1]["tracks"]]
    )
    ax.invert_yaxis()
    ax.set_xlabel("virtual time (ms)")
    ax.set_title(
        f"track states (loop {report['loop_len']} samples, "
        f"{report['trace_events']} events)"
    )
    ax.legend(
        handles=[Patch(color=c, label=s) for s, c in STATE_COLORS.items()],
        loc="upper right",
        fontsize=8,
        ncol=len(STATE_COLORS),
    )
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_convergence_png(report: dict, path: str | Path) -> None:
    """Per-client convergence lag against the latency-model bound."""
    clients = report["clients"]
    users = sorted(clients, key=int)
    lags = [clients[u]["convergence_ms"] for u in users]
    bounds = [clients[u]["bound_ms"] for u in users]
    xs = range(len(users))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(
        xs,
        [0.0 if v is None else v for v in lags],
        width=0.5,
        color=["#b03030" if v is None else "#3a6fd8" for v in lags],
        label="observed lag",
    )
    ax.plot(xs, bounds, "k_", markersize=26, label="bound")
    for x, v in zip(xs, lags):
        if v is None:
            ax.text(x, 0, "never", ha="center", va="bottom", color="#b03030")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"user {u}" for u in users])
    ax.set_ylabel("convergence lag (ms)")
    m = report["model"]
    ax.set_title(
        f"one-way {m['one_way_ms']} ms, jitter {m['jitter_ms']} ms, "
        f"loss {m['loss_pct']}%, seed {m['seed']}"
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_convergence_csv(report: dict, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "client",
                "convergence_ms",
                "bound_ms",
                "delivered",
                "lost",
                "post_quiescence_losses",
            ]
        )
        for uid in sorted(report["clients"], key=int):
            c = report["clients"][uid]
            w.writerow(
                [
                    uid,
                    "" if c["convergence_ms"] is None else f"{c['convergence_ms']:.3f}",
                    f"{c['bound_ms']:.3f}",
                    c["delivered"],
                    c["lost"],
                    c["post_quiescence_losses"],
                ]
            )


def write_report_assets(report: dict, outdir: str | Path) -> list[Path]:
    """Render every figure and table for a report; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fn in (
        ("timeline.png", save_timeline_png),
        ("convergence.png", save_convergence_png),
        ("convergence.csv", write_convergence_csv),
    ):
        target = outdir / name
        fn(report, target)
        written.append(target)
        logger.info("wrote %s", target)
    return written
