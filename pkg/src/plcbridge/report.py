"""Write a scenario report to disk: delimited tables plus matplotlib figures."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .modbus.codec import FUNCTION_NAMES  # noqa: E402
from .plant import ScenarioReport  # noqa: E402

LANES = ("plc1", "gw1", "gw2", "plc2")
MARKERS = {
    "sequence_start": ("o", "tab:green"),
    "flag_set": ("^", "tab:red"),
    "publish": ("s", "tab:blue"),
    "receive": ("v", "tab:cyan"),
    "write": ("D", "tab:purple"),
    "restart": ("*", "tab:orange"),
    "rearm": ("P", "tab:brown"),
}


def new_figure(width: float = 8, height: float | None = None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    ax.tick_params(labelsize=9)
    return fig, ax


def cycle_durations(report: ScenarioReport) -> list[float]:
    """Simulated time between successive PLC1 restarts (first from t=0)."""
    starts = [0.0] + [e.ts for e in report.events if e.actor == "plc1" and e.event == "restart"]
    return [b - a for a, b in zip(starts, starts[1:])]


def plot_timeline(report: ScenarioReport, path, max_cycles: int = 2):
    """Handshake events of the first cycles, one lane per process."""
    fig, ax = new_figure(10, 3.6)
    shown = [t for t in report.trace if t.cycle <= max_cycles]
    for event_name, (marker, color) in MARKERS.items():
        xs = [t.event.ts for t in shown if t.event.event == event_name and t.event.actor in LANES]
        ys = [LANES.index(t.event.actor) for t in shown
              if t.event.event == event_name and t.event.actor in LANES]
        if xs:
            ax.scatter(xs, ys, marker=marker, color=color, label=event_name, s=40, zorder=3)
    for t in shown:
        if t.event.event == "restart":
            ax.axvline(t.event.ts, color="0.7", lw=0.8, ls="--", zorder=1)
    ax.set_yticks(range(len(LANES)))
    ax.set_yticklabels(LANES)
    ax.set_ylim(-0.6, len(LANES) - 0.4)
    ax.set_xlabel("simulated time (s)")
    ax.set_title(f"flag handshake, first {max_cycles} cycle(s)")
    ax.legend(fontsize=7, ncol=4, loc="upper center", bbox_to_anchor=(0.5, -0.25), frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_cycle_durations(report: ScenarioReport, path):
    fig, ax = new_figure(7)
    durations = cycle_durations(report)
    if durations:
        ax.plot(range(1, len(durations) + 1), durations, "o-", ms=3, lw=1)
    ax.set_xlabel("cycle")
    ax.set_ylabel("cycle duration (s)")
    ax.set_title("handshake cycle duration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_frame_counts(report: ScenarioReport, path):
    fig, ax = new_figure(7)
    counts = report.modbus_function_counts()
    labels, values = [], []
    for (link, direction, fc), n in sorted(counts.items()):
        if direction != "M>S":
            continue
        labels.append(f"{link}\nFC{fc:02d}\n{FUNCTION_NAMES.get(fc, '?').split()[0]}")
        values.append(n)
    ax.bar(range(len(values)), values, color="tab:gray")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("requests on the wire")
    ax.set_title("Modbus requests per serial line and function code")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: ScenarioReport, outdir, violations=()) -> list[Path]:
    """Write trace/summary tables and figures into ``outdir``; return the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    trace_path = out / "trace.tsv"
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["cycle", "seq", "ts", "actor", "event", "detail"])
        for t in report.trace:
            e = t.event
            w.writerow([t.cycle, e.seq, f"{e.ts:.6f}", e.actor, e.event, e.detail_text()])
    written.append(trace_path)

    summary_path = out / "summary.tsv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["key", "value"])
        for key, value in report.summary().items():
            w.writerow([key, value])
        w.writerow(["violations", len(violations)])
    written.append(summary_path)

    for name, lines in (("modbus_trace.txt", report.modbus_trace.lines()),
                        ("mqtt_wire.txt", [r.format() for r in report.mqtt_wire.records])):
        path = out / name
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    for name, plot in (("timeline.png", plot_timeline),
                       ("cycle_durations.png", plot_cycle_durations),
                       ("frame_counts.png", plot_frame_counts)):
        path = out / name
        plot(report, path)
        written.append(path)
    return written
