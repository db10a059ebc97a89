"""Figure rendering for CLI reports (PNG files next to the CSV output).

Uses the Agg backend; savefig strips the Software metadata chunk so a
re-run under the same library versions writes byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def save_cdf_figure(curves, path, threshold=0.1):
    """curves: mapping label -> CdfCurve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in sorted(curves.items()):
        conc = curve.concentration(threshold)
        ax.step(curve.values, curve.probs, where="post",
                label=f"{label} (P(|v|<{threshold:g})={conc:.3f})")
    ax.set_xlabel("codeword value")
    ax.set_ylabel("cumulative probability")
    ax.set_xlim(-1.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.4)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_history_figure(histories, path):
    """histories: mapping label -> list of EpochRecord."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, hist in sorted(histories.items()):
        ax.plot([r.epoch for r in hist], [r.val_nmse_db for r in hist], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation NMSE (dB)")
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_metric_bars(report, metric, path):
    """Grouped bars of the aggregated metric per method over (CR, B) cells."""
    from . import report as report_mod

    cells = report_mod._aggregate(report, lambda r: getattr(r, metric))
    crs, bits, methods = report_mod._grid(report)
    if metric == "qsnr_db":
        methods = [m for m in methods if m != "NQ"]
    cols = [(c, b) for c in crs for b in bits]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(methods), 1)
    for mi, m in enumerate(methods):
        xs, ys = [], []
        for ci, (c, b) in enumerate(cols):
            key = (m, c, None) if m == "NQ" else (m, c, b)
            if key in cells:
                xs.append(ci + mi * width)
                ys.append(report_mod.db_floor(cells[key]))
        ax.bar(xs, ys, width=width, label=m)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(cols))])
    ax.set_xticklabels([f"cr{c}/b{b}" for c, b in cols], fontsize=8)
    ax.set_ylabel(metric.replace("_db", " (dB)"))
    ax.grid(True, axis="y", alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
