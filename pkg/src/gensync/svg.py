"""Static SVG line charts of a trajectory with the threshold bands drawn in."""

from __future__ import annotations

import math

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids so identical data gives identical files
    plt.rcParams["svg.hashsalt"] = "gensync"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def write_svg(data: dict[str, np.ndarray], path, thresholds=None, omega0: float | None = None,
              title: str = "") -> None:
    """Four stacked panels: e/pi, phase error/pi, omega3 - omega0, and P1/P2 when present."""
    plt = _pyplot()
    t = data["t"]
    speed_lim = 0.134 if thresholds is None else thresholds.max_speed_error / math.pi
    phase_lim = 0.055 if thresholds is None else thresholds.max_phase_error / math.pi
    band = math.pi if thresholds is None else thresholds.freq_band
    w0 = float(data["omega3"][0]) if omega0 is None else omega0

    have_power = np.any(np.isfinite(data["p1"]))
    n = 4 if have_power else 3
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.2 * n), sharex=True)

    ax = axes[0]
    ax.plot(t, data["e"] / math.pi, lw=0.8, color="C0")
    for s in (1, -1):
        ax.axhline(s * speed_lim, ls="--", lw=0.7, color="C3")
    ax.set_ylabel("e / pi")

    ax = axes[1]
    ax.plot(t, data["phase_err"] / math.pi, lw=0.8, color="C1")
    for s in (1, -1):
        ax.axhline(s * phase_lim, ls="--", lw=0.7, color="C3")
    ax.set_ylabel("phase err / pi")

    ax = axes[2]
    ax.plot(t, data["omega3"] - w0, lw=0.8, color="C2")
    for s in (1, -1):
        ax.axhline(s * band, ls="--", lw=0.7, color="C3")
    ax.set_ylabel("omega3 - omega0")

    if have_power:
        ax = axes[3]
        ax.plot(t, data["p1"], lw=0.8, label="P1")
        ax.plot(t, data["p2"], lw=0.8, label="P2")
        ax.legend(loc="best", fontsize="small")
        ax.set_ylabel("power (pu)")
    axes[-1].set_xlabel("t (s)")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
