"""Trace figure: distortion and cone counts against the event index."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EVENT_MARKERS = {"init": "s", "solve": "o", "add": "^", "move": ".", "remove": "x", "holonomy": "D"}


def plot_trace(rows, path, title: str | None = None, target: float | None = None) -> None:
    """Save a two-axis plot of a trace.

    ``rows`` holds dicts (or objects) with ``event``, ``E``, ``n_c`` and
    ``n_0``. Distortion goes on the left axis, the nonzero and zero-angle
    cone counts on the right.
    """
    get = (lambda r, k: r[k]) if rows and isinstance(rows[0], dict) else getattr
    E = np.array([get(r, "E") for r in rows], dtype=float)
    nc = np.array([get(r, "n_c") for r in rows])
    n0 = np.array([get(r, "n_0") for r in rows])
    ev = [get(r, "event") for r in rows]
    x = np.arange(len(rows))

    fig, ax = plt.subplots(figsize=(7.0, 3.9), dpi=120)
    ax.plot(x, E, color="tab:blue", lw=1.2, label="E")
    for kind, mk in EVENT_MARKERS.items():
        idx = [i for i, e in enumerate(ev) if e == kind]
        if idx:
            ax.plot(x[idx], E[idx], mk, ms=3.5, color="tab:blue", alpha=0.8, label=kind)
    if target is not None:
        ax.axhline(target, color="tab:blue", ls=":", lw=0.8)
    ax.set_xlabel("event")
    ax.set_ylabel("distortion E", color="tab:blue")
    ax.set_ylim(bottom=0)

    ax2 = ax.twinx()
    ax2.step(x, nc, where="post", color="tab:red", lw=1.0, label="N_c")
    ax2.step(x, n0, where="post", color="tab:orange", lw=1.0, ls="--", label="N_0")
    ax2.set_ylabel("cones", color="tab:red")
    ax2.set_ylim(bottom=0)

    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    fig.legend(h1 + h2, l1 + l2, fontsize=7, ncol=len(l1 + l2), loc="lower center", frameon=False)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout(rect=(0, 0.07, 1, 1))
    fig.savefig(path)
    plt.close(fig)
