"""Static SVG figures: correlation heatmap, PC scatter and scree plot.

SVG output is made reproducible by fixing the hash salt used for element
ids, dropping the date metadata, keeping text as text, and rounding every
decimal number in the file to 6 significant digits.
"""

from __future__ import annotations

import io as _io
import re
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import Normalize  # noqa: E402

from .model import ContractError, PopulationLabels  # noqa: E402

CMAP = "RdBu_r"
MIN_SCALE = 0.05

_RC = {
    "svg.hashsalt": "residcorr",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.linewidth": 0.8,
}

_FLOAT = re.compile(r"-?\d+\.\d+(?:[eE][-+]?\d+)?")


def _round6(match: re.Match) -> str:
    out = f"{float(match.group(0)):.6g}"
    return "0" if out == "-0" else out


def save_svg(fig, path) -> None:
    """Write ``fig`` as a byte-stable SVG."""
    buf = _io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    text = _FLOAT.sub(_round6, buf.getvalue())
    with open(path, "w") as fh:
        fh.write(text)


def heatmap_matrix(b_hat, diff) -> np.ndarray:
    """b̂ above the diagonal, b̂ - ĉ below it, NaN on the diagonal."""
    b_hat = np.asarray(b_hat, dtype=float)
    diff = np.asarray(diff, dtype=float)
    if b_hat.shape != diff.shape or b_hat.ndim != 2 or b_hat.shape[0] != b_hat.shape[1]:
        raise ContractError("b_hat and diff must be square matrices of equal shape")
    n = b_hat.shape[0]
    out = np.where(np.triu(np.ones((n, n), dtype=bool), 1), b_hat, diff)
    np.fill_diagonal(out, np.nan)
    return out


def color_scale(M) -> float:
    """Symmetric bound: the larger of 0.05 and the largest off-diagonal magnitude."""
    vals = np.abs(M[np.isfinite(M)])
    return float(max(MIN_SCALE, vals.max() if vals.size else 0.0))


def heatmap_rgba(M, vmax: Optional[float] = None) -> np.ndarray:
    """Colours used for each cell; NaN cells (the diagonal) get the neutral midpoint colour."""
    vmax = color_scale(M) if vmax is None else vmax
    cmap = matplotlib.colormaps[CMAP].with_extremes(bad=matplotlib.colormaps[CMAP](0.5))
    norm = Normalize(-vmax, vmax)
    return cmap(norm(np.ma.masked_invalid(M)))


def plot_heatmap(b_hat, diff, labels: Optional[PopulationLabels], path,
                 order: Optional[Sequence[int]] = None, title: Optional[str] = None) -> float:
    """Draw the correlation heatmap and return the colour bound used."""
    b_hat = np.asarray(b_hat, dtype=float)
    diff = np.asarray(diff, dtype=float)
    n = b_hat.shape[0]
    if order is None:
        order = np.arange(n) if labels is None else np.concatenate([idx for _, idx in labels.blocks()])
    order = np.asarray(order, dtype=int)
    M = heatmap_matrix(b_hat[np.ix_(order, order)], diff[np.ix_(order, order)])
    vmax = color_scale(M)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 4.8))
        cmap = matplotlib.colormaps[CMAP].with_extremes(bad=matplotlib.colormaps[CMAP](0.5))
        im = ax.imshow(np.ma.masked_invalid(M), cmap=cmap, vmin=-vmax, vmax=vmax,
                       interpolation="nearest")
        if labels is not None:
            assigned = np.asarray(labels.assignment)[order]
            edges = [0]
            centers, names = [], []
            start = 0
            for i in range(1, n + 1):
                if i == n or assigned[i] != assigned[start]:
                    centers.append((start + i - 1) / 2)
                    names.append(assigned[start])
                    edges.append(i)
                    start = i
            for e in edges[1:-1]:
                ax.axhline(e - 0.5, color="k", lw=0.6)
                ax.axvline(e - 0.5, color="k", lw=0.6)
            ax.set_xticks(centers, names, rotation=45, ha="right")
            ax.set_yticks(centers, names)
        else:
            ax.set_xticks([])
            ax.set_yticks([])
        cb = fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        cb.set_label("upper: b̂   lower: b̂ - ĉ")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        save_svg(fig, path)
    return vmax


def default_components(method: str, k_prime: int) -> tuple[int, int]:
    """1-based PC pair to show; PCA 1 skips the first component, which tracks the mean."""
    if method == "pca1":
        if k_prime < 3:
            raise ContractError("PCA 1 scatter needs k' >= 3 (components 2 and 3)")
        return 2, 3
    if k_prime < 2:
        raise ContractError("scatter needs at least two components")
    return 1, 2


def plot_scatter(pcs, labels: Optional[PopulationLabels], path,
                 components: tuple[int, int] = (1, 2), title: Optional[str] = None) -> None:
    pcs = np.atleast_2d(np.asarray(pcs, dtype=float))
    a, b = components
    if min(a, b) < 1 or max(a, b) > pcs.shape[1]:
        raise ContractError(f"components {components} out of range 1..{pcs.shape[1]}")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        groups = labels.blocks() if labels is not None else [("all", np.arange(pcs.shape[0]))]
        cycle = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for g, (name, idx) in enumerate(groups):
            ax.scatter(pcs[idx, a - 1], pcs[idx, b - 1], s=12, label=name,
                       color=cycle[g % len(cycle)], edgecolors="none")
        ax.set_xlabel(f"PC{a}")
        ax.set_ylabel(f"PC{b}")
        if len(groups) <= 12:
            ax.legend(frameon=False, fontsize=7)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        save_svg(fig, path)


def scree_values(eigenvalues, method: str) -> tuple[np.ndarray, np.ndarray]:
    """(1-based index, eigenvalue) pairs to draw; PCA 1 drops the first eigenvalue."""
    ev = np.asarray(eigenvalues, dtype=float)
    idx = np.arange(1, ev.size + 1)
    if method == "pca1":
        return idx[1:], ev[1:]
    return idx, ev


def plot_scree(eigenvalues, method: str, path, max_components: int = 20,
               title: Optional[str] = None) -> None:
    idx, ev = scree_values(eigenvalues, method)
    idx, ev = idx[:max_components], ev[:max_components]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(idx, ev, "o-", ms=4, lw=1)
        ax.set_xlabel("component")
        ax.set_ylabel("eigenvalue")
        ax.set_xticks(idx)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        save_svg(fig, path)
