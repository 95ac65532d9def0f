"""Report figures written next to the CSV/JSON-lines outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "image.cmap": "viridis",
    "savefig.dpi": 120,
}

# no timestamps or version strings, so reruns produce identical files
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curves(path, curves: dict[str, tuple], title: str = "training"):
    """``curves`` maps a label to ``(train_loss, val_iters, val_nrmse)``."""
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_v) = plt.subplots(1, 2, figsize=(8, 3))
        for label, (loss, vit, vn) in curves.items():
            ax_l.semilogy(np.arange(len(loss)), loss, lw=0.8, label=label)
            if len(vit):
                ax_v.plot(vit, np.asarray(vn) * 100, marker="o", ms=3, label=label)
        ax_l.set_xlabel("iteration")
        ax_l.set_ylabel("train loss")
        ax_v.set_xlabel("iteration")
        ax_v.set_ylabel("validation nRMSE (%)")
        for ax in (ax_l, ax_v):
            ax.grid(alpha=0.3)
            ax.legend()
        fig.suptitle(title)
        return _save(fig, path)


def error_maps(path, gt: np.ndarray, preds: dict[str, np.ndarray], labels: list[str] | None = None):
    """Rows are frequency components; columns are |GT| then |pred| and |pred - GT| per method."""
    gt = np.atleast_3d(gt) if gt.ndim == 2 else gt
    if gt.ndim == 2:
        gt = gt[None]
    n = gt.shape[0]
    cols = 1 + 2 * len(preds)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n, cols, figsize=(1.6 * cols, 1.6 * n), squeeze=False)
        for r in range(n):
            vmax = np.abs(gt[r]).max()
            axes[r, 0].imshow(np.abs(gt[r]), vmin=0, vmax=vmax)
            axes[r, 0].set_ylabel(labels[r] if labels else f"row {r}")
            c = 1
            for name, p in preds.items():
                axes[r, c].imshow(np.abs(p[r]), vmin=0, vmax=vmax)
                axes[r, c + 1].imshow(np.abs(p[r] - gt[r]), vmin=0, vmax=vmax, cmap="magma")
                if r == 0:
                    axes[r, c].set_title(name)
                    axes[r, c + 1].set_title(f"{name} err")
                c += 2
            if r == 0:
                axes[r, 0].set_title("HR GT")
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def reconstructions(path, phantom: np.ndarray, recons: dict[str, np.ndarray], scores: dict[str, float] | None = None):
    with plt.rc_context(STYLE):
        n = 1 + len(recons)
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.4), squeeze=False)
        axes[0, 0].imshow(phantom)
        axes[0, 0].set_title("phantom")
        for ax, (name, img) in zip(axes[0, 1:], recons.items()):
            ax.imshow(img)
            title = name if not scores or name not in scores else f"{name}\n{scores[name]:.2f} dB"
            ax.set_title(title)
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def nrmse_by_frequency(path, freqs_khz: np.ndarray, series: dict[str, np.ndarray]):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        order = np.argsort(freqs_khz)
        for name, vals in series.items():
            ax.plot(np.asarray(freqs_khz)[order], np.asarray(vals)[order] * 100, ".", ms=4, label=name)
        ax.set_xlabel("frequency (kHz)")
        ax.set_ylabel("nRMSE (%)")
        ax.grid(alpha=0.3)
        ax.legend()
        return _save(fig, path)
