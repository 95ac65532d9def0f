"""Optimization loop, reverse-mode gradients and system-matrix recovery."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import FreqDescriptor, Grid, SystemMatrix, check_scale
from .data import AUGMENT_MODES, SrPairs, augment, make_pairs
from .errors import DivergenceError, ShapeError
from .losses import LossConfig, get_loss
from .model import ModelConfig, SRNet, build_model, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8  # network samples per step (a complex row is two in single-channel mode)
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    schedule: str = "cosine"
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    loss_name: str = "fsc"
    # targets live in [-1, 1] after per-row normalization
    loss: LossConfig = field(default_factory=lambda: LossConfig(data_range=(-1.0, 1.0)))
    rim_enabled: bool = True
    augment: str = "none"  # see data.AUGMENT_MODES
    val_every: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be >= 1")
        if self.lr_init < 0:
            raise ValueError("lr_init must be nonnegative")
        if self.augment not in AUGMENT_MODES:
            raise ValueError(f"unknown augment mode {self.augment!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        get_loss(self.loss_name)

    def learning_rate(self, it: int) -> float:
        if self.schedule == "constant" or self.iterations == 1:
            return self.lr_init
        low = min(self.lr_min, self.lr_init)
        return low + (self.lr_init - low) * 0.5 * (1 + math.cos(math.pi * it / (self.iterations - 1)))


@dataclass
class TrainReport:
    train_loss: list[float]
    val_iters: list[int]
    val_nrmse: list[float]
    wall_clock: float
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    state: dict[str, np.ndarray]

    def csv_rows(self):
        """(iteration, train_loss, val_nrmse) with blank val where not evaluated."""
        val = dict(zip(self.val_iters, self.val_nrmse))
        for i, loss in enumerate(self.train_loss):
            yield i, loss, val.get(i, "")


class _NumpyLoss(torch.autograd.Function):
    """Bridge a numpy loss (value + analytic gradient) into autograd."""

    @staticmethod
    def forward(ctx, pred, target, fn, cfg):
        ev = fn(pred.detach().cpu().double().numpy(), target.detach().cpu().double().numpy(), cfg)
        ctx.save_for_backward(torch.as_tensor(ev.grad, dtype=pred.dtype))
        return pred.new_tensor(ev.value)

    @staticmethod
    def backward(ctx, grad_out):
        (g,) = ctx.saved_tensors
        return grad_out * g, None, None, None


def loss_tensor(pred: torch.Tensor, target, loss_name: str, cfg: LossConfig) -> torch.Tensor:
    target = torch.as_tensor(np.asarray(target), dtype=pred.dtype)
    return _NumpyLoss.apply(pred, target, get_loss(loss_name), cfg)


def backward(model: SRNet, inputs: np.ndarray, targets: np.ndarray, loss_name: str,
             cfg: LossConfig | None = None) -> dict[str, torch.Tensor]:
    """Gradient of the loss w.r.t. every parameter for one batch."""
    cfg = cfg or LossConfig()
    model.zero_grad(set_to_none=True)
    loss = loss_tensor(forward(model, inputs), targets, loss_name, cfg)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss.item()}")
    loss.backward()
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }


def predict(model: SRNet, lr_images: np.ndarray, batch: int = 64) -> np.ndarray:
    """Complex low-res stacks ``(M, h, w)`` -> complex high-res stacks."""
    s = model.cfg.scale
    m, h, w = lr_images.shape
    out = np.zeros((m, h * s, w * s), dtype=np.complex128)
    with torch.no_grad():
        for a in range(0, m, batch):
            chunk = lr_images[a:a + batch]
            inputs, _, scales = make_pairs(chunk, 1)
            y = forward(model, inputs).double().numpy()
            out[a:a + batch] = (y[:, 0] + 1j * y[:, 1]) * scales[:, None, None]
    return out


def _val_nrmse(model, pairs: SrPairs) -> float:
    from .core import downsample_array
    from .metrics import mean_row_nrmse

    pred = predict(model, downsample_array(pairs.hr, pairs.scale))
    return mean_row_nrmse(pred, pairs.hr)


def rows_per_step(train_cfg: TrainConfig, model_cfg: ModelConfig) -> int:
    """Complex rows drawn per step so every mode runs ``batch_size`` network samples."""
    return max(1, train_cfg.batch_size // model_cfg.samples_per_row)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: dict[str, SrPairs],
          model: SRNet | None = None, callback=None) -> TrainReport:
    """Run AdamW with a cosine schedule on ``dataset['train']``.

    ``dataset['val']`` is evaluated every ``val_every`` iterations and at the end.
    """
    model_cfg = dataclasses.replace(model_cfg, rim=train_cfg.rim_enabled)
    tr, val = dataset["train"], dataset.get("val")
    if tr.scale != model_cfg.scale or (val is not None and val.scale != model_cfg.scale):
        raise ShapeError("dataset scale does not match the model scale")
    model = model or build_model(model_cfg)
    opt = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.lr_init, betas=train_cfg.betas, weight_decay=train_cfg.weight_decay
    )
    rng = np.random.default_rng(train_cfg.rng_seed)
    losses, val_iters, val_scores = [], [], []
    last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
    start = time.perf_counter()
    rows = rows_per_step(train_cfg, model_cfg)
    for it in range(train_cfg.iterations):
        idx = rng.integers(0, len(tr), size=rows)
        hr = tr.hr[idx]
        hr = augment(hr, rng, train_cfg.augment)
        inputs, targets, _ = make_pairs(hr, tr.scale)
        for group in opt.param_groups:
            group["lr"] = train_cfg.learning_rate(it)
        opt.zero_grad(set_to_none=True)
        loss = loss_tensor(forward(model, inputs), targets, train_cfg.loss_name, train_cfg.loss)
        value = float(loss.item())
        if not math.isfinite(value):
            model.load_state_dict(last_good)
            raise DivergenceError(f"loss became {value} at iteration {it}", last_good, it)
        loss.backward()
        opt.step()
        losses.append(value)
        if val is not None and (it % train_cfg.val_every == 0 or it == train_cfg.iterations - 1):
            val_iters.append(it)
            val_scores.append(_val_nrmse(model, val))
            last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
            log.info("iter %d loss %.5g val nRMSE %.4f", it, value, val_scores[-1])
        if callback is not None:
            callback(it, value, model)
    return TrainReport(
        losses, val_iters, val_scores, time.perf_counter() - start, model_cfg, train_cfg,
        {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()},
    )


def model_from_report(report: TrainReport) -> SRNet:
    model = build_model(report.model_cfg)
    model.load_state_dict({k: torch.as_tensor(v) for k, v in report.state.items()})
    return model


def recover(model: SRNet, sm_lr: SystemMatrix, batch: int = 64) -> SystemMatrix:
    """Apply the network row by row: low-res matrix -> high-res matrix."""
    s = check_scale(model.cfg.scale)
    g = sm_lr.grid
    hr_grid = Grid(g.nx * s, g.ny * s, g.fov_x, g.fov_y)
    if sm_lr.k == 0:
        return SystemMatrix(hr_grid, (), np.zeros((0, hr_grid.n), complex))
    hr = predict(model, sm_lr.images(), batch)
    return SystemMatrix.from_images(hr_grid, sm_lr.freqs, hr, sm_lr.row_snr)
