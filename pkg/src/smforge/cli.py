"""Command-line surface: simulate, downsample, train, recover, baseline,
reconstruct, evaluate and gradcheck.

Every command reads an :class:`ExperimentConfig` (``--config`` plus ``--set``
overrides), writes under ``--out``, and finishes with a manifest recording the
command, its inputs (with checksums), options and resolved configuration.
``--from-manifest`` replays a recorded command; with fixed seeds the outputs
are bit-identical. Wall-clock times only ever go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io as sio
from .baselines import CsConvergenceWarning, cs_recover, upsample_array
from .config import ExperimentConfig, load_config
from .core import ComplexImage, Grid, SystemMatrix, downsample_sm
from .data import SrPairs, simulate_collection
from .errors import ConfigError, FormatError, SmforgeError
from .losses import LOSSES, finite_diff_grad, grad_rel_error
from .metrics import MetricReport, mean_row_nrmse, nrmse
from .recon import PHANTOM_SHAPES, evaluate_pipeline, make_phantom
from .sim import add_noise, simulate_sm

log = logging.getLogger("smforge")

GRADCHECK_TOL = 1e-4


class _Run:
    """Per-invocation bookkeeping: output dir, produced files, recorded inputs."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, options: dict):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.options = options
        self.files: list[str] = []
        self.inputs: dict[str, list[dict]] = {}
        self.extra: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        self.files.append(rel)
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record_input(self, role: str, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise FormatError(f"input {p} does not exist")
        self.inputs.setdefault(role, []).append({"path": str(path), "sha256": sio.sha256_file(p)})
        return p

    def metrics(self, reports: list[str], rel: str = "metrics.jsonl"):
        text = "".join(line + "\n" for line in reports)
        sio.atomic_write(self.path(rel), text)
        sys.stdout.write(text)

    def finish(self) -> Path:
        cfg = self.cfg.to_dict()
        cfg.pop("out")  # the output location is not part of what was computed
        manifest = {
            "command": self.command,
            "inputs": self.inputs,
            "options": self.options,
            "config": cfg,
            "files": sorted(set(self.files)),
            **self.extra,
        }
        return sio.write_manifest(self.out, manifest, f"{self.command}.manifest.json")


# ---------------------------------------------------------------- commands


def cmd_simulate(run: _Run, args):
    cfg = run.cfg
    if not args.dataset:
        sm = simulate_sm(cfg.sim)
        if cfg.sim_noise_snr_db is not None:
            sm = add_noise(sm, cfg.sim_noise_snr_db, seed=cfg.seed)
        sio.save_sm(sm, run.path("sm.bin"))
        run.extra["sim_digest"] = cfg.sim.digest()
        return 0
    spec = dataclasses.replace(cfg.dataset, noise_snr_db=cfg.dataset.noise_snr_db
                               if cfg.dataset.noise_snr_db is not None else cfg.sim_noise_snr_db)
    coll = simulate_collection(cfg.sim, spec)
    combos = spec.combos()
    splits = {}
    for name, idx in spec.split_indices().items():
        splits[name] = []
        for i, sm in zip(idx, coll[name]):
            rel = f"hr/{i:03d}.bin"
            sio.save_sm(sm, run.path(rel))
            g, d = combos[i]
            splits[name].append({"index": i, "gradient": g, "diameter": d, "file": rel})
    run.extra.update(splits=splits, sim_digest=cfg.sim.digest(), scales=[1])
    return 0


def _dataset_split(manifest_path: Path, split: str) -> tuple[list[SystemMatrix], list[dict]]:
    m = sio.load_manifest(manifest_path, verify=True)
    if "splits" not in m or split not in m["splits"]:
        raise FormatError(f"{manifest_path} has no {split!r} split")
    members = m["splits"][split]
    return [sio.load_sm(manifest_path.parent / item["file"]) for item in members], members


def cmd_downsample(run: _Run, args):
    s = run.cfg.scale
    for src in args.input:
        p = run.record_input("input", src)
        lr = downsample_sm(sio.load_sm(p), s)
        sio.save_sm(lr, run.path(f"{p.stem}_x{s}.bin"))
    return 0


def cmd_train(run: _Run, args):
    from .train import train

    cfg = run.cfg
    mpath = run.record_input("dataset", args.dataset)
    dataset = {}
    for split in ("train", "val"):
        mats, members = _dataset_split(mpath, split)
        for item in members:
            run.record_input(split, mpath.parent / item["file"])
        dataset[split] = SrPairs.from_matrices(mats, cfg.scale)
    test_files = {sio.sha256_file(mpath.parent / it["file"])
                  for it in sio.load_manifest(mpath)["splits"].get("test", [])}
    if test_files & {e["sha256"] for role in ("train", "val") for e in run.inputs[role]}:
        raise FormatError("test-split matrices appear among the training inputs")
    report = train(cfg.model, cfg.train, dataset)
    log.info("training took %.1f s", report.wall_clock)
    meta = {"model": report.model_cfg.to_dict(), "train": _train_dict(cfg),
            "iterations": cfg.train.iterations, "seed": cfg.seed, "scale": cfg.scale}
    sio.save_checkpoint(run.path("model.ckpt"), report.state, meta)
    sio.write_csv(run.path("train_log.csv"), ["iteration", "train_loss", "val_nrmse"], report.csv_rows())
    from .plotting import loss_curves

    loss_curves(run.path("loss_curves.png"),
                {cfg.train.loss_name: (report.train_loss, report.val_iters, report.val_nrmse)})
    lines = [MetricReport("val_nrmse", v).to_json(iteration=i) for i, v in zip(report.val_iters, report.val_nrmse)]
    lines.append(MetricReport("final_train_loss", report.train_loss[-1]).to_json())
    run.metrics(lines)
    return 0


def _train_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg.train)
    d["loss"] = dataclasses.asdict(cfg.train.loss)
    return d


def _load_model(path):
    import torch

    from .model import ModelConfig, build_model

    state, meta = sio.load_checkpoint(path)
    model = build_model(ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in meta["model"].items()}))
    model.load_state_dict({k: torch.as_tensor(v) for k, v in state.items()})
    model.eval()
    return model


def cmd_recover(run: _Run, args):
    from .train import recover

    model = _load_model(run.record_input("checkpoint", args.checkpoint))
    for src in args.input:
        p = run.record_input("input", src)
        t0 = time.perf_counter()
        hr = recover(model, sio.load_sm(p))
        log.info("recovered %s (%d rows) in %.2f s", p.name, hr.k, time.perf_counter() - t0)
        sio.save_sm(hr, run.path(f"{p.stem}_rec.bin"))
    return 0


def cmd_baseline(run: _Run, args):
    s = run.cfg.scale
    for src in args.input:
        p = run.record_input("input", src)
        lr = sio.load_sm(p)
        hr_grid = Grid(lr.grid.nx * s, lr.grid.ny * s, lr.grid.fov_x, lr.grid.fov_y)
        imgs = lr.images()
        if args.method in ("bicubic", "strided"):
            hr = upsample_array(imgs, s, anchored=args.method == "strided")
        else:
            rows = []
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", CsConvergenceWarning)
                for img in imgs:
                    rows.append(cs_recover(ComplexImage(lr.grid, img), s, run.cfg.cs).values)
            if caught:
                log.warning("ISTA hit the iteration cap on %d of %d rows", len(caught), len(imgs))
            hr = np.stack(rows) if rows else np.zeros((0, *hr_grid.shape), complex)
        out = SystemMatrix.from_images(hr_grid, lr.freqs, hr, lr.row_snr)
        sio.save_sm(out, run.path(f"{p.stem}_{args.method}.bin"))
    return 0


def _named(items: list[str]) -> list[tuple[str, str]]:
    out = []
    for i, item in enumerate(items):
        name, sep, path = item.partition("=")
        out.append((name, path) if sep else (Path(item).stem if len(items) > 1 else "pred", item))
    return out


def cmd_reconstruct(run: _Run, args):
    gt = sio.load_sm(run.record_input("gt", args.gt))
    params = json.loads(args.phantom_params) if args.phantom_params else {}
    phantom = make_phantom(gt.grid, args.phantom, **params)
    lines, recons, scores = [], {}, {}
    for name, path in _named(args.sm):
        rec_sm = sio.load_sm(run.record_input(name, path))
        rep = evaluate_pipeline(gt, rec_sm, phantom, run.cfg.recon)
        recons["ground-truth SM"] = rep.recon_gt
        recons[name] = rep.recon_recovered
        scores["ground-truth SM"] = rep.psnr_gt.value
        scores[name] = rep.psnr_recovered.value
        lines.append(rep.psnr_recovered.to_json(sm=name, phantom=args.phantom, psnr_gt=_finite(rep.psnr_gt.value),
                                                gap=_finite(rep.gap)))
        sio.image_csv(run.path(f"recon_{name}.csv"), rep.recon_recovered)
        sio.write_pgm(run.path(f"recon_{name}.pgm"), rep.recon_recovered)
    from .plotting import reconstructions

    reconstructions(run.path("reconstructions.png"), phantom.concentration, recons, scores)
    run.metrics(lines)
    return 0


def _finite(v: float):
    return v if np.isfinite(v) else str(v)


def cmd_evaluate(run: _Run, args):
    preds = _named(args.pred)
    if len(args.gt) != 1 and len(args.gt) != len(preds):
        raise ConfigError("pass one --gt, or one --gt per --pred")
    gts = [sio.load_sm(run.record_input("gt", g)) for g in args.gt]
    if args.train_manifest:
        tm = sio.load_manifest(run.record_input("train_manifest", args.train_manifest), verify=False)
        trained_on = {e["sha256"] for role in ("train", "val") for e in tm.get("inputs", {}).get(role, [])}
        for g in args.gt:
            if sio.sha256_file(g) in trained_on:
                raise FormatError(f"{g} was used for training; refusing to evaluate on it")
    lines, series, maps = [], {}, {}
    for i, (name, path) in enumerate(preds):
        gt_sm = gts[0] if len(gts) == 1 else gts[i]
        pred = sio.load_sm(run.record_input("pred", path))
        rep = nrmse(pred, gt_sm)
        lines.append(rep.to_json(pred=name, mean_row_nrmse=mean_row_nrmse(pred, gt_sm)))
        per_row = rep.per_row
        series[name] = per_row
        rows = [(f.index, f.channel, f.freq_hz, v) for f, v in zip(gt_sm.freqs, per_row)]
        sio.write_csv(run.path(f"nrmse_by_frequency_{name}.csv"),
                      ["row", "channel", "freq_hz", "nrmse"], rows)
        shown = list(range(min(args.maps, gt_sm.k)))
        maps[name] = pred.images()[shown]
        for r in shown:
            err = np.abs(pred.images()[r] - gt_sm.images()[r])
            sio.write_pgm(run.path(f"error_maps/{name}_row{r:03d}.pgm"), err)
            sio.image_csv(run.path(f"error_maps/{name}_row{r:03d}.csv"), err)
    run.metrics(lines)
    gt_sm = gts[0]
    if len(gts) == 1 and gt_sm.k:
        from .plotting import error_maps, nrmse_by_frequency

        shown = list(range(min(args.maps, gt_sm.k)))
        if shown:
            error_maps(run.path("error_maps.png"), gt_sm.images()[shown], maps,
                       [f"{gt_sm.freqs[r].freq_hz / 1e3:.2f} kHz" for r in shown])
        freqs = np.array([f.freq_hz for f in gt_sm.freqs]) / 1e3
        nrmse_by_frequency(run.path("nrmse_by_frequency.png"), freqs, series)
    return 0


def cmd_gradcheck(run: _Run, args):
    rng = np.random.default_rng(run.cfg.seed)
    cfg = run.cfg.loss
    worst = {}
    for _ in range(args.pairs):
        pred = rng.uniform(0, 1, (args.size, args.size))
        gt = rng.uniform(0, 1, (args.size, args.size))
        for name, fn in LOSSES.items():
            a = fn(pred, gt, cfg).grad
            n = finite_diff_grad(lambda p, g, f=fn: f(p, g, cfg), pred, gt, args.epsilon)
            worst[name] = max(worst.get(name, 0.0), grad_rel_error(a, n))
    rows = [(name, err, "ok" if err <= GRADCHECK_TOL else "FAIL") for name, err in worst.items()]
    sio.write_csv(run.path("gradcheck.csv"), ["loss", "max_rel_error", "status"], rows)
    run.metrics([MetricReport("grad_rel_error", err).to_json(loss=name, tol=GRADCHECK_TOL)
                 for name, err in worst.items()])
    bad = [name for name, err in worst.items() if err > GRADCHECK_TOL]
    if bad:
        log.error("gradient check failed for %s", ", ".join(bad))
        return 1
    return 0


COMMANDS = {
    "simulate": cmd_simulate, "downsample": cmd_downsample, "train": cmd_train, "recover": cmd_recover,
    "baseline": cmd_baseline, "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (or a manifest to reuse its config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set train.iterations=200")
    common.add_argument("--out", help="output directory (default: config 'out')")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="smforge", description=__doc__.split("\n\n")[0])
    p.add_argument("--from-manifest", metavar="MANIFEST",
                   help="replay the command recorded in a manifest (use with --out)")
    p.add_argument("--out", dest="replay_out", metavar="DIR", help="output directory for --from-manifest")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("simulate", parents=[common], help="simulate a system matrix or a split collection")
    s.add_argument("--dataset", action="store_true", help="simulate the full gradient x diameter collection")

    s = sub.add_parser("downsample", parents=[common], help="stride-downsample matrices by config 'scale'")
    s.add_argument("--input", action="append", required=True)

    s = sub.add_parser("train", parents=[common], help="train the recovery network on a simulated collection")
    s.add_argument("--dataset", required=True, help="manifest written by 'simulate --dataset'")

    s = sub.add_parser("recover", parents=[common], help="apply a trained checkpoint to low-res matrices")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", action="append", required=True)

    s = sub.add_parser("baseline", parents=[common], help="interpolation or sparse-recovery upsampling")
    s.add_argument("--method", choices=("bicubic", "strided", "cs"), default="bicubic")
    s.add_argument("--input", action="append", required=True)

    s = sub.add_parser("reconstruct", parents=[common], help="Kaczmarz reconstruction of a phantom")
    s.add_argument("--gt", required=True, help="ground-truth matrix used to simulate the measurement")
    s.add_argument("--sm", action="append", required=True, metavar="[NAME=]PATH",
                   help="matrix used for reconstruction")
    s.add_argument("--phantom", choices=PHANTOM_SHAPES, default="disk")
    s.add_argument("--phantom-params", help="JSON object of phantom parameters")

    s = sub.add_parser("evaluate", parents=[common], help="nRMSE reports, per-frequency CSV and error maps")
    s.add_argument("--pred", action="append", required=True, metavar="[NAME=]PATH")
    s.add_argument("--gt", action="append", required=True)
    s.add_argument("--maps", type=int, default=4, help="number of rows to render as error maps")
    s.add_argument("--train-manifest", help="refuse to evaluate on matrices this training run consumed")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every loss gradient")
    s.add_argument("--pairs", type=int, default=20)
    s.add_argument("--size", type=int, default=16)
    s.add_argument("--epsilon", type=float, default=1e-6)
    return p


_REPLAY_SKIP = {"command", "config", "set", "out", "verbose", "from_manifest", "replay_out"}


def _replay_argv(manifest_path: str, out: str | None) -> list[str]:
    m = sio.load_manifest(manifest_path, verify=False)
    if "command" not in m:
        raise FormatError(f"{manifest_path} does not record a command")
    for entries in m.get("inputs", {}).values():
        for e in entries:
            if not Path(e["path"]).exists() or sio.sha256_file(e["path"]) != e["sha256"]:
                raise FormatError(f"recorded input {e['path']} is missing or has changed")
    argv = [m["command"], "--config", str(manifest_path)]
    if out:
        argv += ["--out", out]
    for key, value in m.get("options", {}).items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            argv += [flag] if value else []
        elif isinstance(value, list):
            for v in value:
                argv += [flag, str(v)]
        elif value is not None:
            argv += [flag, str(value)]
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.from_manifest:
        if args.command:
            parser.print_usage(sys.stderr)
            print("smforge: error: --from-manifest replays a command; do not name one", file=sys.stderr)
            return 2
        try:
            argv = _replay_argv(args.from_manifest, args.replay_out)
        except (SmforgeError, OSError, ValueError) as e:
            print(f"smforge: error: {e}", file=sys.stderr)
            return 1
        return main(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("smforge: error: a command is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.set)
        if args.out:
            cfg = dataclasses.replace(cfg, out=args.out)
        cfg = cfg.resolved()
        options = {k: v for k, v in vars(args).items() if k not in _REPLAY_SKIP}
        run = _Run(args.command, cfg, Path(cfg.out), options)
        status = COMMANDS[args.command](run, args)
        run.finish()
        return status
    except (SmforgeError, OSError, ValueError, KeyError) as e:
        print(f"smforge: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
