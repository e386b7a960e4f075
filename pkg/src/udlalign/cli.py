"""Command-line interface.

Subcommands cover the full pipeline: ``datagen`` (synthetic datasets),
``train`` (difference-learning or supervised), ``calibrate`` (bias
constant from K labeled pairs), ``align`` (one pair of images) and
``eval`` (reports + figures).  Exit codes: 0 success, 2 usage/config
error, 1 runtime failure.  ``--seed`` makes every command reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .imaging import NoiseSpec

PROG = "udlalign"


class UsageError(Exception):
    """Bad arguments or configuration (exit code 2)."""


def _noise_from_args(args) -> NoiseSpec:
    try:
        if args.noise == "none":
            return NoiseSpec.none()
        if args.noise == "gaussian":
            if args.snr is None:
                raise UsageError("--noise gaussian requires --snr")
            return NoiseSpec.gaussian(args.snr)
        if args.proportion is None:
            raise UsageError("--noise salt_pepper requires --proportion")
        return NoiseSpec.salt_pepper(args.proportion)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_datagen_coco(args) -> int:
    from . import datasets

    noise = _noise_from_args(args)
    manifest = datasets.generate_coco_pairs(
        args.src, args.out, args.count,
        patch=args.patch, max_shift=args.max_shift, noise=noise,
        texture_threshold=args.texture_threshold, seed=args.seed,
        max_rotation=args.max_rotation, split=args.split,
    )
    print(Path(args.out) / "manifest.json")
    print(f"wrote {manifest.count} pairs of {manifest.height}x{manifest.width}")
    return 0


def cmd_datagen_cryoem(args) -> int:
    from . import datasets

    snr = None if args.clean else args.snr
    manifest = datasets.generate_cryoem(
        args.centers, args.out, args.count,
        snr=snr, max_shift=args.max_shift, seed=args.seed, split=args.split,
    )
    print(Path(args.out) / "manifest.json")
    print(f"wrote {manifest.count} pairs of {manifest.height}x{manifest.width}")
    return 0


def _load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(cfg) - {"network", "train"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def cmd_train(args) -> int:
    from . import checkpoint as ckpt_mod
    from . import datasets, report, udl
    from .network import NetworkConfig

    file_cfg = _load_config_file(args.config) if args.config else {}

    data = datasets.load_dataset(args.data)
    net_kwargs = dict(file_cfg.get("network", {}))
    train_kwargs = dict(file_cfg.get("train", {}))

    # flags override config-file values
    net_kwargs.setdefault("height", data.manifest.height)
    net_kwargs.setdefault("width", data.manifest.width)
    if args.input_repr is not None:
        net_kwargs["input_repr"] = args.input_repr
    if args.disk_mask:
        net_kwargs["input_disk_mask"] = True
    train_kwargs["iterations"] = args.iterations
    train_kwargs["mode"] = args.mode
    train_kwargs["seed"] = args.seed
    if args.batch_size is not None:
        train_kwargs["batch_size"] = args.batch_size
    if args.lr is not None:
        train_kwargs["lr"] = args.lr
    if args.disturb_max_shift is not None:
        train_kwargs["disturb_max_shift"] = args.disturb_max_shift

    init_state = None
    start_iteration = 0
    try:
        if args.init_from:
            base = ckpt_mod.load_checkpoint(args.init_from)
            net_config = base.net_config
            init_state = base.net.state_dict()
            start_iteration = base.iteration
        else:
            net_config = NetworkConfig.from_dict(net_kwargs)
        train_config = udl.TrainConfig.from_dict(train_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = ckpt_mod.dataset_digest(args.data)

    def save(iteration_done: int, net) -> None:
        ckpt_mod.save_checkpoint(
            out, net, train_config=train_config,
            iteration=start_iteration + iteration_done,
            calibration=base.calibration if args.init_from else None,
            dataset_digest=digest, seed=args.seed,
        )

    net, history = udl.train(
        data, net_config, train_config,
        init_state=init_state,
        log_file=out / "train.log",
        checkpoint_callback=save,
        checkpoint_every=args.checkpoint_every,
    )
    save(train_config.iterations, net)
    if history:
        report.write_loss_curve(history, out / "loss_curve.png")
        print(f"final loss {history[-1]['loss']:.4f} after "
              f"{start_iteration + train_config.iterations} total iterations")
    print(out)
    return 0


def cmd_calibrate(args) -> int:
    from . import checkpoint as ckpt_mod
    from . import datasets, udl

    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")
    ckpt = ckpt_mod.load_checkpoint(args.ckpt)
    data = datasets.load_dataset(args.data)
    if len(data) < args.pairs:
        raise UsageError(f"dataset has only {len(data)} pairs, requested {args.pairs}")
    pairs = [data[i] for i in range(args.pairs)]
    calib = udl.calibrate_bias(ckpt.estimator(), pairs)
    if ckpt.calibration is not None:
        print(f"replacing previous calibration c={ckpt.calibration.c:.4f}")
    ckpt_mod.save_checkpoint(
        args.ckpt, ckpt.net, train_config=ckpt.train_config,
        iteration=ckpt.iteration, calibration=calib,
        dataset_digest=ckpt.dataset_digest, seed=ckpt.seed,
    )
    print(f"c={calib.c:.4f} n_pairs={calib.n_pairs} spread={calib.spread:.4f}")
    return 0


def _load_calibrated(ckpt_path):
    from . import checkpoint as ckpt_mod

    ckpt = ckpt_mod.load_checkpoint(ckpt_path)
    if ckpt.calibration is None:
        raise RuntimeError(
            f"checkpoint {ckpt_path} has no bias calibration; "
            f"run `{PROG} calibrate --ckpt {ckpt_path} --data <labeled set> --pairs 1` first"
        )
    return ckpt


def cmd_align(args) -> int:
    from . import fourier_align, imaging

    ckpt = _load_calibrated(args.ckpt)
    source = imaging.read_image(args.src)
    target = imaging.read_image(args.dst)
    t = fourier_align.align(
        ckpt.estimator(), ckpt.calibration, source, target,
        subpixel=args.subpixel, window=args.window,
    )
    print(f"{t.angle:.4f} {t.dx:g} {t.dy:g}")
    if args.out:
        imaging.write_png(args.out, fourier_align.apply_alignment(source, t))
    return 0


def cmd_eval(args) -> int:
    from . import datasets, evaluation, imaging, report

    ckpt = _load_calibrated(args.ckpt)
    data = datasets.load_dataset(args.data)
    estimator = ckpt.estimator()
    out = Path(args.out)

    if args.reference:
        reference = imaging.read_image(args.reference)
        images = [pair.target for pair in data]
        rep, average = evaluation.evaluate_reference(
            estimator, ckpt.calibration, images, reference,
            sigma=args.sigma, dataset_id=args.dataset_id,
        )
        paths = report.write_report(rep, out, average=average, reference=reference)
        print(f"{'dataset':<16}{'images':>8}{'mean correntropy':>20}")
        print(f"{rep.dataset_id:<16}{rep.sample_count:>8}{rep.mean_correntropy:>20.4f}")
    else:
        rep = evaluation.evaluate_synthetic(
            estimator, ckpt.calibration, data,
            dataset_id=args.dataset_id, include_translation=args.translation,
        )
        paths = report.write_report(rep, out)
        header = f"{'dataset':<16}{'pairs':>8}{'mean err':>12}{'median err':>12}"
        row = (f"{rep.dataset_id:<16}{rep.sample_count:>8}"
               f"{rep.mean_rotation_error:>12.2f}{rep.median_rotation_error:>12.2f}")
        if rep.mean_translation_error is not None:
            header += f"{'trans err':>12}"
            row += f"{rep.mean_translation_error:>12.2f}"
        print(header)
        print(row)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Unsupervised difference learning for noisy rigid image alignment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    datagen = sub.add_parser("datagen", help="synthesize alignment datasets")
    dsub = datagen.add_subparsers(dest="flavor", required=True)

    coco = dsub.add_parser("coco", help="patch pairs cut from natural images")
    coco.add_argument("--src", required=True, help="directory of source images")
    coco.add_argument("--out", required=True)
    coco.add_argument("--count", type=int, required=True)
    coco.add_argument("--patch", type=int, default=128)
    coco.add_argument("--max-shift", type=int, default=10)
    coco.add_argument("--max-rotation", type=float, default=360.0)
    coco.add_argument("--noise", choices=["none", "gaussian", "salt_pepper"], default="none")
    coco.add_argument("--snr", type=float, default=None)
    coco.add_argument("--proportion", type=float, default=None)
    coco.add_argument("--texture-threshold", type=float, default=0.02)
    coco.add_argument("--seed", type=int, default=0)
    coco.add_argument("--split", default="train")
    coco.set_defaults(func=cmd_datagen_coco)

    cryo = dsub.add_parser("cryoem", help="synthetic particle images from cluster centers")
    cryo.add_argument("--centers", required=True, help="directory of cluster-center images")
    cryo.add_argument("--out", required=True)
    cryo.add_argument("--count", type=int, required=True, help="images per center")
    cryo.add_argument("--snr", type=float, default=0.1)
    cryo.add_argument("--clean", action="store_true", help="skip the noise stage")
    cryo.add_argument("--max-shift", type=int, default=10)
    cryo.add_argument("--seed", type=int, default=0)
    cryo.add_argument("--split", default="train")
    cryo.set_defaults(func=cmd_datagen_cryoem)

    train = sub.add_parser("train", help="train the rotation regressor")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True, help="checkpoint directory")
    train.add_argument("--iterations", type=int, required=True)
    train.add_argument("--mode", choices=["udl", "supervised"], default="udl")
    train.add_argument("--input-repr", choices=["spatial", "spectrum"], default=None)
    train.add_argument("--disk-mask", action="store_true",
                       help="gate inputs by the fixed inscribed disk")
    train.add_argument("--batch-size", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--disturb-max-shift", type=int, default=None)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--init-from", default=None, help="warm-start checkpoint")
    train.add_argument("--config", default=None, help="JSON config file (strict keys)")
    train.add_argument("--checkpoint-every", type=int, default=0)
    train.set_defaults(func=cmd_train)

    cal = sub.add_parser("calibrate", help="estimate the output bias constant")
    cal.add_argument("--ckpt", required=True)
    cal.add_argument("--data", required=True, help="labeled dataset")
    cal.add_argument("--pairs", type=int, default=1)
    cal.set_defaults(func=cmd_calibrate)

    align = sub.add_parser("align", help="align one image pair")
    align.add_argument("--ckpt", required=True)
    align.add_argument("--src", required=True)
    align.add_argument("--dst", required=True)
    align.add_argument("--out", default=None, help="write the aligned source here")
    align.add_argument("--subpixel", action="store_true")
    align.add_argument("--window", action="store_true")
    align.set_defaults(func=cmd_align)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True, help="report directory")
    ev.add_argument("--dataset-id", default="dataset")
    ev.add_argument("--reference", default=None,
                    help="score by correntropy against this reference image")
    ev.add_argument("--sigma", type=float, default=None)
    ev.add_argument("--translation", action=argparse.BooleanOptionalAction, default=True)
    ev.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"{PROG}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
