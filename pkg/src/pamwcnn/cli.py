"""Command-line entry point: ``pamwcnn {gen,train,denoise,eval,gradcheck,stack}``.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure. Failures print a
single ``error: <kind>: <message>`` line on stderr.
"""
import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, checkpoint, gradcheck, metrics, mwcnn, phantom, trainer
from .imageio import FormatError, read_image, write_image, write_pgm16, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("pamwcnn")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


# ----------------------------------------------------------------- run config

RUN_CONFIG_DEFAULTS = {
    "manifest": "manifest.txt",
    "out_dir": ".",
    "levels": "2",
    "convs_per_block": "2",
    "channel_schedule": "16,32",
    "residual_mode": "false",
    "learning_rate": "1.024e-4",
    "adam_beta1": "0.9",
    "adam_beta2": "0.999",
    "adam_epsilon": "1e-8",
    "epochs": "256",
    "batch_size": "8",
    "split_fraction": "0.85",
    "seed": "0",
    "lr_decay_every": "0",
    "lr_decay_factor": "1.0",
    "checkpoint_every": "0",
}


def parse_run_config(text):
    """``key = value`` lines; unknown keys are rejected, missing ones defaulted."""
    values = dict(RUN_CONFIG_DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in RUN_CONFIG_DEFAULTS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _bool(s):
    return s.strip().lower() in ("1", "true", "yes", "on")


def model_config_from(values):
    return mwcnn.ModelConfig(
        levels=int(values["levels"]),
        convs_per_block=int(values["convs_per_block"]),
        channel_schedule=tuple(int(x) for x in values["channel_schedule"].split(",") if x.strip()),
        residual_mode=_bool(values["residual_mode"]),
    )


def train_config_from(values):
    return trainer.TrainConfig(
        learning_rate=float(values["learning_rate"]),
        adam_beta1=float(values["adam_beta1"]),
        adam_beta2=float(values["adam_beta2"]),
        adam_epsilon=float(values["adam_epsilon"]),
        epochs=int(values["epochs"]),
        batch_size=int(values["batch_size"]),
        split_fraction=float(values["split_fraction"]),
        seed=int(values["seed"]),
        lr_decay_every=int(values["lr_decay_every"]),
        lr_decay_factor=float(values["lr_decay_factor"]),
        checkpoint_every=int(values["checkpoint_every"]),
    )


# ------------------------------------------------------------------- commands

def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args):
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    for p in presets:
        if p not in phantom.PRESETS:
            raise UsageError(f"unknown preset {p!r}; known: {', '.join(phantom.PRESETS)}")
    common = dict(
        height=args.height,
        width=args.width,
        pixel_spacing_mm=args.spacing,
        scene=args.scene,
        stroke_count=args.stroke_count,
        text=args.text,
        attenuation_per_mm=args.attenuation,
    )
    specs = [phantom.PhantomSpec(seed=seed + i, **common) for i in range(args.count)]
    entries = phantom.make_manifest(specs, presets, seed)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    written = []
    for i, entry in enumerate(entries):
        (pair,) = phantom.dataset_from_manifest([entry]).pairs
        noisy, clean = f"images/{i:05d}_noisy.paif", f"images/{i:05d}_clean.paif"
        write_image(out / noisy, pair.noisy)
        write_image(out / clean, pair.clean)
        written.append(phantom.ManifestEntry(entry.spec, entry.preset, entry.noise_seed, noisy, clean))
    (out / "manifest.txt").write_text(phantom.format_manifest(written))
    print(f"wrote {len(written)} pairs and {out / 'manifest.txt'}")


def load_manifest_dataset(path):
    path = Path(path)
    entries = phantom.parse_manifest(path.read_text())
    pairs = []
    for e in entries:
        if e.noisy_path:
            noisy = read_image(path.parent / e.noisy_path)
            clean = read_image(path.parent / e.clean_path)
            pairs.append(phantom.Pair(noisy, clean, e.preset))
        else:
            pairs.extend(phantom.dataset_from_manifest([e]).pairs)
    return phantom.PairedDataset(pairs)


def cmd_train(args):
    if not args.config:
        raise UsageError("train needs --config")
    cfg_path = Path(args.config)
    values = parse_run_config(cfg_path.read_text())
    if args.seed is not None:
        values["seed"] = str(args.seed)
    out = Path(args.out_dir if args.out_dir_given else cfg_path.parent / values["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        mcfg, tcfg = model_config_from(values), train_config_from(values)
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from None

    dataset = trainer.normalize_dataset(load_manifest_dataset(cfg_path.parent / values["manifest"]))
    h, w = dataset[0].noisy.shape
    mwcnn.shape_walk(mcfg, h, w)
    params = mwcnn.build_model(mcfg, tcfg.seed)

    ck_dir = out / "checkpoints"

    def on_checkpoint(epoch, p):
        ck_dir.mkdir(exist_ok=True)
        checkpoint.save_checkpoint(ck_dir / f"epoch_{epoch:04d}.mwck", p)

    def on_epoch(rec):
        print(f"epoch {rec.epoch:4d} train {rec.train_loss:.6g} test {rec.test_loss:.6g}", flush=True)

    try:
        result = trainer.train(params, dataset, tcfg, on_epoch=on_epoch, on_checkpoint=on_checkpoint)
    except trainer.TrainingDivergedError as exc:
        raise NumericFailure(str(exc)) from None
    checkpoint.save_checkpoint(out / "model.mwck", result.params)
    (out / "loss.csv").write_text(trainer.history_to_csv(result.history))
    (out / "split.csv").write_text(
        "role,index\n"
        + "".join(f"train,{i}\n" for i in result.train_indices)
        + "".join(f"test,{i}\n" for i in result.test_indices)
    )
    print(f"wrote {out / 'model.mwck'} and {out / 'loss.csv'}")


def denoise_image(params, image):
    x = trainer.normalize(np.asarray(image.data, dtype=np.float32))[None, None]
    y = mwcnn.forward(params, x)[0, 0]
    return image.with_data(y.astype(np.float32))


def cmd_denoise(args):
    params = checkpoint.load_checkpoint(args.checkpoint)
    out = _out_dir(args)

    def run(path):
        img = read_image(path)
        t0 = time.perf_counter()
        den = denoise_image(params, img)
        dt = time.perf_counter() - t0
        target = out / (Path(path).stem + "_denoised.paif")
        write_image(target, den)
        if args.pgm:
            write_pgm16(target.with_suffix(".pgm"), den)
        return path, target, dt

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(run, args.inputs))
    lines = ["input,output,latency_s"]
    for src, dst, dt in results:
        print(f"{src} -> {dst} ({dt:.3f} s)")
        lines.append(f"{src},{dst},{dt:.6f}")
    # latency is wall-clock and so deliberately kept out of the reproducible outputs
    if args.latency_csv:
        Path(args.latency_csv).write_text("\n".join(lines) + "\n")


def cmd_eval(args):
    out = _out_dir(args)
    reports = []
    if args.rois:
        if args.truths:
            raise UsageError("give either --truths (paired mode) or --rois (CNR mode), not both")
        for path in args.outputs:
            img = read_image(path)
            pix = np.clip(img.data, 0, 1) if args.clip else img.data
            objs, bgs = metrics.read_roi_spec(args.rois, img)
            value = metrics.cnr(pix, objs, bgs)
            reports.append(metrics.MetricReport(Path(path).name, cnr_db=value, rois=objs + bgs))
    else:
        if not args.truths or len(args.truths) != len(args.outputs):
            raise UsageError("paired mode needs one --truths file per output")
        for o_path, t_path in zip(args.outputs, args.truths):
            o, t = read_image(o_path), read_image(t_path)
            if o.shape != t.shape:
                raise FormatError(f"{o_path} is {o.shape}, {t_path} is {t.shape}")
            o_pix = trainer.normalize(o.data) if args.normalize_outputs else o.data
            t_pix = trainer.normalize(t.data) if args.normalize_truths else t.data
            reports.append(
                metrics.evaluate_pair(Path(o_path).name, o_pix, t_pix, args.i_max, args.k1, args.k2)
            )
    (out / args.csv_name).write_text(metrics.reports_to_csv(reports))
    print(metrics.reports_to_table(reports))


def cmd_gradcheck(args):
    seeds = range(args.seeds)
    results = gradcheck.run_suite(seeds=seeds, models=args.preset or ("tiny",))
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed |= not r.passed
        print(f"{status} {r.name:<22} max_rel_err={r.error:.3e} tol={r.tolerance:.0e}")
    if failed:
        raise NumericFailure("gradient check failed")


def cmd_stack(args):
    frames = [read_image(p) for p in args.frames]
    target = Path(args.output) if args.output else _out_dir(args) / "volume.pavf"
    try:
        write_volume(target, frames)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    print(f"stacked {len(frames)} frames into {target}")


# --------------------------------------------------------------------- parser

def build_parser():
    # SUPPRESS lets global flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("--config", help="key=value run config file")
    common.add_argument("--out-dir", help="output directory (default: .)")
    common.add_argument("--threads", type=int, help="worker / BLAS threads (default: 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pamwcnn", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic paired dataset")
    g.add_argument("--scene", choices=phantom.SCENES, default="strokes")
    g.add_argument("--count", type=int, default=10, help="number of clean scenes")
    g.add_argument("--presets", default="0.25mJ", help="comma-separated preset labels")
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--spacing", type=float, default=0.1, help="pixel spacing in mm")
    g.add_argument("--stroke-count", type=int, default=3)
    g.add_argument("--text", default="PACT")
    g.add_argument("--attenuation", type=float, default=0.0, help="depth attenuation per mm")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train from a run config")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", parents=[common], help="denoise image files with a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--pgm", action="store_true", help="also export 16-bit PGM previews")
    d.add_argument("--latency-csv", help="write per-frame wall-clock latency here")
    d.add_argument("inputs", nargs="+")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM against truths, or CNR from ROIs")
    e.add_argument("outputs", nargs="+")
    e.add_argument("--truths", nargs="+")
    e.add_argument("--rois", help="ROI file: role, center_row_mm, center_col_mm, h_mm, w_mm")
    e.add_argument("--i-max", type=float, default=metrics.DEFAULT_I_MAX)
    e.add_argument("--k1", type=float, default=metrics.DEFAULT_K1)
    e.add_argument("--k2", type=float, default=metrics.DEFAULT_K2)
    e.add_argument("--no-normalize-truths", dest="normalize_truths", action="store_false")
    e.add_argument("--normalize-outputs", action="store_true", help="min-max scale outputs first")
    e.add_argument("--no-clip", dest="clip", action="store_false", help="CNR mode: skip [0,1] clip")
    e.add_argument("--csv-name", default="metrics.csv")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    c.add_argument("--preset", action="append", choices=sorted(gradcheck.TINY_MODELS))
    c.add_argument("--seeds", type=int, default=20)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("stack", parents=[common], help="stack frames into a volume")
    s.add_argument("frames", nargs="+")
    s.add_argument("--output")
    s.set_defaults(func=cmd_stack)
    return p


GLOBAL_DEFAULTS = {"seed": None, "config": None, "out_dir": None, "threads": 1, "verbose": False}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    args.out_dir_given = args.out_dir is not None
    if args.out_dir is None:
        args.out_dir = "."
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: data: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
