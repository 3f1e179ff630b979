"""``pcanet`` command line: gendata, train, eval, ablate, visualize.

Exit status is 0 on success, 2 for bad flags or config values (with usage
text), and 1 for failures while running.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, load_config
from .data import Dataset, LabeledImage, eval_images, export_synthetic, generate_synthetic, load_image_folder
from .errors import ConfigError
from .trainer import evaluate, fit, init_state, load_checkpoint, save_checkpoint
from .viz import grad_cam, render_heatmap

# The synthetic set is fixed across model seeds unless --data points elsewhere.
DATA_SEED = 0

# (name, enable_ca, enable_ae, enable_center): the all-off base plus the five ablation rows.
ABLATIONS = (
    ("base", False, False, False),
    ("ca", True, False, False),
    ("ae", False, True, False),
    ("ca_center", True, False, True),
    ("ae_center", False, True, True),
    ("full", True, True, True),
)
LAMBDA_SWEEP = (0.0, 0.1, 0.5, 1.0)


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _config(args, seed_key: bool = True) -> RunConfig:
    overrides = list(args.set or [])
    if seed_key and getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    try:
        return load_config(args.config, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None


def _split(root: Path, name: str, size: int) -> Dataset | None:
    sub = root / name
    return load_image_folder(sub, size) if sub.is_dir() else None


def _datasets(cfg: RunConfig, data: str | None) -> tuple[Dataset, Dataset | None]:
    """(train, test) from ``data/train`` + ``data/test``, or the synthetic set."""
    if data is None:
        return generate_synthetic(cfg.data, DATA_SEED)
    root = Path(data)
    size = cfg.backbone.input_size
    train = _split(root, "train", size)
    if train is None:
        return load_image_folder(root, size), None
    return train, _split(root, "test", size)


def _test_set(cfg: RunConfig, data: str | None) -> Dataset:
    if data is None:
        return generate_synthetic(cfg.data, DATA_SEED)[1]
    root = Path(data)
    return _split(root, "test", cfg.backbone.input_size) or load_image_folder(root, cfg.backbone.input_size)


def _check_classes(state, ds: Dataset) -> None:
    if ds.num_classes != state.model.num_classes:
        raise ValueError(f"dataset has {ds.num_classes} classes, checkpoint expects {state.model.num_classes}")


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_gendata(args) -> int:
    cfg = _config(args, seed_key=False)
    seed = DATA_SEED if args.seed is None else args.seed
    out = Path(args.out or "data")
    train, test = export_synthetic(cfg.data, seed, out)
    _log(f"wrote {len(train)} train and {len(test)} test images to {out}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out or "run")
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        if args.set or args.config:
            raise UsageError("--config/--set cannot be combined with --checkpoint (resume uses the saved config)")
        cfg = state.cfg
    else:
        cfg = _config(args)
        state = None
    train, test = _datasets(cfg, args.data)
    if state is None:
        state = init_state(cfg, train.num_classes, train.class_names)
    _check_classes(state, train)

    def progress(rec):
        acc = rec["acc_test"]
        _log(f"epoch {rec['epoch']:3d}  lr {rec['lr']:.5f}  loss {rec['loss_total']:.4f}  "
             f"train {rec['acc_train']:.3f}  test {'-' if acc is None else f'{acc:.4f}'}  "
             f"{rec['seconds']:.1f}s")
    history = fit(state, train, test, out_dir=out, progress=progress)
    if not history:
        save_checkpoint(state, out / "checkpoint.pcan")
        (out / "metrics.jsonl").touch()
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    state = load_checkpoint(args.checkpoint)
    test = _test_set(state.cfg, args.data)
    _check_classes(state, test)
    print(f"{evaluate(test, state):.6f}")
    return 0


def _ablation_run(payload: dict) -> dict:
    t0 = time.perf_counter()
    cfg = RunConfig.from_dict(payload["config"])
    train, test = _datasets(cfg, payload["data"])
    state = init_state(cfg, train.num_classes, train.class_names)
    history = fit(state, train, test, out_dir=payload["run_dir"])
    acc = evaluate(test, state) if test is not None else float("nan")
    seconds = time.perf_counter() - t0
    return {"name": payload["name"], "seed": cfg.train.seed, "lambda": cfg.train.lam,
            "flags": cfg.train.flags, "accuracy": acc, "epochs": len(history), "seconds": seconds,
            "run_dir": payload["run_dir"]}


def format_report(rows: list[dict]) -> str:
    def mark(on):
        return "yes" if on else "-"
    lines = [f"{'config':<10} {'CA-Module':>9} {'AE-Module':>9} {'center loss':>11} {'seed':>5} {'accuracy':>9}"]
    for r in rows:
        f = r["flags"]
        lines.append(f"{r['name']:<10} {mark(f['enable_ca']):>9} {mark(f['enable_ae']):>9} "
                     f"{mark(f['enable_center']):>11} {r['seed']:>5} {r['accuracy']:>9.4f}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    seeds = args.seed or [0]
    base = _config(args, seed_key=False)
    out = Path(args.out or "ablation")
    jobs = []
    for seed in seeds:
        for name, ca, ae, center in ABLATIONS:
            cfg = base.updated({"seed": seed, "enable_ca": ca, "enable_ae": ae, "enable_center": center})
            jobs.append({"name": name, "config": cfg.to_dict(), "data": args.data,
                         "run_dir": str(out / "runs" / f"{name}-seed{seed}")})
    sweep = []
    if args.lambda_sweep:
        for seed in seeds:
            for lam in LAMBDA_SWEEP:
                cfg = base.updated({"seed": seed, "lambda": lam})
                sweep.append({"name": f"full-lambda{lam:g}", "config": cfg.to_dict(), "data": args.data,
                              "run_dir": str(out / "runs" / f"full-lambda{lam:g}-seed{seed}")})
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_ablation_run, jobs + sweep))
    else:
        results = []
        for job in jobs + sweep:
            _log(f"ablate: {job['name']} (seed {job['config']['seed']})")
            results.append(_ablation_run(job))
            _log(f"ablate: {job['name']} accuracy {results[-1]['accuracy']:.4f} in {results[-1]['seconds']:.0f}s")
    rows, sweep_rows = results[:len(jobs)], results[len(jobs):]

    def public(r):
        return {k: r[k] for k in ("name", "flags", "lambda", "seed", "accuracy", "epochs", "run_dir")}
    report = {"rows": [public(r) for r in rows]}
    if sweep_rows:
        report["lambda_sweep"] = [public(r) for r in sweep_rows]
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    text = format_report(rows)
    if sweep_rows:
        text += "\nlambda sweep (all modules on)\n" + "".join(
            f"lambda {r['lambda']:<4g} seed {r['seed']:>3}  accuracy {r['accuracy']:.4f}\n" for r in sweep_rows)
    (out / "report.txt").write_text(text)
    # wall time varies run to run, so it is kept out of the report files
    (out / "timings.json").write_text(json.dumps(
        [{"name": r["name"], "seed": r["seed"], "lambda": r["lambda"], "seconds": r["seconds"]}
         for r in results], indent=2) + "\n")
    sys.stdout.write(text)
    return 0


def _file_stem(image_id: str) -> str:
    return image_id.replace("/", "__")


def cmd_visualize(args) -> int:
    if not args.checkpoint:
        raise UsageError("visualize needs --checkpoint")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    models = [("full", load_checkpoint(args.checkpoint))]
    if args.baseline:
        models.append(("base", load_checkpoint(args.baseline)))
    cfg = models[0][1].cfg
    test = _test_set(cfg, args.data)
    for _, state in models:
        _check_classes(state, test)
    pixels = eval_images(test)
    out = Path(args.out or "heatmaps")
    for i in range(min(args.count, len(test))):
        image = LabeledImage(pixels[i], int(test.labels[i]), test.ids[i])
        for name, state in models:
            cam = grad_cam(state, image, image.label)
            path = render_heatmap(cam, image, out / f"{_file_stem(image.id)}_{name}.ppm")
            _log(f"wrote {path}")
    return 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcanet", description="Pair-based co-attention classifier.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gendata,train,eval,ablate,visualize}")

    def common(p, seed_help="random seed", repeat_seed=False):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="dataset folder (with train/ and test/ class folders)")
        p.add_argument("--checkpoint", help="checkpoint file")
        if repeat_seed:
            p.add_argument("--seed", type=int, action="append", help=seed_help)
        else:
            p.add_argument("--seed", type=int, help=seed_help)
        return p

    common(sub.add_parser("gendata", help="write the synthetic dataset as image folders"),
           seed_help="dataset seed (default 0)")
    common(sub.add_parser("train", help="train a model; --checkpoint resumes"))
    common(sub.add_parser("eval", help="print top-1 test accuracy of a checkpoint"))
    p = common(sub.add_parser("ablate", help="train the six module configurations and report"),
               seed_help="model seed (repeatable)", repeat_seed=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--lambda-sweep", action="store_true", help="also train the full model for several lambdas")
    p = common(sub.add_parser("visualize", help="write Grad-CAM heatmaps for test images"))
    p.add_argument("--baseline", help="baseline checkpoint to compare against")
    p.add_argument("--count", type=int, default=4, help="number of test images")
    return parser


COMMANDS = {"gendata": cmd_gendata, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "visualize": cmd_visualize}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _log(f"pcanet {args.command}: error: {exc}")
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # report, do not dump a traceback at the user
        _log(f"pcanet {args.command}: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
