"""Command-line interface: dataset prep, training, evaluation, timing
benchmarks, prediction and curve export.

Exit codes: 0 ok, 2 usage/input error, 3 numerical failure. Every command
echoes its fully resolved configuration at startup; a run is reproducible
from the echoed config alone. Config files are plain `key=value` lines
('#' comments allowed); unknown keys are errors and every flag overrides
the file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import NumericsError
from .camera import CameraIntrinsics, ICVL_INTRINSICS
from .checkpoint import CheckpointError
from .data import (
    CacheError,
    ManifestError,
    SampleCache,
    TrainingSet,
    build_cache,
    load_manifest,
    save_synth_dataset,
)
from .evaluate import (
    DEFAULT_THRESHOLDS,
    benchmark_forward,
    compare_report,
    evaluate,
    write_curve_csv,
    write_curve_svg,
)
from .model import Model, ModelSpec, param_count
from .preprocess import (
    AugmentRanges,
    PreprocessConfig,
    denormalize_joints,
    preprocess_frame,
)
from .synth import synth_generate
from .train import (
    BaggingEnsemble,
    TrainConfig,
    TrainDivergence,
    train,
    train_bagging,
    write_loss_csv,
)

USAGE_ERROR = 2
NUMERIC_ERROR = 3

CLI_VARIANTS = ("basic", "basic-large", "region-ensemble", "region-bagging", "basic-bagging")


@dataclass
class RunConfig:
    """Flat run configuration; defaults are the published training recipe."""

    variant: str = "region-ensemble"
    joints: int = 16
    grid_n: int = 2
    fc_dim: int = 2048
    fc2_dim: int = 0  # 0 = auto (8192 for basic-large, else fc_dim)
    channels: str = "16,16/32,32/64,64"
    input_size: int = 96
    dropout: float = 0.5
    batch_size: int = 128
    lr0: float = 0.005
    lr_drop_every: int = 50000
    lr_factor: float = 10.0
    max_iters: int = 200000
    weight_decay: float = 0.0005
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    aug_translate_mm: float = 10.0
    aug_scale_min: float = 0.9
    aug_scale_max: float = 1.1
    aug_rotate_deg: float = 180.0
    snapshot_every: int = 10000
    snapshots_keep: int = 3
    cube_mm: float = 150.0
    near_mm: float = 100.0
    far_mm: float = 700.0
    fx: float = ICVL_INTRINSICS.fx
    fy: float = ICVL_INTRINSICS.fy
    cx: float = ICVL_INTRINSICS.cx
    cy: float = ICVL_INTRINSICS.cy
    bagging_k: int = 4

    def model_spec(self, variant=None):
        ch = tuple(tuple(int(x) for x in pair.split(",")) for pair in self.channels.split("/"))
        return ModelSpec(
            variant=variant or self.variant,
            joints=self.joints,
            grid_n=self.grid_n,
            fc_dim=self.fc_dim,
            fc2_dim=self.fc2_dim or None,
            channels=ch,
            input_size=self.input_size,
            dropout=self.dropout,
        )

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            lr0=self.lr0,
            lr_drop_every=self.lr_drop_every,
            lr_factor=self.lr_factor,
            max_iters=self.max_iters,
            weight_decay=self.weight_decay,
            momentum=self.momentum,
            seed=self.seed,
            augment=self.augment,
            aug_ranges=AugmentRanges(
                translate_mm=self.aug_translate_mm,
                scale=(self.aug_scale_min, self.aug_scale_max),
                rotate_deg=self.aug_rotate_deg,
            ),
            snapshot_every=self.snapshot_every,
            snapshots_keep=self.snapshots_keep,
        )

    def preprocess_config(self):
        return PreprocessConfig(
            cube_mm=self.cube_mm,
            out_size=self.input_size,
            near_mm=self.near_mm,
            far_mm=self.far_mm,
        )

    def intrinsics(self):
        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy)

    def echo(self, out=print):
        out("resolved configuration:")
        for f in fields(self):
            out(f"  {f.name}={getattr(self, f.name)}")


def load_config_file(path):
    """Parse key=value lines; unknown keys are errors."""
    known = {f.name: f.type for f in fields(RunConfig)}
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown configuration key {key!r}")
        overrides[key] = value
    return overrides


def _coerce(value, target):
    if isinstance(target, bool):
        if isinstance(value, bool):
            return value
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    return type(target)(value)


def resolve_config(args):
    """File values override defaults; explicit CLI flags override the file."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            cfg = replace(cfg, **{key: _coerce(value, getattr(cfg, key))})
    flag_map = {
        "variant": "variant",
        "seed": "seed",
        "grid_n": "grid_n",
        "iters": "max_iters",
        "batch": "batch_size",
        "lr0": "lr0",
        "joints": "joints",
        "fc_dim": "fc_dim",
        "channels": "channels",
        "dropout": "dropout",
        "augment": "augment",
        "cube_mm": "cube_mm",
        "k": "bagging_k",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg = replace(cfg, **{key: _coerce(value, getattr(cfg, key))})
    return cfg


def _synthetic_training_set(cfg, count, seed):
    samples = synth_generate(count, joints=cfg.joints, seed=seed, intrinsics=cfg.intrinsics())
    prep = cfg.preprocess_config()
    crops = [preprocess_frame(s.frame, prep) for s in samples]
    anns = [s.annotation for s in samples]
    return TrainingSet.from_crops(crops, anns), samples


def _load_training_set(cfg, args):
    if getattr(args, "synthetic", None):
        ts, _ = _synthetic_training_set(cfg, args.synthetic, cfg.seed)
        return ts
    if getattr(args, "cache", None):
        return TrainingSet.from_cache(SampleCache(args.cache))
    raise ValueError("provide --cache or --synthetic N")


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args):
    cfg = resolve_config(args)
    cfg.echo()
    samples = synth_generate(
        args.count, joints=cfg.joints, seed=cfg.seed, intrinsics=cfg.intrinsics()
    )
    out = Path(args.out)
    manifest_path = save_synth_dataset(samples, out, name=args.name)
    print(f"wrote {len(samples)} frames and {manifest_path}")
    return 0


def cmd_prepare(args):
    cfg = resolve_config(args)
    cfg.echo()
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache_path = out / f"{manifest.name}.renc"
    previous = cache_path.read_bytes() if cache_path.exists() else None
    tmp_path = cache_path.with_suffix(".tmp")
    cache = build_cache(
        manifest, cfg.preprocess_config(), tmp_path, skip_errors=args.skip_errors, log=print
    )
    data = tmp_path.read_bytes()
    tmp_path.unlink()
    if previous is not None and previous == data:
        print(f"{cache_path} unchanged ({len(cache)} records)")
    else:
        cache_path.write_bytes(data)
        print(f"wrote {cache_path} ({len(cache)} records)")
    return 0


def _run_dir(args, cfg):
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.variant}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config_echo(cfg, out_dir):
    lines = []
    cfg.echo(out=lines.append)
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")


def cmd_train(args):
    cfg = resolve_config(args)
    cfg.echo()
    out_dir = _run_dir(args, cfg)
    _write_config_echo(cfg, out_dir)
    dataset = _load_training_set(cfg, args)
    tc = cfg.train_config()

    if cfg.variant == "basic-bagging":
        spec = cfg.model_spec("basic")
        ensemble, histories = train_bagging(
            dataset, tc, spec=spec, k=cfg.bagging_k, out_dir=out_dir, log=print
        )
        member_files = []
        for i, member in enumerate(ensemble.members):
            path = out_dir / f"member{i}.renm"
            member.save(path)
            member_files.append(path.name)
        (out_dir / "ensemble.txt").write_text(
            "basic-bagging\n" + "\n".join(member_files) + "\n"
        )
        write_loss_csv(histories[-1], out_dir / "loss.csv")
        total = sum(param_count(m)["total"] for m in ensemble.members)
        summary = f"variant=basic-bagging k={cfg.bagging_k} params={total}"
    else:
        model = Model(cfg.model_spec(), seed=cfg.seed)
        result = train(model, dataset, tc, out_dir=out_dir, log=print)
        model.save(out_dir / "checkpoint.renm")
        write_loss_csv(result.history, out_dir / "loss.csv")
        summary = (
            f"variant={cfg.variant} iters={len(result.history)} "
            f"final_loss={result.history[-1][2]:.6g} params={param_count(model)['total']} "
            f"wall_s={result.wall_seconds:.1f}"
        )
    (out_dir / "summary.txt").write_text(summary + "\n")
    print(summary)
    print(f"run artifacts in {out_dir}")
    return 0


def _load_predictor(path):
    """A checkpoint file or a basic-bagging ensemble descriptor."""
    path = Path(path)
    if path.name == "ensemble.txt" or path.suffix == ".txt":
        lines = path.read_text().split()
        members = [Model.load(path.parent / name) for name in lines[1:]]
        return BaggingEnsemble(members)
    return Model.load(path)


def _predict_batched(predictor, patches, batch=64):
    outs = [
        predictor.predict(patches[i : i + batch]) for i in range(0, len(patches), batch)
    ]
    return np.concatenate(outs, axis=0)


def _eval_one(predictor, cache_like):
    patches, labels, crops = cache_like
    preds_norm = _predict_batched(predictor, patches[:, None])
    preds = [denormalize_joints(p, c) for p, c in zip(preds_norm, crops)]
    gts = [denormalize_joints(l, c) for l, c in zip(labels, crops)]
    return evaluate(preds, gts)


def _eval_data(cfg, args):
    if getattr(args, "synthetic", None):
        ts, _ = _synthetic_training_set(cfg, args.synthetic, cfg.seed + 1)
        crops = [ts.crop(i) for i in range(len(ts))]
        return ts.patches, ts.labels, crops
    cache = SampleCache(args.cache)
    ts = TrainingSet.from_cache(cache)
    crops = [cache.crop(i) for i in range(len(cache))]
    return ts.patches, ts.labels, crops


def cmd_eval(args):
    cfg = resolve_config(args)
    cfg.echo()
    out_dir = Path(args.out) if args.out else Path("runs") / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _eval_data(cfg, args)
    named = []
    for ckpt in args.checkpoint:
        predictor = _load_predictor(ckpt)
        if predictor.spec.output_dim != data[1].shape[1]:
            raise ValueError(
                f"checkpoint {ckpt} predicts {predictor.spec.output_dim} values, "
                f"dataset has {data[1].shape[1]}"
            )
        name = Path(ckpt).parent.name or Path(ckpt).stem
        named.append((name, _eval_one(predictor, data)))

    curves = {}
    for name, report in named:
        (out_dir / f"report_{name}.txt").write_text(report.to_text() + "\n")
        write_curve_csv(report.success_curve, out_dir / f"curve_{name}.csv")
        curves[name] = report.success_curve
        print(f"{name}: mean error {report.mean_error_mm:.3f} mm over {report.frame_count} frames")
    if args.svg:
        write_curve_svg(curves, out_dir / "curves.svg")
    if len(named) > 1:
        comp = compare_report(named, baseline=named[0][0])
        (out_dir / "comparison.txt").write_text(comp.to_text() + "\n")
        (out_dir / "comparison.csv").write_text(comp.to_csv())
        print(comp.to_text())
    print(f"evaluation artifacts in {out_dir}")
    return 0


def cmd_bench(args):
    cfg = resolve_config(args)
    cfg.echo()
    batch = np.zeros((args.batch, 1, cfg.input_size, cfg.input_size), np.float32)
    rows = []
    for ckpt in args.checkpoint or []:
        predictor = _load_predictor(ckpt)
        label = Path(ckpt).parent.name or Path(ckpt).stem
        rows.append((label, benchmark_forward(predictor, batch, reps=args.reps)))
    for variant in args.variant or []:
        if variant == "basic-bagging":
            spec = cfg.model_spec("basic")
            predictor = BaggingEnsemble([Model(spec, seed=s) for s in range(cfg.bagging_k)])
        else:
            predictor = Model(cfg.model_spec(variant), seed=cfg.seed)
        rows.append((variant, benchmark_forward(predictor, batch, reps=args.reps)))
    if not rows:
        raise ValueError("nothing to benchmark: pass --checkpoint or --variant")
    width = max(len(n) for n, _ in rows)
    for name, stats in rows:
        print(f"{name:<{width}}  {stats}")
    if args.assert_order:
        names = args.assert_order.split("<")
        by_name = dict(rows)
        missing = [n for n in names if n not in by_name]
        if missing:
            raise ValueError(f"--assert-order references unbenchmarked entries: {missing}")
        times = [by_name[n].p50_ms for n in names]
        ok = all(a < b for a, b in zip(times, times[1:]))
        print(f"ordering {' < '.join(names)}: {'holds' if ok else 'VIOLATED'}")
        if not ok:
            return 1
    return 0


def cmd_predict(args):
    cfg = resolve_config(args)
    cfg.echo()
    predictor = _load_predictor(args.checkpoint)
    manifest = load_manifest(args.frames)
    prep = cfg.preprocess_config()
    lines = []
    for i in range(len(manifest)):
        frame = manifest.load_frame(i)
        crop = preprocess_frame(frame, prep)
        pred_norm = predictor.predict(crop.patch[None, None])[0]
        world = denormalize_joints(pred_norm, crop).joints.reshape(-1)
        nums = " ".join(f"{v:.4f}" for v in world)
        lines.append(f"{manifest.entries[i][0]} {nums}")
    intr = manifest.intrinsics
    header = [
        f"#name={manifest.name}-pred",
        f"#joints={manifest.joints}",
        f"#intrinsics={intr.fx},{intr.fy},{intr.cx},{intr.cy}",
        f"#split={manifest.split}",
    ]
    Path(args.out).write_text("\n".join(header + lines) + "\n")
    print(f"wrote predictions for {len(lines)} frames to {args.out}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="renet",
        description="Region-ensemble hand-pose regression: data prep, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="global rng seed")
        p.add_argument("--joints", type=int, help="joint count J")
        p.add_argument("--grid-n", dest="grid_n", type=int)
        p.add_argument("--fc-dim", dest="fc_dim", type=int)
        p.add_argument("--channels", help="conv plan, e.g. 16,16/32,32/64,64")
        p.add_argument("--dropout", type=float)

    p = sub.add_parser("synth", help="generate a synthetic depth-hand dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="preprocess a manifest into a sample cache")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cube-mm", dest="cube_mm", type=float)
    p.add_argument("--skip-errors", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model variant")
    common(p)
    p.add_argument("--variant", choices=CLI_VARIANTS)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--augment", choices=("on", "off"))
    p.add_argument("--k", type=int, help="bagging member count")
    p.add_argument("--cache", help="sample cache file")
    p.add_argument("--synthetic", type=int, metavar="N", help="train on N generated samples")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints against a dataset")
    common(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--cache")
    p.add_argument("--synthetic", type=int, metavar="N")
    p.add_argument("--out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="benchmark forward time")
    common(p)
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--variant", action="append", choices=CLI_VARIANTS)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--k", type=int)
    p.add_argument("--assert-order", help="e.g. basic<region-ensemble<basic-bagging")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict", help="predict world-mm joints for frames")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="manifest of frames")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainDivergence, NumericsError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (ManifestError, CacheError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except KeyboardInterrupt:
        print("interrupted; snapshot written if a run directory was active", file=sys.stderr)
        return 130


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
