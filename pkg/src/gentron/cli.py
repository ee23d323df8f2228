"""Command-line interface.

Every verb reads an optional flat JSON config (``--config``) whose keys are
the long flag names with dashes replaced by underscores; flags given on the
command line override the file. Unknown keys are rejected.

Exit codes: 0 ok, 1 a check failed, 2 usage or config error, 3 I/O or schema
error. ``GENTRON_SEED`` supplies the seed when neither flag nor config does.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from gentron.errors import CheckpointError, ConfigError, GentronError, ModeError

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("gentron")


class UsageError(Exception):
    pass


class SchemaError(Exception):
    code = "schema"


# -- config handling ------------------------------------------------------

MODEL_KEYS = ("depth", "width", "mlp_width", "patch", "heads", "variant", "text_dims",
              "vocab_size", "max_prompt_len", "freq_dim")
TRAIN_KEYS = ("lr", "betas", "eps", "weight_decay", "batch", "steps", "p_text_drop", "seed")
SCHEDULE_KEYS = ("T", "beta_start", "beta_end")

DEFAULTS = {
    "train-t2i": dict(data=None, out=None, T=50, beta_start=None, beta_end=None,
                      depth=2, width=64, mlp_width=256, patch=2, heads=0, variant="cross_attention",
                      text_dims=[32], vocab_size=1024, max_prompt_len=16, freq_dim=256,
                      lr=1e-4, betas=[0.9, 0.999], eps=1e-8, weight_decay=0.01, batch=16,
                      steps=100, p_text_drop=0.1, seed=None),
    "finetune-t2v": dict(checkpoint=None, video_data=None, image_data=None, out=None,
                         lr=1e-4, betas=[0.9, 0.999], eps=1e-8, weight_decay=0.01, batch=4,
                         steps=100, p_text_drop=0.1, p_motion_free=0.1, t_frames=8, seed=None),
    "sample": dict(checkpoint=None, prompt=None, out=None, lambda_t=7.5, lambda_m=1.2,
                   motion=False, frames=8, n=1, seed=None, save_latents=False),
    "gen-data": dict(kind=None, n=None, out=None, seed=None, latent_shape=[8, 8, 4],
                     n_clusters=3, frames=8),
}
REQUIRED = {
    "train-t2i": ("data", "out"),
    "finetune-t2v": ("checkpoint", "video_data", "out"),
    "sample": ("checkpoint", "prompt", "out"),
    "gen-data": ("kind", "n", "out"),
}


def load_json_config(path, command):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(DEFAULTS[command]))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    return raw


def resolve_config(command, args):
    """Defaults < config file < explicit flags; then the seed fallbacks."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        cfg.update(load_json_config(args.config, command))
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg.get("seed") is None:
        env = os.environ.get("GENTRON_SEED")
        try:
            cfg["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise UsageError(f"GENTRON_SEED must be an integer, got {env!r}") from None
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{command} needs: {', '.join('--' + k.replace('_', '-') for k in missing)}")
    return cfg


def _train_config(cfg, **extra):
    from gentron.trainer import TrainConfig

    kw = {k: cfg[k] for k in TRAIN_KEYS}
    kw.update(extra)
    return TrainConfig(**kw)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_loss_csv(path, losses):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, repr(float(loss))])


def _load_dataset(path):
    from gentron.data import load_dataset

    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


# -- verbs ------------------------------------------------------------------

def cmd_train_t2i(cfg):
    from gentron.checkpoint import save_checkpoint
    from gentron.data import ImageDataset
    from gentron.model import GenTron, GenTronConfig
    from gentron.schedule import make_linear_schedule
    from gentron.trainer import train_t2i

    ds = _load_dataset(cfg["data"])
    if not isinstance(ds, ImageDataset):
        raise UsageError(f"{cfg['data']} holds video clips; train-t2i needs images")
    model_cfg = GenTronConfig(latent_shape=ds.latents.shape[1:], **{k: cfg[k] for k in MODEL_KEYS})
    schedule = make_linear_schedule(cfg["T"], cfg["beta_start"], cfg["beta_end"])
    tcfg = _train_config(cfg)
    model = GenTron(model_cfg, seed=tcfg.seed)
    result = train_t2i(model, ds, schedule, tcfg)

    os.makedirs(cfg["out"], exist_ok=True)
    ckpt_path = os.path.join(cfg["out"], "model.ckpt")
    save_checkpoint(model, ckpt_path, result.optimizer,
                    extra={"schedule": schedule.to_dict(), "train": tcfg.to_dict()})
    _write_loss_csv(os.path.join(cfg["out"], "loss.csv"), result.losses)
    _write_json(os.path.join(cfg["out"], "manifest.json"), {
        "command": "train-t2i", "config": cfg, "model": model_cfg.to_dict(),
        "train": tcfg.to_dict(), "schedule": schedule.to_dict(),
        "final_loss": result.losses[-1] if result.losses else None,
        "files": ["model.ckpt", "loss.csv"],
    })
    print(f"trained {tcfg.steps} steps; final loss {result.losses[-1]:.5f}" if result.losses
          else "trained 0 steps")
    print(f"wrote {ckpt_path}")
    return EXIT_OK


def cmd_finetune_t2v(cfg):
    from gentron.checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
    from gentron.checks import inflation_gap
    from gentron.data import ImageDataset, VideoDataset
    from gentron.schedule import schedule_from_dict
    from gentron.trainer import finetune_t2v
    from gentron.video import inflate_t2i

    ckpt = load_checkpoint(cfg["checkpoint"])
    if ckpt.inflated:
        raise SchemaError(f"{cfg['checkpoint']} is a T2V checkpoint; finetune-t2v needs a T2I one")
    t2i = model_from_checkpoint(ckpt, expect_inflated=False)
    video = _load_dataset(cfg["video_data"])
    if not isinstance(video, VideoDataset):
        raise UsageError(f"{cfg['video_data']} does not hold video clips")
    images = _load_dataset(cfg["image_data"]) if cfg["image_data"] else None
    if images is not None and not isinstance(images, ImageDataset):
        raise UsageError(f"{cfg['image_data']} does not hold images")

    tcfg = _train_config(cfg, p_motion_free=cfg["p_motion_free"], t_frames=cfg["t_frames"])
    gap = inflation_gap(t2i, frames=tcfg.t_frames)
    print(f"inflation check: max |T2V - T2I| = {gap:.3g} (threshold 1e-06)")
    if not gap < 1e-6:
        print("inflation check failed; aborting", file=sys.stderr)
        return EXIT_CHECK
    schedule = schedule_from_dict(ckpt.config["schedule"])
    model = inflate_t2i(t2i, seed=tcfg.seed)
    result = finetune_t2v(model, images, video, schedule, tcfg)

    os.makedirs(cfg["out"], exist_ok=True)
    ckpt_path = os.path.join(cfg["out"], "model.ckpt")
    save_checkpoint(model, ckpt_path, result.optimizer,
                    extra={"schedule": schedule.to_dict(), "train": tcfg.to_dict()})
    _write_loss_csv(os.path.join(cfg["out"], "loss.csv"), result.losses)
    _write_json(os.path.join(cfg["out"], "manifest.json"), {
        "command": "finetune-t2v", "config": cfg, "train": tcfg.to_dict(),
        "p_motion_free": tcfg.p_motion_free, "inflation_gap": gap,
        "motion_free_steps": int(sum(result.branches)), "steps": tcfg.steps,
        "files": ["model.ckpt", "loss.csv"],
    })
    print(f"fine-tuned {tcfg.steps} steps ({sum(result.branches)} motion-free); wrote {ckpt_path}")
    return EXIT_OK


def cmd_sample(cfg):
    from gentron.checkpoint import load_checkpoint, model_from_checkpoint
    from gentron.data import write_clip, write_ppm
    from gentron.guidance import GuidanceConfig, sample
    from gentron.numerics.rng import Rng
    from gentron.schedule import make_linear_schedule, schedule_from_dict

    ckpt = load_checkpoint(cfg["checkpoint"])
    motion = bool(cfg["motion"])
    if motion != ckpt.inflated:
        kind = "T2V" if ckpt.inflated else "T2I"
        raise ModeError(f"checkpoint is {kind}; pass --motion exactly when sampling a T2V model")
    model = model_from_checkpoint(ckpt)
    schedule = (schedule_from_dict(ckpt.config["schedule"]) if "schedule" in ckpt.config
                else make_linear_schedule(50))
    g = GuidanceConfig(lambda_T=cfg["lambda_t"], lambda_M=cfg["lambda_m"], motion_enabled=motion)
    if motion:
        print(f"guidance: motion-free, lambda_T={g.lambda_T} lambda_M={g.lambda_M}")
    else:
        print(f"guidance: classifier-free, lambda_T={g.lambda_T}")
    n, frames = int(cfg["n"]), int(cfg["frames"])
    x = sample(model, schedule, model.encode(cfg["prompt"]), g, Rng(cfg["seed"]).fork("sample"),
               batch=n, frames=frames)

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    files = []
    for i in range(n):
        if motion:
            name = f"clip_{i:03d}"
            write_clip(os.path.join(out, name), x[i], {"prompt": cfg["prompt"]})
        else:
            name = f"image_{i:03d}.ppm"
            write_ppm(os.path.join(out, name), x[i])
        files.append(name)
    if cfg["save_latents"]:
        np.save(os.path.join(out, "samples.npy"), x)
        files.append("samples.npy")
    _write_json(os.path.join(out, "manifest.json"), {
        "command": "sample", "config": cfg, "prompt": cfg["prompt"], "lambda_T": g.lambda_T,
        "lambda_M": g.lambda_M if motion else None, "motion": motion,
        "t": frames if motion else 1, "files": files,
    })
    print(f"wrote {len(files)} outputs to {out}")
    return EXIT_OK


def cmd_check(suites):
    from gentron.checks import SUITES, run_suite

    names = list(SUITES) if not suites or suites == ["all"] else suites
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s) {unknown}; choose from {', '.join(SUITES)} or all")
    ok = True
    for name in names:
        for result in run_suite(name):
            print(result.line())
            ok &= result.passed
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gen_data(cfg):
    from gentron.data import gen_synthetic_dataset

    kind = cfg["kind"]
    kw = {"latent_shape": tuple(cfg["latent_shape"])}
    if kind == "gaussians":
        kw["n_clusters"] = cfg["n_clusters"]
    elif kind == "moving-shapes":
        kw["frames"] = cfg["frames"]
    ds = gen_synthetic_dataset(kind, int(cfg["n"]), int(cfg["seed"]), cfg["out"], **kw)
    print(f"wrote {len(ds)} {kind} samples to {cfg['out']}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _ints(text):
    return [int(v) for v in text.split(",")]


def _floats(text):
    return [float(v) for v in text.split(",")]


def build_parser():
    p = argparse.ArgumentParser(prog="gentron", description="Desk-scale text-to-image/video diffusion transformers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    def train_flags(sp):
        sp.add_argument("--lr", type=float)
        sp.add_argument("--betas", type=_floats, help="comma separated, e.g. 0.9,0.999")
        sp.add_argument("--eps", type=float)
        sp.add_argument("--weight-decay", type=float)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--p-text-drop", type=float)

    sp = sub.add_parser("train-t2i", help="train a text-to-image model")
    common(sp)
    train_flags(sp)
    sp.add_argument("--data", help="dataset directory (see gen-data)")
    sp.add_argument("--T", type=int, help="diffusion steps")
    sp.add_argument("--beta-start", type=float)
    sp.add_argument("--beta-end", type=float)
    for name in ("depth", "width", "mlp-width", "patch", "heads", "vocab-size", "max-prompt-len", "freq-dim"):
        sp.add_argument(f"--{name}", type=int)
    sp.add_argument("--variant", choices=("cross_attention", "adaln_zero"))
    sp.add_argument("--text-dims", type=_ints, help="comma separated encoder widths")

    sp = sub.add_parser("finetune-t2v", help="inflate a T2I checkpoint and fine-tune on video")
    common(sp)
    train_flags(sp)
    sp.add_argument("--checkpoint", help="T2I checkpoint")
    sp.add_argument("--video-data")
    sp.add_argument("--image-data")
    sp.add_argument("--p-motion-free", type=float)
    sp.add_argument("--t-frames", type=int)

    sp = sub.add_parser("sample", help="sample images or clips from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--prompt")
    sp.add_argument("--lambda-t", type=float)
    sp.add_argument("--lambda-m", type=float)
    sp.add_argument("--motion", action="store_const", const=True)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--save-latents", action="store_const", const=True)

    sp = sub.add_parser("check", help="run self-check suites")
    sp.add_argument("suites", nargs="*", help="gradients, schedule, guidance, gaussian-oracle, video-identity or all")

    sp = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--kind", choices=("gaussians", "shapes", "moving-shapes"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--latent-shape", type=_ints)
    sp.add_argument("--n-clusters", type=int)
    sp.add_argument("--frames", type=int)
    return p


_VERBS = {
    "train-t2i": cmd_train_t2i,
    "finetune-t2v": cmd_finetune_t2v,
    "sample": cmd_sample,
    "gen-data": cmd_gen_data,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            return cmd_check(args.suites)
        return _VERBS[args.command](resolve_config(args.command, args))
    except (UsageError, ConfigError, ModeError) as exc:
        print(f"gentron {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, CheckpointError, OSError) as exc:
        code = getattr(exc, "code", "io")
        print(f"gentron {args.command}: [{code}] {exc}", file=sys.stderr)
        return EXIT_IO
    except GentronError as exc:
        print(f"gentron {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
