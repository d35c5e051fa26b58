"""Command-line front end: train, generate, layout, inspect-spectrum, seam-metric, fig2.

Every subcommand validates its full configuration before doing any work, all
emitted reports are one record per line in ``key=value`` form, and exit codes
are scriptable: 0 success, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .attention import BranchMode
from .dit import (
    GuidanceConfig,
    ModelConfig,
    SamplerSchedule,
    SamplingDivergedError,
    ToyDiT,
    TrainingDivergedError,
    build_schedule,
    load_checkpoint,
    make_optimizer,
    sample,
    save_checkpoint,
    train_step,
)
from .imageio import read_pgm, write_pgm
from .partition import PatchLayout, SpliceConfig, make_layout, min_n, tiling_layout
from .spectral import FusionConfig, fft2, lowpass_mask
from .synthetic import disk_batch, disk_stats, pixel_layout, synth_disk, synth_ring


class ConfigError(ValueError):
    """Invalid configuration file or command-line value."""


DEFAULT_CONFIG = {
    "model": {
        "dim": 64,
        "heads": 4,
        "blocks": 4,
        "base_tokens": [16, 16],
        "patch_pixels": 2,
        "mlp_ratio": 4,
        "rope_base": 10000.0,
        "num_classes": 0,
        "dtype": "float32",
    },
    "train": {
        "steps": 2500,
        "batch_size": 8,
        "optimizer": "adam",
        "lr": 1e-3,
        "seed": 7,
        "label_dropout": 0.1,
    },
    "sample": {
        "steps": 35,
        "global_steps": 10,
        "local_steps": 15,
        "target": [64, 64],
        "seed": 0,
        "bits": 8,
        "guidance": {"scale": 3.5, "enabled": False, "label": None},
    },
    "fusion": {"cutoff": 0.2, "geometry": "radial"},
    "splice": {"sigma_rows": None, "sigma_cols": None},
    "partition": {"n_rows": None, "n_cols": None},
    "ablation": {
        "vanilla_pe": False,
        "no_splice_gaussian": False,
        "no_overlap": False,
        "no_fusion": False,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            out[key] = _deep_merge(base[key], val)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    """Fully validated settings for one run, assembled from the YAML tree."""

    raw: dict
    model: ModelConfig
    train_steps: int
    batch_size: int
    optimizer: str
    lr: float
    seed: int
    label_dropout: float
    schedule: SamplerSchedule
    target: tuple[int, int]
    sample_seed: int
    bits: int
    guidance: GuidanceConfig
    guidance_label: int | None
    fusion: FusionConfig
    sigma: tuple[float | None, float | None]
    partition_n: tuple[int | None, int | None]
    vanilla_pe: bool
    no_splice_gaussian: bool
    no_overlap: bool
    no_fusion: bool

    @classmethod
    def from_dict(cls, tree: dict) -> "RunConfig":
        tree = _deep_merge(DEFAULT_CONFIG, tree or {})
        m = tree["model"]
        try:
            model = ModelConfig(
                model_dim=int(m["dim"]),
                num_heads=int(m["heads"]),
                num_blocks=int(m["blocks"]),
                base_h=int(m["base_tokens"][0]),
                base_w=int(m["base_tokens"][1]),
                patch_px=int(m["patch_pixels"]),
                mlp_ratio=int(m["mlp_ratio"]),
                rope_base=float(m["rope_base"]),
                num_classes=int(m["num_classes"]),
                dtype=str(m["dtype"]),
            )
            t = tree["train"]
            steps, batch = int(t["steps"]), int(t["batch_size"])
            if steps < 1 or batch < 1:
                raise ConfigError("train.steps and train.batch_size must be >= 1")
            if t["optimizer"] not in ("sgd", "adam"):
                raise ConfigError(f"unknown optimizer {t['optimizer']!r}")
            lr = float(t["lr"])
            if not lr > 0:
                raise ConfigError("train.lr must be > 0")
            s = tree["sample"]
            schedule = build_schedule(int(s["steps"]), int(s["global_steps"]), int(s["local_steps"]))
            target = (int(s["target"][0]), int(s["target"][1]))
            bits = int(s["bits"])
            if bits not in (8, 16):
                raise ConfigError("sample.bits must be 8 or 16")
            g = s["guidance"]
            guidance = GuidanceConfig(scale=float(g["scale"]), enabled=bool(g["enabled"]))
            label = g["label"]
            if label is not None:
                label = int(label)
                if not 0 <= label < max(model.num_classes, 1):
                    raise ConfigError(f"guidance.label {label} out of range")
            fusion = FusionConfig(
                cutoff=float(tree["fusion"]["cutoff"]), geometry=str(tree["fusion"]["geometry"])
            )
            sp = tree["splice"]
            sigma = tuple(None if sp[k] is None else float(sp[k]) for k in ("sigma_rows", "sigma_cols"))
            if any(v is not None and v <= 0 for v in sigma):
                raise ConfigError("splice sigmas must be positive")
            pt = tree["partition"]
            part_n = tuple(None if pt[k] is None else int(pt[k]) for k in ("n_rows", "n_cols"))
            ab = tree["ablation"]
            pp = model.patch_px
            if target[0] % pp or target[1] % pp:
                raise ConfigError(f"sample.target {target} not divisible by patch_pixels {pp}")
            if target[0] // pp < model.base_h or target[1] // pp < model.base_w:
                raise ConfigError(f"sample.target {target} below the training resolution")
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cls(
            raw=tree,
            model=model,
            train_steps=steps,
            batch_size=batch,
            optimizer=str(t["optimizer"]),
            lr=lr,
            seed=int(t["seed"]),
            label_dropout=float(t["label_dropout"]),
            schedule=schedule,
            target=target,
            sample_seed=int(s["seed"]),
            bits=bits,
            guidance=guidance,
            guidance_label=label,
            fusion=fusion,
            sigma=sigma,
            partition_n=part_n,
            vanilla_pe=bool(ab["vanilla_pe"]),
            no_splice_gaussian=bool(ab["no_splice_gaussian"]),
            no_overlap=bool(ab["no_overlap"]),
            no_fusion=bool(ab["no_fusion"]),
        )

    # -- derived pieces ---------------------------------------------------------

    def layout_for(self, tok_h: int, tok_w: int) -> PatchLayout:
        patch_h, patch_w = min(self.model.base_h, tok_h), min(self.model.base_w, tok_w)
        if self.no_overlap:
            return tiling_layout(tok_h, tok_w, patch_h, patch_w)
        return make_layout(tok_h, tok_w, patch_h, patch_w, *self.partition_n)

    def splice_for(self, layout: PatchLayout) -> SpliceConfig:
        sr = self.sigma[0] if self.sigma[0] is not None else layout.patch_h / 2.0
        sc = self.sigma[1] if self.sigma[1] is not None else layout.patch_w / 2.0
        return SpliceConfig(sigma_rows=sr, sigma_cols=sc)

    def sample_kwargs(self, tok_h: int, tok_w: int) -> dict:
        layout = self.layout_for(tok_h, tok_w)
        return dict(
            layout=layout,
            splice_cfg=self.splice_for(layout),
            fusion_cfg=self.fusion,
            vanilla_pe=self.vanilla_pe,
            splice_mode="nearest" if self.no_splice_gaussian else "gaussian",
            spatial_average=self.no_fusion,
        )


def load_config(path: str | None, overrides: list[str] | None) -> RunConfig:
    tree: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        tree = loaded
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, _, raw_val = item.partition("=")
        keys = dotted.strip().split(".")
        val = yaml.safe_load(raw_val)
        node = tree
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} conflicts with a scalar config entry")
        node[keys[-1]] = val
    return RunConfig.from_dict(tree)


def _print_stats(image: np.ndarray, layout_px: PatchLayout | None, prefix: str = "") -> None:
    stats = disk_stats(image, layout_px)
    seam = f" seam_energy={stats.seam_energy:.8e}" if stats.seam_energy is not None else ""
    print(
        f"{prefix}area_fraction={stats.area_fraction:.6f} "
        f"centroid_row={stats.centroid[0]:.6f} centroid_col={stats.centroid[1]:.6f}{seam}"
    )


def _train_batch(cfg: RunConfig, rng: np.random.Generator):
    """One batch of synthetic images (disk class 0, ring class 1 when conditional)."""
    h = cfg.model.base_h * cfg.model.patch_px
    w = cfg.model.base_w * cfg.model.patch_px
    if cfg.model.num_classes == 0:
        return disk_batch(rng, cfg.batch_size, h, w), None
    labels = rng.integers(0, cfg.model.num_classes, size=cfg.batch_size)
    images = np.stack(
        [(synth_ring if y == 1 else synth_disk)(rng, h, w)[0] for y in labels]
    )
    return images, labels


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    rng = np.random.default_rng(seed)
    model = ToyDiT(cfg.model, rng)
    opt = make_optimizer(model.params, cfg.optimizer, cfg.lr)
    out.mkdir(parents=True, exist_ok=True)
    losses = []
    with open(out / "loss.txt", "w") as log:
        for step in range(1, cfg.train_steps + 1):
            images, labels = _train_batch(cfg, rng)
            loss = train_step(model, images, rng, opt, labels=labels, label_dropout=cfg.label_dropout)
            losses.append(loss)
            log.write(f"step={step} loss={loss:.8e}\n")
            if args.verbose and step % 100 == 0:
                print(f"step={step} loss={loss:.6f}", flush=True)
    extra = {"train_config": cfg.raw, "seed": seed}
    save_checkpoint(model, out, extra)
    first = float(np.mean(losses[: min(50, len(losses))]))
    last = float(np.mean(losses[-min(50, len(losses)):]))
    print(f"trained steps={cfg.train_steps} loss_first50={first:.6f} loss_last50={last:.6f}")
    print(f"checkpoint={out}")
    return 0


def _load_model_for(args) -> tuple[ToyDiT, RunConfig]:
    model, manifest = load_checkpoint(args.checkpoint)
    if args.config is not None or args.set:
        cfg = load_config(args.config, args.set)
        if cfg.model != model.config:
            raise ConfigError(
                "config model section does not match the checkpoint "
                f"({cfg.model} vs {model.config})"
            )
    else:
        cfg = RunConfig.from_dict(manifest.get("extra", {}).get("train_config", {}))
    return model, cfg


def cmd_generate(args) -> int:
    model, cfg = _load_model_for(args)
    seed = cfg.sample_seed if args.seed is None else args.seed
    target_h, target_w = cfg.target
    tok_h, tok_w = target_h // cfg.model.patch_px, target_w // cfg.model.patch_px
    image = sample(
        model,
        cfg.schedule,
        target_h,
        target_w,
        seed,
        guidance=cfg.guidance,
        label=cfg.guidance_label,
        **cfg.sample_kwargs(tok_h, tok_w),
    )
    write_pgm(args.out, image, bits=cfg.bits)
    seam_layout = pixel_layout(
        tiling_layout(tok_h, tok_w, min(cfg.model.base_h, tok_h), min(cfg.model.base_w, tok_w)),
        cfg.model.patch_px,
    )
    print(f"image={args.out} height={image.shape[0]} width={image.shape[1]} seed={seed}")
    _print_stats(image, seam_layout)
    return 0


def cmd_layout(args) -> int:
    layout = make_layout(args.grid_h, args.grid_w, args.patch_h, args.patch_w, args.n_rows, args.n_cols)
    for name, length, patch, starts in (
        ("rows", args.grid_h, args.patch_h, layout.row_starts),
        ("cols", args.grid_w, args.patch_w, layout.col_starts),
    ):
        strides = [b - a for a, b in zip(starts, starts[1:])]
        overlaps = [patch - s for s in strides]
        print(
            f"axis={name} length={length} patch={patch} n={len(starts)} "
            f"min_n={min_n(length, patch)} starts={','.join(map(str, starts))} "
            f"strides={','.join(map(str, strides)) or '-'} "
            f"overlaps={','.join(map(str, overlaps)) or '-'}"
        )
    for i, win in enumerate(layout.windows):
        print(
            f"window={i} row_start={win.row_start} col_start={win.col_start} "
            f"height={win.height} width={win.width}"
        )
    return 0


def cmd_inspect_spectrum(args) -> int:
    image = read_pgm(args.image)
    out_dir = Path(args.out)
    layout = make_layout(image.shape[0], image.shape[1], args.patch_h, args.patch_w, args.n_rows, args.n_cols)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, win in enumerate(layout.windows):
        rs, cs = win.slices()
        spec = fft2(image[rs, cs][:, :, None])
        logmag = np.log1p(np.abs(spec[:, :, 0]))
        peak = logmag.max()
        if peak > 0:
            logmag = logmag / peak
        write_pgm(out_dir / f"spectrum_{i:03d}.pgm", logmag)
    mask = lowpass_mask(args.patch_h, args.patch_w, args.cutoff)
    write_pgm(out_dir / "mask.pgm", mask)
    print(f"windows={len(layout.windows)} files={len(layout.windows) + 1} out={out_dir}")
    return 0


def cmd_seam_metric(args) -> int:
    image = read_pgm(args.image)
    layout = tiling_layout(image.shape[0], image.shape[1], args.patch_h, args.patch_w)
    print(f"image={args.image} height={image.shape[0]} width={image.shape[1]}")
    _print_stats(image, layout)
    return 0


FIG2_REGIMES = ("base", "vanilla_global", "scaled_global", "tiled_local", "overlap_local")


def cmd_fig2(args) -> int:
    """The five positional-embedding / attention-range intervention regimes.

    base            training resolution, global attention, native positions
    vanilla_global  2x resolution, global attention, unscaled (extrapolated) positions
    scaled_global   2x resolution, global attention, positions scaled into the base range
    tiled_local     2x resolution, patch-local attention on rigid tiles, hard splice
    overlap_local   2x resolution, patch-local attention, overlapping windows, Gaussian splice
    """
    model, cfg = _load_model_for(args)
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mc = model.config
    pp = mc.patch_px
    base_px = (mc.base_h * pp, mc.base_w * pp)
    hi_px = (2 * base_px[0], 2 * base_px[1])
    tok = (hi_px[0] // pp, hi_px[1] // pp)
    total = cfg.schedule.total_steps
    all_global = build_schedule(total, total, 0)
    all_local = build_schedule(total, 0, total)
    overlap = make_layout(tok[0], tok[1], mc.base_h, mc.base_w)
    tiles = tiling_layout(tok[0], tok[1], mc.base_h, mc.base_w)
    gaussian = cfg.splice_for(overlap)
    seam_px = pixel_layout(tiles, pp)

    runs = {
        "base": dict(schedule=all_global, px=base_px),
        "vanilla_global": dict(schedule=all_global, px=hi_px, vanilla_pe=True),
        "scaled_global": dict(schedule=all_global, px=hi_px),
        "tiled_local": dict(
            schedule=all_local, px=hi_px, layout=tiles, splice_cfg=gaussian, splice_mode="nearest"
        ),
        "overlap_local": dict(
            schedule=all_local, px=hi_px, layout=overlap, splice_cfg=gaussian, splice_mode="gaussian"
        ),
    }

    lines = []
    summary = {}
    for regime, spec_ in runs.items():
        afs, seams = [], []
        for i in range(args.seeds):
            seed = (cfg.sample_seed if args.seed is None else args.seed) + i
            px = spec_["px"]
            kwargs = {k: v for k, v in spec_.items() if k not in ("schedule", "px")}
            image = sample(model, spec_["schedule"], px[0], px[1], seed, **kwargs)
            write_pgm(out_dir / f"{regime}_seed{seed:03d}.pgm", image, bits=cfg.bits)
            layout_px = seam_px if px == hi_px else None
            stats = disk_stats(image, layout_px)
            afs.append(stats.area_fraction)
            seams.append(stats.seam_energy if stats.seam_energy is not None else 0.0)
            lines.append(
                f"sample regime={regime} seed={seed} area_fraction={stats.area_fraction:.6f} "
                f"centroid_row={stats.centroid[0]:.6f} centroid_col={stats.centroid[1]:.6f} "
                f"seam_energy={(stats.seam_energy or 0.0):.8e}"
            )
        summary[regime] = (float(np.mean(afs)), float(np.mean(seams)))
        lines.append(
            f"summary regime={regime} n={args.seeds} mean_area_fraction={summary[regime][0]:.6f} "
            f"mean_seam_energy={summary[regime][1]:.8e}"
        )
    report = out_dir / "report.txt"
    report.write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"report={report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ditscale",
        description="Desk-scale DiT resolution-scaling toolkit: training, sampling, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if config:
            p.add_argument("--config", default=None, help="YAML config file")
            p.add_argument(
                "--set", action="append", default=[], metavar="KEY=VALUE",
                help="override a config entry, e.g. --set sample.steps=10",
            )

    p = sub.add_parser("train", help="train the toy model on synthetic disks")
    common(p)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample an image from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PGM file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("layout", help="print a minimum-overlap window layout")
    p.add_argument("grid_h", type=int)
    p.add_argument("grid_w", type=int)
    p.add_argument("patch_h", type=int)
    p.add_argument("patch_w", type=int)
    p.add_argument("--n-rows", type=int, default=None)
    p.add_argument("--n-cols", type=int, default=None)
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("inspect-spectrum", help="dump per-patch spectra and the low-pass mask")
    p.add_argument("image", help="input PGM image")
    p.add_argument("--patch-h", type=int, required=True)
    p.add_argument("--patch-w", type=int, required=True)
    p.add_argument("--n-rows", type=int, default=None)
    p.add_argument("--n-cols", type=int, default=None)
    p.add_argument("--cutoff", type=float, default=0.2)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect_spectrum)

    p = sub.add_parser("seam-metric", help="layout statistics of an image")
    p.add_argument("image", help="input PGM image")
    p.add_argument("--patch-h", type=int, required=True, help="tile height in pixels")
    p.add_argument("--patch-w", type=int, required=True, help="tile width in pixels")
    p.set_defaults(func=cmd_seam_metric)

    p = sub.add_parser("fig2", help="run the five PE/attention intervention regimes")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=int, default=32)
    p.set_defaults(func=cmd_fig2)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, SamplingDivergedError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
