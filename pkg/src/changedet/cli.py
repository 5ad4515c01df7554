"""Command-line entry points: tile, train, eval, predict, render, freq-inspect."""

import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import config as cfgmod
from .data import (SplitSpec, TileSpec, load_image_pair, load_sample,
                   scan_dataset_dir, split_dataset, tile_pair, write_manifest,
                   read_manifest)
from .inference import predict_scene, render_change_map
from .metrics import ScoreReport
from .model import ModelConfig, build_model
from .spectral import dct_basis, select_frequencies
from .train import (TrainConfig, deterministic_mode, evaluate,
                    load_checkpoint, save_checkpoint, train_loop)


@click.group()
def cli():
    """Bi-temporal change detection pipeline."""
    deterministic_mode()


def _echo_seed(seed):
    click.echo(f"seed: {seed}")


def _save_png(array, path):
    Image.fromarray(array).save(path)


def _load_split_samples(data_dir, split, ratios, seed, tile_size):
    """Samples of one split: manifest-backed if present, ratio split otherwise."""
    data_dir = Path(data_dir)
    triples = scan_dataset_dir(data_dir)
    names = [t[3] for t in triples]
    manifest = data_dir / "manifest.csv"
    if manifest.is_file():
        wanted = {Path(src).stem for src, _, _, s in read_manifest(manifest) if s == split}
        picked = [t for t, n in zip(triples, names) if n in wanted]
    else:
        spec = SplitSpec(ratios=tuple(ratios), seed=seed)
        train_idx, val_idx, test_idx = split_dataset(triples, spec)
        idx = {"train": train_idx, "val": val_idx, "test": test_idx}[split]
        picked = [triples[i] for i in idx]
    samples = [load_sample(a, b, m) for a, b, m, _ in picked]
    for s in samples:
        if s.height != tile_size or s.width != tile_size:
            raise ValueError(f"sample {s.name} is {s.height}x{s.width}, expected {tile_size}x{tile_size} tiles")
    return samples


@cli.command()
@click.option("--data", "data_dir", required=True, help="dataset directory with A/, B/, label/")
@click.option("--out", "out_dir", required=True, help="output directory for tiles and manifest")
@click.option("--tile-size", default=256, show_default=True)
@click.option("--pad/--strict", "pad", default=True, show_default=True,
              help="pad to the tile grid or drop remainders")
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True, help="train,val,test ratios")
@click.option("--seed", default=0, show_default=True)
def tile(data_dir, out_dir, tile_size, pad, ratios, seed):
    """Cut scene pairs into fixed-size tiles and assign splits."""
    _echo_seed(seed)
    ratio_tuple = tuple(float(r) for r in ratios.split(","))
    spec = TileSpec(tile_size=tile_size, mode="pad" if pad else "strict")
    out = Path(out_dir)
    for sub in ("A", "B", "label"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    tiles = []
    for a, b, m, _ in scan_dataset_dir(data_dir):
        sample = load_sample(a, b, m)
        for t in tile_pair(sample, spec):
            tiles.append((t, Path(a).name))
    if not tiles:
        raise ValueError("no tiles produced; check tile size against raster extents")
    split_spec = SplitSpec(ratios=ratio_tuple, seed=seed)
    train_idx, val_idx, test_idx = split_dataset(tiles, split_spec)
    split_of = {}
    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        for i in idx:
            split_of[i] = name
    entries = []
    for i, (t, source) in enumerate(tiles):
        img1 = (t.t1.transpose(1, 2, 0) * 255).round().astype(np.uint8)
        img2 = (t.t2.transpose(1, 2, 0) * 255).round().astype(np.uint8)
        mask = (t.mask * 255).astype(np.uint8)
        _save_png(img1, out / "A" / f"{t.name}.png")
        _save_png(img2, out / "B" / f"{t.name}.png")
        _save_png(mask, out / "label" / f"{t.name}.png")
        row, col = t.name.rsplit("_r", 1)[1].split("_c")
        entries.append((f"{t.name}.png", int(row), int(col), split_of[i]))
    write_manifest(out / "manifest.csv", entries)
    click.echo(f"wrote {len(tiles)} tiles ({len(train_idx)} train / {len(val_idx)} val / {len(test_idx)} test) to {out}")


@cli.command()
@click.option("--config", "config_path", required=True, help="flat key/value config file")
@click.option("--data", "data_dir", required=True, help="tile directory with A/, B/, label/")
@click.option("--out", "out_dir", default=".", show_default=True, help="directory for checkpoint and log")
@click.option("--seed", default=None, type=int, help="override the config seed")
def train(config_path, data_dir, out_dir, seed):
    """Train from a config file; writes best checkpoint and a csv log."""
    raw = cfgmod.load_config(config_path)
    model_cfg = cfgmod.model_config(raw)
    train_cfg = cfgmod.train_config(raw)
    loss_cfg = cfgmod.loss_config(raw)
    ratios = cfgmod.split_ratios(raw)
    tile_size = raw.get("tile_size", 256)
    if seed is not None:
        train_cfg = TrainConfig(**{**raw_train_kwargs(train_cfg), "seed": seed})
    _echo_seed(train_cfg.seed)

    datasets = {
        "train": _load_split_samples(data_dir, "train", ratios, train_cfg.seed, tile_size),
        "val": _load_split_samples(data_dir, "val", ratios, train_cfg.seed, tile_size),
    }
    if not datasets["val"]:
        datasets.pop("val")
    model = build_model(model_cfg, seed=train_cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, history = train_loop(model, datasets, train_cfg, loss_cfg=loss_cfg,
                               model_cfg=model_cfg, log_path=out / "train_log.csv",
                               extra_config={"tile_size": tile_size, "ratios": list(ratios)})
    save_checkpoint(ckpt, out / "best.ckpt")
    click.echo(f"trained {len(history)} epochs; checkpoint: {out / 'best.ckpt'}")


def raw_train_kwargs(cfg):
    return {
        "base_lr": cfg.base_lr, "momentum": cfg.momentum, "weight_decay": cfg.weight_decay,
        "lr_gamma": cfg.lr_gamma, "lr_milestones": cfg.lr_milestones, "epochs": cfg.epochs,
        "batch_size": cfg.batch_size, "seed": cfg.seed, "augment": cfg.augment,
        "clip_grad_norm": cfg.clip_grad_norm,
    }


def _model_from_checkpoint(ckpt_path, seed):
    ckpt = load_checkpoint(ckpt_path)
    model_cfg = ModelConfig(**ckpt.config["model"]) if "model" in ckpt.config else ModelConfig()
    model = build_model(model_cfg, seed=seed)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model, ckpt


@cli.command("eval")
@click.option("--ckpt", "ckpt_path", required=True, help="checkpoint file")
@click.option("--data", "data_dir", required=True)
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "val", "test"]))
@click.option("--out", "out_path", default=None, help="csv file for the score row")
@click.option("--seed", default=0, show_default=True)
def eval_cmd(ckpt_path, data_dir, split, out_path, seed):
    """Score a checkpoint on one dataset split."""
    _echo_seed(seed)
    model, ckpt = _model_from_checkpoint(ckpt_path, seed)
    train_snap = ckpt.config.get("train", {})
    ratios = tuple(ckpt.config.get("ratios", (0.8, 0.1, 0.1)))
    tile_size = ckpt.config.get("tile_size", 256)
    samples = _load_split_samples(data_dir, split, ratios, train_snap.get("seed", seed), tile_size)
    report = evaluate(model, samples)
    click.echo(report.as_text())
    if out_path:
        Path(out_path).write_text(f"{ScoreReport.csv_header()}\n{report.csv_row()}\n")
        click.echo(f"scores written to {out_path}")


@cli.command()
@click.argument("t1_path", metavar="T1")
@click.argument("t2_path", metavar="T2")
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--out", "out_path", required=True, help="output PNG mask")
@click.option("--tile-size", default=256, show_default=True)
@click.option("--seed", default=0, show_default=True)
def predict(t1_path, t2_path, ckpt_path, out_path, tile_size, seed):
    """Predict a change mask for one scene pair of any extent."""
    _echo_seed(seed)
    model, _ = _model_from_checkpoint(ckpt_path, seed)
    t1, t2 = load_image_pair(t1_path, t2_path)
    mask = predict_scene(model, t1, t2, tile_size)
    _save_png((mask * 255).astype(np.uint8), out_path)
    click.echo(f"prediction written to {out_path}")


@cli.command()
@click.argument("pred_path", metavar="PRED")
@click.argument("gt_path", metavar="GT")
@click.option("--out", "out_path", required=True, help="output PNG render")
def render(pred_path, gt_path, out_path):
    """Render TP/TN/FP/FN colors for a prediction against ground truth."""
    pred = np.asarray(Image.open(pred_path).convert("L")) >= 128
    gt = np.asarray(Image.open(gt_path).convert("L")) >= 128
    _save_png(render_change_map(pred, gt), out_path)
    click.echo(f"render written to {out_path}")


@cli.command("freq-inspect")
@click.option("--n", default=16, show_default=True, help="number of frequency components")
@click.option("--freq-file", default=None, help="index file overriding the default ordering")
@click.option("--base-grid", default=7, show_default=True)
@click.option("--height", default=7, show_default=True, help="feature extent to rescale to")
@click.option("--width", default=7, show_default=True)
@click.option("--out", "out_dir", default="freq_basis", show_default=True,
              help="directory for rendered basis images")
def freq_inspect(n, freq_file, base_grid, height, width, out_dir):
    """List effective frequency indices at an extent and render their bases."""
    strategy = "file" if freq_file else "default_order"
    idx = select_frequencies(n, strategy, freq_file, base_grid, base_grid)
    scale_h, scale_w = height // base_grid, width // base_grid
    click.echo(f"base grid {base_grid}x{base_grid}, feature extent {height}x{width}, "
               f"scale factors ({scale_h}, {scale_w})")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (u, v), (ue, ve) in zip(idx.indices, idx.scaled_to(height, width)):
        click.echo(f"  ({u}, {v}) -> ({ue}, {ve})")
        basis = dct_basis(height, width, ue, ve)
        gray = np.round((basis + 1.0) / 2.0 * 255.0).astype(np.uint8)
        _save_png(gray, out / f"basis_u{ue}_v{ve}.png")
    click.echo(f"{len(idx)} basis images written to {out}")


def main(argv=None):
    """Dispatch and translate outcomes to exit codes (0 ok, 1 domain, 2 usage)."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
