"""Command-line entry point: ``brdfdiff <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 1 anything else.  Every command writes ``<command>.manifest.json``
to the output directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .augment import build_augmerl, load_augmerl
from .brdf import MeasuredBrdf, infer_type_id, read_merl
from .config import PipelineConfig, load_config, require_path
from .diffusion import (NULL, TypeId, load_checkpoint, make_schedule, read_embedding, sample_cfg,
                        save_checkpoint, train)
from .errors import BrdfDiffError, ConfigError, DataError, NumericError
from .experiments import format_table, glossy_material, superres_experiment
from .field import NEUMERL_MAGIC, NeuMERL, NeuralFieldWeights, build_neumerl, load_neumerl
from .metrics import evaluate_sets
from .render import render_sphere, save_float_image, save_ppm
from .rules import brdf_stats, classify, constrained_sample

log = logging.getLogger("brdfdiff")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


# ---------------------------------------------------------------- inputs

def load_items(path) -> list:
    """Materials from a MERL file, a NeuMERL file, or a directory of either.

    Returns ``(name, item)`` pairs; an AugMERL directory is read through its
    metadata sidecar.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input {path} does not exist")
    if path.is_dir():
        if (path / "metadata.json").exists():
            aug = load_augmerl(path)
            return [(r["name"], aug[i]) for i, r in enumerate(aug.records)]
        out = []
        for p in sorted(path.iterdir()):
            if p.suffix in (".binary", ".bin", ".nmrl"):
                out.extend(load_items(p))
        if not out:
            raise DataError(f"no materials found in {path}")
        return out
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == NEUMERL_MAGIC:
        nm = load_neumerl(path)
        return [(r.get("name", f"item-{i:04d}"), nm[i]) for i, r in enumerate(nm.records)]
    name = path.stem
    b = read_merl(path, type_id=infer_type_id(name))
    return [(name, MeasuredBrdf(b.values, name=name, type_id=b.type_id))]


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _versions() -> dict:
    import torch
    return {"brdfdiff": __version__, "numpy": np.__version__, "torch": torch.__version__,
            "python": platform.python_version()}


def write_manifest(cfg: PipelineConfig, command: str, inputs: list, outputs: list, extra=None) -> Path:
    out = _out_dir(cfg)
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "versions": _versions(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    path = out / f"{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return path


# -------------------------------------------------------------- commands

def cmd_augment(cfg: PipelineConfig):
    src = require_path(cfg, "dataset_dir", "dir")
    base = [item for _, item in load_items(src)]
    aug = build_augmerl(base, cfg.augment.pair_count, cfg.augment.k, cfg.seed)
    dest = _out_dir(cfg) / "augmerl"
    meta = aug.save(dest)
    write_manifest(cfg, "augment", [src], [meta], {"counts": aug.counts()})
    return dest


def cmd_fit(cfg: PipelineConfig):
    src = require_path(cfg, "augmerl_dir", "dir")
    aug = load_augmerl(src)
    nm = build_neumerl(aug, cfg.fit)
    path = nm.save(_out_dir(cfg) / "neumerl.nmrl")
    write_manifest(cfg, "fit", [src], [path, path.with_name(path.name + ".json")])
    return path


def _training_conditions(cfg: PipelineConfig, nm: NeuMERL, rows):
    if cfg.condition == "none":
        return None
    if cfg.condition == "type":
        ids = nm.type_ids()[rows]
        return [TypeId(int(i)) if i >= 0 else NULL for i in ids]
    edir = require_path(cfg, "embeddings_dir", "dir")
    conds = []
    for i in rows:
        p = edir / f"{nm.records[i]['name']}.emb"
        conds.append(read_embedding(p) if p.exists() else NULL)
    return conds


def cmd_train(cfg: PipelineConfig):
    src = require_path(cfg, "neumerl")
    nm = load_neumerl(src)
    rows = np.array(nm.split["train"] if nm.split else range(len(nm)), dtype=int)
    conds = _training_conditions(cfg, nm, rows)
    model_cfg = cfg.diffusion.model
    if cfg.condition in ("text", "image") and conds:
        dims = {c.dim for c in conds if c is not NULL}
        if len(dims) > 1:
            raise DataError("embedding files have inconsistent dimensions")
        if dims:
            key = "text_dim" if cfg.condition == "text" else "image_dim"
            model_cfg = dataclasses.replace(model_cfg, **{key: dims.pop()})
    tcfg = cfg.diffusion.train
    if tcfg.seed != cfg.seed:
        tcfg = dataclasses.replace(tcfg, seed=cfg.seed)
    params = train(nm.weights[rows], tcfg, model_cfg, make_schedule(cfg.diffusion.T), conds)
    path = save_checkpoint(params, _out_dir(cfg) / "denoiser.nmdf")
    write_manifest(cfg, "train", [src], [path], {"final_loss": params.history[-1] if params.history else None})
    return path


def _condition(cfg: PipelineConfig, embedding: Optional[str]):
    if embedding:
        return read_embedding(embedding)
    if cfg.sample.type_id is not None:
        return TypeId(cfg.sample.type_id)
    return NULL


def cmd_sample(cfg: PipelineConfig, embedding: Optional[str] = None,
               sampler: Optional[Callable[[int], object]] = None):
    """Draw ``sample.n`` materials, optionally restricted to ``sample.category``.

    ``sampler(i)`` overrides the diffusion model; by default draw ``i`` uses
    seed ``seed + i``.
    """
    s = cfg.sample
    inputs = []
    if sampler is None:
        ckpt = require_path(cfg, "checkpoint")
        inputs.append(ckpt)
        params = load_checkpoint(ckpt)
        cond = _condition(cfg, embedding)
        if embedding:
            inputs.append(embedding)

        def sampler(i):
            return sample_cfg(params, cond, s.omega, seed=cfg.seed + i)

    out = _out_dir(cfg)
    weights, records, outputs = [], [], []
    draw = 0
    for n in range(s.n):
        if s.category:
            offset = draw
            w, attempts = constrained_sample(lambda i: sampler(offset + i), s.category, s.max_attempts)
            draw += attempts
        else:
            w, attempts = sampler(draw), 1
            draw += 1
        w = w if isinstance(w, NeuralFieldWeights) else NeuralFieldWeights(np.asarray(w))
        name = f"sample-{n:03d}"
        img = out / f"{name}.ppm"
        save_ppm(img, render_sphere(w, cfg.render))
        outputs.append(img)
        weights.append(w.flat)
        records.append({"name": name, "attempts": attempts, "categories": classify(w)})
    nm = NeuMERL(np.stack(weights), records)
    path = nm.save(out / "samples.nmrl")
    outputs += [path, path.with_name(path.name + ".json")]
    write_manifest(cfg, "sample", inputs, outputs, {"draws": draw})
    return path


def cmd_classify(cfg: PipelineConfig, inputs: Sequence[str]):
    rows = []
    for src in inputs:
        for name, item in load_items(src):
            rows.append({"name": name, "categories": classify(item), "stats": brdf_stats(item).to_dict()})
    path = _dump(_out_dir(cfg) / "classification.json", {"materials": rows})
    write_manifest(cfg, "classify", list(inputs), [path])
    return path


def cmd_evaluate(cfg: PipelineConfig, reference: str, synthesized: str):
    R = [it for _, it in load_items(reference)]
    S = [it for _, it in load_items(synthesized)]
    rep = evaluate_sets(R, S, cfg.metrics, cfg.render, cfg.seed)
    out = _out_dir(cfg)
    path = _dump(out / "evaluation.json", rep.to_dict())
    table = out / "evaluation.txt"
    table.write_text(rep.table() + "\n")
    write_manifest(cfg, "evaluate", [reference, synthesized], [path, table])
    return rep


def cmd_render(cfg: PipelineConfig, inputs: Sequence[str]):
    out = _out_dir(cfg)
    outputs = []
    for src in inputs:
        for name, item in load_items(src):
            img = render_sphere(item, cfg.render)
            outputs.append(save_ppm(out / f"{name}.ppm", img))
            outputs.append(save_float_image(out / f"{name}.nmfi", img))
    write_manifest(cfg, "render", list(inputs), outputs)
    return outputs


def cmd_superres(cfg: PipelineConfig, inputs: Sequence[str] = ()):
    """Superresolution table over ``superres_factors``; a synthetic glossy material if no inputs."""
    items = [it for src in inputs for _, it in load_items(src)] if inputs else [glossy_material()]
    reports = []
    for x in cfg.superres_factors:
        for item in items:
            rep, _ = superres_experiment(item, x, cfg.fit, cfg.render)
            reports.append(rep)
    out = _out_dir(cfg)
    table = format_table(reports)
    txt = out / "superres.txt"
    txt.write_text(table + "\n")
    js = _dump(out / "superres.json", {"reports": [r.to_dict() for r in reports]})
    write_manifest(cfg, "superres", list(inputs), [txt, js])
    return reports, table


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brdfdiff", description="Neural BRDF fitting, hyperdiffusion and evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", "-c", help="YAML or JSON pipeline config")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. fit.epochs=10 (repeatable)")
        sp.add_argument("--out", help="output directory (overrides paths.output_dir)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    add("augment", "build AugMERL from a directory of MERL files")
    add("fit", "fit neural fields to every AugMERL material")
    add("train", "train the hyperdiffusion model on NeuMERL")
    sp = add("sample", "sample new materials")
    sp.add_argument("-n", type=int, help="number of samples")
    sp.add_argument("--type-id", type=int, help="condition on a material type id")
    sp.add_argument("--embedding", help="condition on an embedding file")
    sp.add_argument("--omega", type=float, help="guidance scale (>= -1)")
    sp.add_argument("--category", help="keep only samples of this category")
    sp = add("classify", "report category predicates and statistics")
    sp.add_argument("inputs", nargs="+")
    sp = add("evaluate", "MMD / COV / 1-NNA of a synthesized set against a reference set")
    sp.add_argument("reference")
    sp.add_argument("synthesized")
    sp = add("render", "render sphere images")
    sp.add_argument("inputs", nargs="+")
    sp = add("superres", "low-density superresolution table")
    sp.add_argument("inputs", nargs="*")
    sp.add_argument("--factors", help="comma-separated downsampling factors")
    return p


def _overrides(args) -> list:
    ov = list(args.overrides)
    if args.out:
        ov.append(f"paths.output_dir={json.dumps(args.out)}")
    for flag, key in (("n", "sample.n"), ("type_id", "sample.type_id"), ("omega", "sample.omega"),
                      ("category", "sample.category")):
        v = getattr(args, flag, None)
        if v is not None:
            ov.append(f"{key}={json.dumps(v)}")
    if getattr(args, "factors", None):
        try:
            factors = [int(x) for x in args.factors.split(",")]
        except ValueError:
            raise ConfigError("--factors must be comma-separated integers") from None
        ov.append(f"superres_factors={json.dumps(factors)}")
    return ov


def run(args) -> None:
    cfg = load_config(args.config, _overrides(args))
    cmd = args.command
    if cmd == "augment":
        print(cmd_augment(cfg))
    elif cmd == "fit":
        print(cmd_fit(cfg))
    elif cmd == "train":
        print(cmd_train(cfg))
    elif cmd == "sample":
        print(cmd_sample(cfg, args.embedding))
    elif cmd == "classify":
        print(cmd_classify(cfg, args.inputs))
    elif cmd == "evaluate":
        print(cmd_evaluate(cfg, args.reference, args.synthesized).table())
    elif cmd == "render":
        for p in cmd_render(cfg, args.inputs):
            print(p)
    elif cmd == "superres":
        print(cmd_superres(cfg, args.inputs)[1])


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BrdfDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
