"""Command-line entry point: ``streetsynth <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as mx
from ._io import atomic_write_text
from .config import build, load_kv, parse_kv, split_keys
from .density import load_density
from .errors import ConfigError, ConfigMismatch, StreetSynthError
from .extract import extract_graph
from .generator import ConditionSet, generate
from .geo import Region
from .graph import StreetGraph, load_graph, save_graph
from .index_model.config import ModelConfig, TrainConfig
from .index_model.data import WindowDataset
from .index_model.io import load_params, save_params
from .index_model.train import train
from .osm import build_graph, parse_overpass
from .prepare import load_prepared, prepare_region, resample_nearest, save_prepared
from .raster import load_pgm, load_raster, save_pgm, save_svg
from .synth import synth_city, to_overpass
from .vq import decode, encode, extract_patches, fit_codebook, load_codebook, load_index_field, save_codebook, \
    save_index_field

log = logging.getLogger("streetsynth")


def _log_config(name: str, **values) -> None:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return dataclasses.asdict(v)
        if isinstance(v, Path):
            return str(v)
        return v

    log.info("%s config %s", name, json.dumps({k: plain(v) for k, v in values.items()}, sort_keys=True,
                                              default=str))


def _region_arg(args) -> Region:
    if args.region_file:
        return Region.from_dict(json.loads(Path(args.region_file).read_text(encoding="utf-8")))
    if not args.region:
        raise ConfigError("one of --region or --region-file is required", "region")
    try:
        south, west, north, east = (float(v) for v in args.region.split(","))
    except ValueError:
        raise ConfigError(f"--region must be south,west,north,east; got {args.region!r}", "region") from None
    return Region.from_bbox(south, west, north, east)


# ---------------------------------------------------------------- subcommands

def cmd_synth_city(args) -> None:
    _log_config("synth-city", seed=args.seed, cells=args.cells, water=not args.no_water)
    city = synth_city(args.seed, args.cells, water=not args.no_water)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "roads.json", to_overpass(city))
    save_pgm(city.land, out / "land.pgm")
    atomic_write_text(out / "region.json", json.dumps(city.region.to_dict(), indent=2))
    save_graph(city.graph, out / "truth.json")
    log.info("city: %d vertices, %d edges", city.graph.n_vertices, city.graph.n_edges)


def cmd_ingest(args) -> None:
    region = _region_arg(args)
    _log_config("ingest", overpass=args.overpass, region=region.to_dict())
    data = parse_overpass(Path(args.overpass).read_bytes())
    g = build_graph(data, region)
    g.check()
    save_graph(g, args.out)
    log.info("graph: %d vertices, %d edges, %d malformed ways dropped", g.n_vertices, g.n_edges, data.dropped_ways)


def cmd_prepare(args) -> None:
    g = load_graph(args.graph)
    if g.frame.get("kind") != "region":
        raise ConfigError("graph has no region frame; produce it with `ingest`", "graph")
    region = Region.from_dict(g.frame)
    land = load_pgm(args.land) if args.land else None
    _log_config("prepare", graph=args.graph, land=args.land, region=region.to_dict())
    pr = prepare_region(g, region, land)
    path = save_prepared(pr, args.out_dir)
    log.info("manifest written to %s", path)


def cmd_train_vq(args) -> None:
    _log_config("train-vq", manifests=args.manifest, k=args.k, seed=args.seed, max_iters=args.max_iters)
    patches = np.concatenate([extract_patches(load_prepared(m).p2_field, 16) for m in args.manifest])
    history: list[float] = []
    cb = fit_codebook(patches, args.k, seed=args.seed, max_iters=args.max_iters, history=history)
    save_codebook(cb, args.out)
    log.info("codebook K=%d from %d patches, final error %.6g", cb.K, len(patches), history[-1] if history else 0)


def cmd_encode(args) -> None:
    cb = load_codebook(args.codebook)
    field = load_raster(args.field)
    _log_config("encode", codebook=args.codebook, field=args.field)
    save_index_field(encode(field, cb), cb.K, args.out)


def _model_and_train_configs(args, K: int) -> tuple[ModelConfig, TrainConfig]:
    values: dict[str, str] = {}
    if args.config:
        values.update(load_kv(args.config))
    for item in args.set or []:
        values.update(parse_kv(item))
    m_vals, t_vals = split_keys(values, ModelConfig, TrainConfig)
    cfg = build(ModelConfig, m_vals, ModelConfig(K=K))
    if cfg.K != K:
        raise ConfigMismatch(f"config K={cfg.K} but the codebook has K={K}")
    return cfg, build(TrainConfig, t_vals)


def cmd_train_index(args) -> None:
    cb = load_codebook(args.codebook)
    cfg, tcfg = _model_and_train_configs(args, cb.K)
    _log_config("train-index", manifests=args.manifest, codebook=args.codebook, model=cfg, train=tcfg)
    regions = [load_prepared(m).arrays(cfg.window, cfg.pad, cb) for m in args.manifest]
    csv_path = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    res = train(WindowDataset(regions), cfg, tcfg, csv_path=csv_path, checkpoint_path=args.out)
    save_params(res.params, cfg, args.out)
    log.info("final loss %.4f after %d steps", res.history[-1][1] if res.history else float("nan"), tcfg.steps)


def cmd_generate(args) -> None:
    params, cfg = load_params(args.model)
    cb = load_codebook(args.codebook)
    density = load_density(args.density)
    p1 = load_raster(args.p1)
    land = resample_nearest(load_pgm(args.land), p1.shape) if args.land else np.ones(p1.shape, dtype=np.uint8)
    rows = args.rows or args.size
    cols = args.cols or args.size
    cell_m = Region(0, 0, 1, 1).cell_m
    cs = ConditionSet(density, p1, land, rows, cols, cell_m)
    top_k = None if args.top_k in (None, 0) else args.top_k
    _log_config("generate", model=args.model, codebook=args.codebook, rows=rows, cols=cols, seed=args.seed,
                temperature=args.temperature, top_k=top_k)
    t0 = time.perf_counter()
    field = generate(cs, params, cfg, cb, args.seed, args.temperature, top_k)
    log.info("generated %d cells in %.1f s", rows * cols, time.perf_counter() - t0)
    save_index_field(field, cb.K, args.out)


def cmd_extract(args) -> None:
    cb = load_codebook(args.codebook)
    field, K = load_index_field(args.index)
    if K != cb.K:
        raise ConfigMismatch(f"index field has K={K}, codebook has K={cb.K}")
    _log_config("extract", index=args.index, codebook=args.codebook, tau=args.tau,
                min_component=args.min_component, smooth=args.smooth)
    cell_m = Region(0, 0, 1, 1).cell_m
    df = decode(field, cb, smooth=args.smooth)
    g = extract_graph(df, cell_m / cb.patch_side, args.tau, args.min_component)
    g.frame = {"kind": "local", "cells": list(field.shape), "pixel_m": cell_m / cb.patch_side}
    g.check()
    save_graph(g, args.out)
    log.info("extracted %d vertices, %d edges, %.0f m", g.n_vertices, g.n_edges, g.total_length())


def _metrics_config(args) -> mx.MetricsConfig:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(load_kv(args.config))
    return build(mx.MetricsConfig, values)


def cmd_metrics(args) -> None:
    g = load_graph(args.graph)
    cfg = _metrics_config(args)
    land = load_pgm(args.land) if args.land else None
    mpp = Region(0, 0, 1, 1).pixel_m if land is not None else None
    _log_config("metrics", graph=args.graph, land=args.land, metrics=cfg)
    rep = mx.compute_metrics(g, land, mpp, cfg)
    mx.save_report(rep, args.out_dir)


def _histograms_of(path: str) -> dict[str, mx.Histogram]:
    p = Path(path)
    if p.is_dir():
        return mx.load_histograms(p / "summary.json")
    d = json.loads(p.read_text(encoding="utf-8"))
    if "histograms" in d:
        return mx.load_histograms(p)
    return mx.compute_metrics(StreetGraph.from_json(p.read_text(encoding="utf-8"))).histograms


def cmd_metrics_compare(args) -> None:
    _log_config("metrics-compare", a=args.a, b=args.b, out_dir=args.out_dir)
    dist = mx.save_comparison(_histograms_of(args.a), _histograms_of(args.b), args.out_dir,
                              (args.label_a, args.label_b))
    for k, v in dist.items():
        print(f"{k}\t{v:.6f}")


def cmd_render(args) -> None:
    g = load_graph(args.graph)
    save_svg(g, args.out)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streetsynth", description="Street network synthesis pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-city", help="write a procedural test city (Overpass JSON + land mask)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cells", type=int, default=64)
    s.add_argument("--no-water", action="store_true")
    s.set_defaults(func=cmd_synth_city)

    s = sub.add_parser("ingest", help="Overpass JSON -> street graph")
    s.add_argument("--overpass", required=True)
    s.add_argument("--region", help="south,west,north,east in degrees")
    s.add_argument("--region-file", help="region JSON as written by synth-city")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("prepare", help="rasters, density and manifest for one region")
    s.add_argument("--graph", required=True)
    s.add_argument("--land")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train-vq", help="fit the patch codebook")
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--k", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_vq)

    s = sub.add_parser("encode", help="distance field raster -> index field")
    s.add_argument("--codebook", required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train-index", help="train the index transformer")
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--config", help="key = value file with model and training keys")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    s.add_argument("--loss-csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_index)

    s = sub.add_parser("generate", help="sliding-window generation of an index field")
    s.add_argument("--model", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--density", required=True)
    s.add_argument("--p1", required=True)
    s.add_argument("--land")
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--rows", type=int)
    s.add_argument("--cols", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--top-k", type=int, default=0, help="0 keeps every token")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("extract", help="index field -> street graph")
    s.add_argument("--index", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--tau", type=float, default=0.125)
    s.add_argument("--min-component", type=float, default=300.0)
    s.add_argument("--smooth", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("metrics", help="statistics of one graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--land")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("metrics-compare", help="histogram comparison of two metrics runs")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--label-a", default="A")
    s.add_argument("--label-b", default="B")
    s.set_defaults(func=cmd_metrics_compare)

    s = sub.add_parser("render", help="graph -> SVG")
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        where = f" (key: {exc.key})" if exc.key else ""
        print(f"streetsynth: config error{where}: {exc}", file=sys.stderr)
        return 2
    except (StreetSynthError, OSError) as exc:
        print(f"streetsynth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
