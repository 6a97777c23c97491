"""Command line front end.

Five commands share one config document: ``gen`` synthesises a dataset,
``train`` fits the network, ``eval`` scores a checkpoint against the
plain upsampling baseline, ``heatmap`` renders the learned extent
fields, ``gradcheck`` runs the analytic-vs-numeric gradient suite.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .colormap import map_to_rgb
from .config import RunConfig
from .data import (SceneObject, SceneSpec, area_decimate, gaussian_blur,
                   random_scene, read_dataset, save_png, synth_scene,
                   wald_degrade, write_dataset)
from .errors import CheckFailure, ConfigurationError, DataError
from .gradcheck import run_suite
from .metrics import MetricReport, d_lambda, d_s, ergas, hqnr, q_avg, sam
from .network import ARNet, load_checkpoint, save_checkpoint, upsample_lrms
from .tensor import Tensor
from .training import AdamState, train


# ------------------------------------------------------------------ gen

def cmd_gen(cfg: RunConfig, out_dir: str) -> int:
    d = cfg.data
    rng = np.random.default_rng([cfg.seed, 101])
    weights = None if d["weights"] is None else np.asarray(d["weights"], np.float64)
    triples, meta = [], []
    for _ in range(d["samples"]):
        scene = random_scene(rng, d["height"], d["width"], d["bands"],
                             num_objects=d["objects"], noise=d["noise"],
                             seed=int(rng.integers(1 << 62)))
        gt = synth_scene(scene)
        triples.append(wald_degrade(gt, sigma=d["sigma"], factor=d["factor"],
                                    weights=weights))
        meta.append({
            "background": list(scene.background),
            "noise": scene.noise,
            "scene_seed": scene.seed,
            "objects": [o.to_json() for o in scene.objects],
        })
    manifest = write_dataset(
        out_dir, triples, bands=d["bands"], height=d["height"],
        width=d["width"], factor=d["factor"],
        extra={"seed": cfg.seed, "sigma": d["sigma"], "noise": d["noise"]},
        sample_meta=meta)
    clamped = sum(e["clamped"] for e in manifest["samples"])
    print(f"wrote {manifest['count']} samples "
          f"({d['bands']}x{d['height']}x{d['width']}, factor {d['factor']}) "
          f"to {out_dir}; {clamped} values clamped")
    return 0


# ---------------------------------------------------------------- train

def _check_dataset(cfg: RunConfig, ds) -> None:
    d = cfg.data
    if ds.bands != d["bands"]:
        raise ConfigurationError(
            f"config data.bands={d['bands']} but dataset has {ds.bands}")
    if ds.factor != d["factor"]:
        raise ConfigurationError(
            f"config data.factor={d['factor']} but dataset has {ds.factor}")


def _split(cfg: RunConfig, n: int) -> int:
    """Samples are ordered; the trailing ``holdout`` are never trained on."""
    n_train = n - cfg.data["holdout"]
    if n_train < 1:
        raise ConfigurationError(
            f"holdout {cfg.data['holdout']} leaves no training samples "
            f"out of {n}")
    return n_train


def cmd_train(cfg: RunConfig, data_dir: str, out_dir: str,
              resume: str | None = None) -> int:
    ds = read_dataset(data_dir)
    _check_dataset(cfg, ds)
    n_train = _split(cfg, len(ds))
    lrms_up = upsample_lrms(ds.lrms_low[:n_train], ds.factor)
    tcfg = cfg.train_config()

    if resume is not None:
        st = load_checkpoint(resume)
        net, start_epoch = st.net, st.epoch
        adam = (AdamState.from_extra(st.extra, net)
                if "adam.step" in st.extra else None)
    else:
        net = ARNet(cfg.network_config(), np.random.default_rng([cfg.seed, 11]))
        start_epoch, adam = 0, None

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(cfg.to_json() + "\n")
    mode = "a" if resume is not None else "w"
    with open(out / "train_log.jsonl", mode) as fh:
        state, history = train(
            net, ds.pan[:n_train], lrms_up, ds.gt[:n_train], tcfg, cfg.seed,
            state=adam, start_epoch=start_epoch, log_fh=fh,
            on_epoch=lambda r: print(
                f"epoch {r.epoch}/{tcfg.epochs} lr {r.lr:.2e} "
                f"loss {r.loss:.6f} ({r.seconds:.1f}s)"))
    save_checkpoint(out / "checkpoint.bin", net, epoch=tcfg.epochs,
                    extra=state.to_extra())
    specs = net.frozen_specs()
    if specs is not None:
        record = {"epoch_frozen": tcfg.explore_epochs,
                  "specs": [[s.k_h, s.k_w] for s in specs]}
        (out / "frozen_specs.json").write_text(
            json.dumps(record, indent=1) + "\n")
    last = history[-1].loss if history else float("nan")
    print(f"checkpoint written to {out / 'checkpoint.bin'} "
          f"(final loss {last:.6f})")
    return 0


# ----------------------------------------------------------------- eval

_METRIC_KEYS = ("sam", "ergas", "q_avg", "d_lambda", "d_s", "hqnr")


def _score(fused, gt, lrms_low, pan, pan_low, window, ratio) -> dict:
    dl = d_lambda(fused, lrms_low, window=window, ratio=ratio)
    dsv = d_s(fused, lrms_low, pan, pan_low, window=window, ratio=ratio)
    return {
        "sam": sam(fused, gt),
        "ergas": ergas(fused, gt, ratio=ratio),
        "q_avg": q_avg(fused, gt, window=window),
        "d_lambda": dl,
        "d_s": dsv,
        "hqnr": hqnr(dl, dsv),
    }


def cmd_eval(cfg: RunConfig, checkpoint: str, data_dir: str,
             out_dir: str) -> int:
    st = load_checkpoint(checkpoint)
    net = st.net
    ds = read_dataset(data_dir)
    if ds.bands != net.config.bands:
        raise ConfigurationError(
            f"checkpoint expects {net.config.bands} bands, dataset has {ds.bands}")
    n_train = _split(cfg, len(ds))
    eval_idx = range(n_train, len(ds)) if cfg.data["holdout"] else range(len(ds))
    window = cfg.metrics["window"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    reports = {name: MetricReport(dataset_id=str(data_dir), ratio=ds.factor,
                                  window=window)
               for name in ("model", "exp")}
    for k in eval_idx:
        pan = ds.pan[k:k + 1]
        up = upsample_lrms(ds.lrms_low[k:k + 1], ds.factor)
        fused = net.forward(Tensor(pan), Tensor(up)).data[0].astype(np.float64)
        gt = ds.gt[k].astype(np.float64)
        low = ds.lrms_low[k].astype(np.float64)
        pan64 = ds.pan[k].astype(np.float64)
        pan_low = area_decimate(gaussian_blur(pan64, cfg.data["sigma"]),
                                ds.factor)
        for name, img in (("model", fused), ("exp", up[0].astype(np.float64))):
            row = _score(img, gt, low, pan64, pan_low, window, ds.factor)
            row["sample"] = k
            reports[name].add(row)
        save_png(out / f"fused_{k:05d}.png",
                 np.clip(fused, 0.0, 1.0)[:3] if ds.bands >= 3 else fused[0])
        save_png(out / f"residual_{k:05d}.png",
                 np.abs(fused - gt).mean(axis=0))

    with open(out / "report.json", "w") as fh:
        json.dump({name: rep.to_json() for name, rep in reports.items()},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")

    header = "        " + "".join(f"{k:>10}" for k in _METRIC_KEYS)
    print(header)
    for name, rep in reports.items():
        s = rep.summary()
        cells = "".join(f"{s[k]['mean']:>10.4f}" for k in _METRIC_KEYS)
        print(f"{name:<8}{cells}")
    print(f"report written to {out / 'report.json'} "
          f"({len(reports['model'].per_image)} samples)")
    return 0


# -------------------------------------------------------------- heatmap

def _probe_scene(cfg: RunConfig) -> tuple[SceneSpec, SceneObject, SceneObject]:
    """Flat scene with one large and one small square of equal reflectance,
    so extent differences between them reflect object size only."""
    d = cfg.data
    h, w, bands = d["height"], d["width"], d["bands"]
    refl = tuple([0.85] * bands)
    big = SceneObject("rect", h // 8, w // 8, max(8, h // 3), max(8, w // 3), refl)
    small = SceneObject("rect", (2 * h) // 3, (2 * w) // 3, 3, 3, refl)
    spec = SceneSpec(h, w, bands, tuple([0.35] * bands), (big, small),
                     noise=0.0, seed=7)
    return spec, big, small


def _coverage_mean(vals: np.ndarray, mask: np.ndarray) -> float:
    """Area-weighted mean of a map over a full-resolution mask."""
    mh, mw = vals.shape
    H, W = mask.shape
    sf_h, sf_w = H // mh, W // mw
    cov = mask.astype(np.float64).reshape(mh, sf_h, mw, sf_w).mean(axis=(1, 3))
    total = cov.sum()
    return float((vals * cov).sum() / total) if total > 0 else float("nan")


def cmd_heatmap(cfg: RunConfig, checkpoint: str, out_dir: str,
                data_dir: str | None = None, sample: int = 0) -> int:
    st = load_checkpoint(checkpoint)
    net = st.net
    if not net.config.hwa:
        raise DataError(
            "checkpoint was trained without learned extents; nothing to render")
    d = cfg.data

    masks = None
    if data_dir is not None:
        ds = read_dataset(data_dir)
        if ds.bands != net.config.bands:
            raise ConfigurationError(
                f"checkpoint expects {net.config.bands} bands, "
                f"dataset has {ds.bands}")
        if not (0 <= sample < len(ds)):
            raise DataError(f"sample {sample} out of range [0, {len(ds)})")
        pan = ds.pan[sample:sample + 1]
        up = upsample_lrms(ds.lrms_low[sample:sample + 1], ds.factor)
        source = {"kind": "dataset", "path": str(data_dir), "sample": sample}
    else:
        scene, big, small = _probe_scene(cfg)
        gt = synth_scene(scene)
        triple = wald_degrade(gt, sigma=d["sigma"], factor=d["factor"])
        pan = np.clip(triple.pan, 0.0, 1.0).astype(np.float32)[None]
        low = np.clip(triple.lrms_low, 0.0, 1.0).astype(np.float32)[None]
        up = upsample_lrms(low, d["factor"])
        h, w = d["height"], d["width"]
        masks = {"large": big.mask(h, w), "small": small.mask(h, w)}
        source = {"kind": "probe", "large": big.to_json(),
                  "small": small.to_json()}

    from PIL import Image

    net.set_collect_maps(True)
    net.forward(Tensor(pan), Tensor(up))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(net.arconv_layers):
        assert layer.last_hw is not None
        entry = {"index": i, "name": layer.name}
        for tag, field, hw_range in (("h", layer.last_hw[0], layer.params.range_h),
                                     ("w", layer.last_hw[1], layer.params.range_w)):
            vals = field[0, 0].astype(np.float64)
            lo, hi = hw_range.b, hw_range.top
            if vals.min() < lo or vals.max() > hi:
                raise CheckFailure(
                    f"layer {layer.name} {tag}-extent leaves ({lo}, {hi}): "
                    f"[{vals.min()}, {vals.max()}]")
            stem = out / f"layer{i:02d}_{tag}"
            Image.fromarray(map_to_rgb(vals, lo, hi)).save(f"{stem}.png")
            with open(f"{stem}.raw", "wb") as fh:
                fh.write(vals.astype("<f4").tobytes())
            entry[f"range_{tag}"] = [lo, hi]
            entry[f"shape_{tag}"] = list(vals.shape)
            entry[f"mean_{tag}"] = float(vals.mean())
            entry[f"min_{tag}"] = float(vals.min())
            entry[f"max_{tag}"] = float(vals.max())
            if masks is not None:
                for mname, mask in masks.items():
                    entry[f"{mname}_mean_{tag}"] = _coverage_mean(vals, mask)
        layers.append(entry)

    summary = {"source": source, "layers": layers}
    if masks is not None:
        # Recorded for inspection, deliberately not asserted: small nets on
        # synthetic scenes need not separate the two objects on every layer.
        summary["probe_comparison"] = {
            "layers_where_large_h_ge_small_h": sum(
                1 for e in layers if e["large_mean_h"] >= e["small_mean_h"]),
            "layers_where_large_w_ge_small_w": sum(
                1 for e in layers if e["large_mean_w"] >= e["small_mean_w"]),
            "layers_total": len(layers),
        }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {2 * len(layers)} heatmaps for {len(layers)} layers to {out}")
    return 0


# ------------------------------------------------------------ gradcheck

def cmd_gradcheck(inject_fault: str | None = None, seed: int = 0) -> int:
    results = run_suite(fault=inject_fault, seed=seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  max rel err {r.max_rel_err:.3e} "
              f"(limit {r.limit:.0e})")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure(f"gradient checks failed: {', '.join(failed)}")
    print(f"all {len(results)} gradient checks passed")
    return 0


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="arconv",
        description="Adaptive rectangular convolution pansharpening tool")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, value parsed as JSON")
        sp.add_argument("--seed", type=int, help="overrides the config seed")

    sp = sub.add_parser("gen", help="synthesise a dataset")
    common(sp)
    sp.add_argument("--out", required=True, help="output dataset directory")

    sp = sub.add_parser("train", help="train on a dataset directory")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="run output directory")
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = sub.add_parser("eval", help="score a checkpoint on the holdout split")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="report output directory")

    sp = sub.add_parser("heatmap", help="render learned extent fields")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="image output directory")
    sp.add_argument("--data", help="dataset directory (default: probe scene)")
    sp.add_argument("--sample", type=int, default=0,
                    help="dataset sample index to render")

    sp = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    common(sp)
    sp.add_argument("--inject-fault", metavar="OP",
                    help="flip one op's analytic gradient; the run must fail")

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.set, args.seed)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.out, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.data, args.out)
        if args.command == "heatmap":
            return cmd_heatmap(cfg, args.checkpoint, args.out,
                               data_dir=args.data, sample=args.sample)
        if args.command == "gradcheck":
            return cmd_gradcheck(args.inject_fault, seed=cfg.seed)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except CheckFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
