"""Command-line entry point: sample, render, sweep, ingest, compare, report.

All configuration is JSON; every command writes a run manifest describing
its inputs (content hash), seeds, outputs and wall-clock per stage.  Given
identical inputs and output targets, every command reproduces its artifacts
byte for byte.  Exit codes: 0 success, 2 configuration error, 3 placement
failure, 4 ranking label mismatch, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .characterize import (
    Manifold,
    ProtocolConfig,
    compare_rankings,
    heatmap_svg,
    ingest_sequence,
    marginalize,
    rank_manifold_contexts,
    run_sweep,
)
from .errors import ConfigError, InvarsimError, LabelMismatchError, PlacementError
from .imgio import write_flo, write_pfm, write_ppm
from .render import RenderConfig, SensorConfig, apply_sensor, compute_flow, render_frame, render_ground_truth
from .scene import SceneGraph
from .scenegen import SceneConfig, apply_dynamics, sample_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PLACEMENT = 3
EXIT_MISMATCH = 4


def _load_json_file(path):
    text = Path(path).read_text()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from exc


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Manifest:
    """Run record: inputs hash, seeds, tool version, outputs, timings."""

    def __init__(self, command, config_hash, seeds):
        self.doc = {
            "tool": "invarsim",
            "version": __version__,
            "command": command,
            "config_hash": config_hash,
            "seeds": seeds,
            "outputs": {},
            "wall_clock_s": {},
        }
        self._t0 = time.monotonic()
        self._stage_start = self._t0

    def stage(self, name, paths):
        now = time.monotonic()
        existing = {p for ps in self.doc["outputs"].values() for p in ps}
        fresh = [str(p) for p in paths if str(p) not in existing]
        self.doc["outputs"][name] = fresh
        self.doc["wall_clock_s"][name] = round(now - self._stage_start, 6)
        self._stage_start = now

    def write(self, path):
        Path(path).write_text(json.dumps(self.doc, sort_keys=True, indent=1) + "\n")
        return path


def _emit(args, payload):
    """Machine-readable stdout; quiet unless asked for more."""
    if args.porcelain:
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    else:
        for key, value in payload.items():
            if isinstance(value, list):
                for v in value:
                    sys.stdout.write(f"{key}: {v}\n")
            else:
                sys.stdout.write(f"{key}: {value}\n")


# -- sample -------------------------------------------------------------------


def cmd_sample(args):
    doc, text = _load_json_file(args.config)
    config = SceneConfig.from_dict(doc)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    scene = sample_scene(config, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("sample", _sha256(text.encode() + str(seed).encode()),
                        {"scene": seed})
    if args.dry_run:
        _emit(args, {"objects": len(scene.objects), "out": str(out)})
        return EXIT_OK
    out.write_text(scene.to_json() + "\n")
    manifest.stage("sample", [out])
    mpath = manifest.write(out.with_suffix(".manifest.json"))
    _emit(args, {"scene": str(out), "manifest": str(mpath)})
    return EXIT_OK


# -- render -------------------------------------------------------------------


def _parse_frames(spec: str):
    if ".." in spec:
        a, b = spec.split("..", 1)
        start, stop = int(a), int(b)
    else:
        start = stop = int(spec)
    if stop < start:
        raise ConfigError(f"bad frame range {spec!r}")
    return list(range(start, stop + 1))


def cmd_render(args):
    scene = SceneGraph.from_json(Path(args.scene).read_text())
    frames = _parse_frames(args.frames)
    cfg = RenderConfig(width=args.width, height=args.height,
                       samples_per_pixel=args.spp, max_bounces=args.max_bounces,
                       rng_seed=args.seed if args.seed is not None else scene.seed)
    sensor = SensorConfig(gaussian_noise_sigma=args.sensor_sigma,
                          quantization_bits=args.bits, gamma=args.gamma,
                          noise_seed=args.sensor_seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_hash = _sha256(
        (scene.to_json() + repr((cfg, sensor, frames))).encode()
    )
    manifest = Manifest("render", config_hash,
                        {"render": cfg.rng_seed, "sensor": sensor.noise_seed})
    if args.dry_run:
        _emit(args, {"frames": len(frames),
                     "rays": len(frames) * cfg.width * cfg.height * cfg.samples_per_pixel})
        return EXIT_OK

    states = {t: apply_dynamics(scene, t) for t in frames}
    outputs = []
    for t in frames:
        st = states[t]
        hdr = render_frame(st, cfg)
        gt = render_ground_truth(st, cfg)
        ldr = apply_sensor(hdr, dataclasses.replace(
            sensor, noise_seed=sensor.noise_seed + t))
        base = out_dir / f"frame_{t:04d}"
        write_pfm(f"{base}.pfm", hdr.data)
        write_ppm(f"{base}.ppm", ldr.data, maxval=ldr.maxval)
        write_pfm(f"{base}_depth.pfm", gt.depth)
        write_pfm(f"{base}_normal.pfm", gt.normal)
        write_pfm(f"{base}_object_id.pfm", gt.object_id.astype(np.float32))
        write_pfm(f"{base}_material_id.pfm", gt.material_id.astype(np.float32))
        write_pfm(f"{base}_shadow.pfm", gt.shadow_fraction)
        write_pfm(f"{base}_reflectance.pfm", gt.reflectance)
        sidecar = {
            "frame": t,
            "theta_g": {"width": cfg.width, "height": cfg.height,
                        "spp": cfg.samples_per_pixel,
                        "max_bounces": cfg.max_bounces,
                        "rng_seed": cfg.rng_seed},
            "sensor": {"sigma": sensor.gaussian_noise_sigma,
                       "bits": sensor.quantization_bits,
                       "gamma": sensor.gamma,
                       "noise_seed": sensor.noise_seed + t},
            "scene_seed": scene.seed,
            "scene_hash": _sha256(st.to_json().encode()),
            "medium": {"weather": st.medium.weather_tag,
                       "beta": list(st.medium.beta)},
            "lights": [{"name": l.name, "kind": l.kind, "intensity": l.intensity}
                       for l in st.lights],
        }
        Path(f"{base}.json").write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
        outputs += [f"{base}{suffix}" for suffix in
                    (".pfm", ".ppm", "_depth.pfm", "_normal.pfm",
                     "_object_id.pfm", "_material_id.pfm", "_shadow.pfm",
                     "_reflectance.pfm", ".json")]
    manifest.stage("frames", outputs)

    flow_outputs = []
    for a, b in zip(frames[:-1], frames[1:]):
        flow, occl = compute_flow(states[a], states[b], cfg)
        fpath = out_dir / f"flow_{a:04d}_{b:04d}.flo"
        write_flo(fpath, flow)
        opath = out_dir / f"occlusion_{a:04d}_{b:04d}.pfm"
        write_pfm(opath, occl.astype(np.float32))
        flow_outputs += [fpath, opath]
    manifest.stage("flow", flow_outputs)
    mpath = manifest.write(out_dir / "manifest.json")
    _emit(args, {"out_dir": str(out_dir), "frames": [str(p) for p in outputs[:1]],
                 "manifest": str(mpath)})
    return EXIT_OK


# -- sweep --------------------------------------------------------------------


def cmd_sweep(args):
    doc, text = _load_json_file(args.protocol)
    protocol = ProtocolConfig.from_dict(doc)
    out_dir = Path(args.out_dir)
    manifest = Manifest("sweep", protocol.content_hash(),
                        {"scene": protocol.scene_seed,
                         "render": protocol.render_seed,
                         "patch": protocol.patch_seed,
                         "sensor": protocol.sensor_seed})
    if args.dry_run:
        cells, renders = _sweep_size(protocol)
        _emit(args, {"cells": cells, "renders": renders})
        return EXIT_OK
    out_dir.mkdir(parents=True, exist_ok=True)
    manifold = run_sweep(protocol, threads=args.threads,
                         cache_dir=out_dir / "cells")
    csv_path = out_dir / "manifold.csv"
    csv_path.write_text(manifold.to_csv())
    outputs = [csv_path]
    manifest.stage("sweep", outputs)

    svg_paths = _emit_heatmaps(manifold, out_dir)
    report = {
        "model": manifold.model,
        "aux": manifold.aux,
        "missing_cells": len(manifold.missing),
    }
    try:
        report["context_ranking"] = rank_manifold_contexts(manifold)
    except ConfigError:
        pass
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    manifest.stage("report", svg_paths + [report_path])
    mpath = manifest.write(out_dir / "manifest.json")
    _emit(args, {"manifold": str(csv_path), "report": str(report_path),
                 "manifest": str(mpath)})
    return EXIT_OK


def _sweep_size(protocol):
    n_v = len(protocol.patch_sizes)
    n_ctx = max(1, len(protocol.contexts))
    if protocol.model in ("OC", "BC", "GC"):
        n_w = len(protocol.illumination_levels)
        renders = n_w + 1
    elif protocol.model == "PS":
        n_w = len(protocol.speed_scales)
        renders = 4 * n_w
    else:
        n_w = len(protocol.weather_tags)
        renders = n_w * len(protocol.density_scales)
        return n_w, renders
    return n_w * n_v * n_ctx, renders


def _emit_heatmaps(manifold, out_dir):
    paths = []
    if len(manifold.theta_w_axes) + len(manifold.theta_v_axes) < 2:
        return paths
    x_axis = manifold.theta_w_axes[0]
    y_axis = (manifold.theta_v_axes + manifold.theta_w_axes[1:])[0]
    for context in manifold.contexts():
        svg = heatmap_svg(manifold, context, x_axis, y_axis)
        path = out_dir / f"heatmap_{context}.svg"
        path.write_text(svg)
        paths.append(path)
    return paths


# -- ingest -------------------------------------------------------------------


def cmd_ingest(args):
    seq = ingest_sequence(args.directory, args.annotation)
    summary = {
        "directory": seq.directory,
        "frames": len(seq.frames),
        "resolution": list(seq.frames[0].shape[:2]),
        "reference_index": seq.reference_index,
        "zero_flow": seq.zero_flow,
        "patches": seq.patches,
        "flow_files": seq.flow_files,
    }
    out = Path(args.out) if args.out else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        _emit(args, {"summary": str(out)})
    else:
        sys.stdout.write(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


# -- compare ------------------------------------------------------------------


def cmd_compare(args):
    a = Manifold.from_csv(Path(args.manifold_a).read_text())
    b = Manifold.from_csv(Path(args.manifold_b).read_text())
    if args.by == "weather":
        rank_a = _weather_ranking(a)
        rank_b = _weather_ranking(b)
    else:
        rank_a = rank_manifold_contexts(a)
        rank_b = rank_manifold_contexts(b)
    comparison = compare_rankings(rank_a, rank_b)
    doc = comparison.to_dict()
    doc["by"] = args.by
    doc["models"] = [a.model, b.model]
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        _emit(args, {"comparison": args.out})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _weather_ranking(manifold):
    from .characterize import HIGHER_IS_BETTER, rank_items

    pools = {}
    for r in manifold.records:
        if r.n > 0 and "weather" in r.theta_w:
            pools.setdefault(r.theta_w["weather"], []).append(r.mean)
    if not pools:
        raise ConfigError("manifold has no weather axis to rank")
    items = [(w, float(np.mean(v))) for w, v in sorted(pools.items())]
    direction = "higher_better" if HIGHER_IS_BETTER[manifold.model] else "lower_better"
    return rank_items(items, direction)


# -- report -------------------------------------------------------------------


def cmd_report(args):
    manifold = Manifold.from_csv(Path(args.manifold).read_text())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("report", _sha256(Path(args.manifold).read_bytes()), {})
    svg_paths = _emit_heatmaps(manifold, out_dir)
    report = {"model": manifold.model, "aux": manifold.aux,
              "missing_cells": len(manifold.missing)}
    try:
        report["context_ranking"] = rank_manifold_contexts(manifold)
    except ConfigError:
        pass
    marginals = {}
    for axis in manifold.theta_w_axes + manifold.theta_v_axes:
        table = marginalize(manifold, axis)
        marginals[axis] = [
            {"context": e.context, "coords": e.coords, "value": e.value,
             "complete": e.complete}
            for e in table.entries
        ]
    report["marginals"] = marginals
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    manifest.stage("report", svg_paths + [report_path])
    mpath = manifest.write(out_dir / "manifest.json")
    _emit(args, {"report": str(report_path), "manifest": str(mpath)})
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="invarsim",
        description="Simulation workbench for validating vision-model "
                    "invariance assumptions on procedural city scenes.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for grid evaluation")
    common.add_argument("--porcelain", action="store_true",
                        help="stdout carries one machine-readable JSON object")
    common.add_argument("--dry-run", action="store_true",
                        help="validate and report work size without writing")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common],
                       help="sample a scene graph from a scene config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("render", parents=[common],
                       help="render frames plus exact ground truth")
    p.add_argument("scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frames", default="0..0", help="inclusive range, e.g. 0..1")
    p.add_argument("--spp", type=int, default=200)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--max-bounces", type=int, default=1)
    p.add_argument("--sensor-sigma", type=float, default=0.002)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--sensor-seed", type=int, default=0)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("sweep", parents=[common],
                       help="run a characterization protocol over its grid")
    p.add_argument("protocol")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ingest", parents=[common],
                       help="validate a real frame directory plus annotation")
    p.add_argument("directory")
    p.add_argument("annotation")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("compare", parents=[common],
                       help="rank-compare two manifold CSVs")
    p.add_argument("manifold_a")
    p.add_argument("manifold_b")
    p.add_argument("--by", choices=("context", "weather"), default="context")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", parents=[common],
                       help="emit heatmaps, marginals and rankings for a manifold")
    p.add_argument("manifold")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LabelMismatchError as exc:
        print(f"invarsim: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except PlacementError as exc:
        print(f"invarsim: {exc}", file=sys.stderr)
        return EXIT_PLACEMENT
    except (ConfigError, FileNotFoundError) as exc:
        print(f"invarsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvarsimError as exc:
        print(f"invarsim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
