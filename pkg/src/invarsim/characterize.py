"""Characterization protocols: sweeps, manifolds, marginals, rankings, ingest.

A sweep walks a grid of contextual coordinates (illumination level, weather
density, object speed, frame index) crossed with model parameters (patch
side), evaluates one criterion measure per (cell, spatial context) over
sampled patches, and assembles the results into a criterion manifold.

Determinism contract: every random choice is keyed by a stable hash of the
protocol seeds plus the cell's own coordinates, never by enumeration order,
so any cell evaluated in isolation equals its value inside a full sweep and
thread count cannot change output bytes.  Renders across grid cells share
one render seed (common random numbers), which makes purely photometric
parameter changes produce purely photometric image changes.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    IngestError,
    LabelMismatchError,
    PatchSamplingError,
)
from .patches import (
    CONTEXT_NAMES,
    Patch,
    classify_contexts,
    sample_patches,
)
from .render import (
    RenderConfig,
    SensorConfig,
    apply_sensor,
    compute_flow,
    render_frame,
    render_ground_truth,
)
from .scene import WEATHER_PRESETS, DynamicsScript
from .scenegen import SceneConfig, apply_dynamics, sample_scene, validation_scene_config
from .validators import (
    average_ranks,
    bc_variance,
    ds_angular_error,
    gc_variance,
    oc_measure,
    ps_variance,
    spearman_rho,
)

MODELS = ("OC", "BC", "GC", "PS", "DS")

#: measure direction per model: is a larger criterion value better?
HIGHER_IS_BETTER = {"OC": True, "BC": False, "GC": False, "PS": False, "DS": False}


def _mix(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (never Python hash())."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything a characterization run needs, JSON-loadable."""

    model: str
    source: str = "simulate"
    scene: dict | None = None
    illumination_levels: tuple = ()
    weather_tags: tuple = ()
    density_scales: tuple = ()
    speed_scales: tuple = ()
    sunny_tags: tuple = ("MildHaze",)
    patch_sizes: tuple = (5, 9, 13)
    contexts: tuple = ()
    patches_per_cell: int = 6
    scene_seed: int = 7
    render_seed: int = 11
    patch_seed: int = 13
    sensor_seed: int = 17
    width: int = 64
    height: int = 48
    samples_per_pixel: int = 16
    max_bounces: int = 1
    sensor: dict | None = field(default_factory=lambda: {"sigma": 0.002, "bits": 8, "gamma": 1.0})
    ds_angle_threshold_deg: float = 3.0
    exclude_occluded: bool = False
    zero_flow: bool = False
    ingest_dir: str | None = None
    ingest_annotation: str | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}", json_path="model")
        if self.source not in ("simulate", "ingest"):
            raise ConfigError(f"unknown source {self.source!r}", json_path="source")
        if self.patches_per_cell < 1:
            raise ConfigError("patches_per_cell must be >= 1",
                              json_path="patches_per_cell")
        for s in self.patch_sizes:
            if s % 2 == 0 or s < 3:
                raise ConfigError(f"patch size {s} must be odd and >= 3",
                                  json_path="theta_v.patch_sizes")
            if self.model in ("GC",) and s < 5:
                raise ConfigError("GC needs patch sizes >= 5",
                                  json_path="theta_v.patch_sizes")
        if self.source == "simulate":
            if self.scene is None:
                raise ConfigError("simulate mode requires a scene config",
                                  json_path="scene")
            if self.model in ("OC", "BC", "GC") and not self.illumination_levels:
                raise ConfigError("illumination_levels required",
                                  json_path="theta_w.illumination_levels")
            if self.model == "DS" and (not self.weather_tags or
                                       len(self.density_scales) < 3):
                raise ConfigError(
                    "DS needs weather_tags and >= 3 density_scales",
                    json_path="theta_w")
            if self.model == "PS" and not self.speed_scales:
                raise ConfigError("speed_scales required", json_path="theta_w")
        else:
            if not self.ingest_dir or not self.ingest_annotation:
                raise ConfigError("ingest mode requires ingest.directory and "
                                  "ingest.annotation", json_path="ingest")
        if not self.contexts and self.model != "DS":
            raise ConfigError("contexts must not be empty", json_path="contexts")

    # -- JSON ------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolConfig":
        try:
            tw = doc.get("theta_w", {})
            tv = doc.get("theta_v", {})
            seeds = doc.get("seeds", {})
            render = doc.get("render", {})
            ingest = doc.get("ingest", {})
            thresholds = doc.get("thresholds", {})
            return cls(
                model=doc["model"],
                source=doc.get("source", "simulate"),
                scene=doc.get("scene"),
                illumination_levels=tuple(tw.get("illumination_levels", ())),
                weather_tags=tuple(tw.get("weather_tags", ())),
                density_scales=tuple(tw.get("density_scales", ())),
                speed_scales=tuple(tw.get("speed_scales", ())),
                sunny_tags=tuple(tw.get("sunny_tags", ("MildHaze",))),
                patch_sizes=tuple(tv.get("patch_sizes", (5, 9, 13))),
                contexts=tuple(doc.get("contexts", ())),
                patches_per_cell=int(doc.get("patches_per_cell", 6)),
                scene_seed=int(seeds.get("scene", 7)),
                render_seed=int(seeds.get("render", 11)),
                patch_seed=int(seeds.get("patch", 13)),
                sensor_seed=int(seeds.get("sensor", 17)),
                width=int(render.get("width", 64)),
                height=int(render.get("height", 48)),
                samples_per_pixel=int(render.get("spp", 16)),
                max_bounces=int(render.get("max_bounces", 1)),
                sensor=(dict(doc["sensor"]) if doc.get("sensor") is not None
                        else (None if "sensor" in doc
                              else {"sigma": 0.002, "bits": 8, "gamma": 1.0})),
                ds_angle_threshold_deg=float(thresholds.get("ds_angle_deg", 3.0)),
                exclude_occluded=bool(doc.get("exclude_occluded", False)),
                zero_flow=bool(doc.get("zero_flow", False)),
                ingest_dir=ingest.get("directory"),
                ingest_annotation=ingest.get("annotation"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid protocol config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ProtocolConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "source": self.source,
            "scene": self.scene,
            "theta_w": {
                "illumination_levels": list(self.illumination_levels),
                "weather_tags": list(self.weather_tags),
                "density_scales": list(self.density_scales),
                "speed_scales": list(self.speed_scales),
                "sunny_tags": list(self.sunny_tags),
            },
            "theta_v": {"patch_sizes": list(self.patch_sizes)},
            "contexts": list(self.contexts),
            "patches_per_cell": self.patches_per_cell,
            "seeds": {"scene": self.scene_seed, "render": self.render_seed,
                      "patch": self.patch_seed, "sensor": self.sensor_seed},
            "render": {"width": self.width, "height": self.height,
                       "spp": self.samples_per_pixel,
                       "max_bounces": self.max_bounces},
            "sensor": self.sensor,
            "thresholds": {"ds_angle_deg": self.ds_angle_threshold_deg},
            "exclude_occluded": self.exclude_occluded,
            "zero_flow": self.zero_flow,
            "ingest": {"directory": self.ingest_dir,
                       "annotation": self.ingest_annotation},
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def render_config(self) -> RenderConfig:
        return RenderConfig(width=self.width, height=self.height,
                            samples_per_pixel=self.samples_per_pixel,
                            max_bounces=self.max_bounces,
                            rng_seed=self.render_seed)

    def sensor_config(self, *tags) -> SensorConfig | None:
        """Sensor stage for one frame; None means evaluate raw radiance."""
        if self.sensor is None:
            return None
        return SensorConfig(
            gaussian_noise_sigma=float(self.sensor.get("sigma", 0.002)),
            quantization_bits=int(self.sensor.get("bits", 8)),
            gamma=float(self.sensor.get("gamma", 1.0)),
            noise_seed=_mix(self.sensor_seed, *tags),
        )


_RAMP_40 = tuple(1.0 + 4.0 * i / 39.0 for i in range(40))

_OC_CONTEXTS = ("Homogeneous", "Diffuse", "Specular", "ShadowRegion",
                "ShadowBoundary", "Edge", "Corner", "Occluded")


def default_protocol(model: str) -> ProtocolConfig:
    """The stock validation protocol for each model.

    OC/BC/GC ramp the sun over 40 intensity levels on the fixed city-block
    scene; PS sweeps object speed; DS renders five density levels of each
    weather preset (ambient, except the sunny haze case) with indirect
    bounces disabled so the linear scattering model is exercised exactly.
    """
    scene = validation_scene_config()
    base = {
        "model": model,
        "scene": scene,
        "theta_w": {},
        "theta_v": {"patch_sizes": [5, 9, 13]},
        "contexts": list(_OC_CONTEXTS),
        "patches_per_cell": 6,
    }
    if model == "OC":
        base["theta_w"] = {"illumination_levels": list(_RAMP_40)}
    elif model in ("BC", "GC"):
        scene = dict(scene)
        scene["dynamics"] = [[0, "objects.5.velocity", [0.5, 0.0, 0.0]]]
        base["scene"] = scene
        base["theta_w"] = {"illumination_levels": list(_RAMP_40)}
        base["contexts"] = list(_OC_CONTEXTS)
    elif model == "PS":
        scene = dict(scene)
        scene["dynamics"] = [[0, "objects.5.velocity", [0.5, 0.0, 0.0]]]
        base["scene"] = scene
        base["theta_w"] = {"speed_scales": [0.5, 1.0, 1.5, 2.0]}
        base["contexts"] = ["SameSurface", "MotionBoundary"]
        base["theta_v"] = {"patch_sizes": [5, 9, 13]}
    elif model == "DS":
        base["theta_w"] = {
            "weather_tags": ["Fog", "Mist", "Rain", "DenseHaze", "MildHaze"],
            "density_scales": [0.2, 0.4, 0.6, 0.8, 1.0],
            "sunny_tags": ["MildHaze"],
        }
        base["contexts"] = []
        base["render"] = {"width": 64, "height": 48, "spp": 16, "max_bounces": 0}
    else:
        raise ConfigError(f"unknown model {model!r}")
    return ProtocolConfig.from_dict(base)


# -- manifold ---------------------------------------------------------------


@dataclass(frozen=True)
class CriterionRecord:
    model: str
    context: str
    theta_w: dict
    theta_v: dict
    mean: float
    std: float
    n: int

    def key(self, w_axes, v_axes):
        return (self.context,
                tuple(self.theta_w[a] for a in w_axes),
                tuple(self.theta_v[a] for a in v_axes))


class Manifold:
    """Dense criterion grid: one record per (theta_w, theta_v, context) cell.

    Cells that could not be evaluated (no eligible patches, degenerate
    measure everywhere) stay in the grid with n=0 and NaN statistics; they
    are never interpolated away.
    """

    def __init__(self, model, theta_w_axes, theta_v_axes, records, aux=None):
        self.model = model
        self.theta_w_axes = tuple(theta_w_axes)
        self.theta_v_axes = tuple(theta_v_axes)
        self.records = list(records)
        self.aux = dict(aux or {})
        self._sort()

    def _sort(self):
        self.records.sort(key=lambda r: r.key(self.theta_w_axes, self.theta_v_axes))

    @property
    def missing(self):
        return [r for r in self.records if r.n == 0]

    def contexts(self):
        return sorted({r.context for r in self.records})

    def axis_values(self, axis):
        if axis in self.theta_w_axes:
            return sorted({r.theta_w[axis] for r in self.records})
        if axis in self.theta_v_axes:
            return sorted({r.theta_v[axis] for r in self.records})
        raise ConfigError(f"unknown axis {axis!r}")

    def cell(self, context, theta_w, theta_v):
        for r in self.records:
            if (r.context == context and r.theta_w == theta_w
                    and r.theta_v == theta_v):
                return r
        raise KeyError((context, theta_w, theta_v))

    # -- CSV (fixed schema, byte-deterministic) ------------------------

    def csv_header(self):
        cols = ["model", "context"]
        cols += [f"theta_w_{a}" for a in self.theta_w_axes]
        cols += [f"theta_v_{a}" for a in self.theta_v_axes]
        cols += ["mean_E", "std_E", "n"]
        return ",".join(cols)

    def to_csv(self) -> str:
        lines = [self.csv_header()]
        for r in self.records:
            cells = [self.model, r.context]
            cells += [_fmt(r.theta_w[a]) for a in self.theta_w_axes]
            cells += [_fmt(r.theta_v[a]) for a in self.theta_v_axes]
            cells += [_fmt(r.mean), _fmt(r.std), str(r.n)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "Manifold":
        lines = [l for l in text.strip().split("\n") if l]
        if not lines:
            raise ConfigError("empty manifold CSV")
        header = lines[0].split(",")
        if header[:2] != ["model", "context"] or header[-3:] != ["mean_E", "std_E", "n"]:
            raise ConfigError(f"unexpected manifold CSV header: {lines[0]!r}")
        w_axes = [c[len("theta_w_"):] for c in header if c.startswith("theta_w_")]
        v_axes = [c[len("theta_v_"):] for c in header if c.startswith("theta_v_")]
        records = []
        model = None
        for line in lines[1:]:
            cells = line.split(",")
            model = cells[0]
            context = cells[1]
            pos = 2
            tw = {}
            for a in w_axes:
                tw[a] = _parse_coord(cells[pos])
                pos += 1
            tv = {}
            for a in v_axes:
                tv[a] = _parse_coord(cells[pos])
                pos += 1
            mean, std = float(cells[pos]), float(cells[pos + 1])
            n = int(cells[pos + 2])
            records.append(CriterionRecord(model, context, tw, tv, mean, std, n))
        return cls(model, w_axes, v_axes, records)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse_coord(text):
    try:
        f = float(text)
    except ValueError:
        return text
    if f.is_integer() and ("." not in text and "e" not in text.lower()):
        return int(f)
    return f


# -- marginalization --------------------------------------------------------


@dataclass(frozen=True)
class MarginalEntry:
    context: str
    coords: dict
    value: float
    complete: bool


@dataclass
class MarginalTable:
    axis: str
    method: str
    entries: list

    @property
    def gaps(self):
        return [e for e in self.entries if not e.complete]


def marginalize(manifold: Manifold, axis: str, exclude_contexts=(),
                method: str = "sum") -> MarginalTable:
    """Integrate mean_E along one axis for every remaining cell.

    Default is a plain grid-point sum; "trapezoid" integrates against the
    axis coordinate values.  Cells with gaps propagate: the affected
    marginal entries are flagged incomplete with NaN value, never silently
    filled.
    """
    if method not in ("sum", "trapezoid"):
        raise ConfigError(f"unknown marginalization method {method!r}")
    if axis not in manifold.theta_w_axes and axis not in manifold.theta_v_axes:
        raise ConfigError(f"unknown axis {axis!r}")
    other_w = [a for a in manifold.theta_w_axes if a != axis]
    other_v = [a for a in manifold.theta_v_axes if a != axis]

    groups: dict = {}
    for r in manifold.records:
        if r.context in exclude_contexts:
            continue
        coords = {a: r.theta_w[a] for a in other_w}
        coords.update({a: r.theta_v[a] for a in other_v})
        key = (r.context, tuple(sorted(coords.items())))
        axis_val = r.theta_w.get(axis, r.theta_v.get(axis))
        groups.setdefault(key, []).append((axis_val, r.mean, r.n))

    entries = []
    for (context, coord_items), cells in sorted(groups.items()):
        cells.sort(key=lambda c: c[0])
        complete = all(n > 0 for _, _, n in cells)
        if not complete:
            value = float("nan")
        elif method == "sum":
            value = float(sum(m for _, m, _ in cells))
        else:
            xs = np.array([c[0] for c in cells], dtype=float)
            ys = np.array([c[1] for c in cells], dtype=float)
            value = float(np.trapezoid(ys, xs)) if len(xs) > 1 else float(ys[0])
        entries.append(MarginalEntry(context, dict(coord_items), value, complete))
    return MarginalTable(axis=axis, method=method, entries=entries)


# -- ranking ----------------------------------------------------------------


def rank_items(items, direction: str) -> dict:
    """Average-rank the labeled values; rank 1 is best.

    ``direction`` says whether larger values are better ("higher_better",
    e.g. rank correlation) or worse ("lower_better", variances and angular
    errors).
    """
    if direction not in ("higher_better", "lower_better"):
        raise ConfigError(f"unknown ranking direction {direction!r}")
    if not items:
        raise ConfigError("rank_items needs at least one item")
    labels = [l for l, _ in items]
    values = np.array([v for _, v in items], dtype=float)
    keyed = -values if direction == "higher_better" else values
    ranks = average_ranks(keyed)
    return {label: float(rank) for label, rank in zip(labels, ranks)}


@dataclass(frozen=True)
class RankingComparison:
    labels: tuple
    ranks_a: tuple
    ranks_b: tuple
    correlation: float
    deltas: dict

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "ranks_a": list(self.ranks_a),
            "ranks_b": list(self.ranks_b),
            "correlation": self.correlation,
            "deltas": self.deltas,
        }


def compare_rankings(a: dict, b: dict) -> RankingComparison:
    """Rank-correlate two rankings over the same labels: the empirical
    conclusion-deviation measure between two data sources."""
    if set(a) != set(b):
        raise LabelMismatchError(set(a) - set(b), set(b) - set(a))
    labels = tuple(sorted(a))
    ra = tuple(a[l] for l in labels)
    rb = tuple(b[l] for l in labels)
    corr = spearman_rho(ra, rb)
    deltas = {l: a[l] - b[l] for l in labels}
    return RankingComparison(labels, ra, rb, corr, deltas)


def rank_manifold_contexts(manifold: Manifold) -> dict:
    """Pool each context's mean over all complete cells, then rank."""
    pools: dict = {}
    for r in manifold.records:
        if r.n > 0 and math.isfinite(r.mean):
            pools.setdefault(r.context, []).append(r.mean)
    items = [(c, float(np.mean(v))) for c, v in sorted(pools.items())]
    if not items:
        raise ConfigError("manifold has no complete cells to rank")
    direction = "higher_better" if HIGHER_IS_BETTER[manifold.model] else "lower_better"
    return rank_items(items, direction)


# -- sweep engine -----------------------------------------------------------


def _scale_sun(scene, factor):
    """Scene with its first directional light's intensity scaled."""
    lights = []
    found = False
    for l in scene.lights:
        if l.kind == "directional" and not found:
            lights.append(dataclasses.replace(l, intensity=l.intensity * factor))
            found = True
        else:
            lights.append(l)
    if not found and factor != 1.0:
        raise ConfigError("protocol requires a directional light in the scene")
    return dataclasses.replace(scene, lights=tuple(lights))


def _ambient_only(scene):
    lights = tuple(l for l in scene.lights if l.kind == "ambient")
    if not lights:
        raise ConfigError("protocol requires an ambient light in the scene")
    return dataclasses.replace(scene, lights=lights)


def _without_dynamic_objects(scene):
    objects = tuple(o for o in scene.objects if not o.dynamic)
    return dataclasses.replace(scene, objects=objects)


def _scale_velocities(scene, factor):
    keys = []
    for t, path, value in scene.dynamics.keyframes:
        if path.endswith(".velocity"):
            keys.append((t, path, tuple(c * factor for c in value)))
        else:
            keys.append((t, path, value))
    return dataclasses.replace(scene, dynamics=DynamicsScript(tuple(keys)))


def _ldr_float(scene, protocol, *sensor_tags):
    hdr = render_frame(scene, protocol.render_config())
    scfg = protocol.sensor_config(*sensor_tags)
    if scfg is None:
        return hdr.data
    return apply_sensor(hdr, scfg).to_float()


def _collect_patches(protocol, cmaps):
    """Patches per (context, side); empty-context cells become gaps."""
    patches = {}
    gaps = []
    for s in protocol.patch_sizes:
        cmap = cmaps[s]
        for context in protocol.contexts:
            try:
                patches[(context, s)] = sample_patches(
                    cmap, context, s, protocol.patches_per_cell,
                    seed=_mix(protocol.patch_seed, context, s),
                )
            except PatchSamplingError:
                patches[(context, s)] = None
                gaps.append((context, s))
    return patches, gaps


def _stats_record(protocol, context, theta_w, theta_v, values):
    vals = np.array([v for v in values if not math.isnan(v)], dtype=float)
    skipped = len(values) - len(vals)
    if len(vals) == 0:
        rec = CriterionRecord(protocol.model, context, theta_w, theta_v,
                              float("nan"), float("nan"), 0)
    else:
        rec = CriterionRecord(protocol.model, context, theta_w, theta_v,
                              float(vals.mean()), float(vals.std()), len(vals))
    return rec, skipped


def _run_photometric_sweep(protocol, threads, progress, cache=None):
    """OC/BC/GC: sun-intensity ramp against a fixed reference or frame pair."""
    scene_cfg = SceneConfig.from_dict(protocol.scene)
    base = sample_scene(scene_cfg, protocol.scene_seed)
    rcfg = protocol.render_config()

    if protocol.model == "OC":
        # reference: static subset of the scene under ambient light only
        ref_scene = _ambient_only(_without_dynamic_objects(base))
        cur_geometry = apply_dynamics(base, 0)
        gt_cur = render_ground_truth(cur_geometry, rcfg)
        gt_ref = render_ground_truth(ref_scene, rcfg)
        flow = occl = None
        ref_img = _ldr_float(ref_scene, protocol, "ref")
        cmaps = {s: classify_contexts(gt_cur, gt_next=gt_ref, window=s)
                 for s in protocol.patch_sizes}
    else:
        scene_t = apply_dynamics(base, 0)
        scene_t1_geom = apply_dynamics(base, 1)
        flow, occl = compute_flow(scene_t, scene_t1_geom, rcfg)
        gt_t = render_ground_truth(scene_t, rcfg)
        gt_t.flow = flow
        gt_t.occlusion = occl
        gt_t1 = render_ground_truth(scene_t1_geom, rcfg)
        ref_img = _ldr_float(scene_t, protocol, "frame_t")
        cmaps = {s: classify_contexts(gt_t, gt_next=gt_t1, window=s)
                 for s in protocol.patch_sizes}

    patches, _ = _collect_patches(protocol, cmaps)

    def eval_level(level):
        if cache is not None:
            cached = cache.load(level)
            if cached is not None:
                return cached
        if protocol.model == "OC":
            cur_scene = _scale_sun(apply_dynamics(base, 0), level)
        else:
            cur_scene = _scale_sun(apply_dynamics(base, 1), level)
        cur_img = _ldr_float(cur_scene, protocol, "level", float(level).hex())
        records = []
        skipped = 0
        for s in protocol.patch_sizes:
            for context in protocol.contexts:
                plist = patches[(context, s)]
                theta_w = {"illumination": level}
                theta_v = {"s": s}
                if plist is None:
                    records.append(CriterionRecord(
                        protocol.model, context, theta_w, theta_v,
                        float("nan"), float("nan"), 0))
                    continue
                values = []
                for p in plist:
                    if protocol.model == "OC":
                        values.append(oc_measure(p.extract(ref_img),
                                                 p.extract(cur_img)))
                    elif protocol.model == "BC":
                        values.append(bc_variance(
                            ref_img, cur_img, flow, p,
                            exclude_occluded=protocol.exclude_occluded,
                            occlusion=occl))
                    else:
                        values.append(gc_variance(
                            ref_img, cur_img, flow, p,
                            exclude_occluded=protocol.exclude_occluded,
                            occlusion=occl))
                rec, skip = _stats_record(protocol, context, theta_w, theta_v, values)
                records.append(rec)
                skipped += skip
        if cache is not None:
            cache.store(level, (records, skipped))
        return records, skipped

    results = _parallel_map(eval_level, protocol.illumination_levels, threads, progress)
    records = [r for recs, _ in results for r in recs]
    degenerate = sum(sk for _, sk in results)
    return Manifold(protocol.model, ("illumination",), ("s",), records,
                    aux={"degenerate_skipped": degenerate})


def _run_ps_sweep(protocol, threads, progress, cache=None):
    scene_cfg = SceneConfig.from_dict(protocol.scene)
    base = sample_scene(scene_cfg, protocol.scene_seed)
    rcfg = protocol.render_config()

    def eval_speed(speed):
        if cache is not None:
            cached = cache.load(speed)
            if cached is not None:
                return cached
        scaled = _scale_velocities(base, speed)
        frames = [apply_dynamics(scaled, t) for t in range(4)]
        flows = []
        for a, b in zip(frames[:-1], frames[1:]):
            f, o = compute_flow(a, b, rcfg)
            flows.append((f, o))
        flow_prev, _ = flows[0]
        flow_t, occl_t = flows[1]
        flow_next, _ = flows[2]
        gt1 = render_ground_truth(frames[1], rcfg)
        gt1.flow = flow_t
        gt1.occlusion = occl_t
        gt2 = render_ground_truth(frames[2], rcfg)
        records = []
        skipped = 0
        for s in protocol.patch_sizes:
            cmap = classify_contexts(gt1, gt_next=gt2, window=s)
            for context in protocol.contexts:
                theta_w = {"speed": speed}
                theta_v = {"s": s}
                try:
                    plist = sample_patches(
                        cmap, context, s, protocol.patches_per_cell,
                        seed=_mix(protocol.patch_seed, context, s, speed))
                except PatchSamplingError:
                    records.append(CriterionRecord(
                        protocol.model, context, theta_w, theta_v,
                        float("nan"), float("nan"), 0))
                    continue
                values = [ps_variance(flow_prev, flow_t, flow_next, p)
                          for p in plist]
                rec, skip = _stats_record(protocol, context, theta_w, theta_v, values)
                records.append(rec)
                skipped += skip
        out = (records, skipped)
        if cache is not None:
            cache.store(speed, out)
        return out

    results = _parallel_map(eval_speed, protocol.speed_scales, threads, progress)
    records = [r for recs, _ in results for r in recs]
    degenerate = sum(sk for _, sk in results)
    return Manifold(protocol.model, ("speed",), ("s",), records,
                    aux={"degenerate_skipped": degenerate})


def _run_ds_sweep(protocol, threads, progress, cache=None):
    scene_cfg = SceneConfig.from_dict(protocol.scene)
    base = sample_scene(scene_cfg, protocol.scene_seed)

    def eval_weather(tag):
        if cache is not None:
            cached = cache.load(tag)
            if cached is not None:
                return cached
        if tag not in WEATHER_PRESETS or tag == "Clear":
            raise ConfigError(f"unknown weather tag {tag!r}",
                              json_path="theta_w.weather_tags")
        preset = WEATHER_PRESETS[tag]
        scene = base if tag in protocol.sunny_tags else _ambient_only(base)
        observations = []
        for density in protocol.density_scales:
            foggy = dataclasses.replace(scene, medium=preset.scaled(density))
            img = _ldr_float(foggy, protocol, "weather", tag,
                             float(density).hex())
            observations.append(img.reshape(-1, 3))
        samples = np.stack(observations, axis=1)  # (P, k, 3)
        res = ds_angular_error(samples, protocol.ds_angle_threshold_deg)
        rec = CriterionRecord(
            protocol.model, "All", {"weather": tag}, {},
            res.mean_deg, res.std_deg, res.n_pixels)
        out = (rec, {
            "weather": tag,
            "mean_deg": res.mean_deg,
            "std_deg": res.std_deg,
            "fraction_below": res.fraction_below,
            "threshold_deg": res.threshold_deg,
            "n_pixels": res.n_pixels,
            "n_excluded": res.n_excluded,
        })
        if cache is not None:
            cache.store(tag, out)
        return out

    results = _parallel_map(eval_weather, protocol.weather_tags, threads, progress)
    records = [rec for rec, _ in results]
    return Manifold("DS", ("weather",), (), records,
                    aux={"ds": [info for _, info in results]})


def _parallel_map(fn, items, threads, progress):
    items = list(items)
    if threads <= 1:
        out = []
        for i, item in enumerate(items):
            out.append(fn(item))
            if progress:
                progress(i + 1, len(items))
        return out
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, item) for item in items]
        out = []
        for i, fut in enumerate(futures):
            out.append(fut.result())
            if progress:
                progress(i + 1, len(items))
        return out


class CellCache:
    """Per-cell result cache keyed by protocol content hash plus cell coordinate.

    Resume never trusts timestamps: a cache entry is only reused when the
    protocol content hash embedded in its name matches.
    """

    def __init__(self, directory, protocol):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.prefix = protocol.content_hash()[:16]

    def _path(self, coord):
        tag = hashlib.sha256(repr(coord).encode()).hexdigest()[:16]
        return self.dir / f"cell_{self.prefix}_{tag}.json"

    def load(self, coord):
        path = self._path(coord)
        if not path.exists():
            return None
        doc = json.loads(path.read_text())
        if doc.get("kind") == "records":
            records = [CriterionRecord(**r) for r in doc["records"]]
            return records, doc["skipped"]
        rec = CriterionRecord(**doc["record"])
        return rec, doc["info"]

    def store(self, coord, result):
        path = self._path(coord)
        first = result[0]
        if isinstance(first, list):
            doc = {"kind": "records",
                   "records": [dataclasses.asdict(r) for r in first],
                   "skipped": result[1]}
        else:
            doc = {"kind": "single", "record": dataclasses.asdict(first),
                   "info": result[1]}
        path.write_text(json.dumps(doc, sort_keys=True))


def run_sweep(protocol: ProtocolConfig, threads: int = 1, progress=None,
              cache_dir=None) -> Manifold:
    """Evaluate the full (theta_w x theta_v x context) grid for a protocol.

    Grid cells are independent: they may be evaluated concurrently, in any
    order, or alone, and always produce the same bytes.  Empty-context
    cells are recorded as gaps; render failures abort.
    """
    cache = CellCache(cache_dir, protocol) if cache_dir else None
    if protocol.source == "ingest":
        return _run_ingest_sweep(protocol, threads, progress)
    if protocol.model in ("OC", "BC", "GC"):
        return _run_photometric_sweep(protocol, threads, progress, cache)
    if protocol.model == "PS":
        return _run_ps_sweep(protocol, threads, progress, cache)
    return _run_ds_sweep(protocol, threads, progress, cache)


# -- real-sequence ingestion --------------------------------------------------


@dataclass
class IngestedSequence:
    frames: list
    reference_index: int
    zero_flow: bool
    patches: list
    flow_files: list | None
    directory: str


_FRAME_RE = re.compile(r"(\d+)")


def ingest_sequence(directory, annotation_path) -> IngestedSequence:
    """Load a numbered PPM frame directory plus its patch annotation.

    The annotation JSON carries ``reference_frame``, optional ``zero_flow``
    (static-camera brightness/gradient evaluation without ground-truth
    flow), a ``patches`` list of labeled rectangles, and optionally
    ``flo_files`` naming one flow file per consecutive frame pair.
    """
    from .imgio import read_ppm

    directory = Path(directory)
    if not directory.is_dir():
        raise IngestError(f"not a directory: {directory}")
    frame_paths = sorted(
        (p for p in directory.iterdir() if p.suffix.lower() == ".ppm"),
        key=lambda p: [int(t) if t.isdigit() else t for t in _FRAME_RE.split(p.name)],
    )
    if not frame_paths:
        raise IngestError(f"no .ppm frames in {directory}")
    frames = []
    maxvals = set()
    for p in frame_paths:
        arr, maxval = read_ppm(p)
        frames.append(arr.astype(np.float64) / maxval)
        maxvals.add(maxval)
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise IngestError(f"frame size mismatch: {sorted(shapes)}")

    try:
        doc = json.loads(Path(annotation_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read annotation: {exc}") from exc

    ref = int(doc.get("reference_frame", 0))
    if not 0 <= ref < len(frames):
        raise IngestError(f"reference_frame {ref} out of range "
                          f"(have {len(frames)} frames)",
                          json_path="reference_frame")
    h, w = frames[0].shape[:2]
    patches = []
    for i, entry in enumerate(doc.get("patches", [])):
        try:
            x, y = int(entry["x"]), int(entry["y"])
            pw, ph = int(entry["width"]), int(entry["height"])
            context = str(entry["context"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(str(exc), json_path=f"patches[{i}]") from exc
        if context not in CONTEXT_NAMES:
            raise IngestError(f"unknown context {context!r}",
                              json_path=f"patches[{i}].context")
        if x < 0 or y < 0 or x + pw > w or y + ph > h or pw < 3 or ph < 3:
            raise IngestError(
                f"rectangle ({x},{y},{pw}x{ph}) outside {w}x{h} frame",
                json_path=f"patches[{i}]")
        patches.append({"x": x, "y": y, "width": pw, "height": ph,
                        "context": context})
    if not patches:
        raise IngestError("annotation lists no patches", json_path="patches")
    flo_files = doc.get("flo_files")
    if flo_files is not None:
        if len(flo_files) != len(frames) - 1:
            raise IngestError("need one .flo per consecutive frame pair",
                              json_path="flo_files")
        flo_files = [str(directory / f) for f in flo_files]
    return IngestedSequence(
        frames=frames,
        reference_index=ref,
        zero_flow=bool(doc.get("zero_flow", False)),
        patches=patches,
        flow_files=flo_files,
        directory=str(directory),
    )


def _annotation_patches_at(seq, side):
    """Centered side x side patches inside each annotated rectangle."""
    out = {}
    for entry in seq.patches:
        if side > min(entry["width"], entry["height"]):
            continue
        row = entry["y"] + (entry["height"] - side) // 2
        col = entry["x"] + (entry["width"] - side) // 2
        out.setdefault(entry["context"], []).append(
            Patch(row=row, col=col, side=side, context=entry["context"]))
    return out


def _run_ingest_sweep(protocol, threads, progress):
    from .imgio import read_flo

    seq = ingest_sequence(protocol.ingest_dir, protocol.ingest_annotation)
    if protocol.model in ("BC", "GC") and not seq.zero_flow and not seq.flow_files:
        raise IngestError(
            "brightness/gradient constancy on ingested data needs either "
            "zero_flow (static camera assumption) or flo_files")
    if protocol.model == "PS" and not seq.flow_files:
        raise IngestError("flow-dependent validation disabled: no flo_files "
                          "supplied for the ingested sequence")
    if protocol.model == "DS":
        raise IngestError("DS ingestion is not supported: weather-varied "
                          "co-registered stacks are required")

    h, w = seq.frames[0].shape[:2]
    zero = np.zeros((h, w, 2))
    contexts = protocol.contexts

    def eval_frame(idx):
        records = []
        skipped = 0
        cur = seq.frames[idx]
        ref = seq.frames[seq.reference_index]
        if protocol.model in ("BC", "GC"):
            prev = seq.frames[idx - 1]
            flow = read_flo(seq.flow_files[idx - 1]) if seq.flow_files else zero
        for s in protocol.patch_sizes:
            by_context = _annotation_patches_at(seq, s)
            for context in contexts:
                theta_w = {"frame": idx}
                theta_v = {"s": s}
                plist = by_context.get(context)
                if not plist:
                    records.append(CriterionRecord(
                        protocol.model, context, theta_w, theta_v,
                        float("nan"), float("nan"), 0))
                    continue
                values = []
                for p in plist:
                    if protocol.model == "OC":
                        values.append(oc_measure(p.extract(ref), p.extract(cur)))
                    elif protocol.model == "BC":
                        values.append(bc_variance(prev, cur, flow, p))
                    elif protocol.model == "GC":
                        values.append(gc_variance(prev, cur, flow, p))
                    else:
                        raise ConfigError(f"unsupported ingest model {protocol.model}")
                rec, skip = _stats_record(protocol, context, theta_w, theta_v, values)
                records.append(rec)
                skipped += skip
        return records, skipped

    if protocol.model == "OC":
        indices = [i for i in range(len(seq.frames)) if i != seq.reference_index]
    else:
        indices = list(range(1, len(seq.frames)))
    if not indices:
        raise IngestError("sequence too short for the requested model")
    results = _parallel_map(eval_frame, indices, threads, progress)
    records = [r for recs, _ in results for r in recs]
    degenerate = sum(sk for _, sk in results)
    return Manifold(protocol.model, ("frame",), ("s",), records,
                    aux={"degenerate_skipped": degenerate,
                         "zero_flow": seq.zero_flow})


# -- SVG emission -------------------------------------------------------------


def heatmap_svg(manifold: Manifold, context: str, x_axis: str, y_axis: str) -> str:
    """A self-contained SVG heatmap of mean_E for one context slice."""
    xs = manifold.axis_values(x_axis)
    ys = manifold.axis_values(y_axis)
    grid = np.full((len(ys), len(xs)), np.nan)
    for r in manifold.records:
        if r.context != context:
            continue
        coords = {**r.theta_w, **r.theta_v}
        i = ys.index(coords[y_axis])
        j = xs.index(coords[x_axis])
        if r.n > 0:
            grid[i, j] = r.mean
    finite = grid[np.isfinite(grid)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    span = hi - lo if hi > lo else 1.0

    cell, margin = 14, 60
    width = margin + cell * len(xs) + 20
    height = margin + cell * len(ys) + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin}" y="16" font-size="12" font-family="monospace">'
        f'{manifold.model} {context}: mean_E over ({x_axis}, {y_axis}), '
        f'range [{lo:.6g}, {hi:.6g}]</text>',
    ]
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            v = grid[i, j]
            if math.isnan(v):
                fill = "#b0b0b0"
            else:
                t = (v - lo) / span
                r_c = int(40 + 215 * t)
                g_c = int(60 + 80 * (1 - abs(2 * t - 1)))
                b_c = int(255 - 215 * t)
                fill = f"#{r_c:02x}{g_c:02x}{b_c:02x}"
            x = margin + j * cell
            y = margin - 20 + i * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{fill}"><title>{x_axis}={xv!r} {y_axis}={yv!r} '
                         f'mean_E={v!r}</title></rect>')
    for i, yv in enumerate(ys):
        parts.append(f'<text x="4" y="{margin - 10 + i * cell}" font-size="9" '
                     f'font-family="monospace">{_short(yv)}</text>')
    step = max(1, len(xs) // 8)
    for j in range(0, len(xs), step):
        parts.append(f'<text x="{margin + j * cell}" '
                     f'y="{margin - 24 + len(ys) * cell + 14}" font-size="9" '
                     f'font-family="monospace">{_short(xs[j])}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _short(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)
