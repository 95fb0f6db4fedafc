"""Command-line entry point: build-hlg, entropy, localize, sweep and simulate.

Settings are resolved in the order defaults < ``gbpl.conf`` (key = value) <
``GBPL_SEED`` (seed only) < command-line flags. Exit codes: 0 on success or a
still-pending localization, 2 on input errors, 3 when localization failed after
the restart budget.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dead_reckoning import NoiseConfig, read_sensor_csv, write_sensor_csv
from .errors import GbplError, UndefinedEntropyError
from .global_loc import HEADING_LENGTH, MODES, MatchConfig
from .hlg import (DEFAULT_CURVE_THRESHOLD, DEFAULT_T_L, Hlg, build_hlg, hlg_from_json, hlg_to_json,
                  joint_entropy)
from .lav import CALIBRATED, NOMINAL, Transform2
from .map_model import DEFAULT_SNAP_RADIUS, load_geojson
from .pipeline import FAILED, PipelineConfig, localize_streams

EXIT_OK, EXIT_INPUT, EXIT_FAILED = 0, 2, 3
CONFIG_NAME = "gbpl.conf"
GAP_WARN = 1.0  # seconds

ENTROPY_HEADER = ["n_vertices", "n_long", "joint_entropy", "heading_entropy", "n_bins"]
TRAJECTORY_HEADER = ["t", "x", "y", "gamma", "s", "localized"]
FIXES_HEADER = ["k", "t", "x", "y", "heading", "n_solutions", "vertex"]
ALIGNMENT_HEADER = ["k", "accepted", "cost", "dof", "angle", "tx", "ty", "s_ssf", "ssf_var"]
SWEEP_HEADER = ["entropy", "n", "mode", "mean_solutions", "std"]
TRUTH_HEADER = ["t", "x", "y", "gamma"]


@dataclass
class RunConfig:
    """Resolved settings of one command."""

    map_path: str | None = None
    sensor_path: str | None = None
    alpha: float = 0.05
    t_l: float = DEFAULT_T_L
    curve_threshold: float = math.degrees(DEFAULT_CURVE_THRESHOLD)  # degrees
    mode: str = HEADING_LENGTH
    noise: dict = field(default_factory=dict)  # NoiseConfig overrides
    seed: int = 0
    out_dir: str = "."

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(**self.noise)


_NOISE_KEYS = {f.name for f in dataclasses.fields(NoiseConfig)}
_KEY_ALIASES = {"map": "map_path", "sensors": "sensor_path", "out": "out_dir", "output": "out_dir"}


class InputError(Exception):
    """Bad command-line or config input (exit code 2)."""


def read_config(path: str | os.PathLike | None) -> dict:
    """Parse a ``key = value`` file (no section headers) into a dict."""
    if path is None:
        path = Path(CONFIG_NAME)
        if not path.exists():
            return {}
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[gbpl]\n" + text)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from exc
    return {k.replace("-", "_"): v.strip() for k, v in cp["gbpl"].items()}


def resolve_config(file_values: dict, flags: dict, env=os.environ) -> RunConfig:
    """Merge config-file values, GBPL_SEED and flags (flags win)."""
    cfg = RunConfig()
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}

    def assign(key, value):
        key = _KEY_ALIASES.get(key, key)
        if key in _NOISE_KEYS:
            cfg.noise[key] = _as_float(key, value)
        elif key in fields and key != "noise":
            cur = getattr(RunConfig(), key)
            if isinstance(cur, bool) or cur is None or isinstance(cur, str):
                setattr(cfg, key, str(value))
            elif isinstance(cur, int):
                setattr(cfg, key, _as_int(key, value))
            else:
                setattr(cfg, key, _as_float(key, value))

    for k, v in file_values.items():
        if _KEY_ALIASES.get(k, k) not in fields and k not in _NOISE_KEYS:
            warnings.warn(f"unknown config key {k!r} ignored", stacklevel=2)
            continue
        assign(k, v)
    if env.get("GBPL_SEED"):
        assign("seed", env["GBPL_SEED"])
    for k, v in flags.items():
        if v is not None:
            assign(k, v)
    if cfg.mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if not 0.0 < cfg.alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    return cfg


def _as_float(key, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{key}: expected a number, got {value!r}") from exc


def _as_int(key, value) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{key}: expected an integer, got {value!r}") from exc


# ---------------------------------------------------------------- helpers


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _read(path: str | None, what: str) -> str:
    if not path:
        raise InputError(f"no {what} given")
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} {path!r}: {exc.strerror}") from exc


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_graph(cfg: RunConfig, snap_radius: float) -> Hlg:
    road_map = load_geojson(_read(cfg.map_path, "map"))
    if not road_map.roads:
        warnings.warn("map has no roads; writing an empty graph", stacklevel=2)
    return build_hlg(road_map, t_l=cfg.t_l, curve_threshold=math.radians(cfg.curve_threshold),
                     snap_radius=snap_radius)


def _load_graph(cfg: RunConfig, snap_radius: float = DEFAULT_SNAP_RADIUS) -> Hlg:
    """A graph from hlg.json, or built from a GeoJSON map."""
    text = _read(cfg.map_path, "map")
    if cfg.map_path.endswith((".geojson", ".json")) and '"FeatureCollection"' in text[:4096]:
        return _build_graph(cfg, snap_radius)
    try:
        return hlg_from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot parse graph {cfg.map_path!r}: {exc}") from exc


def entropy_row(g: Hlg) -> list:
    n_long = len(g.long_index)
    try:
        rep = joint_entropy(g)
        return [len(g.vertices), n_long, rep.joint_entropy, rep.heading_entropy, rep.n_ji]
    except UndefinedEntropyError:
        return [len(g.vertices), n_long, math.nan, math.nan, 0]


def _write_entropy(g: Hlg, out: Path) -> list:
    row = entropy_row(g)
    _write_csv(out / "entropy.csv", ENTROPY_HEADER, [[_fmt(v) for v in row]])
    print(f"|V_hl| = {row[1]}")
    print(f"H = {row[2]:.4f}" if math.isfinite(row[2]) else "H = undefined")
    return row


def stream_gaps(imu, compass, wheel, limit: float = GAP_WARN) -> list[str]:
    """Descriptions of gaps longer than `limit` seconds in each stream."""
    msgs = []
    for name, stream in (("imu", imu), ("compass", compass), ("wheel", wheel)):
        ts = np.array([s.t for s in stream])
        if len(ts) < 2:
            continue
        dt = np.diff(ts)
        for i in np.nonzero(dt > limit)[0]:
            msgs.append(f"{name} stream gap of {dt[i]:.2f} s at t = {ts[i]:.2f}")
    return msgs


# ---------------------------------------------------------------- commands


def cmd_build_hlg(cfg: RunConfig, snap_radius: float = DEFAULT_SNAP_RADIUS) -> int:
    g = _build_graph(cfg, snap_radius)
    out = _out_dir(cfg)
    (out / "hlg.json").write_text(hlg_to_json(g))
    _write_entropy(g, out)
    return EXIT_OK


def cmd_entropy(cfg: RunConfig) -> int:
    g = _load_graph(cfg)
    _write_entropy(g, _out_dir(cfg))
    return EXIT_OK


def cmd_localize(cfg: RunConfig, verification: str = CALIBRATED, restart_budget: int = 3,
                 svg: bool = True) -> int:
    from .svg import track_svg

    g = _load_graph(cfg)
    imu, compass, wheel = read_sensor_csv(_read(cfg.sensor_path, "sensor log"))
    for msg in stream_gaps(imu, compass, wheel):
        warnings.warn(msg, stacklevel=2)
    pcfg = PipelineConfig(match=MatchConfig(alpha=cfg.alpha, mode=cfg.mode), noise=cfg.noise_config(),
                          sigma_g=g.sigma_g, verification=verification, restart_budget=restart_budget,
                          keep_raw=svg)
    res = localize_streams(g, imu, compass, wheel, pcfg)
    out = _out_dir(cfg)
    _write_csv(out / "trajectory.csv", TRAJECTORY_HEADER,
               [[_fmt(v) for v in row] for row in res.trajectory])
    _write_csv(out / "fixes.csv", FIXES_HEADER,
               [[_fmt(v) for v in (f.k, f.t, f.x, f.y, f.heading, f.n_solutions, f.vertex)] for f in res.fixes])
    _write_csv(out / "alignment.csv", ALIGNMENT_HEADER,
               [[_fmt(v) for v in (a.k, a.accepted, a.cost, a.dof, a.angle, a.tx, a.ty, a.s_ssf, a.ssf_var)]
                for a in res.alignments])
    if svg:
        raw = np.array([r[1:3] for r in res.raw]) if res.raw else None
        first = next((a for a in res.alignments if a.accepted), None)
        if raw is not None and first is not None:
            # the first accepted alignment maps the dead-reckoning frame onto the map
            raw = Transform2(first.angle, np.array([first.tx, first.ty])).apply(raw)
        aligned = np.array([r[1:3] for r in res.trajectory if r[5]])
        (out / "track.svg").write_text(track_svg(
            [v.points for v in g.vertices], raw=raw, aligned=aligned,
            fixes=[(f.x, f.y) for f in res.fixes], title=f"localization: {res.status}"))
    print(f"status: {res.status}")
    print(f"segments: {len(res.segments)}  fixes: {len(res.fixes)}  "
          f"alignments accepted: {sum(a.accepted for a in res.alignments)}/{len(res.alignments)}  "
          f"restarts: {res.restarts}")
    return EXIT_FAILED if res.status == FAILED else EXIT_OK


def cmd_sweep(cfg: RunConfig, entropy_min: float = 0.6, entropy_max: float = 0.95, maps: int = 40,
              samples: int = 20, n_max: int = 20, jobs: int = 1, modes=MODES, svg: bool = True) -> int:
    from .sim import run_sweep
    from .svg import heatmap_svg

    if maps < 1 or samples < 1 or n_max < 1:
        raise InputError("maps, samples and n-max must be positive")
    if not 0.0 <= entropy_min <= entropy_max <= 1.0:
        raise InputError("entropy range must satisfy 0 <= min <= max <= 1")
    targets = np.linspace(entropy_min, entropy_max, maps) if maps > 1 else np.array([entropy_min])

    def skip(target, exc):
        warnings.warn(f"entropy target {target:.3f} skipped: {exc}", stacklevel=2)

    rows, _, _ = run_sweep(targets, samples=samples, n_max=n_max, seed=cfg.seed, modes=modes,
                           alpha=cfg.alpha, on_skip=skip, map_kwargs={"t_l": cfg.t_l}, jobs=jobs)
    out = _out_dir(cfg)
    _write_csv(out / "sweep.csv", SWEEP_HEADER,
               [[_fmt(r["entropy"]), r["n"], r["mode"], _fmt(r["mean_solutions"]), _fmt(r["std"])]
                for r in rows])
    if svg:
        for mode in modes:
            sel = [r for r in rows if r["mode"] == mode]
            ents = sorted({r["entropy"] for r in sel})
            grid = np.zeros((len(ents), n_max))
            for r in sel:
                grid[ents.index(r["entropy"]), r["n"] - 1] = r["mean_solutions"]
            (out / f"heatmap_{mode}.svg").write_text(
                heatmap_svg(ents, range(1, n_max + 1), grid, title=f"mean #solutions ({mode})"))
    print(f"maps: {len({r['entropy'] for r in rows})}/{maps}  rows: {len(rows)}")
    return EXIT_OK


def rectangle_map(width: float = 400.0, height: float = 300.0, sigma_g: float = 5.0, spacing: float = 20.0):
    """Four straight roads forming a closed rectangle with a corner at the origin."""
    from .map_model import road_map_from_local
    from .sim import SIM_ORIGIN, rectangle_corners

    c = rectangle_corners(width, height)
    roads = {}
    for i in range(4):
        a, b = c[i], c[i + 1]
        m = max(2, int(math.ceil(np.hypot(*(b - a)) / spacing)) + 1)
        roads[f"side{i}"] = a + np.linspace(0.0, 1.0, m)[:, None] * (b - a)
    return road_map_from_local(roads, SIM_ORIGIN, sigma_g)


def cmd_simulate(cfg: RunConfig, entropy: float = 0.9, segments: int = 12, ssf: float = 1.10,
                 rectangle: bool = False, laps: int = 2) -> int:
    from .map_model import dump_geojson
    from .sim import SimMapSpec, gen_map, gen_sensors, random_route, rectangle_corners

    out = _out_dir(cfg)
    if rectangle:
        road_map = rectangle_map()
        g = build_hlg(road_map, t_l=cfg.t_l)
        corners = rectangle_corners(laps=laps)
        run = gen_sensors(g, None, injected_ssf=ssf, seed=cfg.seed, corners=corners)
    else:
        sim = gen_map(SimMapSpec(entropy, rng_seed=cfg.seed, t_l=cfg.t_l))
        if not sim.achievable:
            warnings.warn(f"entropy target {entropy:.3f} not reached (measured {sim.entropy:.3f})", stacklevel=2)
        road_map, g = sim.road_map, sim.hlg()
        route = random_route(g, segments, np.random.default_rng(cfg.seed), maximal=True)
        run = gen_sensors(g, route, injected_ssf=ssf, seed=cfg.seed)
    (out / "map.geojson").write_text(dump_geojson(road_map))
    (out / "hlg.json").write_text(hlg_to_json(g))
    (out / "sensors.csv").write_text(write_sensor_csv(run.imu, run.compass, run.wheel))
    _write_csv(out / "truth.csv", TRUTH_HEADER,
               [[_fmt(s.t), _fmt(x), _fmt(y), _fmt(gm)]
                for s, (x, y), gm in zip(run.imu, run.truth_xy, run.truth_gamma)])
    row = entropy_row(g)
    print(f"|V_hl| = {row[1]}  H = {row[2]:.4f}  ticks = {len(run.imu)}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--config", help=f"key = value settings file (default ./{CONFIG_NAME} if present)")
    p.add_argument("--out", dest="out_dir", help="output directory")
    opts = {
        "alpha": dict(type=float, help="significance level of the matching tests"),
        "t_l": dict(type=float, help="minimum length of a long HLG vertex [m]"),
        "curve_threshold": dict(type=float, help="curvature split threshold [deg]"),
        "mode": dict(choices=MODES, help="matching statistics"),
        "seed": dict(type=int, help="random seed (GBPL_SEED overrides the config file)"),
    }
    for n in names:
        p.add_argument("--" + n.replace("_", "-"), dest=n, **opts[n])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gbpl", description="Map-based localization from proprioceptive sensors.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-hlg", help="compile a GeoJSON map into hlg.json and entropy.csv")
    p.add_argument("map_path", nargs="?")
    p.add_argument("--snap-radius", type=float, default=DEFAULT_SNAP_RADIUS)
    _common(p, "t_l", "curve_threshold")

    p = sub.add_parser("entropy", help="joint heading/length entropy of a map or graph")
    p.add_argument("map_path", nargs="?")
    _common(p, "t_l", "curve_threshold")

    p = sub.add_parser("localize", help="run the localization pipeline on a sensor log")
    p.add_argument("map_path", nargs="?", help="hlg.json or GeoJSON map")
    p.add_argument("sensor_path", nargs="?", help="sensor log CSV")
    p.add_argument("--verification", choices=(CALIBRATED, NOMINAL), default=CALIBRATED)
    p.add_argument("--restart-budget", type=int, default=3)
    p.add_argument("--no-svg", action="store_true")
    _common(p, "alpha", "t_l", "curve_threshold", "mode")

    p = sub.add_parser("sweep", help="mean #solutions over simulated maps of varying entropy")
    p.add_argument("--entropy-min", type=float, default=0.6)
    p.add_argument("--entropy-max", type=float, default=0.95)
    p.add_argument("--maps", type=int, default=40)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output is identical)")
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--no-svg", action="store_true")
    _common(p, "alpha", "t_l", "seed")

    p = sub.add_parser("simulate", help="write a synthetic map, sensor log and ground truth")
    p.add_argument("--entropy", type=float, default=0.9)
    p.add_argument("--segments", type=int, default=12)
    p.add_argument("--ssf", type=float, default=1.10, help="injected wheel scale factor")
    p.add_argument("--rectangle", action="store_true", help="drive laps of a 400 x 300 m rectangle instead")
    p.add_argument("--laps", type=int, default=2)
    _common(p, "t_l", "seed")
    return ap


_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("default")
    warnings.formatwarning = lambda msg, cat, *a, **k: f"warning: {msg}\n"
    try:
        flags = {k: v for k, v in vars(args).items() if k in _RUN_KEYS}
        cfg = resolve_config(read_config(args.config), flags)
        if args.command in ("sweep", "simulate") and "t_l" not in {k for k, v in flags.items() if v is not None}:
            if "t_l" not in read_config(args.config):
                cfg.t_l = 50.0  # simulated maps use 150 m blocks
        if args.command == "build-hlg":
            return cmd_build_hlg(cfg, args.snap_radius)
        if args.command == "entropy":
            return cmd_entropy(cfg)
        if args.command == "localize":
            return cmd_localize(cfg, args.verification, args.restart_budget, svg=not args.no_svg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.entropy_min, args.entropy_max, args.maps, args.samples, args.n_max,
                             args.jobs, tuple(args.modes), svg=not args.no_svg)
        return cmd_simulate(cfg, args.entropy, args.segments, args.ssf, args.rectangle, args.laps)
    except (InputError, GbplError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
