"""Command line entry point: run, compare, gen-scene, export-field."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, VsfError
from .harness import EpisodeConfig, compare, run_episode, write_episode, write_rows
from .scene import gen_scene, save_scene

log = logging.getLogger("vsfscan")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


def _episode_config(args) -> EpisodeConfig:
    d = _read_json(args.config) if args.config else {}
    for k in ("scene", "scene_path", "gen"):
        d.pop(k, None)
    if args.scene:
        d["scene_path"] = args.scene
    else:
        rooms, density, width, depth = args.gen
        d["gen"] = dict(rooms=int(rooms), density=float(density), extents=(float(width), float(depth)),
                        seed=args.seed, resolution=args.resolution)
    d.update(seed=args.seed, planner=args.planner, entropy=args.entropy)
    if args.budget is not None:
        d["step_budget"] = args.budget
    if args.target_fraction is not None:
        d["target_fraction"] = args.target_fraction
    return EpisodeConfig.from_dict(d)


def cmd_run(args) -> int:
    cfg = _episode_config(args)
    res = run_episode(cfg)
    write_episode(res, args.out)
    fin = res.timeline.final
    print(f"{res.reason}: {fin['step']} moves, {fin['distance']:.1f} m, {fin['sim_time']:.1f} s, "
          f"{fin['correct_voxels']}/{res.surface_count} object voxels correct, "
          f"{fin['identified_objects']}/{res.object_count} objects")
    return 0


def cmd_compare(args) -> int:
    m = _read_json(args.matrix)
    base = m.get("base", {})
    cfgs = []
    for over in m.get("configs", [{}]):
        d = dict(base)
        d.update(over)
        cfgs.append(EpisodeConfig.from_dict(d))
    seeds = m.get("seeds", [0])
    scenes = m.get("scenes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, tab, curves = compare(cfgs, seeds, scenes, m.get("target_fraction", 0.8),
                                on_result=lambda r, _: log.info("%s %s seed %s: %s", r["method"], r["scene"],
                                                                r["seed"], r["reason"]))
    write_rows(out / "runs.csv", rows)
    write_rows(out / "table.csv", tab)
    write_rows(out / "curves.csv", curves)
    for t in tab:
        if t["scene"] == "Average":
            print(f"{t['method']}: time {t.get('target_time', t['time']):.1f} s, "
                  f"distance {t.get('target_distance', t['distance']):.1f} m, accuracy {t['accuracy']:.3f}")
    return 0


def cmd_gen_scene(args) -> int:
    spec = gen_scene(args.rooms, args.density, tuple(args.extents), args.seed, resolution=args.resolution)
    save_scene(spec, args.out)
    print(f"wrote {args.out}: {len(spec.boxes)} boxes, start ({spec.start.x:.2f}, {spec.start.y:.2f})")
    return 0


def cmd_export_field(args) -> int:
    ep = Path(args.episode)
    cfg = EpisodeConfig.from_dict(_read_json(ep / "config.json"))
    res = run_episode(cfg, stop_at_cycle=args.step)
    out = Path(args.out) if args.out else ep / f"field_step{args.step:04d}"
    res.field.export(out, layers=("F", "V", "G"))
    k = min(int(cfg.camera.height / res.world.resolution), res.world.shape[2] - 1)
    res.entropy.export_layers(out / "entropy", [k])
    print(f"wrote {out} ({res.field.lattice.theta_bins} heading slices)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsfscan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one exploration episode")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON file")
    src.add_argument("--gen", nargs=4, metavar=("ROOMS", "DENSITY", "WIDTH", "DEPTH"),
                     help="generate a scene (seeded by --seed)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--planner", choices=("field", "dijkstra"), default="field")
    r.add_argument("--entropy", choices=("combined", "geometry", "semantic"), default="combined")
    r.add_argument("--budget", type=int, help="lattice move budget")
    r.add_argument("--target-fraction", type=float, help="stop at this share of object surface correctly labeled")
    r.add_argument("--resolution", type=float, default=0.05, help="voxel size for --gen")
    r.add_argument("--config", help="JSON file with further episode settings")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("compare", help="run a config x scene x seed matrix")
    c.add_argument("--matrix", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_compare)

    g = sub.add_parser("gen-scene", help="write a procedurally generated scene")
    g.add_argument("--rooms", type=int, default=1)
    g.add_argument("--density", type=float, default=0.3)
    g.add_argument("--extents", type=float, nargs=2, default=(6.0, 6.0), metavar=("WIDTH", "DEPTH"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=float, default=0.05)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_scene)

    e = sub.add_parser("export-field", help="replay an episode and dump the view field of one planning cycle")
    e.add_argument("--episode", required=True, help="directory written by `run`")
    e.add_argument("--step", type=int, required=True, help="planning cycle (1 = first)")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_export_field)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except VsfError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
