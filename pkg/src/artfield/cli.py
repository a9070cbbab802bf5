"""Command line entry point: ``artfield <command> ...``.

Results go to stdout, logs to stderr.  Exit codes: 0 success, 1 usage
error, 2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# -- config files ------------------------------------------------------------
def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; values parsed as JSON when possible."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def format_config(values: dict) -> str:
    lines = []
    for key in sorted(values):
        lines.append(f"{key} = {json.dumps(values[key], sort_keys=True, default=str)}")
    return "\n".join(lines) + "\n"


def write_resolved(output, values: dict) -> None:
    """Provenance file next to an output artifact."""
    out = Path(output)
    target = out / "resolved_config.txt" if out.is_dir() else out.with_name(out.name + ".config.txt")
    target.write_text(format_config(values))


def echo(command: str, values: dict) -> None:
    log(f"[{command}] resolved config:")
    for line in format_config(values).splitlines():
        log("  " + line)


def _flatten_train(d: dict) -> dict:
    flat = {k: v for k, v in d.items() if k != "weights"}
    for k, v in d.get("weights", {}).items():
        flat[f"weights.{k}"] = v
    return flat


def _unflatten_train(flat: dict) -> dict:
    d, weights = {}, {}
    for k, v in flat.items():
        if k.startswith("weights."):
            weights[k.split(".", 1)[1]] = v
        else:
            d[k] = v
    if weights:
        d["weights"] = weights
    return d


# -- helpers -------------------------------------------------------------------
def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _load_ckpt(path):
    from .trainer import load_checkpoint

    return load_checkpoint(path)


def _codes(path):
    from .trainer import load_codes

    return load_codes(path)


def _codeset(book, state: int = 0, instance: int = 0):
    from .latents import CodeSet

    try:
        return CodeSet.from_book(book, instance, state)
    except KeyError as exc:
        raise DataFormatError(str(exc)) from exc


def _camera(path, index: int):
    from .scenegen import read_cameras

    try:
        cams = read_cameras(path)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read cameras from {path}: {exc}") from exc
    if not 0 <= index < len(cams):
        raise DataFormatError(f"{path}: no camera {index} (file has {len(cams)})")
    return cams[index]


def _parse_states(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        a, b = int(a.lstrip("j")), int(b.lstrip("j"))
        return list(range(a, b + 1)) if b >= a else list(range(a, b - 1, -1))
    return [int(t.lstrip("j")) for t in text.split(",") if t]


# -- commands --------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    from .scenegen import generate
    from .validation import parse_resolution

    res = parse_resolution(args.res)
    values = _args_dict(args)
    echo("gen-data", values)
    train, held = generate(args.scene, args.instances, args.states, args.views, res, args.seed, args.out,
                           args.holdout, args.infer_views, args.eval_views, args.camera_radius)
    write_resolved(Path(args.out), values)
    print(f"wrote {train.n_instances} instances x {train.n_states} states x "
          f"{len(train.views[(0, 0)])} views to {args.out}")
    if held is not None:
        print(f"wrote {held.n_instances} held-out instances to {Path(args.out) / 'holdout'}")
    return EXIT_OK


def resolve_train_config(args):
    from .trainer import TrainConfig

    make = TrainConfig.desk if args.preset == "desk" else TrainConfig.paper
    base = make().to_dict()
    flat = _flatten_train(base)
    if args.config:
        file_vals = read_config_file(args.config)
        unknown = set(file_vals) - set(flat) - {"preset"}
        if unknown:
            raise UsageError(f"unknown config keys in {args.config}: {sorted(unknown)}")
        file_vals.pop("preset", None)
        flat.update(file_vals)
    cfg = TrainConfig.from_dict(_unflatten_train(flat))
    if args.iters is not None:
        cfg = cfg.scaled(args.iters)
    overrides = {"variant": args.variant, "seed": args.seed}
    if args.batch is not None:
        overrides["pixel_batch"] = args.batch
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    from .trainer import DatasetIndex, save_checkpoint, train

    try:
        cfg = resolve_train_config(args)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    values = {**_args_dict(args), **{f"train.{k}": v for k, v in _flatten_train(cfg.to_dict()).items()}}
    echo("train", values)
    dataset = DatasetIndex.load(args.data)
    log_file = open(args.log, "w") if args.log else sys.stderr
    try:
        ckpt = train(dataset, cfg, log=log_file)
    finally:
        if args.log:
            log_file.close()
    save_checkpoint(ckpt, args.out)
    write_resolved(args.out, values)
    print(f"checkpoint {args.out} ({ckpt.variant}, {ckpt.iteration} iterations)")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .inference import InferenceConfig, recover_codes, test_time_adapt
    from .trainer import DatasetIndex, save_checkpoint, save_codes

    ckpt = _load_ckpt(args.ckpt)
    values = _args_dict(args)
    echo("infer", values)
    views = DatasetIndex.from_view_dirs(args.views, ckpt.category)
    hist = []
    book = recover_codes(ckpt, views, args.iters, InferenceConfig(seed=args.seed), history=hist)
    if hist:
        log(f"[infer] loss {hist[0].total:.6g} -> {hist[-1].total:.6g}")
    meta = {"source_views": [str(v) for v in args.views]}
    if args.tta:
        adapted, book = test_time_adapt(ckpt, views, book, args.tta_iters, InferenceConfig.tta(seed=args.seed))
        out_ckpt = args.out_ckpt or str(args.out) + ".ckpt"
        save_checkpoint(adapted, out_ckpt)
        write_resolved(out_ckpt, values)
        meta["adapted_checkpoint"] = str(out_ckpt)
        print(f"adapted checkpoint {out_ckpt}")
    save_codes(book, args.out, ckpt.category, ckpt.variant, meta)
    write_resolved(args.out, values)
    print(f"codes {args.out} ({views.n_states} state(s))")
    return EXIT_OK


def _render_settings(ckpt):
    from .renderer import RenderSettings

    return RenderSettings(scene_bound_radius=ckpt.config.scene_bound_radius)


def cmd_render(args) -> int:
    from .imageio import write_pgm, write_ppm
    from .renderer import render_image

    ckpt = _load_ckpt(args.ckpt)
    codes = _codeset(_codes(args.codes), args.state, args.instance)
    cam = _camera(args.camera, args.view)
    values = _args_dict(args)
    echo("render", values)
    rgb, mask = render_image(cam, codes.as_tuple(), ckpt.model, _render_settings(ckpt), threads=args.threads)
    write_ppm(args.out, rgb)
    if args.mask_out:
        write_pgm(args.mask_out, (mask > 0.5).astype(np.float64))
    write_resolved(args.out, values)
    print(f"image {args.out} ({cam.width}x{cam.height})")
    return EXIT_OK


def cmd_mesh(args) -> int:
    from .geometry import model_mesh, write_obj

    ckpt = _load_ckpt(args.ckpt)
    codes = _codeset(_codes(args.codes), args.state, args.instance)
    values = _args_dict(args)
    echo("mesh", values)
    mesh = model_mesh(ckpt.model, codes.shape, codes.articulation, args.res, (-args.bound, args.bound))
    write_obj(mesh, args.out)
    write_resolved(args.out, values)
    print(f"mesh {args.out} ({len(mesh.vertices)} vertices, {len(mesh)} triangles)")
    return EXIT_OK


def _save_codeset(codes, path, ckpt, values, meta):
    from .trainer import save_codes

    save_codes(codes.to_book(), path, ckpt.category, ckpt.variant, meta)
    write_resolved(path, values)


def cmd_interp(args) -> int:
    from .latents import lerp_codes

    ckpt = _load_ckpt(args.ckpt)
    a = _codeset(_codes(args.codes_a), args.state_a)
    b = _codeset(_codes(args.codes_b), args.state_b)
    values = _args_dict(args)
    echo("interp", values)
    try:
        out = lerp_codes(a, b, args.t)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
    _save_codeset(out, args.out, ckpt, values, {"interp_t": args.t})
    print(f"codes {args.out} (t={args.t})")
    return EXIT_OK


def cmd_swap(args) -> int:
    from .latents import swap_codes

    ckpt = _load_ckpt(args.ckpt)
    a = _codeset(_codes(args.codes_a), args.state_a)
    b = _codeset(_codes(args.codes_b), args.state_b)
    values = _args_dict(args)
    echo("swap", values)
    try:
        out = swap_codes(a, b, args.which)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
    _save_codeset(out, args.out, ckpt, values, {"swapped": args.which})
    print(f"codes {args.out} ({args.which} from {args.codes_b})")
    return EXIT_OK


def cmd_animate(args) -> int:
    from .geometry import write_obj
    from .imageio import write_ppm
    from .latents import animate

    try:
        states = _parse_states(args.states)
    except ValueError as exc:
        raise UsageError(f"bad --states {args.states!r}") from exc
    ckpt = _load_ckpt(args.ckpt)
    codes = _codeset(_codes(args.codes), 0)
    cam = _camera(args.camera, args.view)
    book = ckpt.codes
    psis = []
    for j in states:
        key = book.articulation_key(args.instance, j)
        if key not in book.articulation:
            raise DataFormatError(f"checkpoint has no articulation code for state {j}")
        psis.append(book.articulation[key])
    values = _args_dict(args)
    echo("animate", values)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = animate(codes.shape, codes.appearance, psis, [cam], ckpt, _render_settings(ckpt),
                     args.mesh_res or None, args.threads)
    for n, frame in enumerate(frames):
        write_ppm(out / f"frame_{n:03d}.ppm", frame.images[0][0])
        if frame.mesh is not None:
            write_obj(frame.mesh, out / f"frame_{n:03d}.obj")
    write_resolved(out, values)
    print(f"{len(frames)} frames in {out}")
    return EXIT_OK


def _scene_joint(path, instance: int):
    from .scenegen import SceneSpec

    p = Path(path)
    try:
        if p.is_dir():
            man = json.loads((p / "dataset.json").read_text())
            scene = man["instances"][instance]["scene"]
        else:
            scene = json.loads(p.read_text())
            scene = scene.get("scene", scene)
        spec = SceneSpec.from_dict(scene)
    except (OSError, KeyError, IndexError, json.JSONDecodeError, ValueError) as exc:
        raise DataFormatError(f"cannot read scene from {path}: {exc}") from exc
    js = spec.joint_spec(0)
    if js["type"] != "revolute" or js["split_normal"] is None:
        raise DataFormatError(f"scene {spec.name!r} has no measurable revolute joint")
    return js


def cmd_eval(args) -> int:
    from .geometry import chamfer_l1, format_db, load_points, measure_opening_angle, psnr, read_obj
    from .imageio import read_ppm

    values = _args_dict(args)
    echo(f"eval {args.metric}", values)
    if args.metric == "chamfer":
        a = load_points(args.mesh_a, seed=args.seed)
        b = load_points(args.mesh_b, seed=args.seed + 1)
        print(f"chamfer_l1\t{chamfer_l1(a, b):.8g}\t(raw units)")
    elif args.metric == "psnr":
        a, b = read_ppm(args.a), read_ppm(args.b)
        if a.shape != b.shape:
            raise DataFormatError(f"image sizes differ: {a.shape} vs {b.shape}")
        print(f"psnr\t{format_db(psnr(a, b))}")
    else:
        js = _scene_joint(args.scene, args.instance)
        m = measure_opening_angle(read_obj(args.mesh), js, seed=args.seed)
        flag = "\tlow-confidence" if m.low_confidence else ""
        print(f"angle\t{m.degrees:.4f}{flag}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="artfield", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for rendering (1 guarantees bit-reproducible output)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a procedural articulated dataset")
    g.add_argument("--scene", choices=("laptop", "drawer", "cabinet"), required=True)
    g.add_argument("--instances", type=int, default=3)
    g.add_argument("--states", type=int, default=5, help="states per joint")
    g.add_argument("--views", type=int, default=12)
    g.add_argument("--res", default="64x48")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--holdout", type=int, default=0, help="extra instances written under OUT/holdout")
    g.add_argument("--infer-views", type=int, default=6)
    g.add_argument("--eval-views", type=int, default=4)
    g.add_argument("--camera-radius", type=float, default=3.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train networks and codes")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--variant", choices=("base", "art", "def", "artdef"), default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--config", type=Path, default=None)
    t.add_argument("--preset", choices=("desk", "paper"), default="desk")
    t.add_argument("--log", type=Path, default=None, help="training log (TSV); default stderr")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="recover codes of an unseen object")
    i.add_argument("--ckpt", type=Path, required=True)
    i.add_argument("--views", type=Path, nargs="+", required=True,
                   help="view directories (cameras.txt + images); one per articulation state")
    i.add_argument("--iters", type=int, default=600)
    i.add_argument("--out", type=Path, required=True)
    i.add_argument("--tta", action="store_true")
    i.add_argument("--tta-iters", type=int, default=600)
    i.add_argument("--out-ckpt", type=Path, default=None)
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("render", help="render codes from a camera")
    r.add_argument("--ckpt", type=Path, required=True)
    r.add_argument("--codes", type=Path, required=True)
    r.add_argument("--camera", type=Path, required=True)
    r.add_argument("--view", type=int, default=0)
    r.add_argument("--state", type=int, default=0)
    r.add_argument("--instance", type=int, default=0)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--mask-out", type=Path, default=None)
    r.set_defaults(func=cmd_render)

    m = sub.add_parser("mesh", help="extract a mesh with marching cubes")
    m.add_argument("--ckpt", type=Path, required=True)
    m.add_argument("--codes", type=Path, required=True)
    m.add_argument("--res", type=int, default=128)
    m.add_argument("--bound", type=float, default=1.2)
    m.add_argument("--state", type=int, default=0)
    m.add_argument("--instance", type=int, default=0)
    m.add_argument("--out", type=Path, required=True)
    m.set_defaults(func=cmd_mesh)

    for name, helptext in (("interp", "interpolate or extrapolate two code sets"),
                           ("swap", "replace one component of a code set")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--ckpt", type=Path, required=True)
        s.add_argument("--codes-a", type=Path, required=True)
        s.add_argument("--codes-b", type=Path, required=True)
        s.add_argument("--state-a", type=int, default=0)
        s.add_argument("--state-b", type=int, default=0)
        s.add_argument("--out", type=Path, required=True)
        if name == "interp":
            s.add_argument("--t", type=float, required=True)
            s.set_defaults(func=cmd_interp)
        else:
            s.add_argument("--which", choices=("shape", "appearance", "articulation"), required=True)
            s.set_defaults(func=cmd_swap)

    a = sub.add_parser("animate", help="re-articulate a code set with trained articulation codes")
    a.add_argument("--ckpt", type=Path, required=True)
    a.add_argument("--codes", type=Path, required=True)
    a.add_argument("--states", required=True, help="e.g. 0..4 or 0,2,4")
    a.add_argument("--instance", type=int, default=0, help="instance whose codes to use for unshared variants")
    a.add_argument("--camera", type=Path, required=True)
    a.add_argument("--view", type=int, default=0)
    a.add_argument("--mesh-res", type=int, default=0)
    a.add_argument("--out-dir", type=Path, required=True)
    a.set_defaults(func=cmd_animate)

    e = sub.add_parser("eval", help="metrics")
    esub = e.add_subparsers(dest="metric", required=True, parser_class=_Parser)
    c = esub.add_parser("chamfer")
    c.add_argument("--mesh-a", type=Path, required=True)
    c.add_argument("--mesh-b", type=Path, required=True)
    c.add_argument("--seed", type=int, default=0)
    ps = esub.add_parser("psnr")
    ps.add_argument("--a", type=Path, required=True)
    ps.add_argument("--b", type=Path, required=True)
    an = esub.add_parser("angle")
    an.add_argument("--mesh", type=Path, required=True)
    an.add_argument("--scene", type=Path, required=True, help="dataset directory or scene JSON")
    an.add_argument("--instance", type=int, default=0)
    an.add_argument("--seed", type=int, default=0)
    for sp in (c, ps, an):
        sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        log(f"usage error: {exc}")
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        log(f"data error: {exc}")
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        log(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except OSError as exc:
        log(f"data error: {exc}")
        return EXIT_DATA
    except ValueError as exc:
        log(f"usage error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
