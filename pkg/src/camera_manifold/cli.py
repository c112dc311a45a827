"""Command-line interface.

Exit codes: 0 success, 1 invariant failure, 2 unreadable or malformed input.
Every command takes ``--config`` (flat JSON); explicit flags override its keys.
``CM_THREADS`` caps the number of worker threads used for frame rendering.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .camera import DEFAULT_FACE, CanonicalFeatures3D, ManifoldCoord, look_at, manifold_camera
from .canonical import random_similarity
from .imaging import read_image, write_image
from .lm import LMSettings
from .manifold_range import (
    RangeError,
    RangeParabolas,
    default_range,
    draw_manifold_samples,
    estimate_density,
    fit_parabolas,
    load_pose_samples,
    project_to_range,
)
from .mesh import load_obj
from .pipeline import InputError, PipelineError, StageError, align_dataset, load_manifest, write_alignment, write_manifest
from .solver import SolverError, solve_coefficients
from .texture import DirectorySource, ULRSource
from .warpfield import (
    FlowField,
    FreeCamera,
    ManifoldState,
    anaglyph,
    project_free_camera,
    render_flow,
    render_free_view,
    stereo_pair,
    warp,
)

logger = logging.getLogger("camera_manifold")

MAX_RESOLUTION = 8192
DEFAULTS = {
    "range": None,
    "resolution": 256,
    "manifold_resolution": 256,
    "samples_per_pixel": 4,
    "seed": 0,
    "max_iters": 200,
    "top_k": 4,
    "texture_dir": None,
    "face": None,
}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CM_THREADS", "1")))
    except ValueError:
        return 1


# --- configuration ----------------------------------------------------------

def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError("config", f"cannot read {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError("config", f"{args.config}: invalid JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise InputError("config", f"{args.config}: expected a flat JSON object")
        cfg.update(data)
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            cfg[k] = v
    for key in ("resolution", "manifold_resolution"):
        try:
            cfg[key] = int(cfg[key])
        except (TypeError, ValueError) as exc:
            raise InputError("config", f"{key} must be an integer") from exc
        if not 0 < cfg[key] <= MAX_RESOLUTION:
            raise InputError("config", f"{key} must lie in 1..{MAX_RESOLUTION}, got {cfg[key]}")
    return cfg


def load_range(cfg) -> RangeParabolas:
    if not cfg.get("range"):
        return default_range()
    try:
        return RangeParabolas.load(cfg["range"])
    except OSError as exc:
        raise InputError("range", f"cannot read {cfg['range']}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError("range", f"{cfg['range']}: malformed range file ({exc})") from exc
    except RangeError as exc:
        raise StageError("range", f"{cfg['range']}: invariant violation: {exc}") from exc


def load_face(cfg) -> CanonicalFeatures3D:
    if not cfg.get("face"):
        return DEFAULT_FACE
    try:
        return CanonicalFeatures3D.from_json(json.loads(Path(cfg["face"]).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise InputError("face", f"cannot read face features {cfg['face']}: {exc}") from exc


def solver_settings(cfg) -> LMSettings:
    return LMSettings(max_iters=int(cfg["max_iters"]))


def load_state(cfg, dataset) -> ManifoldState:
    manifest = Path(dataset) / "manifest.json"
    if not manifest.exists():
        raise InputError("dataset", f"{manifest} not found (run 'align' first)")
    mesh, views = load_manifest(manifest)
    if mesh is None:
        raise InputError("dataset", f"{manifest} lists no mesh")
    texture = ULRSource(views, mesh, int(cfg["top_k"]))
    if cfg.get("texture_dir"):
        try:
            texture = DirectorySource(cfg["texture_dir"], fallback=texture)
        except FileNotFoundError as exc:
            raise InputError("texture", str(exc)) from exc
    return ManifoldState(mesh, texture, load_range(cfg), load_face(cfg), solver_settings(cfg),
                         cfg["manifold_resolution"], int(cfg["samples_per_pixel"]))


def parse_free_camera(rec, face=DEFAULT_FACE, settings=None) -> FreeCamera:
    """Camera path record: ``{"manifold": {theta, phi, d}}``, ``{"look_at": {...}}`` or a FreeCamera record."""
    if not isinstance(rec, dict):
        raise ValueError("camera record must be a JSON object")
    if "manifold" in rec:
        m = rec["manifold"]
        coord = ManifoldCoord(float(m["theta"]), float(m["phi"]), float(m["d"]))
        rep = solve_coefficients(coord, face, settings)
        return FreeCamera(manifold_camera(coord, rep.coefficients))
    if "look_at" in rec:
        la = rec["look_at"]
        cam = look_at(la["position"], la.get("target", (0.0, 0.0, 0.0)), la.get("up", (0.0, 1.0, 0.0)),
                      float(la.get("fov", 30.0)), float(la.get("roll", 0.0)))
        return FreeCamera(cam, rec.get("model", "pinhole"), float(rec.get("k1", 0.0)),
                          float(rec.get("offset", 0.0)), float(rec.get("convergence_depth", 10.0)))
    return FreeCamera.from_json(rec)


def read_camera_path(path, face, settings) -> list[FreeCamera]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError("path", f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError("path", f"{path}: invalid JSON ({exc.msg})") from exc
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not data:
        raise InputError("path", f"{path}: expected a nonempty JSON array of camera records")
    cams = []
    for i, rec in enumerate(data):
        try:
            cams.append(parse_free_camera(rec, face=face, settings=settings))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError("path", f"{path}: record {i}: {exc}") from exc
    return cams


def _emit(obj):
    print(json.dumps(obj, indent=1))


# --- commands ---------------------------------------------------------------

def cmd_synth_dataset(args, cfg):
    from .synthetic import make_dataset

    scramble = random_similarity(np.random.default_rng(args.scramble_seed)) if args.scramble_seed is not None else None
    ds = make_dataset(args.views, cfg["resolution"], scramble)
    path = write_manifest(args.out, ds.mesh, ds.views, ds.raw_landmarks)
    print(f"wrote {len(ds.views)} views to {path}")


def cmd_align(args, cfg):
    rng = load_range(cfg)
    mesh, views = load_manifest(args.manifest, load_mesh=not args.mesh)
    if args.mesh:
        try:
            mesh = load_obj(args.mesh)
        except OSError as exc:
            raise InputError("manifest", f"cannot read mesh {args.mesh}: {exc.strerror or exc}") from exc
        except ValueError as exc:
            raise InputError("manifest", str(exc)) from exc
    if mesh is None:
        raise InputError("manifest", f"{args.manifest} lists no mesh and --mesh was not given")
    res = align_dataset(mesh, views, rng, cfg["resolution"])
    write_alignment(res, args.out)
    eyes = res.transform(res.lift.points)
    err = float(np.abs(eyes[:2] - np.array([[-1.0, 0, 0], [1.0, 0, 0]])).max())
    n_in = sum(c[4] for c in res.coords)
    print(f"aligned {len(res.views)} views; canonical eye error {err:.2e}; {n_in}/{len(res.coords)} in range")


def cmd_solve_manifold(args, cfg):
    face = load_face(cfg)
    m = ManifoldCoord(args.theta, args.phi, args.d)
    rep = solve_coefficients(m, face, solver_settings(cfg))
    if not rep.converged:
        raise StageError("solve", f"solver did not converge (residual {rep.residual:.3g})")
    c = rep.coefficients
    _emit({"alpha": c.alpha, "beta": c.beta, "gamma": c.gamma, "psi": c.psi, "residual": rep.residual,
           "iterations": rep.iterations, "camera": manifold_camera(m, c).to_json()})


def cmd_fit_range(args, cfg):
    samples = load_pose_samples(args.samples)
    r = fit_parabolas(estimate_density(samples), args.iso_fraction)
    r.save(args.out)
    _emit(r.to_json() | {"g": r.g})


def cmd_project_range(args, cfg):
    r = load_range(cfg)
    (t, p), fallback = project_to_range(r, args.theta, args.phi, flag=True)
    _emit({"theta": t, "phi": p, "moved": (t, p) != (args.theta, args.phi), "fallback": fallback})


def cmd_sample_manifold(args, cfg):
    r = load_range(cfg)
    s = draw_manifold_samples(r, args.count, int(cfg["seed"]))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["theta", "phi", "d"])
        for row in s:
            w.writerow([f"{v:.9f}" for v in row])
    finally:
        if args.out:
            out.close()


def cmd_render(args, cfg):
    state = load_state(cfg, args.dataset)
    cams = read_camera_path(args.path, state.face, state.settings)
    out = Path(args.out)
    res_px = cfg["resolution"]
    # solve sequentially so each frame warm-starts from the previous one
    projections, warm = [], None
    for cam in cams:
        proj = project_free_camera(cam, state.range, state.face, state.settings, warm)
        if not proj.report.converged:
            raise StageError("solve", f"frame {len(projections)}: solver did not converge")
        projections.append(proj)
        warm = proj.coefficients

    def frame(i):
        proj = projections[i]
        mimg = state.texture(proj.coord, proj.camera, state.manifold_resolution)
        flow = render_flow(state.mesh, proj.camera, cams[i], res_px, state.samples_per_pixel)
        img, holes = warp(mimg, flow, return_mask=True)
        return img, flow, holes

    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = pool.map(frame, range(len(cams)))
        rows = []
        for i, (img, flow, holes) in enumerate(results):
            write_image(out / f"frame_{i:04d}.ppm", img)
            flow.save(out / f"flow_{i:04d}.f32r")
            p = projections[i]
            rows.append([i, *(f"{v:.9f}" for v in p.coord.as_array()),
                         *(f"{v:.9f}" for v in p.coefficients.as_array()),
                         p.report.iterations, int(p.inside), int(holes.sum())])
    with open(out / "frames.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "theta", "phi", "d", "alpha", "beta", "gamma", "psi", "iterations", "in_range", "filled"])
        w.writerows(rows)
    mean_it = np.mean([p.report.iterations for p in projections])
    print(f"rendered {len(cams)} frames to {out}; mean solver iterations {mean_it:.1f}")


def _single_camera(path, state):
    cams = read_camera_path(path, state.face, state.settings)
    if len(cams) != 1:
        raise InputError("camera", f"{path}: expected exactly one camera record")
    return cams[0]


def cmd_render_flow(args, cfg):
    state = load_state(cfg, args.dataset)
    cam = _single_camera(args.camera, state)
    res = render_free_view(state, cam, cfg["resolution"])
    res.flow.save(args.out)
    if args.manifold_image:
        write_image(args.manifold_image, res.manifold_image)
    c = res.projection.coord
    print(f"flow written to {args.out}; manifold coordinate ({c.theta:.4f}, {c.phi:.4f}, {c.d:.4f})"
          f"{'' if res.projection.inside else ' (projected onto the valid range)'}")


def cmd_warp(args, cfg):
    try:
        img = read_image(args.image)
    except (OSError, ValueError) as exc:
        raise InputError("warp", f"cannot read image {args.image}: {exc}") from exc
    try:
        flow = FlowField.load(args.flow)
    except (OSError, ValueError) as exc:
        raise InputError("warp", f"cannot read flow {args.flow}: {exc}") from exc
    out, holes = warp(img, flow, return_mask=True)
    write_image(args.out, out)
    print(f"warped to {args.out}; {int(holes.sum())} hole pixels filled")


def cmd_stereo(args, cfg):
    state = load_state(cfg, args.dataset)
    base = _single_camera(args.camera, state).base
    left, right = stereo_pair(state, base, args.interocular, args.screen_depth, cfg["resolution"])
    img = anaglyph(left.image, right.image) if args.anaglyph else np.concatenate([left.image, right.image], 1)
    write_image(args.out, img)
    print(f"stereo pair written to {args.out}")


def cmd_selftest(args, cfg):
    from .selftest import run_all

    r = load_range(cfg)
    results = run_all(r)
    for res in results:
        print(res.line())
    if not all(res.passed for res in results):
        raise StageError("selftest", "one or more checks failed")


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="camera-manifold", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, aliases=()):
        sp = sub.add_parser(name, help=help_, aliases=list(aliases))
        sp.add_argument("--config", help="flat JSON config; flags override its keys")
        sp.set_defaults(func=func)
        return sp

    def common_render(sp):
        sp.add_argument("--range", help="range parabola JSON (default: shipped coefficients)")
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--manifold-resolution", type=int, dest="manifold_resolution")
        sp.add_argument("--samples-per-pixel", type=int, dest="samples_per_pixel")
        sp.add_argument("--max-iters", type=int, dest="max_iters")
        sp.add_argument("--top-k", type=int, dest="top_k")
        sp.add_argument("--texture-dir", dest="texture_dir")
        sp.add_argument("--face", help="canonical feature JSON")

    sp = add("synth-dataset", cmd_synth_dataset, "write a synthetic calibrated multi-view dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--views", type=int, default=8)
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--scramble-seed", type=int, dest="scramble_seed")

    sp = add("align", cmd_align, "canonical 3D alignment and 2D portrait alignment of a dataset",
             aliases=("align-canonical",))
    sp.add_argument("--manifest", "--views", dest="manifest", required=True, help="views manifest JSON")
    sp.add_argument("--mesh", help="OBJ mesh (overrides the manifest's mesh entry)")
    sp.add_argument("--out", "--out-dir", dest="out", required=True)
    sp.add_argument("--range")
    sp.add_argument("--resolution", type=int, help="aligned image size")

    sp = add("solve-manifold", cmd_solve_manifold, "solve manifold camera coefficients")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--phi", type=float, required=True)
    sp.add_argument("--d", type=float, required=True)
    sp.add_argument("--face")
    sp.add_argument("--max-iters", type=int, dest="max_iters")

    sp = add("fit-range", cmd_fit_range, "fit range parabolas to (theta, phi) pose samples")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--iso-fraction", type=float, default=0.01, dest="iso_fraction")

    sp = add("project-range", cmd_project_range, "project (theta, phi) onto the valid range")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--phi", type=float, required=True)
    sp.add_argument("--range")

    sp = add("sample-manifold", cmd_sample_manifold, "draw uniform samples of valid manifold coordinates")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--range")
    sp.add_argument("--out")

    sp = add("render", cmd_render, "render a free-camera path")
    sp.add_argument("--dataset", required=True, help="output directory of 'align'")
    sp.add_argument("--path", required=True, help="JSON array of camera records")
    sp.add_argument("--out", required=True)
    common_render(sp)

    sp = add("render-flow", cmd_render_flow, "render the inverse flow of one free camera")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifold-image", dest="manifold_image")
    common_render(sp)

    sp = add("warp", cmd_warp, "warp a manifold-view image through a flow file")
    sp.add_argument("--image", required=True)
    sp.add_argument("--flow", required=True)
    sp.add_argument("--out", required=True)

    sp = add("stereo", cmd_stereo, "render a stereo pair (side-by-side or anaglyph)")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--interocular", type=float, required=True)
    sp.add_argument("--screen-depth", type=float, required=True, dest="screen_depth")
    sp.add_argument("--anaglyph", action="store_true", default=None)
    sp.add_argument("--out", required=True)
    common_render(sp)

    sp = add("selftest", cmd_selftest, "run the built-in oracle checks")
    sp.add_argument("--range")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (RangeError, SolverError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
