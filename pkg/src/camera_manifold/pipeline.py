"""File-level pipelines: dataset manifests, canonical alignment and rendering.

Errors raised here carry the pipeline stage that failed.  ``InputError``
marks unreadable or malformed inputs; ``StageError`` marks a computation
that violated an invariant.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .align2d import FeaturePoints2D, aggregate_features, alignment_transform, resample_aligned
from .camera import PinholeCamera, spherical_coords
from .canonical import (
    CalibratedView,
    LiftResult,
    SimilarityTransform3D,
    apply_canonical,
    background_blur,
    canonical_transform,
    lift_features,
)
from .imaging import read_image, write_image
from .manifold_range import MIN_DISTANCE, RangeParabolas, contains
from .mesh import TriangleMesh, load_obj, save_obj

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MESH_NAME = "mesh.obj"


class PipelineError(Exception):
    exit_code = 1

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class InputError(PipelineError):
    exit_code = 2


class StageError(PipelineError):
    exit_code = 1


# --- manifests --------------------------------------------------------------

def _read_json(path, stage):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(stage, f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(stage, f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def read_landmarks(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
        pts = np.asarray(data["points"] if isinstance(data, dict) else data, dtype=float)
    else:
        pts = np.loadtxt(path, dtype=float, ndmin=2)
    return pts


def load_manifest(path, load_mesh=True) -> tuple[TriangleMesh | None, list[CalibratedView]]:
    """Read a views manifest.

    Layout: ``{"mesh": "mesh.obj", "views": [{"image", "camera",
    "landmarks"?, "matte"?}, ...]}``; ``camera`` is an inline record or a
    path to one.  Relative paths resolve against the manifest directory.
    """
    path = Path(path)
    data = _read_json(path, "manifest")
    root = path.parent
    entries = data.get("views") if isinstance(data, dict) else None
    if not entries:
        raise InputError("manifest", f"{path}: no views listed")
    mesh = None
    if load_mesh and data.get("mesh"):
        mesh_path = root / data["mesh"]
        try:
            mesh = load_obj(mesh_path)
        except OSError as exc:
            raise InputError("manifest", f"cannot read mesh {mesh_path}: {exc.strerror or exc}") from exc
        except ValueError as exc:
            raise InputError("manifest", str(exc)) from exc
    views = []
    sizes = set()
    for i, e in enumerate(entries):
        name = e.get("name", f"view{i:02d}")
        img_path = root / e.get("image", "")
        try:
            img = read_image(img_path)
        except (OSError, ValueError) as exc:
            raise InputError("manifest", f"cannot read image {img_path}: {exc}") from exc
        cam_rec = e.get("camera")
        if isinstance(cam_rec, str):
            cam_rec = _read_json(root / cam_rec, "manifest")
        try:
            cam = PinholeCamera.from_json(cam_rec or {})
        except ValueError as exc:
            raise InputError("manifest", f"view {name}: {exc}") from exc
        feats = None
        if e.get("landmarks"):
            lm_path = root / e["landmarks"]
            try:
                feats = aggregate_features(read_landmarks(lm_path))
            except (OSError, ValueError, KeyError) as exc:
                raise InputError("manifest", f"cannot read landmarks {lm_path}: {exc}") from exc
        matte = None
        if e.get("matte"):
            m_path = root / e["matte"]
            try:
                matte = read_image(m_path)
            except (OSError, ValueError) as exc:
                raise InputError("manifest", f"cannot read matte {m_path}: {exc}") from exc
            if matte.ndim == 3:
                matte = matte[..., 0]
        sizes.add(img.shape[:2])
        views.append(CalibratedView(img, cam, feats, matte, name))
    if len(sizes) > 1:
        raise InputError("manifest", f"{path}: views have inconsistent resolutions {sorted(sizes)}")
    return mesh, views


def write_manifest(out_dir, mesh: TriangleMesh | None, views, raw_landmarks=None) -> Path:
    """Write images (PPM), mattes (PGM), landmarks and cameras plus the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, v in enumerate(views):
        name = v.name or f"view{i:02d}"
        write_image(out / f"{name}.ppm", v.image)
        e = {"name": name, "image": f"{name}.ppm", "camera": v.camera.to_json()}
        if raw_landmarks is not None or v.landmarks is not None:
            pts = raw_landmarks[i] if raw_landmarks is not None else _landmarks_as_68(v.landmarks)
            np.savetxt(out / f"{name}_landmarks.txt", np.asarray(pts), fmt="%.10f")
            e["landmarks"] = f"{name}_landmarks.txt"
        if v.matte is not None:
            write_image(out / f"{name}_matte.pgm", v.matte)
            e["matte"] = f"{name}_matte.pgm"
        entries.append(e)
    manifest = {"views": entries}
    if mesh is not None:
        save_obj(out / MESH_NAME, mesh)
        manifest["mesh"] = MESH_NAME
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _landmarks_as_68(f: FeaturePoints2D) -> np.ndarray:
    """A 68-point set with the same aggregated features (each group collapsed to its mean)."""
    from .align2d import LEFT_EYE, MOUTH, RIGHT_EYE

    pts = np.tile(f.x_m, (68, 1))
    pts[list(LEFT_EYE)] = f.x_l
    pts[list(RIGHT_EYE)] = f.x_r
    return pts


# --- alignment --------------------------------------------------------------

@dataclass
class AlignResult:
    transform: SimilarityTransform3D
    mesh: TriangleMesh
    views: list
    aligned: list
    lift: LiftResult
    coords: list            # (name, theta, phi, d, in_range)


def align_dataset(mesh: TriangleMesh, views, rng: RangeParabolas, out_size=256) -> AlignResult:
    """Lift features, canonicalize, blur backgrounds and FFHQ-align every view."""
    try:
        lift = lift_features(views, mesh)
    except ValueError as exc:
        raise StageError("lift", str(exc)) from exc
    try:
        t = canonical_transform(*lift.points)
    except ValueError as exc:
        raise StageError("canonical", str(exc)) from exc
    if not t.converged:
        raise StageError("canonical", f"canonical transform did not converge (residual {t.residual:.3g})")
    mesh_c, views_c = apply_canonical(t, mesh, views)
    blurred = []
    for v in views_c:
        if v.matte is not None:
            try:
                v = replace(v, image=background_blur(v.image, v.matte))
            except ValueError as exc:
                raise StageError("blur", f"view {v.name}: {exc}") from exc
        blurred.append(v)
    aligned = []
    for v in blurred:
        if v.landmarks is None:
            aligned.append(None)
            continue
        try:
            a = alignment_transform(v.landmarks)
        except ValueError as exc:
            raise StageError("align2d", f"view {v.name}: {exc}") from exc
        aligned.append(resample_aligned(v.image, a, out_size))
    coords = []
    for v in blurred:
        th, ph, d = spherical_coords(v.camera.position)
        ok = bool(contains(rng, th, ph)) and d >= MIN_DISTANCE
        coords.append((v.name, th, ph, d, ok))
    return AlignResult(t, mesh_c, blurred, aligned, lift, coords)


def write_alignment(res: AlignResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, res.mesh, [replace(v, matte=None) for v in res.views])
    (out / "aligned").mkdir(exist_ok=True)
    for v, img in zip(res.views, res.aligned):
        if img is not None:
            write_image(out / "aligned" / f"{v.name}.ppm", img)
    (out / "transform.json").write_text(json.dumps(res.transform.to_json(), indent=1))
    with open(out / "range_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "theta", "phi", "d", "in_range"])
        for name, th, ph, d, ok in res.coords:
            w.writerow([name, f"{th:.6f}", f"{ph:.6f}", f"{d:.6f}", int(ok)])
