"""Procedural multi-identity dynamic scenes and dataset assembly.

Stands in for tracked video: each identity is an analytic ellipsoid density
with its own semi-axes, color, and density scale; a global bank of radial
bump modes deforms the lookup point and tints a patch of the surface, driven
by a per-frame expression vector. Ground-truth frames are rendered from the
analytic field with a high sample count, so every model prediction can be
compared against exact ground truth, including under transferred expressions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ppm
from .errors import ConfigError, UsageError
from .renderer import CameraPose, render_image

GT_FRAME_STRIDE = 100003  # spreads per-frame render streams across identities


@dataclass(frozen=True)
class ModeBank:
    """Global expression deformation modes: radial Gaussian bumps."""

    centers: np.ndarray     # (d, 3)
    widths: np.ndarray      # (d,)
    directions: np.ndarray  # (d, 3) unit displacement directions
    amplitudes: np.ndarray  # (d,)
    tints: np.ndarray       # (d, 3) color shift carried by each mode

    @property
    def d(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class IdentityParams:
    semi_axes: np.ndarray   # (3,)
    base_color: np.ndarray  # (3,)
    density_scale: float


@dataclass(frozen=True)
class SceneSpec:
    modes: ModeBank
    identities: list
    background: np.ndarray  # (3,)
    bounds: float = 1.0


@dataclass
class Frame:
    index: int
    pose: CameraPose
    e: np.ndarray
    image: np.ndarray | None
    box: tuple  # (r0, r1, c0, c1) half-open pixel bounds of the projected support


@dataclass
class IdentityData:
    name: str
    params: IdentityParams
    frames: list
    train_idx: list
    test_idx: list


@dataclass
class Dataset:
    scene: SceneSpec
    identities: list
    resolution: int
    t_near: float
    t_far: float
    seed: int
    gt_samples: int

    def identity_names(self):
        return [idn.name for idn in self.identities]

    def by_name(self, name: str) -> IdentityData:
        for idn in self.identities:
            if idn.name == name:
                return idn
        raise UsageError(f"unknown identity {name!r}")


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * k / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi),
                     np.cos(phi)], axis=1)


def sample_scene(n_identities: int, d: int, rng: np.random.Generator,
                 background=None, deform_budget: float = 0.5,
                 tint_strength: float = 0.35) -> SceneSpec:
    """Draw a random scene: global mode bank plus per-identity ellipsoids.

    deform_budget bounds sum_m |amplitude_m|, so the deformed support stays
    inside the [-1,1]^3 scene bounds for any |e|_inf <= 1.
    """
    centers = 0.3 * _fibonacci_sphere(d)
    widths = np.full(d, 0.22)
    directions = _fibonacci_sphere(d)  # distinct fixed unit directions
    amplitudes = np.full(d, deform_budget / d)
    tints = rng.uniform(-1.0, 1.0, size=(d, 3)) * tint_strength
    identities = []
    for _ in range(n_identities):
        identities.append(IdentityParams(
            semi_axes=rng.uniform(0.22, 0.42, size=3),
            base_color=rng.uniform(0.25, 0.85, size=3),
            density_scale=float(rng.uniform(9.0, 14.0)),
        ))
    bg = np.array([0.08, 0.10, 0.14]) if background is None else np.asarray(background, float)
    return SceneSpec(modes=ModeBank(centers, widths, directions, amplitudes, tints),
                     identities=identities, background=bg)


def _bump_weights(modes: ModeBank, X: np.ndarray) -> np.ndarray:
    # (n, d): Gaussian falloff of each mode at each point; expanded-norm form
    # keeps the intermediate at (n, d) instead of (n, d, 3)
    d2 = ((X * X).sum(axis=1)[:, None] - 2.0 * (X @ modes.centers.T)
          + (modes.centers * modes.centers).sum(axis=1)[None, :])
    return np.exp(-d2 / (2.0 * modes.widths[None, :] ** 2))


def analytic_field(spec: SceneSpec, identity_index: int, e: np.ndarray, X: np.ndarray):
    """Exact (rgb, sigma) of one identity at points X (n, 3) under expression e."""
    idp = spec.identities[identity_index]
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g = _bump_weights(spec.modes, X)                                     # (n, d)
    coef = g * (e * spec.modes.amplitudes)[None, :]
    delta = coef @ spec.modes.directions                                 # (n, 3)
    y = (X - delta) / idp.semi_axes[None, :]
    q = (y * y).sum(axis=1)
    sigma = idp.density_scale * np.maximum(0.0, 1.0 - q)
    rgb = np.clip(idp.base_color[None, :] + (g * e[None, :]) @ spec.modes.tints, 0.0, 1.0)
    return rgb, sigma


def deformation_margin(spec: SceneSpec) -> float:
    return float(np.abs(spec.modes.amplitudes).sum())


def smooth_trajectory(n_frames: int, d: int, rng: np.random.Generator,
                      smoothness: float = 0.85, amplitude: float = 0.85) -> np.ndarray:
    """Low-pass filtered Gaussian noise in [-1,1]^d (two cascaded one-pole filters)."""
    burn = 32
    w = rng.standard_normal((n_frames + burn, d))
    for _ in range(2):
        for t in range(1, w.shape[0]):
            w[t] = smoothness * w[t - 1] + (1.0 - smoothness) * w[t]
    w = w[burn:]
    peak = np.abs(w).max(axis=0)
    peak[peak == 0] = 1.0
    return np.clip(w / peak * amplitude, -1.0, 1.0)


def orbit_pose(frame: int, n_frames: int, radius: float, elevation: float,
               resolution: int, focal_factor: float = 1.2) -> CameraPose:
    az = 2.0 * np.pi * frame / max(n_frames, 1)
    eye = radius * np.array([np.cos(elevation) * np.sin(az), np.sin(elevation),
                             np.cos(elevation) * np.cos(az)])
    z = eye / np.linalg.norm(eye)
    x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return CameraPose(R=np.column_stack([x, y, z]), t=eye,
                      focal=focal_factor * resolution,
                      cx=resolution / 2.0, cy=resolution / 2.0,
                      width=resolution, height=resolution)


def project_box(pose: CameraPose, half_extent: np.ndarray):
    """Pixel-space half-open bounding box of the axis-aligned support box."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    corners = signs * half_extent[None, :]
    cam = (corners - pose.t[None, :]) @ pose.R
    z = -cam[:, 2]
    u = pose.cx + pose.focal * cam[:, 0] / z
    v = pose.cy - pose.focal * cam[:, 1] / z
    r0 = int(np.clip(np.floor(v.min()), 0, pose.height - 1))
    r1 = int(np.clip(np.ceil(v.max()) + 1, r0 + 1, pose.height))
    c0 = int(np.clip(np.floor(u.min()), 0, pose.width - 1))
    c1 = int(np.clip(np.ceil(u.max()) + 1, c0 + 1, pose.width))
    return (r0, r1, c0, c1)


def make_dataset(n_identities: int, n_frames: int, resolution: int, d: int, seed: int,
                 *, orbit_radius: float = 2.8, orbit_elevation: float = 0.35,
                 focal_factor: float = 1.2, gt_samples: int = 256,
                 expr_smoothness: float = 0.85, background=None,
                 share_expressions: bool = False, support_margin: float = 0.25,
                 deform_budget: float = 0.5, tint_strength: float = 0.35,
                 render_images: bool = True) -> Dataset:
    """Generate scene, trajectories, poses, and ground-truth frames; deterministic per seed."""
    if n_identities < 1 or n_frames < 1 or resolution < 1:
        raise ConfigError("counts must be positive")
    scene_rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(0,))))
    scene = sample_scene(n_identities, d, scene_rng, background=background,
                         deform_budget=deform_budget, tint_strength=tint_strength)
    t_near = orbit_radius - (0.42 + deformation_margin(scene) + support_margin)
    t_far = orbit_radius + (0.42 + deformation_margin(scene) + support_margin)
    half_extent = np.full(3, 0.42 + deformation_margin(scene))

    identities = []
    n_test = max(1, int(round(0.1 * n_frames)))
    for k in range(n_identities):
        traj_rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(1, 0 if share_expressions else k))))
        traj = smooth_trajectory(n_frames, d, traj_rng, smoothness=expr_smoothness)
        frames = []
        for f in range(n_frames):
            pose = orbit_pose(f, n_frames, orbit_radius, orbit_elevation, resolution,
                              focal_factor)
            img = None
            if render_images:
                img = render_gt_frame(scene, k, traj[f], pose, t_near, t_far,
                                      gt_samples, seed, k * GT_FRAME_STRIDE + f)
            frames.append(Frame(index=f, pose=pose, e=traj[f].copy(), image=img,
                                box=project_box(pose, half_extent)))
        identities.append(IdentityData(
            name=f"id{k:02d}", params=scene.identities[k], frames=frames,
            train_idx=list(range(n_frames - n_test)),
            test_idx=list(range(n_frames - n_test, n_frames))))
    return Dataset(scene=scene, identities=identities, resolution=resolution,
                   t_near=t_near, t_far=t_far, seed=seed, gt_samples=gt_samples)


def dataset_from_config(cfg: dict, render_images: bool = True) -> Dataset:
    s = cfg["scene"]
    return make_dataset(
        s["n_identities"], s["n_frames"], s["resolution"], s["d_expression"],
        cfg["seed"], orbit_radius=s["orbit_radius"], orbit_elevation=s["orbit_elevation"],
        focal_factor=s["focal_factor"], gt_samples=s["gt_samples"],
        expr_smoothness=s["expr_smoothness"], background=s["background"],
        share_expressions=s["share_expressions"], deform_budget=s["deform_budget"],
        tint_strength=s["tint_strength"], render_images=render_images)


def render_gt_frame(scene: SceneSpec, identity_index: int, e: np.ndarray,
                    pose: CameraPose, t_near: float, t_far: float, samples: int,
                    seed: int, frame_id: int) -> np.ndarray:
    return render_image(
        lambda X, V: analytic_field(scene, identity_index, e, X),
        pose, t_near=t_near, t_far=t_far, n_coarse=samples, n_fine=0,
        background=scene.background, seed=seed, frame_index=frame_id, jitter=True)


# ---------------------------------------------------------------------------
# on-disk layout: one directory per identity with meta.json + PPM frames

def _pose_to_json(p: CameraPose):
    return {"R": p.R.reshape(-1).tolist(), "t": p.t.tolist(), "focal": p.focal,
            "cx": p.cx, "cy": p.cy, "width": p.width, "height": p.height}


def _pose_from_json(j) -> CameraPose:
    return CameraPose(R=np.array(j["R"], dtype=np.float64).reshape(3, 3),
                      t=np.array(j["t"], dtype=np.float64), focal=j["focal"],
                      cx=j["cx"], cy=j["cy"], width=j["width"], height=j["height"])


def save_dataset(ds: Dataset, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = ds.scene.modes
    for idn in ds.identities:
        idir = out / idn.name
        idir.mkdir(exist_ok=True)
        meta = {
            "name": idn.name,
            "resolution": ds.resolution,
            "t_near": ds.t_near,
            "t_far": ds.t_far,
            "seed": ds.seed,
            "gt_samples": ds.gt_samples,
            "background": ds.scene.background.tolist(),
            "bounds": ds.scene.bounds,
            "modes": {"centers": m.centers.tolist(), "widths": m.widths.tolist(),
                      "directions": m.directions.tolist(),
                      "amplitudes": m.amplitudes.tolist(), "tints": m.tints.tolist()},
            "identity": {"semi_axes": idn.params.semi_axes.tolist(),
                         "base_color": idn.params.base_color.tolist(),
                         "density_scale": idn.params.density_scale},
            "split": {"train": idn.train_idx, "test": idn.test_idx},
            "frames": [{"index": fr.index, "pose": _pose_to_json(fr.pose),
                        "e": fr.e.tolist(), "box": list(fr.box)} for fr in idn.frames],
        }
        (idir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
        for fr in idn.frames:
            if fr.image is not None:
                ppm.write_ppm(idir / f"frame_{fr.index:04d}.ppm", fr.image)


def load_dataset(in_dir) -> Dataset:
    root = Path(in_dir)
    idirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.json").exists())
    if not idirs:
        raise ConfigError(f"no identity directories under {root}")
    identities = []
    scene = None
    top = None
    for idir in idirs:
        meta = json.loads((idir / "meta.json").read_text())
        mm = meta["modes"]
        modes = ModeBank(centers=np.array(mm["centers"]), widths=np.array(mm["widths"]),
                         directions=np.array(mm["directions"]),
                         amplitudes=np.array(mm["amplitudes"]), tints=np.array(mm["tints"]))
        idp = IdentityParams(semi_axes=np.array(meta["identity"]["semi_axes"]),
                             base_color=np.array(meta["identity"]["base_color"]),
                             density_scale=meta["identity"]["density_scale"])
        frames = []
        for fj in meta["frames"]:
            img_path = idir / f"frame_{fj['index']:04d}.ppm"
            frames.append(Frame(index=fj["index"], pose=_pose_from_json(fj["pose"]),
                                e=np.array(fj["e"], dtype=np.float64),
                                image=ppm.read_ppm(img_path) if img_path.exists() else None,
                                box=tuple(fj["box"])))
        identities.append(IdentityData(name=meta["name"], params=idp, frames=frames,
                                       train_idx=list(meta["split"]["train"]),
                                       test_idx=list(meta["split"]["test"])))
        scene_ids = scene.identities if scene else []
        scene = SceneSpec(modes=modes, identities=scene_ids + [idp],
                          background=np.array(meta["background"]), bounds=meta["bounds"])
        top = meta
    return Dataset(scene=scene, identities=identities, resolution=top["resolution"],
                   t_near=top["t_near"], t_far=top["t_far"], seed=top["seed"],
                   gt_samples=top["gt_samples"])


def dataset_checksum(dir_path) -> str:
    """SHA-256 over all file bytes under dir_path, in sorted relative-path order."""
    root = Path(dir_path)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
