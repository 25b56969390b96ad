"""Joint optimization of field, conditioning module, identity and latent codes.

Every step renders a ray batch from one randomly chosen (identity, frame)
pair, hierarchically (coarse pass, importance resample, fine pass), and
applies Adam to the field weights, the conditioning parameters, that video's
identity code, and that frame's latent code. The loss is the summed squared
ray color error of both passes plus unsquared 2-norm regularizers on the two
codes touched this step.

Learnable arrays live in a flat name -> float64 array dict; each step binds
the needed ones as tape leaves. Fine-sample positions are stopped gradients
(resampling reads coarse weights as plain values), the standard estimator.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import conditioning as cond_mod
from . import metrics as metrics_mod
from .autodiff import Tape
from .errors import (ConfigError, DimensionError, DivergenceError, NumericError,
                     UsageError)
from .field import (FieldArch, field_forward_np, forward_encoded, init_field_params,
                    positional_encode)
from .renderer import (hierarchical_resample, philox_key, pixel_rng, render_image,
                       step_rng, stratified_t)
from .synthscene import Dataset, GT_FRAME_STRIDE

CKPT_FORMAT = "minerf-ckpt-v1"


# ---------------------------------------------------------------------------
# optimizer pieces

def lr_schedule(step: int, total: int, lr0: float, lr1: float) -> float:
    """Exponential decay from lr0 at step 0 to lr1 at step == total."""
    if not 0 <= step <= max(total, 1):
        raise UsageError(f"step {step} outside [0, {total}]")
    if total == 0:
        return lr0
    return lr0 * (lr1 / lr0) ** (step / total)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update, in place on (param, m, v). t counts from 1."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ConfigError("adam_step shape mismatch")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _code_penalty(total, code_var, lam: float, squared: bool):
    if code_var is None or lam == 0.0:
        return total
    sq = ad.sum_(ad.square(code_var))
    return total + ad.scale(sq if squared else ad.sqrt(sq), lam)


def loss(pred_colors, gt_colors, l, i, lam_l: float, lam_i: float,
         squared_norms: bool = False):
    """sum_r ||pred - gt||^2 + lam_l ||l||_2 + lam_i ||i||_2, as a Var.

    pred_colors/l/i may be Vars or arrays; code norms are unsquared 2-norms
    as written (squared_norms switches to the squared variant).
    """
    tape = cond_mod._find_tape(pred_colors, l, i)
    pred = ad._coerce(tape, pred_colors)
    gt = np.asarray(gt_colors, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"ray count mismatch: {pred.shape} vs {gt.shape}")
    total = ad.sum_(ad.square(ad.sub(pred, gt)))
    total = _code_penalty(total, None if l is None else ad._coerce(tape, l),
                          lam_l, squared_norms)
    total = _code_penalty(total, None if i is None else ad._coerce(tape, i),
                          lam_i, squared_norms)
    return total


# ---------------------------------------------------------------------------
# training state / checkpoints

@dataclass
class TrainState:
    cfg: dict
    params: dict
    adam_m: dict = dc_field(default_factory=dict)
    adam_v: dict = dc_field(default_factory=dict)
    adam_t: dict = dc_field(default_factory=dict)
    step: int = 0
    identities: list = dc_field(default_factory=list)

    def arch(self) -> FieldArch:
        c, f = self.cfg["conditioning"], self.cfg["field"]
        d_cond = cond_mod.variant_output_dim(c["variant"], c["d"], c["o"])
        d_lat = 0 if cond_mod.latent_inside(c["variant"]) else c["d_latent"]
        return FieldArch(layers=f["layers"], hidden=f["hidden"], Lx=f["Lx"], Lv=f["Lv"],
                         color_layers=f["color_layers"], color_hidden=f["color_hidden"],
                         d_cond=d_cond, d_latent=d_lat)

    def cond_params(self, prefix="cond."):
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def field_weights(self, prefix: str):
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.params.items() if k.startswith(p)}

    def copy(self) -> "TrainState":
        return TrainState(cfg=json.loads(json.dumps(self.cfg)),
                          params={k: v.copy() for k, v in self.params.items()},
                          adam_m={k: v.copy() for k, v in self.adam_m.items()},
                          adam_v={k: v.copy() for k, v in self.adam_v.items()},
                          adam_t=dict(self.adam_t), step=self.step,
                          identities=list(self.identities))


def _code_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(2, zlib.crc32(tag.encode())))))


def init_state(cfg: dict, dataset: Dataset) -> TrainState:
    c = cfg["conditioning"]
    if c["d"] != dataset.scene.modes.d:
        raise ConfigError(
            f"conditioning.d={c['d']} must match the dataset expression dim "
            f"{dataset.scene.modes.d}")
    seed = cfg["seed"]
    state = TrainState(cfg=cfg, params={}, identities=dataset.identity_names())
    prng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(3,))))
    for name, arr in cond_mod.init_variant_params(
            c["variant"], c["d"], c["k"], c["o"], prng,
            d_latent=c["d_latent"], n_levels=c["n_levels"]).items():
        state.params[f"cond.{name}"] = arr
    arch = state.arch()
    for prefix in ("coarse", "fine"):
        for name, arr in init_field_params(arch, prng).items():
            state.params[f"{prefix}.{name}"] = arr
    for idn in dataset.identities:
        state.params[f"identity.{idn.name}"] = (
            0.01 * _code_rng(seed, f"i/{idn.name}").standard_normal(c["d"]))
        for fidx in idn.train_idx:
            state.params[f"latent.{idn.name}.{fidx:04d}"] = (
                0.01 * _code_rng(seed, f"l/{idn.name}/{fidx}").standard_normal(c["d_latent"]))
    for name, arr in state.params.items():
        state.adam_m[name] = np.zeros_like(arr)
        state.adam_v[name] = np.zeros_like(arr)
        state.adam_t[name] = 0
    return state


def save_checkpoint(path, state: TrainState):
    """One JSON header line, then raw little-endian float64 payload in header order."""
    names = sorted(state.params)
    entries = []
    blobs = []
    offset = 0
    for kind, store in (("param", state.params), ("m", state.adam_m), ("v", state.adam_v)):
        for n in names:
            src = store[n]
            b = np.ascontiguousarray(src, dtype="<f8").tobytes()
            entries.append({"kind": kind, "name": n, "shape": list(src.shape),
                            "offset": offset})
            blobs.append(b)
            offset += len(b)
    header = {"format": CKPT_FORMAT, "step": state.step, "config": state.cfg,
              "identities": state.identities, "adam_t": state.adam_t,
              "entries": entries}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    if header.get("format") != CKPT_FORMAT:
        raise ConfigError(f"not a checkpoint file: {path}")
    state = TrainState(cfg=header["config"], params={}, step=header["step"],
                       identities=header["identities"],
                       adam_t={k: int(v) for k, v in header["adam_t"].items()})
    stores = {"param": state.params, "m": state.adam_m, "v": state.adam_v}
    for e in header["entries"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=e["offset"]).reshape(shape).copy()
        stores[e["kind"]][e["name"]] = arr
    return state


# ---------------------------------------------------------------------------
# differentiable rendering of a ray batch

_upper_cache = {}


def _strict_upper(n: int) -> np.ndarray:
    if n not in _upper_cache:
        _upper_cache[n] = np.triu(np.ones((n, n)), k=1)
    return _upper_cache[n]


def composite_rays_tape(sigma, rgb, ts: np.ndarray, t_far: float, bg: np.ndarray):
    """Differentiable compositing: sigma (R*S,) Var, rgb (R*S,3) Var, ts (R,S) fixed.

    Transmittance uses exp(-cumsum(sigma * delta)), identical to the cumprod
    alpha form up to rounding. Returns predicted colors (R,3) Var and the
    (numpy) per-sample weights for importance resampling.
    """
    R, S = ts.shape
    deltas = np.empty_like(ts)
    deltas[:, :-1] = np.diff(ts, axis=1)
    deltas[:, -1] = t_far - ts[:, -1]
    sig = ad.reshape(sigma, (R, S))
    sd = ad.mul(sig, deltas)
    cum = ad.matmul(sd, _strict_upper(S))
    T = ad.exp(ad.neg(cum))
    alpha = ad.sub(np.ones((R, S)), ad.exp(ad.neg(sd)))
    w = ad.mul(T, alpha)
    t_end = ad.exp(ad.neg(ad.sum_(sd, axis=1)))
    chans = []
    for ch in range(3):
        rc = ad.reshape(rgb[:, ch], (R, S))
        pred = ad.sum_(ad.mul(w, rc), axis=1) + ad.mul(t_end, bg[:, ch])
        chans.append(ad.reshape(pred, (R, 1)))
    return ad.concat(chans, axis=1), w.value


def _bind(tape: Tape, params: dict, names) -> dict:
    return {n: ad.leaf(tape, params[n]) for n in names}


def _pixel_dirs(pose, rows, cols):
    d = np.stack([(cols + 0.5 - pose.cx) / pose.focal,
                  -(rows + 0.5 - pose.cy) / pose.focal,
                  -np.ones_like(rows, dtype=np.float64)], axis=1) @ pose.R.T
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _sample_pixels(rng, box, H, W, n_in, n_out):
    """n_in pixels uniform in the box, n_out uniform outside (with replacement)."""
    r0, r1, c0, c1 = box
    rows = rng.integers(r0, r1, size=n_in)
    cols = rng.integers(c0, c1, size=n_in)
    full_box = (r1 - r0) * (c1 - c0) >= H * W
    if full_box:
        out_rows = rng.integers(0, H, size=n_out)
        out_cols = rng.integers(0, W, size=n_out)
    else:
        out_rows = np.empty(0, dtype=np.int64)
        out_cols = np.empty(0, dtype=np.int64)
        while out_rows.size < n_out:
            rr = rng.integers(0, H, size=4 * (n_out - out_rows.size))
            cc = rng.integers(0, W, size=rr.size)
            keep = ~((rr >= r0) & (rr < r1) & (cc >= c0) & (cc < c1))
            out_rows = np.concatenate([out_rows, rr[keep]])[:n_out]
            out_cols = np.concatenate([out_cols, cc[keep]])[:n_out]
    return (np.concatenate([rows, out_rows]).astype(np.int64),
            np.concatenate([cols, out_cols]).astype(np.int64))


def _batch_loss(tape, state: TrainState, ds: Dataset, frame,
                i_var, l_var, field_vars: dict, rngs_pixels, rows, cols,
                cond_params, fixed_ts=None):
    """Build the coarse+fine photoconsistency loss Var for one ray batch.

    fixed_ts=(coarse, merged) reruns the pipeline on frozen sample positions,
    which is the function the gradient actually differentiates (fine-sample
    placement is a stopped gradient) and what finite-difference probes vary.
    """
    cfg = state.cfg
    rc, cc_cfg, tr = cfg["render"], cfg["conditioning"], cfg["train"]
    arch = state.arch()
    variant = cc_cfg["variant"]
    pose = frame.pose
    n_rays = rows.size
    gt = frame.image[rows, cols]
    dirs = _pixel_dirs(pose, rows, cols)
    origin = np.asarray(pose.t, dtype=np.float64)
    t_near, t_far = ds.t_near, ds.t_far
    if fixed_ts is None:
        tc = np.stack([stratified_t(t_near, t_far, rc["n_coarse"], True, g)
                       for g in rngs_pixels])
    else:
        tc = fixed_ts[0]

    cond_var = cond_mod.variant_forward(
        variant, cond_params, frame.e, i_var,
        l=l_var if cond_mod.latent_inside(variant) else None, tape=tape)
    latent_for_field = None if cond_mod.latent_inside(variant) else l_var
    bg = np.broadcast_to(ds.scene.background, (n_rays, 3))
    enc_v_ray = positional_encode(dirs, arch.Lv)  # dirs are already unit length

    def field_pass(prefix, ts):
        R, S = ts.shape
        X = origin[None, None, :] + ts[:, :, None] * dirs[:, None, :]
        enc_x = positional_encode(X.reshape(-1, 3), arch.Lx)
        enc_v = np.repeat(enc_v_ray, S, axis=0)
        w = {k[len(prefix) + 1:]: v for k, v in field_vars.items()
             if k.startswith(prefix + ".")}
        return forward_encoded(arch, w, cond_var, latent_for_field, enc_x, enc_v,
                               tape=True)

    rgb_c, sig_c = field_pass("coarse", tc)
    pred_c, w = composite_rays_tape(sig_c, rgb_c, tc, t_far, bg)
    if fixed_ts is None:
        merged = np.stack([
            hierarchical_resample(tc[r], w[r], rc["n_fine"], rngs_pixels[r],
                                  t_near, t_far)
            for r in range(n_rays)])
    else:
        merged = fixed_ts[1]
    rgb_f, sig_f = field_pass("fine", merged)
    pred_f, _ = composite_rays_tape(sig_f, rgb_f, merged, t_far, bg)
    resid = (ad.sum_(ad.square(ad.sub(pred_c, gt)))
             + ad.sum_(ad.square(ad.sub(pred_f, gt))))
    total = _code_penalty(resid, l_var, tr["lambda_latent"], tr["squared_code_norms"])
    total = _code_penalty(total, i_var, tr["lambda_identity"], tr["squared_code_norms"])
    return total, resid, (tc, merged)


def _step_updates(state: TrainState, dataset: Dataset, step: int, key):
    """One gradient step on a random (identity, frame); returns logged scalars."""
    cfg = state.cfg
    tr = cfg["train"]
    rng = step_rng(key, step)
    pairs = [(k, f) for k, idn in enumerate(dataset.identities) for f in idn.train_idx]
    id_idx, fidx = pairs[rng.integers(len(pairs))]
    idn = dataset.identities[id_idx]
    frame = idn.frames[fidx]
    H, W = frame.pose.height, frame.pose.width

    n_rays = tr["rays_per_step"]
    n_in = int(round(tr["in_box_fraction"] * n_rays))
    rows, cols = _sample_pixels(rng, frame.box, H, W, n_in, n_rays - n_in)
    gfid = id_idx * GT_FRAME_STRIDE + fidx
    # step + 1: the step-0 pixel stream is the ground-truth render stream
    rngs_pixels = [pixel_rng(key, step + 1, gfid, int(p)) for p in rows * W + cols]

    tape = Tape()
    cond_names = [k for k in state.params if k.startswith("cond.")]
    field_names = [k for k in state.params if k.startswith(("coarse.", "fine."))]
    id_name = f"identity.{idn.name}"
    lat_name = f"latent.{idn.name}.{fidx:04d}"
    bound = _bind(tape, state.params, cond_names + field_names + [id_name, lat_name])
    cond_params = {k[len("cond."):]: bound[k] for k in cond_names}
    field_vars = {k: bound[k] for k in field_names}

    total, resid, _ = _batch_loss(tape, state, dataset, frame, bound[id_name],
                                  bound[lat_name], field_vars, rngs_pixels,
                                  rows, cols, cond_params)
    loss_c = float(resid.value)
    if not np.isfinite(float(total.value)):
        raise NumericError(
            f"non-finite loss at step {step}: loss_c={loss_c}, identity={idn.name}, "
            f"frame={fidx}")

    wrt_names = list(bound)
    grads = ad.grad(tape, total, [bound[n] for n in wrt_names])
    lr = lr_schedule(step, tr["steps"], tr["lr0"], tr["lr1"])
    for name, g in zip(wrt_names, grads):
        state.adam_t[name] += 1
        adam_step(state.params[name], g, state.adam_m[name], state.adam_v[name],
                  state.adam_t[name], lr, tr["beta1"], tr["beta2"], tr["eps"])
    l_norm = float(np.linalg.norm(state.params[lat_name]))
    i_norm = float(np.linalg.norm(state.params[id_name]))
    return loss_c, l_norm, i_norm, lr


def train(dataset: Dataset, cfg: dict, state: TrainState | None = None,
          log_fn=None) -> tuple[TrainState, list]:
    """Run cfg['train']['steps'] optimization steps; returns (state, metric rows).

    Rows carry step, loss_c, loss_l, loss_i, lr, test_psnr (blank between
    evals). Raises DivergenceError when loss_c exceeds divergence_factor times
    its step-100 value.
    """
    if not dataset.identities or not any(idn.train_idx for idn in dataset.identities):
        raise ConfigError("empty dataset")
    if state is None:
        state = init_state(cfg, dataset)
    tr = cfg["train"]
    key = philox_key(cfg["seed"])
    rows = []
    # Divergence guard: the per-frame loss is noisy (frames differ in
    # difficulty), so both the step-100 baseline and the current level are
    # medians over a small window rather than single samples.
    guard = None
    baseline_window: list = []
    recent: list = []
    for _ in range(tr["steps"]):
        loss_c, l_norm, i_norm, lr = _step_updates(state, dataset, state.step, key)
        recent.append(loss_c)
        del recent[:-5]
        if 90 <= state.step < 110:
            baseline_window.append(loss_c)
            if state.step == 109:
                guard = float(np.median(baseline_window))
        if guard is not None and float(np.median(recent)) > tr["divergence_factor"] * guard:
            raise DivergenceError(
                f"median loss_c {np.median(recent):.4g} exceeded "
                f"{tr['divergence_factor']}x the step-100 level {guard:.4g} "
                f"at step {state.step}",
                diagnostics={"step": state.step, "loss_c": loss_c,
                             "baseline": guard, "lr": lr})
        state.step += 1
        test_psnr = ""
        if tr["eval_every"] and (state.step % tr["eval_every"] == 0
                                 or state.step == tr["steps"]):
            test_psnr = evaluate_test_psnr(state, dataset, max_frames=tr["eval_frames"])
        row = {"step": state.step, "loss_c": loss_c, "loss_l": l_norm,
               "loss_i": i_norm, "lr": lr, "test_psnr": test_psnr}
        rows.append(row)
        if log_fn:
            log_fn(row)
    return state, rows


# ---------------------------------------------------------------------------
# model rendering / evaluation / personalization

def render_model_frame(state: TrainState, dataset: Dataset, identity_name: str,
                       e: np.ndarray, pose, *, latent: np.ndarray | None = None,
                       frame_id: int = 0, return_depth: bool = False) -> np.ndarray:
    """Render one frame from the trained model (fine pass over coarse proposals)."""
    cfg = state.cfg
    cc, rc = cfg["conditioning"], cfg["render"]
    arch = state.arch()
    variant = cc["variant"]
    code = state.params.get(f"identity.{identity_name}")
    if code is None:
        raise UsageError(f"identity {identity_name!r} not in checkpoint")
    lat = np.zeros(cc["d_latent"]) if latent is None else latent
    cond_vec = cond_mod.variant_value(
        variant, state.cond_params(), e, code,
        l=lat if cond_mod.latent_inside(variant) else None)
    lat_field = None if cond_mod.latent_inside(variant) else lat
    coarse_w = state.field_weights("coarse")
    fine_w = state.field_weights("fine")

    def coarse_fn(X, V):
        return field_forward_np(arch, coarse_w, cond_vec, lat_field, X, V)

    def fine_fn(X, V):
        return field_forward_np(arch, fine_w, cond_vec, lat_field, X, V)

    return render_image(coarse_fn, pose, t_near=dataset.t_near, t_far=dataset.t_far,
                        n_coarse=rc["n_coarse"], n_fine=rc["n_fine"],
                        fine_field_fn=fine_fn, background=dataset.scene.background,
                        seed=cfg["seed"], frame_index=frame_id, jitter=True,
                        return_depth=return_depth)


def evaluate_test_psnr(state: TrainState, dataset: Dataset,
                       max_frames: int | None = None) -> float:
    """Mean held-out PSNR over test frames (zero latent codes)."""
    vals = []
    for k, idn in enumerate(dataset.identities):
        picks = idn.test_idx if max_frames is None else idn.test_idx[:max_frames]
        for fidx in picks:
            fr = idn.frames[fidx]
            img = render_model_frame(state, dataset, idn.name, fr.e, fr.pose,
                                     frame_id=k * GT_FRAME_STRIDE + fidx)
            vals.append(metrics_mod.psnr(img, fr.image))
    return float(np.mean(vals))


def personalize(state: TrainState, clip: Dataset, identity_name: str, steps: int,
                lr: float = 1e-5) -> TrainState:
    """Fine-tune for one identity with the conditioning module frozen.

    Seen identities reuse their code; an unseen identity gets a fresh code.
    Field weights, the target identity code, and fresh per-frame latents for
    the clip update with fresh Adam state; every other identity's code and
    every other frame's latent are untouched, and cond.* stays bit-identical.
    """
    clip_idn = clip.by_name(identity_name)
    if not clip_idn.train_idx:
        raise UsageError("personalization clip has no training frames")
    out = state.copy()
    cfg = out.cfg
    cc, tr = cfg["conditioning"], cfg["train"]
    seed = cfg["seed"]
    id_key = f"identity.{identity_name}"
    if id_key not in out.params:
        out.params[id_key] = 0.01 * _code_rng(seed, f"p/{identity_name}").standard_normal(cc["d"])
        out.identities.append(identity_name)
    lat_keys = {}
    for fidx in clip_idn.train_idx:
        k = f"plat.{identity_name}.{fidx:04d}"
        if k not in out.params:
            out.params[k] = 0.01 * _code_rng(
                seed, f"pl/{identity_name}/{fidx}").standard_normal(cc["d_latent"])
        lat_keys[fidx] = k
    trainable = ([k for k in out.params if k.startswith(("coarse.", "fine."))]
                 + [id_key] + list(lat_keys.values()))
    opt_m = {k: np.zeros_like(out.params[k]) for k in trainable}
    opt_v = {k: np.zeros_like(out.params[k]) for k in trainable}
    opt_t = {k: 0 for k in trainable}

    key = philox_key(seed ^ 0x5045)
    cond_frozen = out.cond_params()
    clip_id_idx = clip.identity_names().index(identity_name)
    field_names = [k for k in out.params if k.startswith(("coarse.", "fine."))]
    for step in range(steps):
        rng = step_rng(key, step)
        fidx = clip_idn.train_idx[rng.integers(len(clip_idn.train_idx))]
        frame = clip_idn.frames[fidx]
        H, W = frame.pose.height, frame.pose.width
        n_rays = tr["rays_per_step"]
        n_in = int(round(tr["in_box_fraction"] * n_rays))
        rows, cols = _sample_pixels(rng, frame.box, H, W, n_in, n_rays - n_in)
        gfid = clip_id_idx * GT_FRAME_STRIDE + fidx
        rngs_pixels = [pixel_rng(key, step + 1, gfid, int(p)) for p in rows * W + cols]

        tape = Tape()
        lat_key = lat_keys[fidx]
        bound = _bind(tape, out.params, field_names + [id_key, lat_key])
        field_vars = {k: bound[k] for k in field_names}
        total, _, _ = _batch_loss(tape, out, clip, frame, bound[id_key],
                                  bound[lat_key], field_vars, rngs_pixels,
                                  rows, cols, cond_frozen)
        if not np.isfinite(float(total.value)):
            raise NumericError(f"non-finite personalization loss at step {step}")
        names = list(bound)
        grads = ad.grad(tape, total, [bound[n] for n in names])
        for name, g in zip(names, grads):
            opt_t[name] += 1
            adam_step(out.params[name], g, opt_m[name], opt_v[name], opt_t[name], lr,
                      tr["beta1"], tr["beta2"], tr["eps"])
    # persist this episode's optimizer state so the checkpoint stays complete
    for k in trainable:
        out.adam_m[k] = opt_m[k]
        out.adam_v[k] = opt_v[k]
        out.adam_t[k] = opt_t[k]
    return out
