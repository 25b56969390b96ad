import numpy as np
import pytest

from minerf import config as cfg_mod
from minerf import synthscene as sc
from minerf import trainer as tr
from minerf.errors import DivergenceError, NumericError, UsageError

TINY_SETS = [
    "scene.n_frames=8", "scene.resolution=12", "scene.gt_samples=48",
    "render.n_coarse=6", "render.n_fine=6",
    "field.hidden=24", "field.Lx=3", "field.Lv=1", "field.color_hidden=12",
    "field.layers=3", "field.color_layers=1",
    "train.rays_per_step=24", "train.steps=6", "train.eval_every=0",
]


def tiny_config(*extra):
    return cfg_mod.load_config(sets=TINY_SETS + list(extra))


@pytest.fixture(scope="module")
def tiny_ds():
    return sc.dataset_from_config(tiny_config())


def test_loss_examples():
    assert float(tr.loss(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros(2),
                         np.zeros(2), 0.01, 1e-4).value) == 0.0
    pred = np.array([[0.1, 0.0, 0.0]])
    assert float(tr.loss(pred, np.zeros((1, 3)), None, None, 0.0, 0.0).value) \
        == pytest.approx(0.01)
    l = np.array([3.0, 4.0])
    got = tr.loss(np.zeros((1, 3)), np.zeros((1, 3)), l, np.zeros(2), 0.01, 0.0)
    assert float(got.value) == pytest.approx(0.05)


def test_loss_squared_variant():
    l = np.array([3.0, 4.0])
    got = tr.loss(np.zeros((1, 3)), np.zeros((1, 3)), l, None, 0.01, 0.0,
                  squared_norms=True)
    assert float(got.value) == pytest.approx(0.25)


def test_adam_zero_grad_is_noop():
    p = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    tr.adam_step(p, np.zeros(2), m, v, t=1, lr=0.1)
    assert np.array_equal(p, [1.0, -2.0])


def test_adam_first_step_closed_form():
    for g0 in (0.5, -3.0, 1e-6):
        p = np.zeros(1)
        m, v = np.zeros(1), np.zeros(1)
        tr.adam_step(p, np.array([g0]), m, v, t=1, lr=0.01)
        # bias-corrected first step: lr * g / (|g| + eps)
        want = -0.01 * g0 / (abs(g0) + 1e-8)
        assert p[0] == pytest.approx(want, rel=1e-12)
        if abs(g0) > 1e-3:
            assert p[0] == pytest.approx(-0.01 * np.sign(g0), rel=1e-4)


def test_adam_converges_on_quadratic():
    p = np.zeros(1)
    m, v = np.zeros(1), np.zeros(1)
    for t in range(1, 101):
        g = 2.0 * (p - 2.0)
        tr.adam_step(p, g, m, v, t=t, lr=0.1)
    assert abs(p[0] - 2.0) < 0.1


def test_lr_schedule():
    assert tr.lr_schedule(0, 100, 5e-4, 5e-5) == 5e-4
    assert tr.lr_schedule(100, 100, 5e-4, 5e-5) == pytest.approx(5e-5)
    mid = tr.lr_schedule(50, 100, 5e-4, 5e-5)
    assert mid == pytest.approx(np.sqrt(5e-4 * 5e-5), rel=1e-12)
    assert mid == pytest.approx(1.5811e-4, rel=1e-3)
    with pytest.raises(UsageError):
        tr.lr_schedule(101, 100, 5e-4, 5e-5)


def test_checkpoint_roundtrip_bitexact(tiny_ds, tmp_path):
    cfg = tiny_config()
    state = tr.init_state(cfg, tiny_ds)
    state.step = 17
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    tr.save_checkpoint(p1, state)
    back = tr.load_checkpoint(p1)
    assert back.step == 17
    assert back.cfg == state.cfg
    assert sorted(back.params) == sorted(state.params)
    for k in state.params:
        assert np.array_equal(back.params[k], state.params[k])
        assert np.array_equal(back.adam_m[k], state.adam_m[k])
    tr.save_checkpoint(p2, back)
    assert p1.read_bytes() == p2.read_bytes()


def test_zero_steps_returns_initialization(tiny_ds):
    cfg = tiny_config("train.steps=0")
    init = tr.init_state(cfg, tiny_ds)
    state, rows = tr.train(tiny_ds, cfg)
    assert rows == []
    assert sorted(state.params) == sorted(init.params)
    for k in state.params:
        assert np.array_equal(state.params[k], init.params[k])


def test_training_deterministic_bitexact(tiny_ds, tmp_path):
    cfg = tiny_config("train.steps=8")
    blobs = []
    for tag in ("a", "b"):
        state, _ = tr.train(tiny_ds, cfg)
        path = tmp_path / f"{tag}.ckpt"
        tr.save_checkpoint(path, state)
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_update_locality(tiny_ds):
    cfg = tiny_config("train.steps=1")
    init = tr.init_state(cfg, tiny_ds)
    before = {k: v.copy() for k, v in init.params.items()}
    state, _ = tr.train(tiny_ds, cfg, state=init)
    # exactly one identity code and one latent moved
    changed_codes = [k for k in before if k.startswith("identity.")
                     and not np.array_equal(before[k], state.params[k])]
    changed_lat = [k for k in before if k.startswith("latent.")
                   and not np.array_equal(before[k], state.params[k])]
    assert len(changed_codes) == 1
    assert len(changed_lat) == 1


def test_loss_decreases(tiny_ds):
    cfg = tiny_config("train.steps=60", "train.rays_per_step=48")
    state, rows = tr.train(tiny_ds, cfg)
    first = np.median([r["loss_c"] for r in rows[:15]])
    last = np.median([r["loss_c"] for r in rows[-15:]])
    assert last < first


def test_nonfinite_loss_aborts(tiny_ds):
    cfg = tiny_config("train.steps=1")
    state = tr.init_state(cfg, tiny_ds)
    state.params["coarse.W0"][0, 0] = np.nan
    with pytest.raises(NumericError):
        tr.train(tiny_ds, cfg, state=state)


def test_divergence_guard_fires(tiny_ds):
    cfg = tiny_config("train.steps=130", "train.divergence_factor=1e-12",
                      "train.rays_per_step=8")
    with pytest.raises(DivergenceError) as exc:
        tr.train(tiny_ds, cfg)
    assert exc.value.diagnostics["step"] >= 109


def test_personalize_freeze_and_locality(tiny_ds, tmp_path):
    cfg = tiny_config("train.steps=4")
    state, _ = tr.train(tiny_ds, cfg)
    clip_cfg = tiny_config("scene.n_identities=3")
    clip_full = sc.dataset_from_config(clip_cfg)
    clip = sc.Dataset(scene=clip_full.scene, identities=clip_full.identities[2:],
                      resolution=clip_full.resolution, t_near=clip_full.t_near,
                      t_far=clip_full.t_far, seed=clip_full.seed,
                      gt_samples=clip_full.gt_samples)

    noop = tr.personalize(state, clip, "id02", steps=0)
    for k in state.params:
        if not k.startswith("plat."):
            assert np.array_equal(noop.params[k], state.params[k]), k

    out = tr.personalize(state, clip, "id02", steps=3, lr=1e-3)
    for k in state.params:
        if k.startswith("cond."):
            assert out.params[k].tobytes() == state.params[k].tobytes()
    for k in state.params:
        if k.startswith(("identity.", "latent.")):
            assert np.array_equal(out.params[k], state.params[k]), k
    assert "identity.id02" in out.params
    assert not np.array_equal(out.params["coarse.W0"], state.params["coarse.W0"])


def test_personalize_needs_frames(tiny_ds):
    cfg = tiny_config("train.steps=0")
    state, _ = tr.train(tiny_ds, cfg)
    with pytest.raises(UsageError):
        tr.personalize(state, tiny_ds, "nobody", steps=1)
