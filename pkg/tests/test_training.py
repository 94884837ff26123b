import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etnet import numerics as nx
from etnet.data import gen_wave, wave_copies
from etnet.model import TrainConfig, build_model, dumps, recon_mse
from etnet.training import (
    AdamState,
    TrainingDiverged,
    adam_step,
    branch_objective,
    loss_d,
    loss_w,
    train,
    train_branch,
    write_log,
)
from gradcheck import _spd_gmm, run_trial
from reference import d_forward_steps, energy_naive, w_forward_steps


def _softmax(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def naive_energies(member, gmm, z):
    gamma = _softmax(np.tanh(z @ member.W1.value.T + member.b1.value) @ member.W2.value.T + member.b2.value)
    phi = gamma.mean(axis=0)
    return np.array([energy_naive(phi, gmm.mu, gmm.sigma, row) for row in z])


def _setup(seed, n_branches=2, length=9, n=3):
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(hidden_dim=3, n_branches=n_branches, n_layers=2, gmm_k=2, seed=seed)
    windows = rng.uniform(size=(max(n, 4), length))
    model = build_model(cfg, windows)
    for b in model.branches():
        b.gmm = _spd_gmm(rng, 2, b.gmm.dim)
    return model, model.normalize(windows[:n])


def _features(x, recon):
    rel = np.linalg.norm(x - recon, axis=-1) / np.linalg.norm(x, axis=-1)
    cos = (x * recon).sum(-1) / (np.linalg.norm(x, axis=-1) * np.linalg.norm(recon, axis=-1))
    return rel, cos


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.floats(0.0, 2.0))
def test_loss_w_matches_double_loop(seed, n, lam):
    model, x = _setup(seed, n=n)
    b = model.w
    z_c, recons = w_forward_steps(b.net, x)
    recons = [r.value for r in recons]
    recon = sum(sum(((x[i] - r[i]) ** 2).sum() for r in recons) for i in range(n)) / (n * len(recons))
    rels = np.stack([_features(x, r)[0] for r in recons], axis=-1)
    coss = np.stack([_features(x, r)[1] for r in recons], axis=-1)
    z = np.column_stack([z_c.value, rels.min(axis=-1), coss.max(axis=-1)])
    want = recon + lam * naive_energies(b.member, b.gmm, z).mean()
    got = loss_w(b.net, b.member, b.gmm, x, lam).value
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.floats(0.0, 2.0))
def test_loss_d_matches_naive(seed, n, lam):
    model, x = _setup(seed, n=n)
    b = model.d
    z_c, recon = d_forward_steps(b.net, x)
    recon = recon.value
    rel, cos = _features(x, recon)
    z = np.column_stack([z_c.value, rel, cos])
    want = ((x - recon) ** 2).sum() / n + lam * naive_energies(b.member, b.gmm, z).mean()
    assert loss_d(b.net, b.member, b.gmm, x, lam).value == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_lambda_zero_is_pure_reconstruction():
    model, x = _setup(1)
    b = model.d
    recon = d_forward_steps(b.net, x)[1].value
    assert loss_d(b.net, b.member, b.gmm, x, 0.0).value == pytest.approx(((x - recon) ** 2).sum() / len(x), rel=1e-12)


def test_perfect_reconstruction_leaves_energy_only():
    model, x = _setup(2)
    target = np.zeros_like(x)  # zero output weights reproduce an all-zero window exactly
    for branch, fn in ((model.w, loss_w), (model.d, loss_d)):
        for p in branch.net.params():
            if p.name.endswith(("W_out", "b_out")):
                p.value[...] = 0.0
        z = branch.forward(target).z.value
        want = 0.7 * naive_energies(branch.member, branch.gmm, z).mean()
        assert fn(branch.net, branch.member, branch.gmm, target, 0.7).value == pytest.approx(want, rel=1e-9)


def test_single_branch_w_has_d_form():
    model, x = _setup(3, n_branches=1)
    b = model.w
    z_c, recons = w_forward_steps(b.net, x)
    r = recons[0].value
    rel, cos = _features(x, r)
    z = np.column_stack([z_c.value, rel, cos])
    want = ((x - r) ** 2).sum() / len(x) + 0.3 * naive_energies(b.member, b.gmm, z).mean()
    assert loss_w(b.net, b.member, b.gmm, x, 0.3).value == pytest.approx(want, rel=1e-9)


def test_objective_upper_bounds_energy_and_matches_recon():
    model, x = _setup(4)
    for b in model.branches():
        terms = branch_objective(b, x, 1.0)
        out = b.forward(x)
        sq = np.mean([((x - r.value) ** 2).sum() / len(x) for r in out.recons])
        assert terms.recon == pytest.approx(sq, rel=1e-12)
        assert terms.objective.value >= terms.recon + terms.energy - 1e-9


def test_empty_batch_rejected():
    model, _ = _setup(0)
    with pytest.raises(ValueError):
        loss_d(model.d.net, model.d.member, model.d.gmm, np.empty((0, 9)), 0.1)


@pytest.mark.parametrize("kind", ["loss_w", "loss_d", "objective"])
@pytest.mark.parametrize("seed", [0, 1])
def test_loss_gradients(kind, seed):
    assert run_trial(kind, seed) < 1e-4


def _adam_param(value):
    p = nx.Param(np.array(value, dtype=float))
    return p, AdamState([p])


def test_adam_zero_gradient_no_move():
    p, state = _adam_param([1.0, -2.0])
    adam_step(state, {p: np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


@given(st.lists(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3), min_size=1, max_size=5), st.floats(1e-4, 1e-1))
def test_adam_first_step_is_lr_sign(g, lr):
    p, state = _adam_param(np.zeros(len(g)))
    adam_step(state, {p: np.array(g)}, lr)
    np.testing.assert_allclose(p.value, -lr * np.sign(g), rtol=1e-4)


def test_adam_constant_gradient_monotone():
    p, state = _adam_param([0.0])
    values = []
    for _ in range(100):
        adam_step(state, {p: np.array([0.5])}, 0.01)
        values.append(p.value[0])
    assert np.all(np.diff(values) < 0)


def test_adam_rejects_non_finite():
    p, state = _adam_param([0.0])
    with pytest.raises(TrainingDiverged):
        adam_step(state, {p: np.array([np.nan])}, 0.01)


def _small_waves(copies=10, length=24, seed=0):
    return wave_copies(copies, length, 8, 0.05, np.random.default_rng(seed)).windows


def test_epochs_zero_keeps_initialization():
    windows = _small_waves()
    cfg = TrainConfig(epochs=0, hidden_dim=3, seed=5)
    trained, reports = train(build_model(cfg, windows), windows)
    assert reports == []
    assert dumps(trained) == dumps(build_model(cfg, windows))


def test_training_is_seed_deterministic():
    windows = _small_waves()
    cfg = TrainConfig(epochs=2, hidden_dim=3, batch_size=8, seed=9)
    a, ra = train(build_model(cfg, windows), windows)
    b, rb = train(build_model(cfg, windows), windows)
    assert dumps(a) == dumps(b)
    assert ra == rb


def test_report_total_is_recon_plus_lambda_energy(tmp_path):
    windows = _small_waves()
    cfg = TrainConfig(epochs=2, hidden_dim=3, batch_size=8, lam=0.3)
    _, reports = train(build_model(cfg, windows), windows)
    assert [(r.epoch, r.branch) for r in reports] == [(1, "W"), (1, "D"), (2, "W"), (2, "D")]
    for r in reports:
        assert abs(r.total - (r.recon_loss + 0.3 * r.energy_loss)) < 1e-9
    path = tmp_path / "log.csv"
    write_log(reports, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,branch,reconLoss,energyLoss,total" and len(lines) == 5


def test_divergence_is_reported():
    windows = _small_waves()
    cfg = TrainConfig(epochs=1, hidden_dim=3, batch_size=8)
    model = build_model(cfg, windows)
    bad = windows.copy()
    bad[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train_branch(model.d, model.normalize(bad), cfg, np.random.default_rng(0))


def test_energy_reported_uses_current_mixture():
    windows = _small_waves()
    cfg = TrainConfig(epochs=1, hidden_dim=3, batch_size=64, em_iters_per_epoch=0)
    model = build_model(cfg, windows)
    xn = model.normalize(windows)
    z, gamma = model.d.latents(xn)
    gmm = model.d.gmm
    phi = gamma.mean(axis=0)
    want = np.mean([energy_naive(phi, gmm.mu, gmm.sigma, row) for row in z])
    terms = branch_objective(model.d, xn, cfg.lam)
    assert terms.energy == pytest.approx(want, rel=1e-9)


def test_constant_series_reconstructs():
    windows = np.full((32, 12), 0.5) + np.linspace(0, 1, 32)[:, None]
    cfg = TrainConfig(epochs=200, hidden_dim=4, batch_size=8, learning_rate=1e-2, lam=0.0, gmm_k=1, seed=1)
    model, _ = train(build_model(cfg, windows), windows)
    mse = recon_mse(model, windows)
    assert mse["W"] < 1e-3 and mse["D"] < 1e-3


def test_three_wave_loss_decreases():
    rng = np.random.default_rng(0)
    windows = wave_copies(20, 120, 40, 0.1, rng).windows
    cfg = TrainConfig(epochs=50, hidden_dim=8, batch_size=32, learning_rate=1e-2, lam=1e-4)
    _, reports = train(build_model(cfg, windows), windows)
    for kind in "WD":
        mine = [r.total for r in reports if r.branch == kind]
        assert mine[-1] < mine[0]


def test_sine_copies_reconstruct_below_one_percent():
    rng = np.random.default_rng(0)
    windows = np.array([gen_wave("sine", 120, 40, rng.uniform(0, 2 * np.pi), 0.1, rng).values for _ in range(500)])
    cfg = TrainConfig(epochs=200, hidden_dim=8, batch_size=32, learning_rate=1e-2, lam=1e-4)
    model, _ = train(build_model(cfg, windows), windows)
    mse = recon_mse(model, windows)
    assert mse["W"] < 1e-2 and mse["D"] < 1e-2
