import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnoc2po import trainer
from nnoc2po.channel import ChannelModelConfig, generate_dataset, make_sample
from nnoc2po.linalg import lift_vector
from nnoc2po.precoders import PrecoderSchedule, beta_hat, c2po, quantize_1bit, xi_for
from nnoc2po.trainer import (AdamState, RealBatch, TrainingConfig, TrainingDivergence, adam_step,
                             backward, cost, forward, gradient_check, objective_and_gradient, train)

from conftest import crandn


@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(ChannelModelConfig(U=4, B=32, seed=3), 40)


def test_forward_matches_c2po_trajectory(small_ds):
    sched = PrecoderSchedule(4, [0.004, 0.01, 0.02, 0.006], [1.3, 1.1, 1.25, 1.2], xi_for(1, 32))
    for smp in small_ds.samples[:5]:
        res = c2po(smp.H, smp.s, sched, capture_trajectory=True)
        s_hat, tape = forward(smp, sched)
        for t in range(4):
            x_prev = lift_vector(tape.x_prev[t])[0]
            assert np.max(np.abs(x_prev - res.trajectory[t])) <= 1e-12
        assert np.max(np.abs(lift_vector(tape.x_final)[0] - res.trajectory[-1])) <= 1e-12
        np.testing.assert_allclose(lift_vector(tape.xq)[0], res.xq, atol=1e-15)
        np.testing.assert_allclose(s_hat, res.beta * (smp.H @ res.xq), rtol=1e-12)
        np.testing.assert_allclose(s_hat, beta_hat(smp.s, smp.H, quantize_1bit(res.trajectory[-1], sched.xi))
                                   * (smp.H @ res.xq), rtol=1e-12)


def test_forward_scalar_case_reconstructs_symbol():
    sched = PrecoderSchedule.constant(1, 1)
    s_hat, tape = forward(make_sample([[1]], [1]), sched)
    assert s_hat == pytest.approx([1])
    assert cost([[1]], [s_hat]) == pytest.approx(0, abs=1e-30)
    assert tape.t_max == 1 and tape.clip_mask[0].shape == (1, 2)


def test_forward_batch_equals_per_sample(small_ds):
    sched = PrecoderSchedule.constant(3, 32)
    s_all, _ = forward(small_ds, sched)
    for k in (0, 17, 39):
        s_one, _ = forward(small_ds.samples[k], sched)
        np.testing.assert_allclose(s_all[k], s_one, rtol=1e-13)


def test_cost_examples():
    s = np.array([[1, 1j, 0.5]])
    assert cost(s, s) == 0
    assert cost([[1, 1j, 0, 0]], [[0, 0, 0, 0]]) == pytest.approx(2)
    a = np.array([[1, 1j], [2, 0]])
    b = np.array([[1 + 1j, 1j + 1], [0, 0]])  # errors 2 and 4
    assert cost(a, b) == pytest.approx(3)


def test_backward_tau_zero_when_gram_vanishes():
    # U = 1: A = 0, so tau multiplies a zero vector
    smp = make_sample([[0.2 + 0.1j]], [1])
    sched = PrecoderSchedule.constant(1, 1)
    _, tape = forward(smp, sched)
    assert tape.clip_mask[0].all()
    g = backward(tape, sched)
    assert g["tau"][0] == 0


def test_backward_fully_clipped_iteration_has_zero_gradient(rng):
    H, s = 100 * crandn(rng, 2, 4), np.array([1 + 1j, -1 + 1j]) / np.sqrt(2)
    sched = PrecoderSchedule(2, [1e-6, 0.05], [1.0, 0.5], xi_for(1, 4))
    _, tape = forward(make_sample(H, s), sched)
    assert not tape.clip_mask[0].any()
    g = backward(tape, sched)
    assert g["tau"][0] == 0 and g["rho"][0] == 0


def test_backward_shape_checks(small_ds):
    sched = PrecoderSchedule.constant(2, 32)
    _, tape = forward(small_ds.samples[:3], sched)
    with pytest.raises(ValueError):
        backward(tape, sched, np.zeros((3, 5)))
    with pytest.raises(ValueError):
        backward(tape, PrecoderSchedule.constant(3, 32))


def test_gradient_check_passes():
    results = gradient_check(instances=50)
    assert len(results) == 50 * 6
    bad = [r for r in results if not r.passed]
    assert not bad, bad[:3]


def test_gradient_check_detects_corrupted_rule():
    def broken(tape, sched, ds_bar=None):
        g = backward(tape, sched, ds_bar)
        g["rho"] = 1.01 * g["rho"]
        return g

    results = gradient_check(instances=5, backward_fn=broken)
    assert any(not r.passed for r in results)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_tied_gradient_is_sum_of_untied(seed):
    ds = generate_dataset(ChannelModelConfig(U=3, B=16, seed=seed), 6)
    batch = RealBatch.from_samples(ds)
    rng = np.random.default_rng(seed)
    tau, rho = rng.uniform(0.002, 0.03), rng.uniform(0.8, 1.5)
    T = 4
    c_t, g_t = objective_and_gradient(batch, np.array([tau, rho]), TrainingConfig(t_max=T, tied=True))
    c_u, g_u = objective_and_gradient(batch, np.r_[np.full(T, tau), np.full(T, rho)], TrainingConfig(t_max=T))
    assert c_t == c_u
    assert abs(g_t[0] - g_u[:T].sum()) <= 1e-12 * max(1, abs(g_t[0]))
    assert abs(g_t[1] - g_u[T:].sum()) <= 1e-12 * max(1, abs(g_t[1]))


# --- Adam ---------------------------------------------------------------------------


def test_adam_first_step():
    cfg = TrainingConfig(t_max=1)
    p, st_ = adam_step(np.array([0.5]), np.array([1.0]), AdamState.zeros(1), cfg)
    assert 0.5 - p[0] == pytest.approx(1e-4 / (1 + 1e-8), rel=1e-9)
    assert st_.step == 1


def test_adam_zero_gradient_is_stationary():
    cfg = TrainingConfig(t_max=1)
    p, state = np.array([0.1, 2.0]), AdamState.zeros(2)
    for _ in range(10):
        p_new, state = adam_step(p, np.zeros(2), state, cfg)
        np.testing.assert_array_equal(p_new, p)


@given(st.lists(st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6), min_size=1, max_size=8))
def test_adam_step_opposes_gradient(g):
    g = np.array(g)
    p, _ = adam_step(np.zeros_like(g), g, AdamState.zeros(g.size), TrainingConfig(t_max=1))
    assert np.all(np.sign(p) == -np.sign(g))


def test_adam_matches_reference_recursion():
    cfg = TrainingConfig(t_max=1, learning_rate=0.01)
    rng = np.random.default_rng(0)
    p, state = np.array([1.0, -2.0]), AdamState.zeros(2)
    m = v = np.zeros(2)
    ref = p.copy()
    for t in range(1, 20):
        g = rng.standard_normal(2)
        p, state = adam_step(p, g, state, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p, ref, rtol=1e-14)


# --- training -----------------------------------------------------------------------


def test_training_config_defaults():
    cfg = TrainingConfig(t_max=4)
    assert cfg.epochs == 400
    assert cfg.learning_rate == 1e-4
    assert (cfg.init_tau, cfg.init_rho) == (2**-8, 1.25)
    with pytest.raises(ValueError):
        TrainingConfig(t_max=2, adam_beta1=1.0)


def test_zero_epochs_returns_initialization(small_ds):
    rep = train(small_ds, TrainingConfig(t_max=3, epochs=0))
    assert rep.schedule.tau == [2**-8] * 3
    assert rep.schedule.rho == [1.25] * 3
    assert rep.costs == []


@pytest.mark.parametrize("epochs", [1, 7, 25])
def test_tied_training_keeps_parameters_equal(small_ds, epochs):
    rep = train(small_ds, TrainingConfig(t_max=4, epochs=epochs, tied=True))
    assert len(set(rep.schedule.tau)) == 1 and len(set(rep.schedule.rho)) == 1


def test_training_descends(small_ds):
    rep = train(small_ds, TrainingConfig(t_max=3, epochs=300))
    assert len(rep.costs) == 300
    assert rep.final_cost < rep.initial_cost


def test_training_is_deterministic(small_ds):
    a = train(small_ds, TrainingConfig(t_max=2, epochs=20))
    b = train(small_ds, TrainingConfig(t_max=2, epochs=20))
    assert a.costs == b.costs
    assert a.schedule.to_json() == b.schedule.to_json()


def test_divergence_reports_epoch(small_ds):
    with pytest.raises(TrainingDivergence) as info:
        train(small_ds, TrainingConfig(t_max=2, epochs=50, learning_rate=5.0))
    assert 0 <= info.value.epoch < 50


def test_loss_csv(small_ds, tmp_path):
    rep = train(small_ds, TrainingConfig(t_max=1, epochs=3))
    rep.to_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,cost"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == rep.costs[0]
