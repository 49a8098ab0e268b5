import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnattack.attack import (
    FAILED_BUDGET,
    FAILED_MAX_ITER,
    SUCCESS,
    AttackConfig,
    cw_regularize,
    g2s_convert,
    perturbation_metric,
    rsf_flip,
    run_attack,
    temporal_aggregate,
    verify_outcome,
)
from snnattack.errors import ConfigurationError, UsageError
from snnattack.numerics import Rng, bernoulli_mask
from snnattack.snn import FC, Layer, NetworkModel, build_network, forward, predict


# ---- G2S and RSF tables -------------------------------------------------

@pytest.mark.parametrize("x,g2,expected_g,expected_x", [
    (0, 0, 0, 0),
    (1, 0, 0, 1),
    (0, 1, 1, 1),
    (1, 1, 0, 1),
    (0, -1, 0, 0),
    (1, -1, -1, 0),
])
def test_overflow_transform_rows(x, g2, expected_g, expected_x):
    # unit-magnitude gradients normalize to probability 1, so the mask keeps them
    grad = np.array([float(g2), 1.0])
    cur = np.array([float(x), 0.0])
    g = g2s_convert(grad, cur, Rng(0))
    assert g[0] == expected_g
    assert cur[0] + g[0] == expected_x


def test_g2s_hand_example():
    with_mask = g2s_convert(np.array([-0.7, 0.0, 0.3]), np.array([1.0, 1.0, 0.0]), Rng(0))
    # -0.7 has probability 1; 0.3 has probability 3/7, so check over seeds
    assert with_mask[0] == -1 and with_mask[1] == 0
    kept = [g2s_convert(np.array([-0.7, 0.0, 0.3]), np.array([1.0, 1.0, 0.0]), Rng(s))[2] for s in range(400)]
    assert set(kept) <= {0.0, 1.0}
    assert abs(np.mean(kept) - 3 / 7) < 0.08


def test_g2s_with_unit_magnitudes_is_deterministic():
    g = g2s_convert(np.array([-1.0, 0.0, 1.0]), np.array([1.0, 1.0, 0.0]), Rng(3))
    assert g.tolist() == [-1.0, 0.0, 1.0]
    assert (np.array([1.0, 1.0, 0.0]) + g).tolist() == [0.0, 1.0, 1.0]


def test_g2s_rejects_zero_gradient():
    with pytest.raises(UsageError):
        g2s_convert(np.zeros(4), np.zeros(4), Rng(0))
    with pytest.raises(ConfigurationError):
        g2s_convert(np.ones(3), np.zeros(4), Rng(0))


@pytest.mark.parametrize("x,g", [(0.0, 1.0), (1.0, -1.0)])
def test_rsf_rows(x, g):
    out = rsf_flip(np.array([x]), 1.0, Rng(0))
    assert out[0] == g
    assert x + out[0] == 1.0 - x


def test_rsf_gamma_zero():
    x = (np.random.default_rng(0).random((4, 5)) < 0.5).astype(float)
    assert not rsf_flip(x, 0.0, Rng(1)).any()
    with pytest.raises(ConfigurationError):
        rsf_flip(x, 1.5, Rng(1))


def test_rsf_turnover_rate():
    gamma, n = 0.05, 20_000
    x = (np.random.default_rng(2).random(n) < 0.3).astype(float)
    frac = np.count_nonzero(rsf_flip(x, gamma, Rng(9))) / n
    assert abs(frac - gamma) <= 3 * math.sqrt(gamma * (1 - gamma) / n)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), density=st.floats(0, 1), gamma=st.floats(0, 1))
def test_updates_preserve_binary_inputs(seed, density, gamma):
    r = np.random.default_rng(seed)
    x = (r.random((3, 2, 4)) < density).astype(float)
    grad = r.normal(size=x.shape)
    for g in (g2s_convert(grad, x, Rng(seed)), rsf_flip(x, gamma, Rng(seed, 1))):
        assert set(np.unique(g)) <= {-1.0, 0.0, 1.0}
        y = x + g
        assert np.all((y == 0) | (y == 1))


def test_g2s_sparsifies():
    r = np.random.default_rng(5)
    for i in range(100):
        grad = r.normal(size=(4, 8, 8))
        x = (r.random(grad.shape) < 0.5).astype(float)
        before = np.count_nonzero(grad)
        kept = bernoulli_mask(np.abs(grad) / np.abs(grad).max(), Rng(i))
        assert np.count_nonzero(grad * kept) < before
        assert np.count_nonzero(g2s_convert(grad, x, Rng(i))) <= np.count_nonzero(grad * kept)


# ---- image-side helpers -------------------------------------------------

def test_temporal_aggregate():
    g = np.array([1, 0, -1, 1.0]).reshape(4, 1, 1, 1)
    assert temporal_aggregate(g, 4).item() == 0.25
    assert not temporal_aggregate(np.zeros((3, 1, 2, 2)), 3).any()
    np.testing.assert_array_equal(temporal_aggregate(np.ones((5, 1, 2, 2)), 5), np.ones((1, 2, 2)))
    with pytest.raises(ConfigurationError):
        temporal_aggregate(np.zeros((3, 1, 2, 2)), 4)


def test_cw_regularize():
    d = np.array([0.5, -0.25, 0.0])
    cur = np.array([0.3, 0.2, 0.7])
    orig = np.array([0.1, 0.2, 0.6])
    np.testing.assert_array_equal(cw_regularize(d, cur, orig, 0.0), d)
    np.testing.assert_array_equal(cw_regularize(d, orig, orig, 0.7), d)
    out = cw_regularize(np.zeros(3), cur, orig, 0.5)
    assert out[2] == pytest.approx(-0.1)


def test_perturbation_metric():
    a = np.zeros(4)
    assert perturbation_metric(a, a) == 0.0
    assert perturbation_metric(np.array([0.1, 0, 0, 0.1]), a, 2) == pytest.approx(math.sqrt(0.02) / 4)
    x = np.zeros((3, 2, 2))
    y = x.copy()
    y.flat[[0, 5, 7]] = 1
    assert perturbation_metric(y, x, 2) == pytest.approx(math.sqrt(3) / 12)
    assert perturbation_metric(y, x, 1) == pytest.approx(3 / 12)


def test_config_validation_and_roundtrip():
    for bad in (dict(gamma=1.2), dict(epsilon=0), dict(max_iter=0), dict(cw_c=-1), dict(mode="x"),
                dict(mode="targeted")):
        with pytest.raises(ConfigurationError):
            AttackConfig(**bad).validate()
    cfg = AttackConfig(mode="targeted", target=3, threshold_override=(4, 1.5), seed=11)
    assert AttackConfig.from_dict(cfg.to_dict()) == cfg
    assert AttackConfig.from_dict(AttackConfig().to_dict()).epsilon == math.inf


# ---- run_attack ---------------------------------------------------------

def decisive_net():
    """Input 1 drives output 1 and suppresses output 0; input 0 alone keeps class 0."""
    w = np.array([[2.0, -5.0], [0.0, 1.0]])
    layer = Layer(FC, (2,), (2,), weight=w, u_th=0.3)
    return NetworkModel([layer], (2,), decay=0.25, surrogate_width=1.0, T=1, num_classes=2,
                        meta={"loss": "ce"})


def test_single_decisive_flip():
    m = decisive_net()
    x = np.array([[1.0, 0.0]])
    assert predict(forward(m, x)[0]) == 0
    out = run_attack(m, x, 0, AttackConfig(seed=1))
    assert out.status == SUCCESS
    assert out.iterations_used == 1
    assert out.perturbation == pytest.approx(1 / 2)
    assert out.adversarial_example.tolist() == [[1.0, 1.0]]
    assert verify_outcome(m, out)


def test_tiny_budget_fails_first_check():
    out = run_attack(decisive_net(), np.array([[1.0, 0.0]]), 0, AttackConfig(epsilon=1e-9))
    assert out.status == FAILED_BUDGET
    assert out.iterations_used == 1


def test_vanishing_with_gamma_zero_never_moves():
    m = build_network("Input-4FC-2FC", (1, 3, 3), T=4, u_th=100.0, seed=2)
    x = (np.random.default_rng(0).random((4, 1, 3, 3)) < 0.5).astype(float)
    out = run_attack(m, x, 0, AttackConfig(gamma=0.0, max_iter=6))
    assert out.status == FAILED_MAX_ITER
    assert out.flip_iterations == 6
    assert out.perturbation == 0.0
    np.testing.assert_array_equal(out.adversarial_example, x)
    assert out.first_vanished


def test_cw_ignored_for_spikes_with_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run_attack(decisive_net(), np.array([[1.0, 0.0]]), 0, AttackConfig(cw_c=0.3))
    assert any("cw_c" in str(w.message) for w in caught)


def small_model(seed, T=6):
    m = build_network("Input-4C3-AP2-12FC-3FC", (1, 6, 6), T=T, seed=seed)
    for layer in m.layers:
        if layer.weight is not None:
            layer.weight *= 2.5
    m.meta["loss"] = "mse"
    return m


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("mode", ["untargeted", "targeted"])
def test_spike_attack_invariants(seed, mode):
    m = small_model(seed)
    r = np.random.default_rng(seed)
    x = (r.random((6, 1, 6, 6)) < 0.4).astype(float)
    label = int(predict(forward(m, x)[0]))
    target = (label + 1) % 3 if mode == "targeted" else None
    seen = []
    cfg = AttackConfig(mode=mode, target=target, max_iter=15, gamma=0.05, seed=seed)
    out = run_attack(m, x, label, cfg, on_iteration=lambda k, g, t, s: seen.append(t.copy()))
    assert out.flip_iterations <= out.iterations_used == len(out.trace) == len(seen)
    assert np.all((out.adversarial_example == 0) | (out.adversarial_example == 1))
    if out.success:
        assert out.perturbation < cfg.epsilon
        assert verify_outcome(m, out)


@pytest.mark.parametrize("seed", range(3))
def test_image_attack_invariants(seed):
    m = small_model(seed, T=8)
    img = np.random.default_rng(seed).random((1, 6, 6))
    cfg = AttackConfig(input_kind="image", max_iter=15, cw_c=0.1, seed=seed)
    out = run_attack(m, img, 0, cfg)
    x = out.adversarial_example
    assert x.shape == img.shape
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert out.perturbation == pytest.approx(perturbation_metric(x, img, 2))
    if out.success:
        assert out.encoding is not None
        assert verify_outcome(m, out)


def test_override_not_used_for_success_check():
    m = small_model(1)
    x = (np.random.default_rng(1).random((6, 1, 6, 6)) < 0.4).astype(float)
    label = int(predict(forward(m, x)[0]))
    ov = (m.penultimate_index, 2.0)
    out = run_attack(m, x, label, AttackConfig(threshold_override=ov, max_iter=20, seed=3))
    # the final recorded prediction is the original-threshold one
    assert out.trace[-1].predicted == int(predict(forward(m, out.adversarial_example)[0]))
    assert m.layers[m.penultimate_index].u_th == 0.3


def test_run_attack_is_deterministic():
    m = small_model(0)
    x = (np.random.default_rng(0).random((6, 1, 6, 6)) < 0.4).astype(float)
    a = run_attack(m, x, 0, AttackConfig(max_iter=10, seed=5))
    b = run_attack(m, x, 0, AttackConfig(max_iter=10, seed=5))
    assert a.adversarial_example.tobytes() == b.adversarial_example.tobytes()
    assert [vars(r) for r in a.trace] == [vars(r) for r in b.trace]
