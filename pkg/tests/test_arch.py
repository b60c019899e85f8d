import numpy as np
import pytest

from posecast.arch import (VARIANTS, Model, ModelConfig, active_phase,
                           build_model, forecast, logical_sequence_count,
                           model_step, new_bank, observe, rollout_forward)
from posecast.errors import ConfigError, InputError, NumericError, ShapeError
from posecast.metrics import zero_velocity_forecast
from posecast.posedata import (PoseSequence, VelocitySequence, integrate,
                               synth_multiscale, to_velocity)


def tiny_cfg(variant="tp_rnn", **kw):
    base = dict(variant=variant, d_v=3, granularity=2, levels=2, hidden=4,
                head1=5, head2=4, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def zero_model(cfg) -> Model:
    m = build_model(cfg)
    m.set_flat(np.zeros(m.n_params))
    return m


# ---------------------------------------------------------------------------
# phase schedule


def test_active_phase_examples():
    assert active_phase(1, 7, 2) == 0
    assert active_phase(2, 5, 2) == 1
    assert active_phase(2, 4, 2) == 0


def test_active_phase_level5_period_16():
    # each fixed phase of level 5 (K=2) recurs with period 2^4 = 16
    for q in range(16):
        hits = [t for t in range(200) if active_phase(5, t, 2) == q]
        assert hits[0] == q
        assert all(b - a == 16 for a, b in zip(hits, hits[1:]))


def test_active_phase_preconditions():
    with pytest.raises(InputError):
        active_phase(0, 3, 2)
    with pytest.raises(InputError):
        active_phase(1, -1, 2)


def test_logical_sequence_count():
    assert logical_sequence_count(2, 2) == 3
    assert logical_sequence_count(2, 5) == 31
    assert logical_sequence_count(3, 3) == 13
    with pytest.raises(InputError):
        logical_sequence_count(1, 2)


def test_mixed_radix_phase_spawning_equivalence():
    # spawning a phase as (parent phase + K^(m-2) * next digit) produces the
    # same index as the residue t mod K^(m-1)
    def spawn(m, t, K):
        if m == 1:
            return 0
        return spawn(m - 1, t, K) + K ** (m - 2) * ((t // K ** (m - 2)) % K)

    for K in (2, 3):
        for m in range(1, 6):
            for t in range(150):
                assert spawn(m, t, K) == active_phase(m, t, K)


def test_schedule_trace_k2_m3():
    # updated (level, phase) pairs per step follow (1,0),(2,t%2),(3,t%4)
    model = build_model(tiny_cfg(levels=3))
    bank = new_bank(model)
    rng = np.random.default_rng(0)
    for t in range(8):
        _, rec = model_step(model, bank, rng.normal(size=3))
        got = [(m, q) for m, q, _, _ in rec.updates]
        assert got == [(1, 0), (2, t % 2), (3, t % 4)]


def test_exactly_one_phase_per_level_updates():
    model = build_model(tiny_cfg(granularity=3, levels=4, hidden=3))
    bank = new_bank(model)
    x = np.zeros(3)
    for t in range(30):
        _, rec = model_step(model, bank, x)
        levels = [m for m, _, _, _ in rec.updates]
        assert levels == [1, 2, 3, 4]


# ---------------------------------------------------------------------------
# config validation


def test_config_variant_constraints():
    with pytest.raises(ConfigError, match="variant"):
        tiny_cfg(variant="gru").validate()
    with pytest.raises(ConfigError, match="levels"):
        tiny_cfg(variant="single_layer_vel", levels=2).validate()
    with pytest.raises(ConfigError, match="levels"):
        tiny_cfg(variant="stacked2_vel", levels=3).validate()
    with pytest.raises(ConfigError, match="levels"):
        tiny_cfg(variant="double_scale_vel", levels=3).validate()
    with pytest.raises(ConfigError, match="granularity"):
        tiny_cfg(variant="double_scale_hier_vel", granularity=3).validate()
    with pytest.raises(ConfigError, match="granularity"):
        tiny_cfg(granularity=1).validate()
    with pytest.raises(ConfigError, match="dropout_rate"):
        tiny_cfg(dropout_rate=1.0).validate()


def test_config_roundtrip_and_dropout_default():
    cfg = tiny_cfg(levels=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.effective_dropout == 0.2
    assert tiny_cfg(levels=2).effective_dropout == 0.0
    assert tiny_cfg(levels=4, dropout_rate=0.1).effective_dropout == 0.1
    assert tiny_cfg(levels=4, dropout_rate=0.0).effective_dropout == 0.0


# ---------------------------------------------------------------------------
# parameter accounting


def test_param_count_fixture_371():
    # d_v=3, h=4, h1=5, h2=4, K=2, M=2: cells 128 + 144, head 99
    model = build_model(tiny_cfg())
    assert model.n_params == 371
    sizes = {name: arr.size for name, arr in model.tensors()}
    assert sizes["cell0.W"] + sizes["cell0.b"] == 128
    assert sizes["cell1.W"] + sizes["cell1.b"] == 144
    assert sum(v for n, v in sizes.items() if n.startswith("head.")) == 99


def test_param_count_k_independent():
    m2 = build_model(tiny_cfg(granularity=2))
    m3 = build_model(tiny_cfg(granularity=3))
    assert m2.n_params == m3.n_params == 371
    m5 = build_model(tiny_cfg(granularity=5, levels=3))
    assert m5.n_params == build_model(tiny_cfg(granularity=2, levels=3)).n_params


def test_physical_cells_vs_logical_sequences():
    # K=2, M=2: three logical sequences but exactly two stored cells + head
    model = build_model(tiny_cfg())
    assert logical_sequence_count(2, 2) == 3
    assert len(model.cells) == 2
    bank = new_bank(model)
    assert [len(level) for level in bank.states] == [1, 2]


def test_weight_sharing_mutation_affects_all_phases():
    # zeroing the single level-2 cell silences every level-2 phase
    model = build_model(tiny_cfg())
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(6, 3))
    model.cells[1].W[...] = 0.0
    model.cells[1].b[...] = 0.0
    bank = new_bank(model)
    for t in range(6):
        model_step(model, bank, xs[t])
    for phase in bank.states[1]:
        assert not np.any(phase.h) and not np.any(phase.c)


def test_single_layer_vel_shapes():
    model = build_model(tiny_cfg(variant="single_layer_vel", levels=1))
    assert len(model.cells) == 1
    assert model.cells[0].d_in == 3
    assert model.head.W1.shape[1] == 3 + 4  # d_v + h


def test_level_input_dims_per_variant():
    hidden_fed = build_model(tiny_cfg(variant="double_scale_hier_vel"))
    assert hidden_fed.cells[1].d_in == 4
    stride_fed = build_model(tiny_cfg(variant="double_scale_vel"))
    assert stride_fed.cells[1].d_in == 3
    phase_fed = build_model(tiny_cfg(variant="double_scale_phase_vel"))
    assert phase_fed.cells[1].d_in == 3


def test_flatten_set_flat_roundtrip():
    model = build_model(tiny_cfg(levels=3))
    theta = model.flatten()
    other = build_model(tiny_cfg(levels=3, seed=99))
    other.set_flat(theta)
    assert np.array_equal(other.flatten(), theta)
    with pytest.raises(ShapeError):
        other.set_flat(theta[:-1])


# ---------------------------------------------------------------------------
# stepping, observe, forecast


def test_zero_model_outputs_zero():
    model = zero_model(tiny_cfg(levels=3))
    bank = new_bank(model)
    out, _ = model_step(model, bank, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(out, np.zeros(3))


def test_model_step_determinism():
    rng = np.random.default_rng(4)
    xs = rng.normal(size=(10, 3))
    outs = []
    for _ in range(2):
        model = build_model(tiny_cfg(levels=3, seed=5))
        bank = new_bank(model)
        outs.append([model_step(model, bank, x)[0] for x in xs])
    for a, b in zip(*outs):
        assert np.array_equal(a, b)


def test_model_step_errors():
    model = build_model(tiny_cfg())
    bank = new_bank(model)
    with pytest.raises(ShapeError):
        model_step(model, bank, np.zeros(4))
    with pytest.raises(ConfigError):
        model_step(model, bank, np.zeros(3), mode="predict")
    other = new_bank(build_model(tiny_cfg(granularity=3)))
    with pytest.raises(ConfigError):
        model_step(model, other, np.zeros(3))


def _seed_velocities(n_steps, d=3, seed=0, interval=40.0):
    rng = np.random.default_rng(seed)
    frames = np.cumsum(rng.normal(size=(n_steps + 1, d)), axis=0)
    return to_velocity(PoseSequence(frames=frames, frame_interval_ms=interval))


def test_observe_schedule_counts():
    model = build_model(tiny_cfg())
    bank, records, vhat = observe(model, _seed_velocities(50))
    assert bank.t == 50
    assert vhat.shape == (3,)
    counts = {}
    for rec in records:
        for m, q, _, _ in rec.updates:
            counts[(m, q)] = counts.get((m, q), 0) + 1
    assert counts[(1, 0)] == 50
    assert counts[(2, 0)] == 25 and counts[(2, 1)] == 25


def test_observe_empty_seed_rejected():
    model = build_model(tiny_cfg())
    empty = VelocitySequence(steps=np.zeros((0, 3)), origin_pose=np.zeros(3),
                             frame_interval_ms=40.0)
    with pytest.raises(InputError):
        observe(model, empty)


def test_single_frame_seed_with_zero_velocity():
    # one observed pose, zero initial velocity: valid bank at t == 1
    model = build_model(tiny_cfg())
    seed_v = VelocitySequence(steps=np.zeros((1, 3)),
                              origin_pose=np.array([1.0, 2.0, 3.0]),
                              frame_interval_ms=40.0)
    bank, _, vhat = observe(model, seed_v)
    assert bank.t == 1
    assert vhat.shape == (3,)


def test_forecast_shape_contract():
    model = build_model(tiny_cfg())
    bank, _, v_first = observe(model, _seed_velocities(10))
    pred = forecast(model, bank, v_first, 25)
    assert pred.steps.shape == (25, 3)
    assert pred.frame_interval_ms == 40.0


def test_forecast_nonfinite_raises_with_step_index():
    model = build_model(tiny_cfg())
    bank, _, _ = observe(model, _seed_velocities(4))
    bad = np.array([np.nan, 0.0, 0.0])
    with pytest.raises(NumericError, match="step 0"):
        forecast(model, bank, bad, 3)


@pytest.mark.parametrize("variant,levels", [
    ("single_layer_pose", 1), ("single_layer_vel", 1), ("stacked2_vel", 2),
    ("double_scale_vel", 2), ("double_scale_hier_vel", 2),
    ("double_scale_phase_vel", 2), ("tp_rnn", 3),
])
def test_zero_model_forecast_is_zero_velocity_baseline(variant, levels):
    # all-zero parameters predict exactly-zero velocities, so the poses
    # integrated from the last observed frame repeat it bit for bit
    from posecast.evaluate import forecast_window
    from posecast.posedata import Window
    model = zero_model(tiny_cfg(variant=variant, levels=levels))
    rng = np.random.default_rng(11)
    frames = rng.normal(size=(17, 3))
    p = PoseSequence(frames=frames, frame_interval_ms=40.0)
    seed = PoseSequence(frames=frames[:12], frame_interval_ms=40.0)
    target = PoseSequence(frames=frames[12:], frame_interval_ms=40.0)

    bank, _, v_first = observe(model, to_velocity(seed))
    pred = forecast(model, bank, v_first, 5)
    assert np.array_equal(pred.steps, np.zeros((5, 3)))

    poses = forecast_window(model, Window(seed=seed, target=target))
    baseline = zero_velocity_forecast(seed, 5)
    assert np.array_equal(poses.frames, baseline.frames)


def test_tp_rnn_m1_equals_single_layer_vel():
    # with identical parameters the degenerate one-level hierarchy computes
    # the same function as the plain velocity-input single layer
    single = build_model(tiny_cfg(variant="single_layer_vel", levels=1, seed=3))
    tp = build_model(tiny_cfg(variant="tp_rnn", levels=1, seed=8))
    tp.set_flat(single.flatten())
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(9, 3))
    bank_s, bank_t = new_bank(single), new_bank(tp)
    for x in xs:
        out_s, _ = model_step(single, bank_s, x)
        out_t, _ = model_step(tp, bank_t, x)
        assert np.array_equal(out_s, out_t)


def test_double_scale_strided_input_is_pose_difference_over_k():
    # the stride-fed upper level consumes the sum of the last K velocities,
    # i.e. P_t - P_{t-K}
    model = build_model(tiny_cfg(variant="double_scale_vel"))
    rng = np.random.default_rng(6)
    vels = rng.normal(size=(8, 3))
    bank = new_bank(model)
    for t in range(8):
        _, rec = model_step(model, bank, vels[t])
        upper = [(m, q, tape, strided) for m, q, tape, strided in rec.updates
                 if m == 2]
        if t % 2 == 1:  # fires every K=2 steps
            (m, q, tape, strided), = upper
            assert strided == [t - 1, t]
            assert np.allclose(tape.x[0], vels[t - 1] + vels[t], atol=1e-15)
        else:
            assert upper == []


def test_double_scale_phase_updates_every_step():
    model = build_model(tiny_cfg(variant="double_scale_phase_vel"))
    bank = new_bank(model)
    for t in range(6):
        _, rec = model_step(model, bank, np.ones(3))
        upper = [(m, q) for m, q, _, _ in rec.updates if m == 2]
        assert upper == [(2, t % 2)]


def test_rollout_forward_matches_observe_forecast():
    # the batched training-path rollout and the streaming inference path
    # compute the same predictions
    for variant, levels in [("tp_rnn", 3), ("double_scale_vel", 2),
                            ("single_layer_pose", 1)]:
        model = build_model(tiny_cfg(variant=variant, levels=levels, seed=7,
                                     dropout_rate=0.0))
        seqs = synth_multiscale(2, 14, 3, seed=21)
        seeds = np.stack([s.frames[:10] for s in seqs])
        preds, _ = rollout_forward(model, np.diff(seeds, axis=1),
                                   seeds[:, 0], 4, mode="eval")
        for b, s in enumerate(seqs):
            p = PoseSequence(frames=s.frames[:10], frame_interval_ms=40.0)
            bank, _, v_first = observe(model, to_velocity(p))
            single = forecast(model, bank, v_first, 4)
            assert np.allclose(preds[:, b, :], single.steps, atol=1e-12)
