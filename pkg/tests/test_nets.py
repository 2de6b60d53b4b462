import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formula_cases import cases
from gradcheck import action_probe, probe
from gridcoop.nets import (CLOUD, EDGE, FLAT, ActorNet, Adam, Agent, CriticNet, DivergenceError, Hyperparams,
                           ReplayBuffer, actor_update, conv_out, critic_update, load_checkpoint, save_checkpoint,
                           select_action, soft_update, target_sync)

NAMES = {"edge action width", "edge flatten", "cloud flatten", "edge critic concat", "cloud critic concat",
         "critic responds to actions", "soft update tau=0.99", "minibatch size"}


@pytest.mark.parametrize("case", [c for c in cases() if c.name in NAMES], ids=lambda c: c.name)
def test_worked_example(case):
    ok, got = case.check()
    assert ok, (got, case.expected)


def test_conv_arithmetic():
    assert [conv_out(15), conv_out(conv_out(15))] == [7, 3]
    assert [conv_out(60), conv_out(29), conv_out(14)] == [29, 14, 6]
    assert FLAT == {EDGE: 144, CLOUD: 576}


@pytest.mark.parametrize("tier,width", [(EDGE, 15), (CLOUD, 60)])
def test_output_shapes(tier, width):
    rng = np.random.default_rng(0)
    actor, critic = ActorNet(tier, rng), CriticNet(tier, rng)
    s = rng.uniform(-1, 1, (3, width, width, 3))
    assert actor.forward(s).shape == (3, width)
    assert critic.forward(s, np.zeros((3, width))).shape == (3,)
    with pytest.raises(ValueError):
        actor.forward(np.zeros((1, width + 1, width + 1, 3)))
    with pytest.raises(ValueError):
        critic.forward(s, np.zeros((3, width - 1)))


def test_zero_parameters_give_zero():
    rng = np.random.default_rng(0)
    actor, critic = ActorNet(EDGE, rng), CriticNet(EDGE, rng)
    actor.zero()
    critic.zero()
    s = rng.uniform(-1, 1, (2, 15, 15, 3))
    assert not actor.forward(s).any()
    assert not critic.forward(s, rng.uniform(-3, 3, (2, 15))).any()


@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 100))
def test_actor_range(seed, scale):
    rng = np.random.default_rng(seed)
    actor = ActorNet(EDGE, rng)
    actor.load({k: v * scale for k, v in actor.params.items()})
    out = actor.forward(rng.uniform(-scale, scale, (2, 15, 15, 3)))
    assert np.all(np.abs(out) <= 3.0)


@pytest.mark.parametrize("tier", [EDGE, CLOUD])
@pytest.mark.parametrize("cls", [ActorNet, CriticNet])
def test_parameter_gradients(tier, cls):
    rng = np.random.default_rng(7)
    errs = probe(cls(tier, rng), rng, probes=10)
    assert max(e[-1] for e in errs) < 1e-4, errs


@pytest.mark.parametrize("tier", [EDGE, CLOUD])
def test_action_gradient(tier):
    assert max(action_probe(CriticNet(tier, np.random.default_rng(1)), np.random.default_rng(2))) < 1e-4


def test_select_action():
    rng = np.random.default_rng(0)
    actor = ActorNet(EDGE, rng)
    sg = rng.uniform(-1, 1, (15, 15, 3))
    assert np.array_equal(select_action(actor, sg), actor.forward(sg)[0])
    a = select_action(actor, sg, 50.0, np.random.default_rng(5))
    b = select_action(actor, sg, 50.0, np.random.default_rng(5))
    assert np.array_equal(a, b) and np.all(np.abs(a) <= 3.0)
    with pytest.raises(ValueError):
        select_action(actor, sg, 0.1)


def _batch(rng, n, width=15):
    return (rng.uniform(-1, 1, (n, width, width, 3)), rng.uniform(-3, 3, (n, width)),
            rng.uniform(0, 1, n), rng.uniform(-1, 1, (n, width, width, 3)))


def test_critic_loss_with_zero_gamma_and_critic():
    rng = np.random.default_rng(0)
    agent = Agent.create(EDGE, 0, Hyperparams(gamma=0.5))
    agent.hp.gamma = 1e-300  # effectively zero while passing validation
    agent.critic.zero()
    batch = _batch(rng, 8)
    assert critic_update(agent, batch) == pytest.approx(float(np.mean(batch[2] ** 2)), rel=1e-12)


def test_critic_overfits_one_transition():
    rng = np.random.default_rng(0)
    agent = Agent.create(EDGE, 0, Hyperparams(lr_critic=1e-3))
    s, a, r, s2 = _batch(rng, 1)
    # a terminal-free target that does not move: freeze the target nets at zero
    agent.target_critic.zero()
    losses = [critic_update(agent, (s, a, np.array([0.7]), s2)) for _ in range(150)]
    assert losses[-1] < 1e-4 * losses[0]
    # converges within a few steps, then sits at round-off
    assert min(losses[:10]) < 1e-3 * losses[0]


class _Stub:
    """Critic stand-in with a hand-wired value."""
    width = 15
    action_dim = 15

    def __init__(self, kind):
        self.kind = kind
        self.params, self.grads = {}, {}

    def named(self):
        return iter(())

    def forward(self, s, a):
        self.n = len(a)
        return a.sum(axis=1) if self.kind == "sum" else np.full(len(a), 4.0)

    def backward(self, dq, conv=True):
        dq = np.asarray(dq).reshape(-1, 1)
        return dq * np.ones((1, 15)) if self.kind == "sum" else np.zeros((len(dq), 15))


def _stub_agent(kind):
    real = Agent.create(EDGE, 0)
    return Agent(real.actor, _Stub(kind), real.target_actor, _Stub(kind), real.hp)


def test_constant_critic_gives_zero_actor_gradient():
    agent = _stub_agent("const")
    actor_update(agent, _batch(np.random.default_rng(0), 4))
    assert all(not g.any() for g in agent.actor.grads.values())


def test_sum_critic_pushes_outputs_up():
    agent = _stub_agent("sum")
    s = _batch(np.random.default_rng(0), 4)
    before = agent.actor.params["fc3.b"].copy()
    out0 = agent.actor.forward(s[0]).sum()
    actor_update(agent, s)
    assert np.all(agent.actor.params["fc3.b"] > before)
    assert agent.actor.forward(s[0]).sum() > out0


def test_actor_update_leaves_critic_alone():
    agent = Agent.create(EDGE, 3)
    before = {k: v.copy() for k, v in agent.critic.params.items()}
    actor_update(agent, _batch(np.random.default_rng(1), 6))
    assert all(np.array_equal(before[k], v) for k, v in agent.critic.params.items())


def test_divergence_is_reported():
    agent = Agent.create(EDGE, 0)
    s, a, r, s2 = _batch(np.random.default_rng(0), 4)
    r[1] = math.nan
    with pytest.raises(DivergenceError):
        critic_update(agent, (s, a, r, s2))


def test_soft_update_recurrence():
    theta, t = np.array([2.0]), np.array([0.0])
    for k in range(1, 6):
        t = soft_update(theta, t, 0.3)
        assert t[0] == pytest.approx(2.0 * (1 - 0.7 ** k))
    assert np.array_equal(soft_update(theta, np.array([9.0]), 1.0), theta)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0, 1))
def test_soft_update_is_convex(a, b, tau):
    out = float(soft_update(np.array(a), np.array(b), tau))
    assert min(a, b) - 1e-9 <= out <= max(a, b) + 1e-9


def test_target_sync_uses_tau():
    agent = Agent.create(EDGE, 0, Hyperparams(tau=0.99))
    agent.target_actor.zero()
    target_sync(agent)
    for k, v in agent.actor.params.items():
        assert np.allclose(agent.target_actor.params[k], 0.99 * v)


def test_adam_first_step_is_lr_sized():
    rng = np.random.default_rng(0)
    actor = ActorNet(EDGE, rng)
    opt = Adam(actor, 0.01)
    actor.forward(rng.uniform(-1, 1, (2, 15, 15, 3)))
    actor.backward(np.ones((2, 15)))
    before = actor.params["fc3.b"].copy()
    opt.step()
    step = np.abs(actor.params["fc3.b"] - before)
    assert np.allclose(step[np.abs(actor.grads["fc3.b"]) > 1e-4], 0.01, rtol=1e-3)


def test_schedules():
    hp = Hyperparams()
    assert hp.lr_at(0) == (1e-3, 0.05)
    assert hp.lr_at(25) == pytest.approx((5e-4, 0.025))
    assert hp.lr_at(50) == (0.0, 0.0)
    assert hp.sigma_at(0) == 0.5 and hp.sigma_at(49) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        Hyperparams(gamma=1.0)
    with pytest.raises(ValueError):
        Hyperparams(batch=0)


class TestReplay:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(2, 15)
        for k in range(3):
            buf.store(np.full((15, 15, 3), k), np.zeros(15), float(k), np.zeros((15, 15, 3)))
        assert len(buf) == 2
        assert sorted(buf.r.tolist()) == [1.0, 2.0]

    def test_refuses_underfull(self):
        buf = ReplayBuffer(100, 15)
        with pytest.raises(ValueError):
            buf.sample(48, np.random.default_rng(0))

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(60, 15)
        for k in range(60):
            buf.store(np.zeros((15, 15, 3)), np.zeros(15), float(k), np.zeros((15, 15, 3)))
        s, a, r, s2 = buf.sample(48, np.random.default_rng(0))
        assert len(set(r.tolist())) == 48

    def test_uniform_indices(self):
        # chi-square over 100 slots with ~1e5 draws; critical value at
        # alpha = 0.01 with 99 degrees of freedom is 134.64
        buf = ReplayBuffer(100, 15)
        buf.size = 100
        rng = np.random.default_rng(12345)
        counts = np.zeros(100)
        for _ in range(2084):
            counts[buf.sample_indices(48, rng)] += 1
        expected = counts.sum() / 100
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert counts.sum() >= 1e5 and chi2 < 134.64


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        agent = Agent.create(CLOUD, 4, dtype=np.float32)
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, agent.tensors(), {"note": "x"})
        tensors, meta = load_checkpoint(path, with_meta=True)
        assert meta == {"note": "x"}
        other = Agent.create(CLOUD, 99, dtype=np.float32)
        other.load(tensors)
        for k, v in agent.tensors().items():
            assert v.dtype == other.tensors()[k].dtype
            assert np.array_equal(v, other.tensors()[k])
        save_checkpoint(tmp_path / "d.ckpt", other.tensors(), {"note": "x"})
        assert path.read_bytes() == (tmp_path / "d.ckpt").read_bytes()

    def test_layout(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, {"b": np.array([[1.5, -2.0]]), "a": np.array([3.0])})
        raw = path.read_bytes()
        assert raw[:8] == b"GCNETCKP"
        assert struct.unpack_from("<II", raw, 8) == (1, 2)
        assert struct.unpack_from("<H", raw, 16) == (1,) and raw[18:19] == b"a"

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(p)

    def test_missing_tensor(self):
        agent = Agent.create(EDGE, 0)
        t = agent.actor.params
        t.pop("fc1.W")
        with pytest.raises(KeyError):
            agent.actor.load(t)
