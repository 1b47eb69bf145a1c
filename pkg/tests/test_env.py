import numpy as np
import pytest

from svcdecomp import synthetic
from svcdecomp.env import (
    ActionOutOfRange,
    ConfigError,
    DecompositionEnv,
    EnvConfig,
    GraphEnvMismatch,
    Objective,
    ObjectiveEvaluator,
    StepAfterDone,
    objective_value,
    parse_objective,
    service_cap,
)
from svcdecomp.graph import CallGraph
from svcdecomp.metrics import Decomposition, evaluate, mq


def make_env(g, **kw):
    return DecompositionEnv(g, EnvConfig(g.n, **kw))


def test_service_cap():
    assert [service_cap(n) for n in (1, 2, 3, 20, 21)] == [1, 1, 2, 10, 11]


def test_reset_state():
    g = synthetic.random_graph(20, seed=1)
    env = make_env(g)
    obs = env.reset()
    assert obs.shape == (20 * 10 + 20,)
    m = env.state.matrix(10)
    assert m[:, 0].all() and not m[:, 1:].any()
    assert obs[200] == 1 and obs[201:].sum() == 0


def test_reset_objective_no_edges():
    g = CallGraph.from_edges(["a", "b", "c"], [])
    env = make_env(g)
    env.reset()
    assert env.state.obj_best == 0.0


def test_single_method_has_one_action():
    g = CallGraph.from_edges(["a"], [])
    env = make_env(g, p_max=2)
    env.reset()
    assert env.s_max == 1
    env.step(0)
    assert env.step(0).done
    env.reset()
    with pytest.raises(ActionOutOfRange):
        env.step(1)


def test_episode_length_and_errors():
    g = synthetic.random_graph(20, seed=2)
    env = make_env(g, p_max=3)
    env.reset()
    rng = np.random.default_rng(0)
    steps = 0
    done = False
    while not done:
        done = env.step(int(rng.integers(env.s_max))).done
        steps += 1
    assert steps == 60
    with pytest.raises(StepAfterDone):
        env.step(0)
    env.reset()
    with pytest.raises(ActionOutOfRange):
        env.step(env.s_max)
    with pytest.raises(GraphEnvMismatch):
        DecompositionEnv(g, EnvConfig(19))


def test_noop_move_not_rewarded():
    g = synthetic.random_graph(6, seed=3)
    env = make_env(g)
    env.reset()
    out = env.step(0)
    assert out.reward <= 0.0
    assert np.array_equal(env.state.assignment, np.zeros(6, dtype=np.int64))


def test_reward_against_best():
    g, truth = synthetic.planted_graph(sizes=(3, 3), names=("X", "Y"))
    env = make_env(g)
    env.reset()
    history = [env.state.obj_best]
    for t in range(g.n):
        out = env.step(int(truth[t]))
        assert out.reward == pytest.approx(out.info["objective"] - max(history))
        assert (out.reward > 0) == (out.info["objective"] > max(history))
        history.append(out.info["objective"])
        assert env.state.obj_best == max(history)
    assert env.best_decomposition() == Decomposition(truth)


def test_one_hot_preserved():
    g = synthetic.random_graph(9, seed=4)
    env = make_env(g, p_max=2)
    env.reset()
    rng = np.random.default_rng(1)
    done = False
    while not done:
        out = env.step(int(rng.integers(env.s_max)))
        done = out.done
        grid = out.observation[: 9 * env.s_max].reshape(9, env.s_max)
        assert (grid.sum(axis=1) == 1).all()
    assert out.observation[9 * env.s_max :].sum() == 0


def test_determinism():
    g = synthetic.random_graph(8, seed=5)
    actions = np.random.default_rng(3).integers(0, 4, size=24)

    def replay():
        env = make_env(g)
        env.reset()
        return [(o.observation.tobytes(), o.reward, o.done) for o in (env.step(a) for a in actions)]

    assert replay() == replay()


def test_objective_parsing():
    assert parse_objective("MQ") == Objective("mq")
    assert parse_objective("weighted:0.25") == Objective("weighted", 0.25)
    assert parse_objective("weighted", 0.5) == Objective("weighted", 0.5)
    assert str(Objective("weighted", 0.5)) == "weighted:0.5"
    for bad in ("nope", "weighted:1.5", "weighted:x", "weighted"):
        with pytest.raises(ConfigError):
            parse_objective(bad)
    with pytest.raises(ConfigError):
        parse_objective("mq", 0.3)


def test_objective_values():
    g = CallGraph.from_edges(["a", "b"], [])
    assert objective_value(g, Decomposition.single(2), Objective("mq")) == 0.0
    g, truth = synthetic.planted_graph()
    d = Decomposition(truth)
    assert objective_value(g, d, Objective("abcp")) == pytest.approx(1.0)
    rep = evaluate(g, d)
    w = 0.3
    expect = w * (rep.mq + 1) / 2 + (1 - w) * rep.abcp / 100
    assert objective_value(g, d, Objective("weighted", w)) == pytest.approx(expect)


def test_weighted_one_ranks_like_mq():
    g = synthetic.random_graph(6, seed=6)
    rng = np.random.default_rng(0)
    ds = [Decomposition(rng.integers(0, 3, size=6)) for _ in range(30)]
    by_mq = sorted(range(30), key=lambda i: (mq(g, ds[i]), i))
    by_w = sorted(range(30), key=lambda i: (objective_value(g, ds[i], Objective("weighted", 1.0)), i))
    assert by_mq == by_w


@pytest.mark.parametrize("kind", ["mq", "abcp", "weighted"])
def test_fast_evaluator_matches_metrics(kind):
    obj = Objective(kind, 0.4 if kind == "weighted" else 1.0)
    rng = np.random.default_rng(7)
    for seed in range(20):
        g = synthetic.random_graph(7, seed=seed, n_caps=3)
        ev = ObjectiveEvaluator(g, obj)
        a = rng.integers(0, 4, size=7)
        assert ev(a) == pytest.approx(objective_value(g, Decomposition(a), obj), abs=1e-12)
