"""Episodic environment in which an agent assigns methods to services one at a time.

Each step reassigns the method under the cursor to the chosen service column
and rewards the change of the objective against the best value seen so far
in the episode. The cursor sweeps all N methods ``p_max`` times, so every
episode lasts exactly ``N * p_max`` steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .graph import CallGraph
from .metrics import Decomposition, abcp, bcp, di, entropy_rows, mq


class EnvError(ValueError):
    pass


class GraphEnvMismatch(EnvError):
    pass


class ActionOutOfRange(EnvError):
    pass


class StepAfterDone(EnvError):
    pass


class ConfigError(ValueError):
    pass


OBJECTIVE_KINDS = ("mq", "abcp", "weighted")


@dataclass(frozen=True)
class Objective:
    """``mq``, ``abcp`` or ``weighted`` with ``weight`` on MQ."""

    kind: str = "mq"
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"unknown objective {self.kind!r}; expected one of {OBJECTIVE_KINDS}")
        if not (0.0 <= self.weight <= 1.0) or math.isnan(self.weight):
            raise ConfigError(f"objective weight must be in [0, 1], got {self.weight}")

    def __str__(self) -> str:
        return f"weighted:{self.weight:g}" if self.kind == "weighted" else self.kind


def parse_objective(text: str, weight: float | None = None) -> Objective:
    """Parse ``mq``, ``abcp``, ``weighted:<w>`` or ``weighted`` plus ``weight``."""
    text = text.strip().lower()
    if text.startswith("weighted"):
        _, _, w = text.partition(":")
        if w:
            try:
                value = float(w)
            except ValueError:
                raise ConfigError(f"bad weight in objective {text!r}") from None
        elif weight is not None:
            value = weight
        else:
            raise ConfigError("weighted objective needs a weight (weighted:<w> or --weight)")
        return Objective("weighted", value)
    if weight is not None and text != "weighted":
        raise ConfigError("--weight only applies to the weighted objective")
    return Objective(text)


def objective_value(g: CallGraph, d: Decomposition, objective: Objective, fractional: bool = False) -> float:
    """Scalar reward target; ABCP is rescaled to [0, 1], MQ kept on [-1, 1].

    Inside a weighted blend MQ is mapped to [0, 1] as (MQ + 1) / 2.
    """
    if objective.kind == "mq":
        return mq(g, d)
    a = abcp(bcp(g, d, fractional), di(g, d, fractional)) / 100.0
    if objective.kind == "abcp":
        return a
    w = objective.weight
    return w * (mq(g, d) + 1.0) / 2.0 + (1.0 - w) * a


class ObjectiveEvaluator:
    """Objective on a raw service-column assignment, with the graph arrays precomputed.

    Same formulas as ``metrics``; empty columns are dropped before anything is averaged.
    """

    def __init__(self, g: CallGraph, objective: Objective, fractional: bool = False):
        self.objective = objective
        self.adj = g.adjacency.astype(float)
        self.memb = g.membership(fractional)
        self.n_caps = self.memb.shape[1]
        self.cap_mass = self.memb.sum(axis=0)
        self.live_caps = self.cap_mass > 0
        self._rows = np.arange(g.n)

    def _onehot(self, assignment: np.ndarray) -> np.ndarray:
        width = int(assignment.max()) + 1
        x = np.zeros((assignment.size, width))
        x[self._rows, assignment] = 1.0
        return x[:, x.sum(axis=0) > 0]

    def mq(self, x: np.ndarray) -> float:
        k = x.shape[1]
        e = x.T @ self.adj @ x
        sizes = x.sum(axis=0)
        ch = np.diag(e) / sizes**2
        if k == 1:
            return float(ch[0])
        iu, ju = np.triu_indices(k, 1)
        cp = (e[iu, ju] + e[ju, iu]) / (2.0 * sizes[iu] * sizes[ju])
        return float(ch.mean()) - float(cp.mean())

    def abcp(self, x: np.ndarray) -> float:
        k = x.shape[1]
        hist = x.T @ self.memb
        totals = hist.sum(axis=1)
        h = np.ones(k)
        ok = totals > 0
        if self.n_caps <= 1:
            h[ok] = 0.0
        elif ok.any():
            h[ok] = entropy_rows(hist[ok] / totals[ok, None]) / math.log(self.n_caps)
        bcp_v = (1.0 - h.mean()) * 100.0
        if not self.live_caps.any():
            di_v = 0.0
        elif k == 1:
            di_v = 100.0
        else:
            q = (hist[:, self.live_caps] / self.cap_mass[self.live_caps]).T
            di_v = (1.0 - (entropy_rows(q) / math.log(k)).mean()) * 100.0
        return float(0.5 * bcp_v + 0.5 * di_v) / 100.0

    def __call__(self, assignment: np.ndarray) -> float:
        x = self._onehot(assignment)
        kind = self.objective.kind
        if kind == "mq":
            return self.mq(x)
        if kind == "abcp":
            return self.abcp(x)
        w = self.objective.weight
        return w * (self.mq(x) + 1.0) / 2.0 + (1.0 - w) * self.abcp(x)


def service_cap(n_methods: int) -> int:
    return max(1, math.ceil(n_methods / 2))


@dataclass(frozen=True)
class EnvConfig:
    n_methods: int
    p_max: int = 3
    objective: Objective = field(default_factory=Objective)
    seed: int = 0
    fractional: bool = False

    def __post_init__(self):
        if self.n_methods < 1:
            raise ConfigError("n_methods must be >= 1")
        if self.p_max < 1:
            raise ConfigError("p_max must be >= 1")

    @property
    def s_max(self) -> int:
        return service_cap(self.n_methods)

    @property
    def horizon(self) -> int:
        return self.n_methods * self.p_max

    @property
    def obs_dim(self) -> int:
        return self.n_methods * self.s_max + self.n_methods


@dataclass
class EnvState:
    assignment: np.ndarray
    cursor: int
    pass_index: int
    obj_current: float
    obj_best: float
    best_assignment: np.ndarray
    steps: int = 0
    done: bool = False

    def matrix(self, s_max: int) -> np.ndarray:
        m = np.zeros((self.assignment.size, s_max))
        m[np.arange(self.assignment.size), self.assignment] = 1.0
        return m


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict[str, Any]


class DecompositionEnv:
    def __init__(self, g: CallGraph, cfg: EnvConfig):
        if g.n != cfg.n_methods:
            raise GraphEnvMismatch(f"graph has {g.n} methods, config says {cfg.n_methods}")
        self.graph = g
        self.cfg = cfg
        self.s_max = cfg.s_max
        self.evaluate = ObjectiveEvaluator(g, cfg.objective, cfg.fractional)
        self.state: EnvState | None = None

    def observation(self) -> np.ndarray:
        st = self.state
        n = self.cfg.n_methods
        obs = np.zeros(n * self.s_max + n)
        obs[np.arange(n) * self.s_max + st.assignment] = 1.0
        if not st.done:
            obs[n * self.s_max + st.cursor] = 1.0
        return obs

    def reset(self) -> np.ndarray:
        n = self.cfg.n_methods
        assignment = np.zeros(n, dtype=np.int64)
        j0 = self.evaluate(assignment)
        self.state = EnvState(
            assignment=assignment,
            cursor=0,
            pass_index=0,
            obj_current=j0,
            obj_best=j0,
            best_assignment=assignment.copy(),
        )
        return self.observation()

    def step(self, action: int) -> StepOutcome:
        st = self.state
        if st is None:
            raise EnvError("step() before reset()")
        if st.done:
            raise StepAfterDone("episode is over; call reset()")
        action = int(action)
        if not 0 <= action < self.s_max:
            raise ActionOutOfRange(f"action {action} outside [0, {self.s_max - 1}]")
        st.assignment[st.cursor] = action
        j = self.evaluate(st.assignment)
        reward = j - st.obj_best
        if j > st.obj_best:
            st.obj_best = j
            st.best_assignment = st.assignment.copy()
        st.obj_current = j
        st.steps += 1
        moved = st.cursor
        st.cursor += 1
        if st.cursor == self.cfg.n_methods:
            st.cursor = 0
            st.pass_index += 1
            if st.pass_index == self.cfg.p_max:
                st.done = True
        info = {
            "objective": j,
            "k": int(np.unique(st.assignment).size),
            "cursor": moved,
            "best": st.obj_best,
        }
        return StepOutcome(self.observation(), reward, st.done, info)

    def best_decomposition(self) -> Decomposition:
        return Decomposition(self.state.best_assignment).compacted()
