"""Scenario files: YAML documents validated into runnable objects.

A scenario names the problem, the topology, the schedules, the initial
state and the run length. Unknown keys are rejected so that typos fail
loudly, and every validation problem is reported, not just the first.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import problems, streams, topology
from .engine import AlgorithmConfig
from .problems import Problem, ProblemError
from .schedules import Bounds, GeometricBounds, LinearBounds, PowerSchedule
from .topology import TopologyError, TopologySchedule

CHECKS = ("lemma41", "lemma42", "noise", "a4")


class ScenarioError(ValueError):
    """Carries the full list of problems found while loading a scenario."""

    def __init__(self, errors: list[str], source: str = "scenario"):
        self.errors = list(errors)
        super().__init__(f"{source}: " + "; ".join(self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- schedules ---------------------------------------------------------------------------

class PowerSpec(_Strict):
    """``a / (k + c) ** p``."""

    a: float
    c: float = 1.0
    p: float = 1.0


class GeometricSpec(_Strict):
    kind: Literal["geometric"]
    m0: float
    ratio: float = 2.0


class LinearSpec(_Strict):
    kind: Literal["linear"]
    m0: float
    step: float = 1.0


BoundsSpec = Annotated[Union[GeometricSpec, LinearSpec], Field(discriminator="kind")]


# -- problems ------------------------------------------------------------------------------

class PcaExample1(_Strict):
    kind: Literal["pca_example1"]
    n_agents: int = Field(1000, ge=1)
    dim: int = Field(9, ge=1)
    matrix_seed: int = 0
    mode: Literal["homogeneous", "heterogeneous"] = "homogeneous"
    heterogeneity: float = Field(0.5, ge=0.0, le=1.0)
    gap_ratio: float = Field(1.2, ge=1.0)
    scale: float = Field(1.0, gt=0.0)


class PcaCustom(_Strict):
    kind: Literal["pca_custom"]
    n_agents: int = Field(ge=1)
    covariance: list[list[float]]
    agent_covariances: list[list[list[float]]] | None = None


class KwExample2(_Strict):
    kind: Literal["kw_example2"]
    alpha: PowerSpec = PowerSpec(a=1.0, c=1.0, p=0.2)
    noise_std: float = Field(1.0, ge=0.0)


class TermSpec(_Strict):
    kind: Literal["power", "sin"]
    dim: int = Field(ge=0)
    coef: float
    center: float = 0.0
    power: int = Field(2, ge=1)
    freq: float = 1.0
    phase: float = 0.0


class KwCustom(_Strict):
    kind: Literal["kw_custom"]
    dim: int = Field(ge=1)
    costs: list[list[TermSpec]]
    alpha: PowerSpec
    noise_std: float = Field(1.0, ge=0.0)
    minimum: list[float] | None = None


class SyntheticLinear(_Strict):
    kind: Literal["synthetic_linear"]
    n_agents: int = Field(ge=1)
    dim: int = Field(ge=1)
    matrix_seed: int = 0
    noise_std: float = Field(0.1, ge=0.0)
    root: list[float] | None = None


ProblemSpec = Annotated[Union[PcaExample1, PcaCustom, KwExample2, KwCustom, SyntheticLinear],
                        Field(discriminator="kind")]


# -- topologies -----------------------------------------------------------------------------

class SeededTopology(_Strict):
    kind: Literal["example1_blocks", "static_metropolis"]
    seed: int = 0
    edge_prob: float | None = Field(None, gt=0.0, le=1.0)


class FixedTopology(_Strict):
    kind: Literal["ring", "complete"]


class ExplicitTopology(_Strict):
    kind: Literal["explicit"]
    matrices: list[list[list[float]]] = Field(min_length=1)
    b_window: int = Field(1, ge=1)


TopologySpec = Annotated[Union[SeededTopology, FixedTopology, ExplicitTopology], Field(discriminator="kind")]


# -- vectors and initial states -------------------------------------------------------------

class OnesOverSqrt(_Strict):
    """``1 / sqrt(n)`` in every coordinate, with ``n`` the agent count or the dimension."""

    kind: Literal["ones_over_sqrt"]
    of: Literal["n_agents", "dim"]


class InitXStar(_Strict):
    kind: Literal["x_star"]


class InitConstant(_Strict):
    kind: Literal["constant"]
    value: list[float]


class InitUniformBox(_Strict):
    kind: Literal["uniform_box"]
    low: list[float]
    high: list[float]


InitSpec = Annotated[Union[InitXStar, InitConstant, InitUniformBox], Field(discriminator="kind")]


class ScenarioModel(_Strict):
    name: str
    algorithm: Literal["dsaawet", "baseline", "compare"] = "dsaawet"
    problem: ProblemSpec
    topology: TopologySpec
    x_star: list[float] | OnesOverSqrt
    gamma: PowerSpec
    bounds: BoundsSpec
    horizon: int = Field(ge=0)
    init: InitSpec = InitXStar(kind="x_star")
    seed: int = 0
    record_every: int = Field(1, ge=1)
    full_trace: bool = False
    checks: list[Literal["lemma41", "lemma42", "noise", "a4"]] = []
    # max fluctuation of the weighted noise partial sums over the last quarter of the run
    noise_tail_bound: float = Field(0.5, gt=0.0)


# -- resolved scenario ----------------------------------------------------------------------

@dataclass
class Scenario:
    model: ScenarioModel
    problem: Problem
    schedule: TopologySchedule
    x_star: np.ndarray
    gamma: PowerSchedule
    bounds: Bounds
    source: str = "<memory>"

    @property
    def name(self) -> str:
        return self.model.name

    @property
    def algorithm(self) -> str:
        return self.model.algorithm

    @property
    def seed(self) -> int:
        return self.model.seed

    @property
    def n(self) -> int:
        return self.problem.n_agents

    @property
    def l(self) -> int:
        return self.problem.l

    @property
    def checks(self) -> list[str]:
        return list(self.model.checks)

    @property
    def needs_trace(self) -> bool:
        return self.model.full_trace or any(c in ("lemma41", "lemma42", "noise") for c in self.checks)

    def config(self, seed: int | None = None, full_trace: bool | None = None) -> AlgorithmConfig:
        return AlgorithmConfig(
            x_star=self.x_star,
            gamma=self.gamma,
            bounds=self.bounds,
            horizon=self.model.horizon,
            seed=self.seed if seed is None else seed,
            record_every=self.model.record_every,
            full_trace=self.needs_trace if full_trace is None else full_trace,
        )

    def initial_state(self, seed: int | None = None) -> np.ndarray:
        """``(N, l)`` starting estimates; box draws come from the seed's init stream."""
        init = self.model.init
        n, l = self.n, self.l
        if isinstance(init, InitXStar):
            return np.tile(self.x_star, (n, 1))
        if isinstance(init, InitConstant):
            return np.tile(np.asarray(init.value, dtype=float), (n, 1))
        rng = streams.init_stream(self.seed if seed is None else seed)
        low, high = np.asarray(init.low, dtype=float), np.asarray(init.high, dtype=float)
        # one coordinate at a time: all agents' first components, then the second, ...
        return np.column_stack([rng.uniform(low[j], high[j], n) for j in range(l)])


def _fmt_loc(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def _build_problem(spec) -> Problem:
    if isinstance(spec, PcaExample1):
        return problems.example1_pca(spec.n_agents, spec.dim, spec.matrix_seed, spec.mode,
                                     spec.heterogeneity, spec.gap_ratio, spec.scale)
    if isinstance(spec, PcaCustom):
        return problems.PcaProblem(spec.covariance, spec.n_agents, spec.agent_covariances)
    if isinstance(spec, KwExample2):
        return problems.example2_costs(PowerSchedule(spec.alpha.a, spec.alpha.c, spec.alpha.p), spec.noise_std)
    if isinstance(spec, KwCustom):
        costs = [problems.SeparableCost(spec.dim, tuple(problems.Term(**t.model_dump()) for t in terms))
                 for terms in spec.costs]
        alpha = PowerSchedule(spec.alpha.a, spec.alpha.c, spec.alpha.p)
        return problems.KwProblem(costs, alpha, spec.noise_std, spec.minimum)
    return problems.synthetic_linear_problem(spec.n_agents, spec.dim, spec.matrix_seed, spec.noise_std, spec.root)


def _build_topology(spec, n: int) -> TopologySchedule:
    if isinstance(spec, SeededTopology):
        if spec.kind == "example1_blocks":
            return topology.example1_blocks(n, spec.seed, spec.edge_prob)
        return topology.static_metropolis(n, spec.seed, spec.edge_prob)
    if isinstance(spec, FixedTopology):
        return topology.directed_ring(n) if spec.kind == "ring" else topology.complete_uniform(n)
    mats = [np.asarray(m, dtype=float) for m in spec.matrices]
    for m in mats:
        if m.shape != (n, n):
            raise TopologyError(f"explicit matrices must be {n}x{n}, got {m.shape}")
    return topology.TopologySchedule(mats, b_window=spec.b_window, name="explicit")


def _resolve_x_star(spec, n: int, l: int) -> np.ndarray:
    if isinstance(spec, OnesOverSqrt):
        return np.full(l, 1.0 / np.sqrt(n if spec.of == "n_agents" else l))
    return np.asarray(spec, dtype=float)


def resolve(model: ScenarioModel, source: str = "<memory>") -> Scenario:
    """Build the runnable objects and run the cross-field checks, collecting every error."""
    errs: list[str] = []
    prob = sched = gamma = bounds = None
    try:
        prob = _build_problem(model.problem)
    except (ProblemError, ValueError) as e:
        errs.append(f"problem: {e}")
    try:
        gamma = PowerSchedule(model.gamma.a, model.gamma.c, model.gamma.p)
    except ValueError as e:
        errs.append(f"gamma: {e}")
    try:
        b = model.bounds
        bounds = GeometricBounds(b.m0, b.ratio) if isinstance(b, GeometricSpec) else LinearBounds(b.m0, b.step)
    except ValueError as e:
        errs.append(f"bounds: {e}")
    if prob is None:
        raise ScenarioError(errs, source)
    n, l = prob.n_agents, prob.l
    try:
        sched = _build_topology(model.topology, n)
    except (TopologyError, ValueError) as e:
        errs.append(f"topology: {e}")
    x_star = _resolve_x_star(model.x_star, n, l)
    if x_star.shape != (l,):
        errs.append(f"x_star: expected {l} components, got {x_star.size}")
    init = model.init
    if isinstance(init, InitConstant) and len(init.value) != l:
        errs.append(f"init.value: expected {l} components, got {len(init.value)}")
    if isinstance(init, InitUniformBox):
        if len(init.low) != l or len(init.high) != l:
            errs.append(f"init: low and high need {l} components")
        elif any(lo > hi for lo, hi in zip(init.low, init.high)):
            errs.append("init: low exceeds high")
    if bounds is not None and x_star.shape == (l,):
        # a stand-in step size keeps the bound checks running when gamma already failed
        cfg = AlgorithmConfig(x_star, gamma or PowerSchedule(1.0), bounds, model.horizon, model.seed,
                              model.record_every)
        errs.extend(cfg.validate())
    if errs:
        raise ScenarioError(errs, source)
    return Scenario(model, prob, sched, x_star, gamma, bounds, source)


def parse_text(text: str, source: str = "<memory>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError([f"not valid YAML: {e}"], source) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(["top level must be a mapping"], source)
    try:
        model = ScenarioModel.model_validate(data)
    except ValidationError as e:
        raise ScenarioError([f"{_fmt_loc(err['loc'])}: {err['msg']}" for err in e.errors()], source) from None
    return resolve(model, source)


def parse_scenario(path) -> Scenario:
    """Load and validate a scenario file; raises :class:`ScenarioError` listing every problem."""
    path = Path(path)
    if not path.is_file():
        # fall back to the shipped presets by bare name
        preset = preset_path(path.name)
        if preset is None:
            raise FileNotFoundError(path)
        path = preset
    return parse_text(path.read_text(), str(path))


def preset_dir() -> Path:
    return Path(__file__).parent / "presets"


def preset_path(name: str) -> Path | None:
    for cand in (name, f"{name}.scenario"):
        p = preset_dir() / cand
        if p.is_file():
            return p
    return None


def list_presets() -> list[str]:
    return sorted(p.stem for p in preset_dir().glob("*.scenario"))
