"""
Counterfactual causal discovery between agent decisions.

Every ordered cross-agent decision pair (C, E) with t_C < t_E is a candidate link. The scene is
re-simulated from t_C in four worlds (with/without E, with/without C) and the effect agent's
reward and agency in those worlds decide whether C -> E is kept. Decision links are finally
projected onto an agent-level graph.
"""
from __future__ import annotations

import enum
import logging
import timeit
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

from ccd_errors import InvalidInputError
from ccd_extract import ExtractConfig, extract_decision_set
from ccd_link_tests import (AgencyVerdict, RewardVerdict, agency_indicator, agency_test, hybrid_test,
                            min_reward, reward_test)
from ccd_scene import (TIME_EPS, Decision, DecisionCausalGraph, DecisionSet, EntityCausalGraph, Scene,
                       decision_to_dict, entity_projection)
from ccd_sim import TTC_HORIZON, SimConfig, SimTrace, simulate

logger = logging.getLogger(__name__)

VARIANTS = ('reward', 'agency', 'hybrid')
REWARD_THRESHOLD = 1.0


class WorldVariant(str, enum.Enum):
    EC = 'EC'
    NOT_E_C = 'notE_C'
    E_NOT_C = 'E_notC'
    NOT_E_NOT_C = 'notE_notC'


WORLD_ORDER = (WorldVariant.EC, WorldVariant.NOT_E_C, WorldVariant.E_NOT_C, WorldVariant.NOT_E_NOT_C)


@dataclass(frozen=True)
class CandidateLink:
    cause: Decision
    effect: Decision

    def __post_init__(self):
        if self.cause.agent_id == self.effect.agent_id:
            raise InvalidInputError(f"candidate {self.label()} stays within one agent")
        if not self.cause.decision_time < self.effect.decision_time - TIME_EPS:
            raise InvalidInputError(f"candidate {self.label()} is not ordered in time")

    def label(self):
        return f"{self.cause.label()}->{self.effect.label()}"


@dataclass(frozen=True)
class WorldOutcome:
    variant: WorldVariant
    trace: SimTrace
    min_reward: float
    agency_loss: bool


@dataclass(frozen=True)
class CdConfig:
    variant: str = 'agency'
    reward_threshold: float = REWARD_THRESHOLD
    sim: Optional[SimConfig] = None      # None: scene grid step with ttc_horizon below
    ttc_horizon: float = TTC_HORIZON
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    literal_cct_polarity: bool = False
    any_collision_agency: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if not 0 < self.reward_threshold <= 1:
            raise InvalidInputError(f"reward threshold must lie in (0, 1], got {self.reward_threshold}")


@dataclass(frozen=True)
class CandidateDiagnostics:
    link: CandidateLink
    t_omega: float
    min_rewards: Tuple[float, float, float, float]     # WORLD_ORDER
    agency_loss: Tuple[bool, bool, bool, bool]         # WORLD_ORDER

    def reward(self, reward_threshold) -> RewardVerdict:
        return reward_test(self.min_rewards, reward_threshold)

    def agency(self) -> AgencyVerdict:
        return agency_test(self.agency_loss)

    def accepted(self, variant, reward_threshold) -> bool:
        if variant == 'reward':
            return self.reward(reward_threshold).accepted
        if variant == 'agency':
            return self.agency().accepted
        return hybrid_test(self.agency(), self.reward(reward_threshold).accepted)


@dataclass(frozen=True)
class ScoredScene:
    """Everything discovery needs that does not depend on the variant or the reward threshold."""
    scene_id: str
    decisions: DecisionSet
    candidates: Tuple[CandidateDiagnostics, ...]
    wall_time_s: float


@dataclass(frozen=True)
class DiscoveryResult:
    scene_id: str
    variant: str
    reward_threshold: Optional[float]
    decision_graph: DecisionCausalGraph
    entity_graph: EntityCausalGraph
    candidates: Tuple[CandidateDiagnostics, ...]
    wall_time_s: float


def enumerate_candidates(d: DecisionSet) -> List[CandidateLink]:
    decisions = d.all()
    links = [CandidateLink(c, e) for c in decisions for e in decisions
             if c.agent_id != e.agent_id and c.decision_time < e.decision_time - TIME_EPS]
    return sorted(links, key=lambda l: (l.cause.decision_time, l.effect.decision_time,
                                        l.cause.agent_id, l.effect.agent_id))


def intervene(d: DecisionSet, removed) -> DecisionSet:
    """Drop decisions; the agent falls back to its previous goal (or its held initial speed)."""
    return d.without(removed)


def world_decisions(d: DecisionSet, link: CandidateLink) -> Dict[WorldVariant, DecisionSet]:
    return {
        WorldVariant.EC: d,
        WorldVariant.NOT_E_C: intervene(d, [link.effect]),
        WorldVariant.E_NOT_C: intervene(d, [link.cause]),
        WorldVariant.NOT_E_NOT_C: intervene(d, [link.effect, link.cause]),
    }


def effect_horizon(scene: Scene, link: CandidateLink):
    """t_omega: end of the effect agent's capture window, capped at the end of the scene."""
    return min(scene.track(link.effect.agent_id).t_last, scene.grid.t_end)


def run_worlds(scene: Scene, d: DecisionSet, link: CandidateLink, cfg: CdConfig) -> Dict[WorldVariant, WorldOutcome]:
    if link.cause not in d or link.effect not in d:
        raise InvalidInputError(f"candidate {link.label()} uses decisions outside the decision set")
    t_alpha, t_effect = link.cause.decision_time, link.effect.decision_time
    t_omega = effect_horizon(scene, link)
    base = cfg.sim if cfg.sim is not None else SimConfig(dt=scene.grid.dt, ttc_horizon=cfg.ttc_horizon)
    sim_cfg = replace(base, start_time=t_alpha, horizon=max(t_omega - t_alpha, 0.0))

    outcomes = {}
    for variant, decisions in world_decisions(d, link).items():
        trace = simulate(scene, decisions, sim_cfg)
        outcomes[variant] = WorldOutcome(
            variant, trace,
            min_reward(trace, link.effect.agent_id, t_effect, t_omega, cfg.literal_cct_polarity),
            agency_indicator(trace, link.effect.agent_id, link.cause.agent_id, t_effect, t_omega,
                             cfg.any_collision_agency))
    return outcomes


def score_candidates(scene: Scene, cfg: CdConfig,
                     on_worlds: Optional[Callable[[CandidateLink, Dict[WorldVariant, WorldOutcome]], None]] = None
                     ) -> ScoredScene:
    """Extract decisions and run the four worlds for every candidate of the scene."""
    if len(scene.tracks) < 2:
        raise InvalidInputError(f"scene {scene.scene_id} needs at least 2 agents")
    start = timeit.default_timer()
    decisions = extract_decision_set(scene.tracks, cfg.extract)
    candidates = enumerate_candidates(decisions)
    logger.info("scene %s: %d decision(s), %d candidate link(s)", scene.scene_id, len(decisions), len(candidates))

    diagnostics = []
    for link in candidates:
        outcomes = run_worlds(scene, decisions, link, cfg)
        if on_worlds is not None:
            on_worlds(link, outcomes)
        diagnostics.append(CandidateDiagnostics(
            link, effect_horizon(scene, link),
            tuple(outcomes[v].min_reward for v in WORLD_ORDER),
            tuple(outcomes[v].agency_loss for v in WORLD_ORDER)))
    return ScoredScene(scene.scene_id, decisions, tuple(diagnostics), timeit.default_timer() - start)


def assemble_graphs(scored: ScoredScene, variant, reward_threshold) -> Tuple[DecisionCausalGraph, EntityCausalGraph]:
    links = frozenset((c.link.cause, c.link.effect) for c in scored.candidates
                      if c.accepted(variant, reward_threshold))
    decision_graph = DecisionCausalGraph(scored.decisions, links)
    return decision_graph, entity_projection(decision_graph)


def discover(scene: Scene, cfg: CdConfig, on_worlds=None) -> DiscoveryResult:
    start = timeit.default_timer()
    scored = score_candidates(scene, cfg, on_worlds)
    decision_graph, entity_graph = assemble_graphs(scored, cfg.variant, cfg.reward_threshold)
    threshold = None if cfg.variant == 'agency' else cfg.reward_threshold
    return DiscoveryResult(scene.scene_id, cfg.variant, threshold, decision_graph, entity_graph,
                           scored.candidates, timeit.default_timer() - start)


def result_for(scored: ScoredScene, variant, reward_threshold) -> DiscoveryResult:
    """Discovery result of an already scored scene for one (variant, threshold) cell."""
    start = timeit.default_timer()
    decision_graph, entity_graph = assemble_graphs(scored, variant, reward_threshold)
    threshold = None if variant == 'agency' else reward_threshold
    return DiscoveryResult(scored.scene_id, variant, threshold, decision_graph, entity_graph, scored.candidates,
                           scored.wall_time_s + timeit.default_timer() - start)


def discovery_report(result: DiscoveryResult, config_hash=None):
    threshold = result.reward_threshold
    candidates = []
    for c in result.candidates:
        reward = c.reward(threshold if threshold is not None else REWARD_THRESHOLD)
        agency = c.agency()
        candidates.append({
            'cause': decision_to_dict(c.link.cause),
            'effect': decision_to_dict(c.link.effect),
            't_omega': c.t_omega,
            'min_rewards': {v.value: r for v, r in zip(WORLD_ORDER, c.min_rewards)},
            'agency_loss': {v.value: a for v, a in zip(WORLD_ORDER, c.agency_loss)},
            'dR_plus': reward.dr_plus,
            'dR_minus': reward.dr_minus,
            'dR': reward.score,
            'agency_flags': agency.flags(),
            'accepted': c.accepted(result.variant, threshold if threshold is not None else REWARD_THRESHOLD),
        })
    return {
        'scene_id': result.scene_id,
        'variant': result.variant,
        'lambda_dR': threshold,
        'config_hash': config_hash,
        'decisions': [decision_to_dict(d) for d in result.decision_graph.decisions.all()],
        'decision_links': [{'cause': decision_to_dict(c), 'effect': decision_to_dict(e)}
                           for c, e in result.decision_graph.sorted_links()],
        'entity_nodes': list(result.entity_graph.nodes),
        'entity_edges': [[a, b] for a, b in sorted(result.entity_graph.edges)],
        'candidates': candidates,
        'wall_time_s': result.wall_time_s,
    }
