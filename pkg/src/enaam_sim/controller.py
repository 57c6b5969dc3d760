"""Control policies: ENAAM lookahead search, DETA-R heuristic, no management.

The lookahead search expands, level by level, every feasible control from
every state reached so far, accumulating the weighted cost along each path,
and applies the first control of the cheapest path.  ``exhaustive_oracle`` is
a separate depth-first enumeration kept for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .power_model import (
    ControlAction,
    Mode,
    SiteConfig,
    SystemState,
    gamma_min,
    max_site_energy,
    site_energy,
    step_buffer,
    vm_count,
)

DEFAULT_GRID_POINTS = 11
DEFAULT_HORIZON = 2

_MODE_RANK = {Mode.SAVING: 0, Mode.ACTIVE: 1}


@dataclass(frozen=True)
class CostWeights:
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class FeasibleSet:
    zeta_options: tuple[Mode, ...]
    gamma_grid: tuple[float, ...]

    def actions(self) -> list[ControlAction]:
        return [ControlAction(m, g) for g in self.gamma_grid for m in self.zeta_options]

    def __len__(self) -> int:
        return len(self.zeta_options) * len(self.gamma_grid)


@dataclass(frozen=True)
class PolicyDecision:
    action: ControlAction
    predicted_cost: float
    explored_states: int


def tie_key(action: ControlAction) -> tuple[float, int]:
    return action.gamma, _MODE_RANK[action.mode]


def weighted_cost(energy_kj: float, phi: float, gamma: float, weights: CostWeights, cfg: SiteConfig) -> float:
    """Energy/QoS trade-off for one slot.

    The energy term is divided by the full-load drain unless
    ``cfg.raw_cost_units`` is set, so both terms live on a unit scale.
    """
    energy = energy_kj if cfg.raw_cost_units else energy_kj / max_site_energy(cfg)
    return (1.0 - weights.alpha) * energy + weights.alpha * (phi - gamma) ** 2


def cost_j(action: ControlAction, phi: float, weights: CostWeights, cfg: SiteConfig) -> float:
    return weighted_cost(site_energy(action, phi, cfg), phi, action.gamma, weights, cfg)


def select_mode(beta: float, load: float, cfg: SiteConfig) -> Mode:
    """Radio sleeps when the buffer is low or little traffic is expected."""
    if beta < cfg.beta_low or load < cfg.l_low:
        return Mode.SAVING
    return Mode.ACTIVE


def feasible_set(beta: float, load_forecast: float, cfg: SiteConfig,
                 grid_points: int = DEFAULT_GRID_POINTS) -> FeasibleSet:
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    g_lo = gamma_min(cfg)
    phi_hat = min(load_forecast / cfg.l_max, 1.0)
    if phi_hat <= g_lo:
        grid = (g_lo,)
    else:
        grid = tuple(float(g) for g in np.linspace(g_lo, phi_hat, grid_points))
    return FeasibleSet((select_mode(beta, load_forecast, cfg),), grid)


def _check_inputs(horizon: int, load_forecast: Sequence[float], harvest_forecast: Sequence[float]) -> None:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(load_forecast) < horizon or len(harvest_forecast) < horizon:
        raise ValueError("forecasts shorter than the horizon")


def _transition(beta, action, load_hat, harvest_hat, weights, cfg):
    phi_hat = min(load_hat / cfg.l_max, 1.0)
    drained = site_energy(action, phi_hat, cfg)
    beta_next = step_buffer(beta, harvest_hat, drained, cfg)[0]
    return beta_next, weighted_cost(drained, phi_hat, action.gamma, weights, cfg)


@dataclass
class _Node:
    state: SystemState
    cost: float
    first: ControlAction | None


def enaam_decide(state: SystemState, horizon: int, weights: CostWeights, cfg: SiteConfig,
                 load_forecast: Sequence[float], harvest_forecast: Sequence[float],
                 grid_points: int = DEFAULT_GRID_POINTS) -> PolicyDecision:
    """Breadth-first lookahead over ``horizon`` slots.

    ``load_forecast[k]`` and ``harvest_forecast[k]`` are the estimates for
    slot t+k.  Among equal-cost leaves the first action with the lowest
    gamma wins, then Saving before Active.
    """
    _check_inputs(horizon, load_forecast, harvest_forecast)
    frontier = [_Node(state, 0.0, None)]
    explored = 0
    for k in range(horizon):
        reached = []
        for node in frontier:
            options = feasible_set(node.state.buffer_kj, load_forecast[k], cfg, grid_points)
            for action in options.actions():
                beta_next, step_cost = _transition(node.state.buffer_kj, action, load_forecast[k],
                                                   harvest_forecast[k], weights, cfg)
                nxt = SystemState(vm_count(action.gamma, cfg.m_vms), beta_next)
                reached.append(_Node(nxt, node.cost + step_cost, node.first or action))
                explored += 1
        frontier = reached

    best = min(frontier, key=lambda n: (n.cost, tie_key(n.first)))
    return PolicyDecision(best.first, best.cost, explored)


def exhaustive_oracle(state: SystemState, horizon: int, weights: CostWeights, cfg: SiteConfig,
                      load_forecast: Sequence[float], harvest_forecast: Sequence[float],
                      grid_points: int = DEFAULT_GRID_POINTS) -> PolicyDecision:
    """Depth-first enumeration of every control sequence; reference for tests."""
    _check_inputs(horizon, load_forecast, harvest_forecast)
    sequences = 0

    def best_from(beta: float, depth: int, acc: float) -> float:
        nonlocal sequences
        if depth == horizon:
            sequences += 1
            return acc
        fs = feasible_set(beta, load_forecast[depth], cfg, grid_points)
        best = float("inf")
        for mode in fs.zeta_options:
            for g in fs.gamma_grid:
                a = ControlAction(mode, g)
                beta_next, c = _transition(beta, a, load_forecast[depth], harvest_forecast[depth], weights, cfg)
                best = min(best, best_from(beta_next, depth + 1, acc + c))
        return best

    root = feasible_set(state.buffer_kj, load_forecast[0], cfg, grid_points)
    candidates = []
    for mode in root.zeta_options:
        for g in root.gamma_grid:
            a = ControlAction(mode, g)
            beta1, c = _transition(state.buffer_kj, a, load_forecast[0], harvest_forecast[0], weights, cfg)
            candidates.append((best_from(beta1, 1, c), tie_key(a), a))
    cost, _, action = min(candidates, key=lambda x: (x[0], x[1]))
    return PolicyDecision(action, cost, sequences)


def deta_r_decide(lhat_now: float, lhat_next: float, rng: np.random.Generator, cfg: SiteConfig,
                  beta: float) -> ControlAction:
    """Random utilization: high band if load is expected to rise, low band otherwise."""
    if lhat_next - lhat_now > 0:
        g = rng.uniform(0.6, 1.0)
    else:
        g = rng.uniform(0.0, 0.6)
    g = min(max(g, gamma_min(cfg)), 1.0)
    return ControlAction(select_mode(beta, lhat_now, cfg), g)


def no_management_decide() -> ControlAction:
    return ControlAction(Mode.ACTIVE, 1.0)
