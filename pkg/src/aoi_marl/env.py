"""The multi-UAV data-collection world.

A square area holds N stationary users and M UAVs flying at constant
speed in one of eight compass directions per time slot. A user inside
the transmission range of any UAV has its data collected instantly and
its age-of-information counter reset to zero; otherwise the counter
grows by one each slot. Entities perceive each other symmetrically
within the detection range, which also defines the graph adjacency used
by the policies.

All geometry is planar and in kilometres; one slot is one second.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractViolation

NUM_DIRECTIONS = 8
DIRECTION_ANGLES = np.arange(NUM_DIRECTIONS) * (np.pi / 4.0)

SCENARIO_KEYS = (
    "area_side_km",
    "num_uavs",
    "num_users",
    "xi_km",
    "speed_xi",
    "transmission_range_xi",
    "detection_range_xi",
    "horizon",
    "seed",
)


@dataclass
class WorldConfig:
    """Static world description.

    Ranges and speed are stored in km; scenario files express them in
    multiples of the length unit xi (0.04 km). The flight altitude is
    recorded for completeness but does not enter the planar geometry.
    """

    num_uavs: int = 3
    num_users: int = 6
    area_side: float = 1.0
    speed: float = 0.04
    transmission_range: float = 0.12
    detection_range: float = 0.28
    horizon: int = 80
    uav_start: tuple[float, float] = (0.5, 0.5)
    user_placement_seed: int = 0
    xi: float = 0.04
    altitude_m: float = 50.0

    def __post_init__(self):
        if self.num_uavs > self.num_users:
            raise ContractViolation(
                f"num_uavs ({self.num_uavs}) must not exceed num_users ({self.num_users})"
            )
        if self.detection_range < self.transmission_range:
            raise ContractViolation(
                "detection_range must be at least transmission_range"
            )
        if min(self.speed, self.transmission_range, self.detection_range) <= 0:
            raise ContractViolation("speed and ranges must be positive")
        if self.horizon <= 0:
            raise ContractViolation("horizon must be positive")


@dataclass
class WorldState:
    """Full Markov state: positions, per-user AoI counters, slot index."""

    uav_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (N, 2)
    aoi: np.ndarray  # (N,) non-negative ints
    slot_index: int = 0

    def copy(self) -> "WorldState":
        return WorldState(
            self.uav_positions.copy(),
            self.user_positions.copy(),
            self.aoi.copy(),
            self.slot_index,
        )


@dataclass
class ObservationSet:
    """Per-node partial views plus the detection-range adjacency.

    o_v[i, j] holds the coordinates of UAV j relative to node i (zero when
    unobserved); o_u[i, j] holds relative coordinates and AoI of user j.
    adjacency[i, j] is 1 exactly when nodes i != j are within detection
    range of each other.
    """

    o_v: np.ndarray  # (M+N, M, 2)
    o_u: np.ndarray  # (M+N, N, 3)
    adjacency: np.ndarray  # (M+N, M+N) of {0., 1.}


def reset(config: WorldConfig, seed: Optional[int] = None) -> WorldState:
    """Place UAVs at the start point and users uniformly at random."""
    rng = np.random.default_rng(config.user_placement_seed if seed is None else seed)
    uavs = np.tile(np.asarray(config.uav_start, dtype=np.float64), (config.num_uavs, 1))
    users = rng.uniform(0.0, config.area_side, size=(config.num_users, 2))
    aoi = np.zeros(config.num_users, dtype=np.int64)
    return WorldState(uavs, users, aoi, slot_index=0)


def move_uavs(state: WorldState, action: Sequence[int], config: WorldConfig) -> np.ndarray:
    """Advance every UAV one slot along its chosen direction, clamped to the area."""
    directions = np.asarray(action, dtype=np.int64)
    if directions.shape != (config.num_uavs,):
        raise ContractViolation(
            f"action has shape {directions.shape}, expected ({config.num_uavs},)"
        )
    if np.any(directions < 0) or np.any(directions >= NUM_DIRECTIONS):
        raise ContractViolation("direction indices must lie in 0..7")
    angles = DIRECTION_ANGLES[directions]
    moved = state.uav_positions + config.speed * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1
    )
    return np.clip(moved, 0.0, config.area_side)


def update_aoi(state: WorldState, config: WorldConfig) -> np.ndarray:
    """Reset AoI for covered users (squared-distance test, boundary inclusive).

    Expects the UAV positions in ``state`` to be the already-advanced
    positions for the current slot.
    """
    deltas = state.user_positions[:, None, :] - state.uav_positions[None, :, :]
    sq_dist = np.sum(deltas * deltas, axis=2)
    covered = np.any(sq_dist <= config.transmission_range**2, axis=1)
    return np.where(covered, 0, state.aoi + 1)


def step(state: WorldState, action: Sequence[int], config: WorldConfig):
    """One slot: move, collect, age. Returns (next_state, reward, done).

    The reward is the negative sum of the post-update AoI values.
    """
    if state.slot_index >= config.horizon:
        raise ContractViolation("episode already finished; reset before stepping")
    moved = move_uavs(state, action, config)
    next_state = WorldState(moved, state.user_positions.copy(), state.aoi, state.slot_index)
    next_state.aoi = update_aoi(next_state, config)
    next_state.slot_index = state.slot_index + 1
    reward = -float(next_state.aoi.sum())
    done = next_state.slot_index == config.horizon
    return next_state, reward, done


def build_observations(state: WorldState, config: WorldConfig) -> ObservationSet:
    """Relative-coordinate views within detection range, zero elsewhere."""
    m, n = config.num_uavs, config.num_users
    positions = np.concatenate([state.uav_positions, state.user_positions], axis=0)
    deltas = positions[None, :, :] - positions[:, None, :]  # [i, j] = pos_j - pos_i
    sq_dist = np.sum(deltas * deltas, axis=2)
    visible = sq_dist <= config.detection_range**2
    np.fill_diagonal(visible, False)

    o_v = np.zeros((m + n, m, 2))
    o_u = np.zeros((m + n, n, 3))
    o_v[visible[:, :m]] = deltas[:, :m][visible[:, :m]]
    o_u[:, :, :2][visible[:, m:]] = deltas[:, m:][visible[:, m:]]
    o_u[:, :, 2] = np.where(visible[:, m:], state.aoi[None, :].astype(np.float64), 0.0)
    return ObservationSet(o_v, o_u, visible.astype(np.float64))


def global_state_vector(state: WorldState, config: WorldConfig) -> np.ndarray:
    """Normalized flat state: UAV coords, user coords, AoI values (length 2M+3N)."""
    return np.concatenate(
        [
            state.uav_positions.reshape(-1) / config.area_side,
            state.user_positions.reshape(-1) / config.area_side,
            state.aoi.astype(np.float64) / config.horizon,
        ]
    )


def state_width(config: WorldConfig) -> int:
    return 2 * config.num_uavs + 3 * config.num_users


# -- scenario files and trajectory export -------------------------------


def config_from_scenario(data: dict) -> WorldConfig:
    """Build a WorldConfig from scenario-file keys (ranges in xi units)."""
    for key in SCENARIO_KEYS:
        if key not in data:
            raise ConfigError(f"scenario missing key: {key}")
    unknown = set(data) - set(SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"scenario has unknown key: {sorted(unknown)[0]}")
    xi = float(data["xi_km"])
    if xi <= 0:
        raise ConfigError("scenario key xi_km must be positive")
    try:
        return WorldConfig(
            num_uavs=int(data["num_uavs"]),
            num_users=int(data["num_users"]),
            area_side=float(data["area_side_km"]),
            speed=float(data["speed_xi"]) * xi,
            transmission_range=float(data["transmission_range_xi"]) * xi,
            detection_range=float(data["detection_range_xi"]) * xi,
            horizon=int(data["horizon"]),
            user_placement_seed=int(data["seed"]),
            xi=xi,
        )
    except ContractViolation as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def scenario_from_config(config: WorldConfig) -> dict:
    # xi multiples are human-scale values; rounding hides float division noise
    return {
        "area_side_km": config.area_side,
        "num_uavs": config.num_uavs,
        "num_users": config.num_users,
        "xi_km": config.xi,
        "speed_xi": round(config.speed / config.xi, 9),
        "transmission_range_xi": round(config.transmission_range / config.xi, 9),
        "detection_range_xi": round(config.detection_range / config.xi, 9),
        "horizon": config.horizon,
        "seed": config.user_placement_seed,
    }


def load_scenario(path) -> WorldConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    return config_from_scenario(data)


TRAJECTORY_HEADER = ["slot", "entity_kind", "entity_id", "x_km", "y_km", "aoi"]


def write_trajectory(path, rows: Sequence[dict]) -> None:
    """Write trajectory rows (one per entity per slot); aoi empty for UAVs."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def trajectory_rows(slot: int, state: WorldState, post_aoi: np.ndarray) -> list[dict]:
    """Rows for one slot: positions when acting, AoI after collection."""
    rows = []
    for i, (x, y) in enumerate(state.uav_positions):
        rows.append(
            {"slot": slot, "entity_kind": "uav", "entity_id": i,
             "x_km": repr(float(x)), "y_km": repr(float(y)), "aoi": ""}
        )
    for i, (x, y) in enumerate(state.user_positions):
        rows.append(
            {"slot": slot, "entity_kind": "user", "entity_id": i,
             "x_km": repr(float(x)), "y_km": repr(float(y)), "aoi": int(post_aoi[i])}
        )
    return rows
