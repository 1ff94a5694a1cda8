"""Graph-structured recurrent Q-policies.

Each UAV node encodes its flattened partial observation together with its
recurrent hidden state through a shared GRU cell; user nodes go through a
shared two-layer perceptron. The node features are then refined by a
stack of message-passing layers over the detection-range graph and a
shared linear head reads 8 action values off every UAV node. Three
variants exist:

* ``edgeconv``      -- sums f(x_i || x_j - x_i) over neighbors j
* ``agg-baseline``  -- applies g(x_i || sum of neighbor features)
* ``none-baseline`` -- no graph layers at all (recurrent encoder + head)

All parameters are shared across nodes of the same kind, which makes the
Q-matrix equivariant under UAV relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .env import NUM_DIRECTIONS, ObservationSet
from .errors import ContractViolation
from .nn import (
    GRUCell,
    Linear,
    Module,
    Tensor,
    TwoLayerMLP,
    concat,
    index_rows,
    segment_sum,
)

VARIANTS = ("edgeconv", "agg-baseline", "none-baseline")


@dataclass
class EncoderConfig:
    feature_width: int = 64
    recurrent_width: int = 64
    num_graph_layers: int = 2
    graph_hidden_width: int = 64
    variant: str = "edgeconv"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"unknown encoder variant: {self.variant!r}")
        if min(self.feature_width, self.recurrent_width, self.graph_hidden_width) <= 0:
            raise ContractViolation("encoder widths must be positive")
        if self.variant != "none-baseline" and self.num_graph_layers < 1:
            raise ContractViolation("graph variants need at least one layer")
        if self.feature_width != self.recurrent_width:
            # UAV node features are the GRU output, so the widths coincide
            raise ContractViolation("feature_width must equal recurrent_width")


def observation_width(num_uavs: int, num_users: int) -> int:
    return 2 * num_uavs + 3 * num_users


def uav_input_width(num_uavs: int, num_users: int) -> int:
    """UAV encoders also receive the one-hot previous action.

    The action feedback is what lets the recurrent cell integrate its own
    motion over time: the purely relative observations are all zero
    whenever nothing is in detection range, and without a motion trace a
    lone UAV cannot tell open field from a corner.
    """
    return observation_width(num_uavs, num_users) + NUM_DIRECTIONS


def one_hot_actions(last_actions: np.ndarray) -> np.ndarray:
    """(batch, M) direction indices to one-hot rows; -1 encodes 'none'."""
    flat = np.asarray(last_actions, dtype=np.int64).reshape(-1)
    out = np.zeros((flat.size, NUM_DIRECTIONS))
    taken = flat >= 0
    out[np.nonzero(taken)[0], flat[taken]] = 1.0
    return out


def flatten_observation(obs: ObservationSet, aoi_scale: float,
                        coord_scale: float = 1.0) -> np.ndarray:
    """Per-node input rows: own o_v block then own o_u block, fixed order.

    AoI entries are scaled by ``aoi_scale`` and relative coordinates by
    ``coord_scale`` (1/detection range) to keep network inputs O(1); zero
    rows for unobserved entities are preserved.
    """
    o_v = obs.o_v * coord_scale
    o_u = obs.o_u.copy()
    o_u[:, :, :2] *= coord_scale
    o_u[:, :, 2] *= aoi_scale
    num_nodes = o_v.shape[0]
    return np.concatenate(
        [o_v.reshape(num_nodes, -1), o_u.reshape(num_nodes, -1)], axis=1
    )


def edges_from_adjacency(adjacency: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Edge list (dst, src): src j is a neighbor of dst i when A[i, j] = 1."""
    dst, src = np.nonzero(adjacency)
    return dst, src


def batch_graph(observations: Sequence[ObservationSet], num_uavs: int,
                num_users: int, aoi_scale: float, coord_scale: float = 1.0):
    """Stack B observation sets into one block-diagonal graph.

    Node ids: UAV i of sample b -> b * M + i; user j of sample b ->
    B * M + b * N + j. Returns (uav_inputs, user_inputs, dst, src).
    """
    batch = len(observations)
    m, n = num_uavs, num_users
    width = observation_width(m, n)
    uav_inputs = np.empty((batch * m, width))
    user_inputs = np.empty((batch * n, width))
    dst_parts, src_parts = [], []
    for b, obs in enumerate(observations):
        rows = flatten_observation(obs, aoi_scale, coord_scale)
        uav_inputs[b * m:(b + 1) * m] = rows[:m]
        user_inputs[b * n:(b + 1) * n] = rows[m:]
        dst, src = edges_from_adjacency(obs.adjacency)
        offset = np.where(dst < m, b * m + dst, batch * m + b * n + (dst - m))
        dst_parts.append(offset)
        offset = np.where(src < m, b * m + src, batch * m + b * n + (src - m))
        src_parts.append(offset)
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.intp)
    src = np.concatenate(src_parts) if src_parts else np.empty(0, dtype=np.intp)
    return uav_inputs, user_inputs, dst, src


class EdgeConvLayer(Module):
    """x'_i = sum_{j in N(i)} f(x_i || x_j - x_i); empty sums give zeros."""

    def __init__(self, name: str, feature_width: int, hidden_width: int,
                 rng: np.random.Generator):
        self.mlp = TwoLayerMLP(name, 2 * feature_width, hidden_width, feature_width, rng)

    def apply(self, features: Tensor, dst, src, num_nodes: int) -> Tensor:
        x_i = index_rows(features, dst)
        x_j = index_rows(features, src)
        messages = self.mlp(concat([x_i, x_j - x_i], axis=1))
        return segment_sum(messages, dst, num_nodes)

    def __call__(self, features: Tensor, adjacency: np.ndarray) -> Tensor:
        dst, src = edges_from_adjacency(adjacency)
        return self.apply(features, dst, src, features.data.shape[0])


class AggLayer(Module):
    """x'_i = g(x_i || sum of neighbor features); isolated nodes get g(x_i || 0)."""

    def __init__(self, name: str, feature_width: int, hidden_width: int,
                 rng: np.random.Generator):
        self.mlp = TwoLayerMLP(name, 2 * feature_width, hidden_width, feature_width, rng)

    def apply(self, features: Tensor, dst, src, num_nodes: int) -> Tensor:
        neighbor_sum = segment_sum(index_rows(features, src), dst, num_nodes)
        return self.mlp(concat([features, neighbor_sum], axis=1))

    def __call__(self, features: Tensor, adjacency: np.ndarray) -> Tensor:
        dst, src = edges_from_adjacency(adjacency)
        return self.apply(features, dst, src, features.data.shape[0])


class PolicyNetwork(Module):
    """Shared-parameter policy producing one row of 8 Q-values per UAV."""

    def __init__(self, num_uavs: int, num_users: int, horizon: int,
                 config: EncoderConfig, rng: np.random.Generator,
                 name: str = "policy", coord_scale: float = 1.0):
        self.num_uavs = num_uavs
        self.num_users = num_users
        self.config = config
        self.aoi_scale = 1.0 / horizon
        self.coord_scale = coord_scale
        width = observation_width(num_uavs, num_users)
        f, h = config.feature_width, config.recurrent_width
        self.uav_cell = GRUCell(f"{name}/uav_gru", uav_input_width(num_uavs, num_users),
                                h, rng)
        self.graph_layers: list[Module] = []
        if config.variant != "none-baseline":
            self.user_mlp = TwoLayerMLP(f"{name}/user_mlp", width, f, f, rng)
            layer_cls = EdgeConvLayer if config.variant == "edgeconv" else AggLayer
            self.graph_layers = [
                layer_cls(f"{name}/graph{i}", f, config.graph_hidden_width, rng)
                for i in range(config.num_graph_layers)
            ]
        self.q_head = Linear(f"{name}/q_head", f, NUM_DIRECTIONS, rng)
        # start the Q outputs near zero: graph-layer features are neighbor
        # sums with O(10) norms, and a full-scale head lets early TD errors
        # slingshot the Q values far past the target range
        self.q_head.weight.data *= 0.1
        self.q_head.bias.data *= 0.1

    def zero_hidden(self, batch: int = 1) -> np.ndarray:
        return np.zeros((batch, self.num_uavs, self.config.recurrent_width))

    def q_values(self, observations: Sequence[ObservationSet],
                 hidden: np.ndarray,
                 last_actions: Optional[np.ndarray] = None) -> tuple[Tensor, np.ndarray]:
        """Q rows for a batch of observation sets.

        ``hidden`` is (B, M, h) from the previous slot (constants: gradient
        does not propagate through time); ``last_actions`` is (B, M) with
        the previous slot's direction indices (-1 or None at an episode
        start). Returns the (B*M, 8) Q tensor in sample-major row order
        and the new hidden array.
        """
        batch = len(observations)
        m, n = self.num_uavs, self.num_users
        if hidden.shape != (batch, m, self.config.recurrent_width):
            raise ContractViolation(
                f"hidden shape {hidden.shape} does not match "
                f"({batch}, {m}, {self.config.recurrent_width})"
            )
        if last_actions is None:
            last_actions = np.full((batch, m), -1, dtype=np.int64)
        uav_inputs, user_inputs, dst, src = batch_graph(
            observations, m, n, self.aoi_scale, self.coord_scale
        )
        uav_inputs = np.concatenate([uav_inputs, one_hot_actions(last_actions)], axis=1)
        h_in = Tensor(hidden.reshape(batch * m, -1))
        z_uav = self.uav_cell(Tensor(uav_inputs), h_in)
        new_hidden = z_uav.data.reshape(batch, m, -1).copy()

        if self.config.variant == "none-baseline":
            return self.q_head(z_uav), new_hidden

        z_user = self.user_mlp(Tensor(user_inputs))
        features = concat([z_uav, z_user], axis=0)
        num_nodes = batch * (m + n)
        for layer in self.graph_layers:
            features = layer.apply(features, dst, src, num_nodes)
        uav_rows = index_rows(features, np.arange(batch * m))
        return self.q_head(uav_rows), new_hidden

    def q_matrix(self, obs: ObservationSet, hidden: np.ndarray,
                 last_action: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
        """Single-sample convenience: (M, 8) Q values and new (M, h) hidden."""
        last = None if last_action is None else np.asarray(last_action)[None]
        q, new_hidden = self.q_values([obs], hidden[None], last)
        return q.data, new_hidden[0]


def select_actions(q_matrix: np.ndarray, epsilon: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Per-UAV epsilon-greedy pick; argmax ties break to the lowest index.

    The random stream is consumed identically regardless of outcomes so
    rollouts stay reproducible.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolation("epsilon must lie in [0, 1]")
    m = q_matrix.shape[0]
    coins = rng.random(m)
    randoms = rng.integers(0, NUM_DIRECTIONS, size=m)
    greedy = np.argmax(q_matrix, axis=1)
    return np.where(coins < epsilon, randoms, greedy).astype(np.int64)
