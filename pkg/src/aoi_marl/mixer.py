"""Permutation-invariant monotonic mixing of per-agent Q-values.

One shared inner hypernetwork maps the global state to the weights and
bias of a monotone feature map applied to every agent's Q-value; the
per-agent features are summed (the permutation-invariant aggregation)
and an outer hypernetwork, also driven by the global state, produces the
weights and bias of the final affine read-out:

    phi_i  = leaky_relu(|w_in(s)| * q_i + b_in(s))    (shared across agents)
    agg    = sum_i phi_i
    q_tot  = |w_out(s)| . agg + b_out(s)

Monotonicity in every q_i needs exactly two things: non-negative weight
vectors (the absolute function) and increasing activations. The
increasing activation is a leaky ReLU because returns in this task are
always negative and the learned per-agent values follow them below zero:
a plain ReLU's dead zone (or a saturating ELU tail) would cut the policy
networks off from the gradient for good. Conditioning the hypernetworks
on the state alone (never on the local Q-values or their aggregate) is
what makes the monotonicity exact. The final read-out stays affine so
negative totals are representable. The mixer exists only in the training
graph.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ContractViolation
from .nn import (
    Module,
    Tensor,
    TwoLayerMLP,
    absolute,
    leaky_relu,
    index_rows,
    segment_sum,
    slice_cols,
)


@dataclass
class MixerConfig:
    embedding_width: int = 32
    hypernet_hidden_width: int = 64
    aggregation: str = "sum"

    def __post_init__(self):
        if min(self.embedding_width, self.hypernet_hidden_width) <= 0:
            raise ContractViolation("mixer widths must be positive")
        if self.aggregation != "sum":
            raise ContractViolation("only sum aggregation is supported")


class MixerNetwork(Module):
    """State-conditioned monotone mixer; tracks mix() calls for auditing."""

    total_mix_calls = 0  # class-wide counter; evaluation must never bump it

    def __init__(self, num_agents: int, state_width: int, config: MixerConfig,
                 rng: np.random.Generator, name: str = "mixer"):
        self.num_agents = num_agents
        self.state_width = state_width
        self.config = config
        embed = config.embedding_width
        hidden = config.hypernet_hidden_width
        self.inner_hyper = TwoLayerMLP(f"{name}/inner_hyper", state_width, hidden,
                                       2 * embed, rng)
        self.outer_hyper = TwoLayerMLP(f"{name}/outer_hyper", state_width, hidden,
                                       embed + 1, rng)

    # -- pieces ---------------------------------------------------------

    def inner_map(self, q: Union[float, Tensor], state) -> Tensor:
        """Monotone per-agent feature: leaky_relu(|w_in(s)| * q + b_in(s)).

        Accepts a scalar q with a flat state vector, or an (n, 1) tensor
        with an (n, state_width) state batch. The same inner parameters
        serve every agent.
        """
        if not isinstance(q, Tensor):
            q = Tensor(np.full((1, 1), float(q)))
        if not isinstance(state, Tensor):
            state = Tensor(np.asarray(state, dtype=np.float64))
        if state.data.ndim == 1:
            state = state.reshape((1, -1))
        embed = self.config.embedding_width
        wb = self.inner_hyper(state)
        w = slice_cols(wb, 0, embed)
        b = slice_cols(wb, embed, 2 * embed)
        return leaky_relu(absolute(w) * q + b)

    def mix(self, q_locals, state) -> Tensor:
        """Total Q for (B, M) local Q-values and (B, S) states -> (B, 1).

        Flat inputs of shape (M,) and (S,) are treated as a batch of one.
        """
        MixerNetwork.total_mix_calls += 1
        if not isinstance(q_locals, Tensor):
            q_locals = Tensor(np.asarray(q_locals, dtype=np.float64))
        if not isinstance(state, Tensor):
            state = Tensor(np.asarray(state, dtype=np.float64))
        if q_locals.data.ndim == 1:
            q_locals = q_locals.reshape((1, -1))
        if state.data.ndim == 1:
            state = state.reshape((1, -1))
        batch, m = q_locals.data.shape
        if m != self.num_agents:
            raise ContractViolation(
                f"expected {self.num_agents} local Q-values per sample, got {m}"
            )
        if state.data.shape != (batch, self.state_width):
            raise ContractViolation(
                f"state shape {state.data.shape} does not match "
                f"({batch}, {self.state_width})"
            )
        embed = self.config.embedding_width
        agent_of_row = np.repeat(np.arange(batch), m)
        q_col = q_locals.reshape((batch * m, 1))
        state_rows = index_rows(state, agent_of_row)
        phi = self.inner_map(q_col, state_rows)
        aggregate = segment_sum(phi, agent_of_row, batch)

        wb = self.outer_hyper(state)
        w_out = slice_cols(wb, 0, embed)
        b_out = slice_cols(wb, embed, embed + 1)
        return (absolute(w_out) * aggregate).sum(axis=1, keepdims=True) + b_out


def argmax_consistency_check(q_matrix: np.ndarray, mixer: MixerNetwork,
                             state: np.ndarray) -> bool:
    """Does the greedy joint action also maximize the mixed total Q?

    Enumerates every joint action (feasible for small agent counts) and
    compares the maximizer of the mixed value against the tuple of
    per-agent argmaxes. With per-agent ties, any maximizing tuple must
    reach the same total.
    """
    m, num_actions = q_matrix.shape
    if m != mixer.num_agents:
        raise ContractViolation("q_matrix rows do not match the mixer's agent count")
    joint = np.array(list(itertools.product(range(num_actions), repeat=m)))
    q_rows = q_matrix[np.arange(m)[None, :], joint]  # (A^M, M)
    states = np.tile(np.asarray(state, dtype=np.float64)[None, :], (len(joint), 1))
    totals = mixer.mix(Tensor(q_rows), Tensor(states)).data[:, 0]
    greedy = tuple(int(np.argmax(q_matrix[i])) for i in range(m))
    greedy_total = totals[int(np.ravel_multi_index(greedy, (num_actions,) * m))]
    return bool(np.isclose(greedy_total, totals.max(), rtol=0.0, atol=1e-9))
