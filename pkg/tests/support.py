"""Helpers shared between the unit and acceptance suites."""

import numpy as np

from aoi_marl import env


def permute_observation(obs, perm, num_uavs):
    """Relabel UAVs by perm, swapping whole per-node views.

    Each node keeps its observation row as an opaque unit (the fixed
    flattening order makes the row content part of the node identity);
    node rows and the adjacency are permuted together.
    """
    num_nodes = obs.adjacency.shape[0]
    node_perm = np.concatenate([perm, np.arange(num_uavs, num_nodes)])
    return env.ObservationSet(
        o_v=obs.o_v[node_perm],
        o_u=obs.o_u[node_perm],
        adjacency=obs.adjacency[node_perm][:, node_perm],
    )
