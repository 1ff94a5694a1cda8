"""Acceptance suite: one test per criterion, printing a PASS line each.

Criteria 6 to 9 train real policies and take the bulk of the runtime;
their runs are shared through session-scoped fixtures.
"""

import itertools
import time

import numpy as np

from aoi_marl import env, trainer
from aoi_marl.encoder import (
    EdgeConvLayer,
    EncoderConfig,
    PolicyNetwork,
    edges_from_adjacency,
)
from aoi_marl.mixer import MixerConfig, MixerNetwork, argmax_consistency_check
from aoi_marl.nn import (
    GRUCell,
    Linear,
    Parameter,
    Tensor,
    TwoLayerMLP,
    absolute,
    mean,
    monitor_kinks,
    relu,
)
from aoi_marl.nn.gradcheck import check_gradients

from oracle_env import rollout as oracle_rollout
from support import permute_observation


def report(criterion: str, passed: bool, detail: str = ""):
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, f"{criterion} failed: {detail}"


def _kink_safe(make_instance, margin=1e-3, tries=60):
    """Resample until no relu/abs input sits within margin of its kink."""
    for attempt in range(tries):
        loss_fn, params = make_instance(attempt)
        with monitor_kinks() as monitor:
            loss_fn()
        if monitor.min_gap >= margin:
            return loss_fn, params
    raise RuntimeError("no kink-safe instance found")


# -- criterion 1: gradient suite ----------------------------------------


def _grad_case_linear(rng):
    def make(_):
        layer = Linear("lin", 5, 4, rng)
        x = Tensor(rng.normal(size=(3, 5)))
        return (lambda: mean(layer(x) * layer(x))), layer.parameters()

    return make


def _grad_case_relu(rng):
    def make(_):
        p = Parameter("p", rng.normal(size=(4, 5)))
        return (lambda: mean(relu(p) * relu(p))), [p]

    return make


def _grad_case_absolute(rng):
    def make(_):
        p = Parameter("p", rng.normal(size=(4, 5)))
        w = Tensor(rng.normal(size=(5, 2)))
        return (lambda: mean(absolute(p) @ w)), [p]

    return make


def _grad_case_gru(rng):
    def make(_):
        cell = GRUCell("gru", 4, 5, rng)
        x = Tensor(rng.normal(size=(2, 4)))
        h = Tensor(rng.normal(size=(2, 5)))
        return (lambda: mean(cell(x, h) * cell(x, h))), cell.parameters()

    return make


def _grad_case_edgeconv(rng):
    def make(_):
        layer = EdgeConvLayer("ec", 4, 5, rng)
        features = Tensor(rng.normal(size=(5, 4)))
        adjacency = (rng.random((5, 5)) < 0.5).astype(float)
        adjacency = np.triu(adjacency, 1)
        adjacency = adjacency + adjacency.T
        return (lambda: mean(layer(features, adjacency) * layer(features, adjacency))), \
            layer.parameters()

    return make


def _grad_case_hypernet(rng):
    def make(_):
        net = TwoLayerMLP("hyper", 6, 5, 4, rng)
        x = Tensor(rng.normal(size=(3, 6)))
        out_weights = Tensor(rng.normal(size=(4, 1)))
        return (lambda: mean(absolute(net(x)) @ out_weights)), net.parameters()

    return make


def _grad_case_composite(rng):
    world = env.WorldConfig(num_uavs=2, num_users=2, horizon=10,
                            user_placement_seed=0)
    encoder_config = EncoderConfig(feature_width=4, recurrent_width=4,
                                   num_graph_layers=1, graph_hidden_width=4)
    mixer_config = MixerConfig(embedding_width=4, hypernet_hidden_width=6)

    def make(attempt):
        seed = int(rng.integers(1 << 31)) + attempt
        policy, mixer = trainer.build_networks(world, encoder_config, mixer_config, seed)
        state = env.reset(world, seed=seed)
        state.uav_positions[:] = np.random.default_rng(seed).uniform(0.3, 0.7, (2, 2))
        state.aoi[:] = np.random.default_rng(seed + 1).integers(0, 5, 2)
        obs = env.build_observations(state, world)
        hidden = np.random.default_rng(seed + 2).normal(size=(1, 2, 4))
        state_vec = env.global_state_vector(state, world)
        actions = np.random.default_rng(seed + 3).integers(0, 8, 2)
        y = np.random.default_rng(seed + 4).normal(size=(1, 1))

        def loss_fn():
            from aoi_marl.nn import take_per_row  # noqa: PLC0415

            q, _ = policy.q_values([obs], hidden)
            chosen = take_per_row(q, actions).reshape((1, 2))
            q_tot = mixer.mix(chosen, Tensor(state_vec[None]))
            return trainer.td_loss(q_tot, y)

        return loss_fn, policy.parameters() + mixer.parameters()

    return make


def test_c01_gradient_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    cases = {
        "linear": (_grad_case_linear(rng), None),
        "relu": (_grad_case_relu(rng), None),
        "absolute": (_grad_case_absolute(rng), None),
        "gru": (_grad_case_gru(rng), None),
        "edgeconv": (_grad_case_edgeconv(rng), None),
        "hypernet": (_grad_case_hypernet(rng), None),
        "composite": (_grad_case_composite(rng), 2),
    }
    worst_overall = 0.0
    for name, (make, entries) in cases.items():
        worst = 0.0
        for _ in range(100):
            loss_fn, params = _kink_safe(make)
            err = check_gradients(loss_fn, params, h=1e-5,
                                  entries_per_param=entries, rng=rng)
            worst = max(worst, err)
        assert worst < 1e-4, f"{name}: worst relative error {worst:.2e}"
        worst_overall = max(worst_overall, worst)
    elapsed = time.perf_counter() - started
    report(
        "C1 gradient-suite",
        worst_overall < 1e-4 and elapsed < 60.0,
        f"(worst rel err {worst_overall:.2e}, {elapsed:.1f}s)",
    )


# -- criterion 2: mixer monotonicity ------------------------------------


def test_c02_mixer_monotonicity():
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    violations = 0
    for trial in range(1000):
        mixer = MixerNetwork(
            3, 6, MixerConfig(embedding_width=8, hypernet_hidden_width=8),
            np.random.default_rng(trial),
        )
        q = rng.normal(size=3) * rng.uniform(0.5, 30)
        state = rng.normal(size=6)
        agent = int(rng.integers(3))
        delta = float(rng.uniform(1e-4, 5.0))
        base = mixer.mix(q, state).data.item()
        bumped = q.copy()
        bumped[agent] += delta
        if mixer.mix(bumped, state).data.item() < base:
            violations += 1
    elapsed = time.perf_counter() - started
    report(
        "C2 mixer-monotonicity",
        violations == 0 and elapsed < 10.0,
        f"(0 of 1000 tuples decreased, {elapsed:.1f}s)",
    )


# -- criterion 3: argmax consistency ------------------------------------


def test_c03_argmax_consistency():
    started = time.perf_counter()
    rng = np.random.default_rng(11)
    checked = 0
    for m in (2, 3):
        count = 0
        while count < 100:
            mixer = MixerNetwork(
                m, 6, MixerConfig(embedding_width=8, hypernet_hidden_width=16),
                np.random.default_rng(1000 * m + count),
            )
            q_matrix = rng.normal(size=(m, 8)) * rng.uniform(0.5, 10)
            if any(np.sum(q_matrix[i] == q_matrix[i].max()) > 1 for i in range(m)):
                continue  # unique-argmax cases only
            state = rng.normal(size=6)
            assert argmax_consistency_check(q_matrix, mixer, state), \
                f"argmax inconsistency at M={m}, instance {count}"
            count += 1
            checked += 1
    elapsed = time.perf_counter() - started
    report(
        "C3 argmax-consistency",
        checked == 200 and elapsed < 60.0,
        f"(200 exhaustive enumerations agree, {elapsed:.1f}s)",
    )


# -- criterion 4: permutation invariance --------------------------------


def test_c04_permutation_invariance():
    started = time.perf_counter()
    rng = np.random.default_rng(13)

    # mixer: invariant under every agent permutation for M <= 4
    for m in (2, 3, 4):
        mixer = MixerNetwork(
            m, 5, MixerConfig(embedding_width=8, hypernet_hidden_width=16),
            np.random.default_rng(m),
        )
        q = rng.normal(size=m) * 10
        state = rng.normal(size=5)
        base = mixer.mix(q, state).data.item()
        for perm in itertools.permutations(range(m)):
            assert abs(mixer.mix(q[list(perm)], state).data.item() - base) < 1e-9

    # encoder: Q matrix equivariant under UAV relabeling
    world = env.WorldConfig(num_uavs=4, num_users=5, horizon=40, user_placement_seed=2)
    state = env.reset(world, seed=2)
    state.uav_positions[:] = rng.uniform(0.3, 0.7, (4, 2))
    state.aoi[:] = rng.integers(0, 10, 5)
    obs = env.build_observations(state, world)
    for variant in ("edgeconv", "agg-baseline", "none-baseline"):
        policy = PolicyNetwork(
            4, 5, world.horizon,
            EncoderConfig(feature_width=16, recurrent_width=16, variant=variant),
            np.random.default_rng(3),
        )
        hidden = rng.normal(size=(1, 4, 16))
        q, _ = policy.q_values([obs], hidden)
        for perm in (np.array(p) for p in itertools.permutations(range(4))):
            q_perm, _ = policy.q_values(
                [permute_observation(obs, perm, 4)], hidden[:, perm]
            )
            assert np.max(np.abs(q_perm.data - q.data[perm])) < 1e-9

    # edgeconv: invariant under neighbor (edge list) reordering
    layer = EdgeConvLayer("ec", 8, 8, np.random.default_rng(5))
    features = Tensor(rng.normal(size=(6, 8)))
    adjacency = (rng.random((6, 6)) < 0.6).astype(float)
    adjacency = np.triu(adjacency, 1)
    adjacency = adjacency + adjacency.T
    dst, src = edges_from_adjacency(adjacency)
    base = layer.apply(features, dst, src, 6)
    for _ in range(20):
        perm = rng.permutation(len(dst))
        shuffled = layer.apply(features, dst[perm], src[perm], 6)
        assert np.max(np.abs(shuffled.data - base.data)) < 1e-9

    elapsed = time.perf_counter() - started
    report("C4 permutation-invariance", elapsed < 30.0, f"({elapsed:.1f}s)")


# -- criterion 5: environment oracle ------------------------------------


def test_c05_environment_oracle():
    started = time.perf_counter()
    rng = np.random.default_rng(17)
    for trial in range(100):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(m, 8))
        horizon = int(rng.integers(10, 40))
        world = env.WorldConfig(
            num_uavs=m, num_users=n, horizon=horizon,
            user_placement_seed=int(rng.integers(1 << 16)),
        )
        state = env.reset(world)
        actions = rng.integers(0, 8, size=(horizon, m))
        trace, rewards = [], []
        rolled = state
        for k in range(horizon):
            rolled, reward, _ = env.step(rolled, actions[k], world)
            trace.append(rolled.aoi.tolist())
            rewards.append(reward)
        expected_trace, expected_rewards = oracle_rollout(
            tuple(world.uav_start),
            [tuple(u) for u in state.user_positions],
            [tuple(a) for a in actions],
            world.speed,
            world.transmission_range,
            world.area_side,
        )
        assert trace == expected_trace, f"AoI trace mismatch on trial {trial}"
        assert rewards == expected_rewards, f"reward mismatch on trial {trial}"
    elapsed = time.perf_counter() - started
    report("C5 environment-oracle", elapsed < 10.0, f"(100 exact traces, {elapsed:.1f}s)")


# -- criterion 10: decentralized evaluation ------------------------------


def test_c10_evaluation_never_calls_mixer():
    world = env.WorldConfig(num_uavs=3, num_users=6, horizon=80, user_placement_seed=1)
    policy, _ = trainer.build_networks(world, EncoderConfig(), MixerConfig(), 0)
    calls_before = MixerNetwork.total_mix_calls
    result = trainer.evaluate_policy(world, policy, episodes=3)
    calls_after = MixerNetwork.total_mix_calls
    import inspect

    signature_clean = "mixer" not in inspect.signature(trainer.evaluate_policy).parameters
    report(
        "C10 decentralized-evaluation",
        calls_after == calls_before and signature_clean and len(result.per_episode) == 3,
        f"(mix calls during eval: {calls_after - calls_before})",
    )
