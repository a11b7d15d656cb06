import numpy as np
import pytest

from fedtap import data, engine, nn
from fedtap.engine import ClientHandle, ClientKind, FLSystem
from fedtap.nn import TrainConfig


def make_system(n_clients=4, p_c=1.0, seed=0, epochs=1, n_per_client=30):
    spec = nn.mlp_spec([4, 8, 2])
    ds = data.make_synthetic(4, 2, n_per_client * n_clients, seed=seed)
    shards = data.partition(ds, n_clients, seed=seed + 1)
    pool = [
        ClientHandle(i, ClientKind.HONEST, train_data=shards[i],
                     train_cfg=TrainConfig(epochs, 8, 0.1, seed + i),
                     weight=len(shards[i]))
        for i in range(n_clients)
    ]
    return FLSystem(spec, nn.init_model(spec, seed), pool, p_c,
                    np.random.default_rng(seed + 2))


class ScriptedClient:
    """Agent that always uploads a fixed parameter vector."""

    def __init__(self, params):
        self.params = params
        self.calls = 0

    def step(self, ctx):
        self.calls += 1
        return self.params if ctx.selected else None


# ------------------------------------------------------------- select_clients

def test_select_all_when_pc_one():
    system = make_system(n_clients=5, p_c=1.0)
    assert engine.select_clients(system) == [0, 1, 2, 3, 4]


def test_select_count_is_floor():
    system = make_system(n_clients=10, p_c=0.5)
    for _ in range(20):
        assert len(engine.select_clients(system)) == 5
    system = make_system(n_clients=7, p_c=0.3)
    for _ in range(20):
        assert len(engine.select_clients(system)) == 2  # floor(2.1)


def test_select_zero_rejected():
    system = make_system(n_clients=3, p_c=1.0)
    system.p_c = 0.1  # floor(0.3) == 0
    with pytest.raises(ValueError, match="floor"):
        engine.select_clients(system)


def test_select_frequency_uniform():
    system = make_system(n_clients=10, p_c=0.5, seed=5)
    n_rounds = 10_000
    counts = np.zeros(10)
    for _ in range(n_rounds):
        for cid in engine.select_clients(system):
            counts[cid] += 1
    sigma = np.sqrt(n_rounds * 0.5 * 0.5)
    assert np.all(np.abs(counts - n_rounds * 0.5) <= 3 * sigma)


def test_select_deterministic_given_rng():
    a = make_system(n_clients=10, p_c=0.5, seed=9)
    b = make_system(n_clients=10, p_c=0.5, seed=9)
    for _ in range(50):
        assert engine.select_clients(a) == engine.select_clients(b)


# ----------------------------------------------------------- aggregate_fedavg

def test_fedavg_single_model_is_itself():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(engine.aggregate_fedavg([(v, 5.0)]), v)


def test_fedavg_equal_weights_mean():
    a = np.array([0.0, 2.0])
    b = np.array([2.0, 0.0])
    np.testing.assert_array_equal(
        engine.aggregate_fedavg([(a, 3.0), (b, 3.0)]), [1.0, 1.0])


def test_fedavg_weighted_mean_by_hand():
    # (0*1 + 4*3) / (1+3) = 3
    out = engine.aggregate_fedavg([(np.array([0.0]), 1.0), (np.array([4.0]), 3.0)])
    np.testing.assert_allclose(out, [3.0])


def test_fedavg_idempotent_on_copies():
    v = np.random.default_rng(1).normal(size=50)
    out = engine.aggregate_fedavg([(v.copy(), 2.0)] * 7)
    np.testing.assert_allclose(out, v, atol=1e-12)


def test_fedavg_convexity():
    rng = np.random.default_rng(2)
    models = [(rng.normal(size=20), float(w)) for w in rng.uniform(0.5, 4, 5)]
    out = engine.aggregate_fedavg(models)
    stacked = np.stack([m for m, _ in models])
    assert np.all(out >= stacked.min(axis=0) - 1e-12)
    assert np.all(out <= stacked.max(axis=0) + 1e-12)


def test_fedavg_errors():
    with pytest.raises(ValueError, match="nothing"):
        engine.aggregate_fedavg([])
    with pytest.raises(ValueError, match="zero"):
        engine.aggregate_fedavg([(np.zeros(2), 0.0), (np.zeros(2), 0.0)])
    with pytest.raises(ValueError, match="length"):
        engine.aggregate_fedavg([(np.zeros(2), 1.0), (np.zeros(3), 1.0)])


# ------------------------------------------------------------------ run_round

def test_round_with_zero_epochs_keeps_global():
    system = make_system(n_clients=3, p_c=1.0, epochs=0)
    before = system.global_params.copy()
    engine.run_round(system)
    np.testing.assert_allclose(system.global_params, before, atol=1e-12)
    assert system.t == 1


def test_round_single_client_equals_its_local_model():
    system = make_system(n_clients=1, p_c=1.0)
    client = system.pool[0]
    expected = nn.train_local(
        system.global_params, system.spec, client.train_data,
        TrainConfig(client.train_cfg.epochs, client.train_cfg.batch_size,
                    client.train_cfg.learning_rate,
                    engine._round_seed(client.train_cfg.shuffle_seed, 0, 0)))
    engine.run_round(system)
    np.testing.assert_array_equal(system.global_params, expected)


def test_round_scripted_clients_weighted_mean():
    system = make_system(n_clients=3, p_c=1.0)
    system.pool[0].weight = 1.0
    system.pool[1].weight = 2.0
    system.pool[2].weight = 3.0
    vs = [np.full_like(system.global_params, float(i)) for i in range(3)]
    agents = {i: ScriptedClient(vs[i]) for i in range(3)}
    engine.run_round(system, agents)
    expected = (1.0 * 0 + 2.0 * 1 + 3.0 * 2) / 6.0
    np.testing.assert_allclose(system.global_params, expected)


def test_agents_stepped_every_round_even_unselected():
    system = make_system(n_clients=4, p_c=0.5)
    agent = ScriptedClient(system.global_params.copy())
    for _ in range(10):
        engine.run_round(system, {3: agent})
    assert agent.calls == 10


def test_round_detection_flags_planted_outlier():
    system = make_system(n_clients=3, p_c=1.0)
    far = system.global_params + 100.0
    log = engine.run_round(system, {2: ScriptedClient(far)}, detect=True)
    assert log.outlier_id == 2
    assert log.distances[2] > max(log.distances[0], log.distances[1])


def test_broadcast_fn_applies_to_clients_but_not_server_state():
    system = make_system(n_clients=2, p_c=1.0, epochs=0)
    before = system.global_params.copy()
    shift = lambda m: m + 1.0
    engine.run_round(system, broadcast_fn=shift)
    # epochs=0 clients return the broadcast copy, so the new global is m+1
    np.testing.assert_array_equal(system.global_params, before + 1.0)


# ------------------------------------------------------------------- pretrain

def test_pretrain_zero_rounds_noop():
    system = make_system()
    before = system.global_params.copy()
    engine.pretrain(system, 0)
    np.testing.assert_array_equal(system.global_params, before)
    assert system.t == 0


def test_pretrain_rejects_attacker_pool():
    system = make_system(n_clients=2)
    system.pool[1].kind = ClientKind.SENDER
    with pytest.raises(ValueError, match="honest"):
        engine.pretrain(system, 1)


def test_pretrain_reaches_accuracy_on_synthetic():
    system = make_system(n_clients=5, p_c=1.0, n_per_client=40, seed=3)
    holdout = data.make_synthetic(4, 2, 200, seed=3)  # same blob layout
    engine.pretrain(system, 50)
    assert nn.accuracy(system.global_params, system.spec, holdout) >= 0.95


def test_replay_determinism():
    logs = []
    for _ in range(2):
        system = make_system(n_clients=4, p_c=0.5, seed=7)
        for _ in range(5):
            engine.run_round(system)
        logs.append([(l.round_index, tuple(l.selected_ids), l.snapshot_id)
                     for l in system.round_logs])
    assert logs[0] == logs[1]
