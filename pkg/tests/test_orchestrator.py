import math

import numpy as np
import pytest
from pydantic import ValidationError

from safl_sim.errors import DivergenceError
from safl_sim.services import orchestrator
from safl_sim.services.aggregator import WeightKind
from safl_sim.services.local_trainer import run_local_epochs
from safl_sim.services.orchestrator import (
    Algorithm,
    DeviceState,
    Federation,
    SimConfig,
    global_estimate,
    run,
)
from safl_sim.utils.helpers import DeviceStream, Stream, device_rng, make_rng

TOY = {
    "n": 2,
    "T": 1,
    "algorithm": "fedavg",
    "dataset": {"kind": "toy"},
    "objective": {"kind": "lasso", "reg": 1.0},
    "partition": {"mean_size": 1, "holdout_fraction": 0.0},
    "local_solver": "oracle",
}


class TestSimConfig:
    def test_partition_inherits_device_count(self, make_config):
        assert make_config(n=7).partition.n == 7

    def test_selected_defaults_to_all(self, make_config):
        assert make_config().selected == 5
        assert make_config(s=2).selected == 2

    def test_s_bounded_by_n(self, make_config):
        with pytest.raises(ValidationError):
            make_config(s=6)

    def test_missing_n(self):
        with pytest.raises(ValidationError) as info:
            SimConfig.model_validate({"T": 3})
        assert "n" in str(info.value)

    def test_unknown_key(self, make_config):
        with pytest.raises(ValidationError) as info:
            make_config(anneal={"temperature": 3.0})
        assert "temperature" in str(info.value)

    def test_lasso_requires_oracle(self):
        with pytest.raises(ValidationError):
            SimConfig.model_validate({**TOY, "local_solver": "sgd"})

    def test_ridge_requires_positive_reg(self, make_config):
        with pytest.raises(ValidationError):
            make_config(objective={"reg": 0.0})


class TestToyRound:
    def test_average_is_worse_than_local(self):
        federation = Federation.prepare(SimConfig.model_validate(TOY))
        record = federation.run_round(1)

        np.testing.assert_allclose(federation.w_star, [0.0, 4 / 9], atol=1e-15)
        np.testing.assert_allclose(federation.server.z_bar, [0.0, 2 / 9], atol=1e-15)
        w2 = federation.devices[1].w
        assert float(np.linalg.norm(federation.w_star - federation.server.z_bar)) == pytest.approx(2 / 9, abs=1e-12)
        assert float(np.linalg.norm(federation.w_star - w2)) == pytest.approx(0.0, abs=1e-15)
        assert record.mse == pytest.approx((2 / 9) ** 2, abs=1e-12)
        assert record.uploads == 2

    def test_global_estimate_of_toy_models(self):
        federation = Federation.prepare(SimConfig.model_validate(TOY))
        federation.run_round(1)
        np.testing.assert_allclose(global_estimate(federation.devices, [0.5, 0.5]), [0.0, 2 / 9], atol=1e-15)


class TestRun:
    def test_zero_rounds(self, make_config):
        assert run(make_config(T=0)) == []

    def test_deterministic(self, make_config):
        config = make_config(T=4)
        assert run(config) == run(config)

    def test_worker_count_does_not_matter(self, make_config):
        config = make_config(T=4, n=8, s=6)
        assert run(config, workers=1) == run(config, workers=4)

    @pytest.mark.parametrize("L", [0.5, 10.0, 1e6])
    def test_epsilon_one_matches_fedavg(self, make_config, L):
        safl = make_config(n=10, T=20, algorithm="safl", anneal={"epsilon": 1.0, "L": L})
        fedavg = make_config(n=10, T=20, algorithm="fedavg", anneal={"epsilon": 1.0, "L": L})
        a, b = Federation.prepare(safl), Federation.prepare(fedavg)
        assert a.run() == b.run()
        for da, db in zip(a.devices, b.devices):
            assert np.array_equal(da.w, db.w)

    def test_cooled_annealing_matches_fedavg(self, make_config):
        # при L = 0.025 уже p(1) = e^−40: маска всегда единичная, и ε ни на что не влияет
        safl = make_config(n=10, T=20, algorithm="safl", anneal={"epsilon": 0.3, "L": 0.025})
        fedavg = make_config(n=10, T=20, algorithm="fedavg", anneal={"epsilon": 0.3, "L": 0.025})
        a, b = Federation.prepare(safl), Federation.prepare(fedavg)
        assert a.run() == b.run()
        for da, db in zip(a.devices, b.devices):
            assert np.array_equal(da.w, db.w)

    def test_mixed_starts_average_to_server_model(self, make_config, monkeypatch):
        # полное участие, равные веса, p ≈ 1: среднее стартовых точек совпадает с z̄
        config = make_config(n=6, T=3, anneal={"epsilon": 0.3, "L": 1e9})
        federation = Federation.prepare(config)
        starts: dict[int, np.ndarray] = {}
        original = orchestrator.run_local_epochs

        def spy(device, *args, **kwargs):
            starts[device.device_id] = device.w.copy()
            return original(device, *args, **kwargs)

        monkeypatch.setattr(orchestrator, "run_local_epochs", spy)
        federation.run_round(1)
        for r in (2, 3):
            z_bar = federation.server.z_bar.copy()
            starts.clear()
            federation.run_round(r)
            assert sorted(starts) == list(range(config.n))
            assert not all(np.array_equal(start, z_bar) for start in starts.values())
            np.testing.assert_allclose(np.mean(list(starts.values()), axis=0), z_bar, rtol=0, atol=1e-12)

    def test_single_device_fedavg_is_plain_sgd(self, make_config):
        config = make_config(n=1, T=6, algorithm="fedavg", partition={"max_labels_per_device": 1})
        federation = Federation.prepare(config)
        federation.run()

        shard = federation.devices[0].shard
        plain = DeviceState(
            device_id=0,
            w=config.init_scale * make_rng(config.seed, Stream.INIT, 0).standard_normal(federation.objective.param_dim),
            shard=shard,
            sgd_rng=device_rng(config.seed, 0, DeviceStream.SGD),
            mask_rng=device_rng(config.seed, 0, DeviceStream.MASK),
            gate_rng=device_rng(config.seed, 0, DeviceStream.GATE),
        )
        for _ in range(config.T):
            plain.w, _ = run_local_epochs(plain, federation.objective, config.E, config.lr, config.sampling)
        assert np.array_equal(plain.w, federation.devices[0].w)

    def test_local_only_limit(self, make_config, monkeypatch):
        config = make_config(T=5, anneal={"epsilon": 0.0, "L": 1e9, "mask_mode": "scalar"})
        federation = Federation.prepare(config)
        trained: dict[int, np.ndarray] = {}
        original = orchestrator.run_local_epochs

        def spy(device, *args, **kwargs):
            trained[device.device_id] = device.w.copy()
            return original(device, *args, **kwargs)

        monkeypatch.setattr(orchestrator, "run_local_epochs", spy)
        for r in range(1, config.T + 1):
            before = [d.w.copy() for d in federation.devices]
            trained.clear()
            federation.run_round(r)
            # перед обучением модель устройства не сдвинулась к z̄
            assert trained
            for k, start in trained.items():
                assert np.array_equal(start, before[k])

    def test_uploads_equal_selected(self, make_config):
        for algorithm in ("fedavg", "safl"):
            records = run(make_config(n=6, s=4, T=5, algorithm=algorithm))
            assert all(rec.uploads == 4 for rec in records)
            assert all(rec.expected_uploads == 4 for rec in records)

    def test_probability_strictly_decreases(self, make_config):
        records = run(make_config(T=8))
        assert all(b.p < a.p for a, b in zip(records, records[1:]))
        assert records[0].p == pytest.approx(math.exp(-1 / 5.0))

    def test_early_stop(self, make_config):
        records = run(make_config(T=30, mse_threshold=1e6))
        assert len(records) == 1

    def test_divergence_reports_round(self, make_config):
        with pytest.raises(DivergenceError) as info:
            run(make_config(lr={"alpha": 1e100}))
        assert info.value.round_index == 1
        assert "round 1" in str(info.value)

    def test_ida_first_round_falls_back_to_uniform(self, make_config):
        records = run(make_config(T=3, weights={"kind": "ida"}))
        assert len(records) == 3
        assert all(np.isfinite(rec.mse) for rec in records)

    def test_mse_decreases_overall(self, make_config):
        records = run(make_config(T=30, n=5, algorithm="fedavg"))
        assert records[-1].mse < records[0].mse


class TestExtended:
    def test_upload_accounting(self, classification_config):
        config = classification_config(algorithm="safl_extended", T=8)
        records = run(config)
        assert all(rec.uploads <= rec.selected for rec in records)
        assert sum(rec.uploads for rec in records) <= config.n * config.T
        # без обратной связи в первом раунде все q = 1
        assert records[0].uploads == config.n
        assert records[0].expected_uploads == config.n

    def test_uploads_track_probabilities_over_repetitions(self, classification_config, monkeypatch):
        probabilities: list[float] = []
        original = Federation._device_round

        def spy(self, device, z_bar, r, p):
            outcome = original(self, device, z_bar, r, p)
            probabilities.append(outcome.q)
            return outcome

        monkeypatch.setattr(Federation, "_device_round", spy)
        uploads = 0
        for seed in range(8):
            config = classification_config(
                algorithm="safl_extended", T=10, seed=seed, gate={"nu": 0.2, "accuracy_proxy": "inverse_risk"}
            )
            records = run(config)
            uploads += sum(rec.uploads for rec in records)
            assert sum(rec.expected_uploads for rec in records) <= config.n * config.T

        expected = sum(probabilities)
        sd = math.sqrt(sum(q * (1.0 - q) for q in probabilities))
        assert len(probabilities) == 8 * 10 * 12
        assert abs(uploads - expected) <= 4 * sd

    def test_label_pure_device_is_throttled(self, classification_config):
        config = classification_config(
            algorithm="safl_extended",
            T=200,
            partition={"biased_devices": 1},
            gate={"nu": 0.02, "accuracy_proxy": "inverse_risk"},
        )
        federation = Federation.prepare(config)
        (biased,) = [d for d in federation.devices if d.shard.biased]
        assert len(set(biased.train.y.tolist())) == 1

        federation.run_round(1)
        sent, probabilities = [], []
        for r in range(2, config.T + 1):
            record = federation.run_round(r)
            sent.append(record.biased_uploads)
            # q этого раунда = exp(−Δ_r/ν) по записанному разрыву
            assert biased.gate.q == pytest.approx(math.exp(-biased.gate.delta / config.gate.nu))
            probabilities.append(biased.gate.q)

        rounds = len(sent)
        rate = sum(sent) / rounds
        mean_q = float(np.mean(probabilities))
        sigma = math.sqrt(sum(q * (1.0 - q) for q in probabilities)) / rounds
        assert mean_q < 0.5
        assert rate <= mean_q + 3 * sigma

    def test_no_uploads_keeps_global_model(self, classification_config, monkeypatch):
        monkeypatch.setattr(orchestrator, "decide_upload", lambda q, rng: False)
        federation = Federation.prepare(classification_config(algorithm="safl_extended"))
        record = federation.run_round(1)
        assert record.uploads == 0
        assert federation.server.z_bar is None
        federation.run_round(2)
        assert federation.server.z_bar is None

    def test_gate_state_recorded(self, classification_config):
        federation = Federation.prepare(classification_config(algorithm="safl_extended", T=3))
        federation.run()
        for device in federation.devices:
            assert 0.0 < device.gate.q <= 1.0
            assert 0.0 <= device.gate.delta < 1.0

    def test_mixed_reference(self, classification_config):
        config = classification_config(algorithm="safl_extended", T=3, gate={"reference": "mixed"})
        assert len(run(config)) == 3


def test_size_proportional_global_optimum(make_config):
    federation = Federation.prepare(make_config(weights={"kind": "size_proportional"}))
    sizes = np.array([len(d.train) for d in federation.devices], dtype=float)
    np.testing.assert_allclose(federation.eta, sizes / sizes.sum())
    assert federation.config.weights.kind == WeightKind.SIZE_PROPORTIONAL


def test_algorithm_values():
    assert {a.value for a in Algorithm} == {"fedavg", "safl", "safl_extended"}
