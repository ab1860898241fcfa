import numpy as np
import pytest

import cccpde.evaluate as ev
from cccpde.bayes import BetaPosterior
from cccpde.data import Standardizer, gen_mixture, overlap_components
from cccpde.errors import (
    DomainError,
    ModelChecksumError,
    ModelFormatError,
    ModelTruncatedError,
    ModelVersionError,
    ShapeError,
)
from cccpde.model import (
    CccpDeModel,
    FfnnModel,
    GlmRegressor,
    TrainConfig,
    cccpde_forward,
    glm_fit_and_predict,
    joint_loss,
    load_model,
    save_model,
    train,
)
from cccpde.nn import AdamState, bce_loss
from cccpde.numerics import Rng, derive_seed

from helpers import rel_err, worst_param_grad_err


def small_model(dim=4, hidden=6, dropout=0.0, seed=8, head_depth=1):
    return CccpDeModel(dim, 2, hidden=hidden, base_depth=2,
                       head_depth=head_depth, disc_blocks=2,
                       dropout_rate=dropout, rng=Rng(seed))


class TestCccpDeForward:
    def test_untrained_heads_agree(self):
        # scale/shift output layers start at zero, so every head is the
        # same identity transform and all class densities coincide
        model = CccpDeModel(3, 4, hidden=8, rng=Rng(1))
        x = Rng(2).normals(15).reshape(5, 3)
        log_d, _ = cccpde_forward(model, x)
        assert np.abs(log_d - log_d[:, :1]).max() == 0.0

    def test_outputs_are_pure(self):
        model = small_model()
        x = Rng(3).normals(32).reshape(8, 4)
        first = cccpde_forward(model, x)
        second = cccpde_forward(model, x)
        assert np.array_equal(first[0], second[0])
        assert np.array_equal(first[1], second[1])

    def test_finite_for_extreme_inputs(self):
        model = small_model()
        x = np.array([[50.0, -50.0, 25.0, -25.0], [0.0, 0.0, 0.0, 0.0]])
        log_d, scores = cccpde_forward(model, x)
        assert np.all(np.isfinite(log_d))
        assert np.all(np.isfinite(scores))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            small_model(dim=4).forward(np.zeros((2, 3)))


class TestJointLoss:
    def test_weight_degeneracy(self):
        model = small_model(seed=12)
        x = Rng(13).normals(24).reshape(6, 4)
        y = np.array([0, 1, 1, 0, 1, 0])
        flow_only = model.eval_loss(x, y, 1.0, 0.0)
        disc_only = model.eval_loss(x, y, 0.0, 1.0)
        log_d = model.log_densities(x)
        expected_nll = float(-log_d[np.arange(6), y].mean())
        assert flow_only == pytest.approx(expected_nll, rel=1e-12)
        expected_bce = bce_loss(model.disc_scores(x), y.astype(float))[0]
        assert disc_only == pytest.approx(expected_bce, rel=1e-12)
        both = model.eval_loss(x, y, 1.0, 1.0)
        assert both == pytest.approx(flow_only + disc_only, rel=1e-12)

    def test_gradients_match_finite_differences(self):
        model = small_model(seed=14)
        x = Rng(15).normals(32).reshape(8, 4)
        y = np.array([0, 1, 0, 1, 1, 0, 1, 0])

        def run_backward():
            joint_loss(model, x, y, weights=(1.0, 1.0), training=True)

        def eval_loss():
            return model.eval_loss(x, y, 1.0, 1.0)

        assert worst_param_grad_err(model.params(), run_backward,
                                    eval_loss, h=1e-6) < 1e-4

    def test_label_range_validated(self):
        model = small_model()
        with pytest.raises(DomainError):
            joint_loss(model, np.zeros((2, 4)), np.array([0, 2]))

    def test_loss_decreases_over_early_steps(self):
        ds = gen_mixture([(0, (-2.0, 0.0), 0.25, 128),
                          (1, (2.0, 0.0), 0.25, 128)], seed=17)
        model = CccpDeModel(2, 2, hidden=32, rng=Rng(derive_seed(18, "init")))
        model.standardizer = Standardizer.fit(ds.features)
        # full-batch steps so the per-epoch trace is one step per entry
        trace = train(model, ds, TrainConfig(epochs=50, batch_size=256),
                      Rng(derive_seed(18, "shuffle")))
        drops = sum(b < a for a, b in zip(trace, trace[1:]))
        assert drops >= 0.8 * (len(trace) - 1)


class TestTraining:
    def test_single_batch_single_epoch_is_one_step(self, monkeypatch):
        calls = []
        original = AdamState.step

        def counting(self, params):
            calls.append(1)
            original(self, params)

        monkeypatch.setattr(AdamState, "step", counting)
        ds = gen_mixture([(0, (0.0, 0.0), 1.0, 32),
                          (1, (1.0, 1.0), 1.0, 32)], seed=19)
        model = small_model(dim=2, seed=20)
        train(model, ds, TrainConfig(epochs=1, batch_size=64), Rng(21))
        assert len(calls) == 1

    def test_epochs_validated(self):
        with pytest.raises(DomainError):
            TrainConfig(epochs=0)

    def test_same_seed_bit_identical_parameters(self):
        ds = gen_mixture([(0, (-1.0, 0.0), 0.5, 96),
                          (1, (1.0, 0.0), 0.5, 96)], seed=22)
        results = []
        for _ in range(2):
            model = CccpDeModel(2, 2, hidden=16, rng=Rng(derive_seed(23, "init")))
            train(model, ds, TrainConfig(epochs=3, batch_size=32),
                  Rng(derive_seed(23, "shuffle")))
            results.append([p.value.copy() for p in model.params()])
        for a, b in zip(*results):
            assert np.array_equal(a, b)

    def test_empty_dataset_rejected(self):
        ds = gen_mixture([(0, (0.0, 0.0), 1.0, 4)], seed=1)
        empty = type(ds)(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
        with pytest.raises(DomainError):
            train(small_model(dim=2), empty, TrainConfig(epochs=1), Rng(0))

    def test_dim_mismatch_rejected(self):
        ds = gen_mixture([(0, (0.0, 0.0, 0.0), 1.0, 8)], seed=1)
        with pytest.raises(ShapeError):
            train(small_model(dim=2), ds, TrainConfig(epochs=1), Rng(0))

    def test_class_stats_recorded(self):
        ds = gen_mixture([(0, (0.0, 0.0), 1.0, 30),
                          (1, (1.0, 1.0), 1.0, 90)], seed=24)
        model = small_model(dim=2, seed=25)
        train(model, ds, TrainConfig(epochs=1, batch_size=64), Rng(26))
        assert np.array_equal(model.class_counts, [30.0, 90.0])
        assert np.allclose(model.class_priors, [0.25, 0.75])


class TestTrainedQuality:
    def test_separable_ratio_accuracy(self, separable_bundle):
        model = separable_bundle["model"]
        test = separable_bundle["test"]
        log_d = model.log_densities(test.features)
        pred, _ = ev.ratio_test_classify(log_d, np.log(model.class_priors))
        assert (pred == test.labels).mean() > 0.9

    def test_loss_trace_improves(self, separable_bundle):
        trace = separable_bundle["trace"]
        assert trace[-1] < trace[0]

    def test_overlap_identical_centers_accuracy_near_chance(self):
        train_ds = gen_mixture(overlap_components(300, separation=0.0),
                               seed=derive_seed(27, "train"))
        test_ds = gen_mixture(overlap_components(300, separation=0.0),
                              seed=derive_seed(27, "test"))
        model = CccpDeModel(2, 2, hidden=32, rng=Rng(derive_seed(27, "init")))
        model.standardizer = Standardizer.fit(train_ds.features)
        train(model, train_ds, TrainConfig(epochs=8, batch_size=128),
              Rng(derive_seed(27, "shuffle")))
        log_d = model.log_densities(test_ds.features)
        pred, _ = ev.ratio_test_classify(log_d, np.log(model.class_priors))
        accuracy = (pred == test_ds.labels).mean()
        assert 0.4 <= accuracy <= 0.6


class TestGlm:
    def test_coverage_on_held_out_grid(self, glm_bundle):
        mu = glm_bundle["grid_mu"]
        sigma = glm_bundle["grid_sigma"]
        fresh = glm_bundle["fresh_draws"]
        covered = (fresh >= mu - 2 * sigma) & (fresh <= mu + 2 * sigma)
        assert 0.88 <= covered.mean() <= 0.99

    def test_constant_targets_collapse_sigma(self):
        x = np.linspace(-3.0, 3.0, 400)
        y = np.full(400, 5.0)
        _, sigma, _ = glm_fit_and_predict(
            x, y, TrainConfig(epochs=200, batch_size=128), Rng(28))
        assert np.median(sigma) < 0.05

    def test_homoscedastic_sigma_recovered(self):
        rng = Rng(29)
        x = 6.0 * rng.uniforms(2000) - 3.0
        y = np.sin(x) + 0.5 * rng.normals(2000)
        _, sigma, _ = glm_fit_and_predict(
            x, y, TrainConfig(epochs=120, batch_size=128), Rng(30))
        assert 0.4 <= np.median(sigma) <= 0.6

    def test_empty_data_rejected(self):
        with pytest.raises(DomainError):
            glm_fit_and_predict(np.zeros(0), np.zeros(0),
                                TrainConfig(epochs=1), Rng(0))

    def test_variance_head_is_positive(self):
        model = GlmRegressor(1, 16, Rng(31))
        _, sigma = model.predict(np.linspace(-2, 2, 32))
        assert np.all(sigma > 0)


class TestSerialization:
    def test_round_trip_log_densities_bit_exact(self, separable_bundle,
                                                tmp_path):
        model = separable_bundle["model"]
        path = tmp_path / "model.bin"
        save_model(model, path)
        back = load_model(path)
        probes = Rng(32).normals(200).reshape(100, 2) * 3.0
        assert np.array_equal(back.log_densities(probes),
                              model.log_densities(probes))
        assert np.array_equal(back.disc_scores(probes),
                              model.disc_scores(probes))
        assert np.array_equal(back.class_counts, model.class_counts)

    def test_ffnn_round_trip(self, tmp_path):
        model = FfnnModel(2, 16, 2, 0.05, Rng(33))
        path = tmp_path / "ffnn.bin"
        save_model(model, path)
        back = load_model(path)
        probes = Rng(34).normals(40).reshape(20, 2)
        assert np.array_equal(back.score(probes), model.score(probes))

    def test_corrupted_byte_is_checksum_error(self, tmp_path):
        model = small_model(dim=2, seed=35)
        path = tmp_path / "model.bin"
        save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelChecksumError):
            load_model(path)

    def test_future_version_is_version_error(self, tmp_path):
        model = small_model(dim=2, seed=36)
        path = tmp_path / "model.bin"
        save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[8:12] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelVersionError):
            load_model(path)

    def test_truncated_file_is_truncation_error(self, tmp_path):
        model = small_model(dim=2, seed=37)
        path = tmp_path / "model.bin"
        save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(ModelTruncatedError):
            load_model(path)

    def test_wrong_magic_is_format_error(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"NOTAMODEL" + b"\x00" * 64)
        with pytest.raises(ModelFormatError):
            load_model(path)
