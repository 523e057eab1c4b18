import numpy as np
import pytest

from tabseq.errors import ConfigError, DivergenceError, VocabularyMismatch
from tabseq.models import ModelSpec, build_model
from tabseq.preprocess import MASK, N_SPECIALS, fit_preprocess
from tabseq.schema import impute_missing, make_windows
from tabseq.training import (
    PRESET_NAMES,
    TrainConfig,
    TrainHistory,
    fine_tune,
    load_preset,
    mask_tokens,
    predict_scores,
    preset_train_config,
    pretrain_mlm,
    save_pretrained,
    split_entities,
    train_supervised,
)


def separable_data(n=200, seed=0):
    """Binary windows separated by the mean of their first feature column."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n).astype(np.float64)
    x = rng.standard_normal((n, 2, 2)) * 0.1
    x[:, :, 0] += np.where(y == 1.0, 3.0, -3.0)[:, None]
    return (x,), y


def token_fixture(fraud_dataset, n=5, joint=False):
    d = impute_missing(fraud_dataset)
    art = fit_preprocess(d, bins=6)
    windows = make_windows(d, n, 5)
    from tabseq.preprocess import encode_tokens

    grids = [encode_tokens(w, d.schema, art.vocab, art.quantizers, keep_raw=joint)
             for w in windows]
    ids = np.stack([g.ids for g in grids])
    raw = np.stack([g.raw for g in grids]) if joint else None
    y = np.array([w.label for w in windows], dtype=np.float64)
    return art, ids, raw, y


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ConfigError):
            TrainConfig(optimizer="sgd")
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(mlm_probability=1.5)

    def test_json_round_trip(self):
        cfg = TrainConfig(learning_rate=5e-5, batch_size=8, mlm_probability=0.15,
                          window_size=10, stride=5, seed=3)
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_history_csv(self, tmp_path):
        h = TrainHistory()
        h.append(1, 0.5, 0.6, 0.1, 1.25)
        h.append(2, 0.4, 0.55, 0.2, 1.5)
        path = tmp_path / "history.csv"
        h.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_metric,seconds"
        assert len(lines) == 3 and lines[1].startswith("1,0.5,")


class TestSplitEntities:
    def test_no_entity_overlap_and_sizes(self, fraud_dataset):
        windows = make_windows(impute_missing(fraud_dataset), 5, 5)
        train, val, test = split_entities(windows, 0.15, 0.15, seed=0)
        groups = [{w.entity for w in part} for part in (train, val, test)]
        assert not (groups[0] & groups[1]) and not (groups[0] & groups[2])
        assert not (groups[1] & groups[2])
        total = len(groups[0] | groups[1] | groups[2])
        assert len(groups[1]) == round(0.15 * total)
        assert len(groups[2]) == round(0.15 * total)

    def test_deterministic(self, fraud_dataset):
        windows = make_windows(impute_missing(fraud_dataset), 5, 5)
        a = split_entities(windows, 0.2, 0.2, seed=1)
        b = split_entities(windows, 0.2, 0.2, seed=1)
        assert [w.entity for w in a[0]] == [w.entity for w in b[0]]


class TestMaskTokens:
    def test_fraction_concentrates_around_p(self):
        rng = np.random.default_rng(0)
        ids = np.full((100, 100, 100), N_SPECIALS + 1, dtype=np.int64)
        _, mask, _ = mask_tokens(ids, 0.15, rng)
        assert abs(mask.mean() - 0.15) < 0.00075  # 0.5% of p over 1e6 cells

    def test_specials_never_masked(self):
        rng = np.random.default_rng(1)
        ids = np.array([[[0, 1, 2, 3, N_SPECIALS]]] * 50)
        masked, mask, targets = mask_tokens(ids, 0.9, rng)
        assert not mask[:, :, :4].any()
        assert (targets == ids).all()
        assert (masked[mask] == MASK).all()
        assert (masked[~mask] == ids[~mask]).all()

    def test_all_pad_grid(self):
        rng = np.random.default_rng(2)
        ids = np.zeros((4, 3, 2), dtype=np.int64)
        _, mask, _ = mask_tokens(ids, 0.5, rng)
        assert not mask.any()

    def test_seeded_determinism(self):
        ids = np.full((10, 4, 3), 7, dtype=np.int64)
        a = mask_tokens(ids, 0.3, np.random.default_rng(5))[1]
        b = mask_tokens(ids, 0.3, np.random.default_rng(5))[1]
        assert (a == b).all()

    def test_bad_probability(self):
        with pytest.raises(ConfigError):
            mask_tokens(np.zeros((1, 1, 1), dtype=np.int64), 0.0,
                        np.random.default_rng(0))


class TestTrainSupervised:
    def make_model(self, seed=0):
        return build_model(ModelSpec("vanilla", 2, 2, hidden=8, heads=2,
                                     layers=1), seed=seed)

    def test_separable_fixture_reaches_high_accuracy(self):
        inputs, y = separable_data()
        # the fixture really is linearly separable: a threshold on the mean
        # of the first column classifies it perfectly
        feature = inputs[0][:, :, 0].mean(axis=1)
        assert ((feature > 0) == (y == 1.0)).all()
        model = self.make_model()
        cfg = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=50,
                          patience=None, seed=0)
        model, _ = train_supervised(model, (inputs, y), None, cfg)
        acc = ((predict_scores(model, inputs) >= 0.5) == (y == 1.0)).mean()
        assert acc >= 0.99

    def test_zero_learning_rate_keeps_params(self):
        inputs, y = separable_data(60)
        model = self.make_model()
        before = model.state()
        cfg = TrainConfig(learning_rate=0.0, batch_size=16, epochs=3,
                          patience=None, seed=0)
        model, hist = train_supervised(model, (inputs, y), None, cfg)
        after = model.state()
        assert all((before[k] == after[k]).all() for k in before)

    def test_deterministic(self):
        inputs, y = separable_data(80)
        runs = []
        for _ in range(2):
            model = self.make_model(seed=3)
            cfg = TrainConfig(learning_rate=1e-3, batch_size=16, epochs=4,
                              patience=None, seed=7)
            model, hist = train_supervised(model, (inputs, y), None, cfg)
            runs.append((model.state(), hist.train_loss))
        assert runs[0][1] == runs[1][1]
        assert all((runs[0][0][k] == runs[1][0][k]).all() for k in runs[0][0])

    def test_early_stopping_restores_best(self):
        inputs, y = separable_data(120, seed=1)
        val_inputs, val_y = separable_data(40, seed=2)
        model = self.make_model(seed=1)
        cfg = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=30,
                          patience=2, seed=1)
        model, hist = train_supervised(model, (inputs, y), (val_inputs, val_y), cfg)
        assert len(hist.epochs) <= 30
        # the returned parameters reproduce the best observed validation loss
        from tabseq.training import _supervised_loss

        final_val = _supervised_loss(model, val_inputs, val_y).item()
        assert final_val == pytest.approx(min(hist.val_loss), abs=1e-9)

    def test_divergence_detected(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((64, 2, 2))
        y = rng.standard_normal(64) * 1e3
        model = build_model(ModelSpec("vanilla", 2, 2, hidden=8, heads=2,
                                      layers=1, head="regression"), seed=0)
        cfg = TrainConfig(learning_rate=1e3, batch_size=64, epochs=30,
                          patience=None, seed=0)
        with pytest.raises(DivergenceError):
            train_supervised(model, ((x,), y), None, cfg)


class TestPretrainFineTune:
    def test_mlm_loss_decreases(self, fraud_dataset):
        art, ids, _, _ = token_fixture(fraud_dataset)
        spec = ModelSpec("hierarchical", ids.shape[1], ids.shape[2], hidden=8,
                         heads=2, layers=1, field_layers=1, head="mlm")
        model = build_model(spec, seed=0, vocab=art.vocab)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=3,
                          mlm_probability=0.15, patience=None, seed=0)
        model, hist = pretrain_mlm(model, ids, None, cfg)
        assert hist.train_loss[-1] < hist.train_loss[0]

    def test_higher_masking_higher_final_loss(self, fraud_dataset):
        art, ids, _, _ = token_fixture(fraud_dataset)
        finals = {}
        for p in (0.15, 0.9):
            spec = ModelSpec("hierarchical", ids.shape[1], ids.shape[2],
                             hidden=8, heads=2, layers=1, head="mlm")
            model = build_model(spec, seed=0, vocab=art.vocab)
            cfg = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=3,
                              mlm_probability=p, patience=None, seed=0)
            _, hist = pretrain_mlm(model, ids, None, cfg)
            finals[p] = hist.train_loss[-1]
        assert finals[0.9] > finals[0.15]

    def test_fine_tune_round_trip(self, tmp_path, fraud_dataset):
        art, ids, _, y = token_fixture(fraud_dataset)
        spec = ModelSpec("hierarchical", ids.shape[1], ids.shape[2], hidden=8,
                         heads=2, layers=1, head="mlm")
        model = build_model(spec, seed=0, vocab=art.vocab)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=1,
                          mlm_probability=0.15, patience=None, seed=0)
        model, _ = pretrain_mlm(model, ids, None, cfg)
        ckpt = tmp_path / "pre.ckpt"
        save_pretrained(ckpt, model, art, seed=0)

        ft_cfg = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=1, seed=0)
        tuned, hist = fine_tune(ckpt, ((ids, None), y), None, ft_cfg, art)
        assert tuned.spec.head == "binary"
        assert len(hist.epochs) == 1
        # encoder weights were carried over from the checkpoint
        assert (tuned.embed.table.data.shape == model.embed.table.data.shape)

    def test_fine_tune_vocab_mismatch(self, tmp_path, fraud_dataset):
        art, ids, _, y = token_fixture(fraud_dataset)
        spec = ModelSpec("hierarchical", ids.shape[1], ids.shape[2], hidden=8,
                         heads=2, layers=1, head="mlm")
        model = build_model(spec, seed=0, vocab=art.vocab)
        ckpt = tmp_path / "pre.ckpt"
        save_pretrained(ckpt, model, art, seed=0)
        other = fit_preprocess(impute_missing(fraud_dataset), bins=3)
        with pytest.raises(VocabularyMismatch):
            fine_tune(ckpt, ((ids, None), y), None, TrainConfig(epochs=1), other)


class TestPresets:
    # Appendix hyperparameter tables, one tuple per shipped preset document
    EXPECTED = {
        "fraud_tabbert": dict(architecture="hierarchical", learning_rate=5e-5,
                              optimizer="Adam", dropout=0.1, attention_heads=12,
                              hidden_units=768, window_size=10, stride=5,
                              batch_size=8, mlm_probability=0.15),
        "fraud_twintower": dict(architecture="twin_tower", learning_rate=4.35e-5,
                                optimizer="Adam", dropout=0.134,
                                attention_heads=8, hidden_units=256,
                                window_size=10, stride=1, batch_size=256,
                                mlm_probability=None),
        "fraud_luna": dict(architecture="hierarchical_joint", learning_rate=5e-5,
                           optimizer="Adam", dropout=0.1, attention_heads=12,
                           hidden_units=768, window_size=10, stride=10,
                           batch_size=8, mlm_probability=0.15),
        "default_tabbert": dict(architecture="hierarchical", learning_rate=0.01,
                                optimizer="Adam", dropout=0.1,
                                attention_heads=12, seed=9, hidden_units=768,
                                window_size=12, batch_size=16,
                                mlm_probability=0.15),
        "default_twintower": dict(architecture="twin_tower", learning_rate=1e-4,
                                  optimizer="Adam", dropout=0.1,
                                  attention_heads=12, seed=42, hidden_units=512,
                                  window_size=12, batch_size=512,
                                  mlm_probability=None),
        "default_lightgbm": dict(model="lightgbm", num_leaves=100,
                                 min_data_in_leaf=2, num_boost_round=2000,
                                 early_stopping_rounds=50, learning_rate=0.01,
                                 seed=42, max_depth=-1),
    }

    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_values_round_trip_exactly(self, name):
        preset = load_preset(name)
        assert preset["name"] == name
        for key, value in self.EXPECTED[name].items():
            assert preset[key] == value, (name, key)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_preset("nope")

    def test_preset_to_train_config(self):
        cfg = preset_train_config(load_preset("fraud_tabbert"))
        assert cfg.learning_rate == 5e-5
        assert cfg.batch_size == 8
        assert cfg.window_size == 10 and cfg.stride == 5
        assert cfg.mlm_probability == 0.15 and cfg.dropout == 0.1

    def test_preset_overrides(self):
        cfg = preset_train_config(load_preset("fraud_twintower"), epochs=2, seed=5)
        assert cfg.epochs == 2 and cfg.seed == 5
        assert cfg.learning_rate == 4.35e-5 and cfg.dropout == 0.134
        assert cfg.stride == 1 and cfg.batch_size == 256
