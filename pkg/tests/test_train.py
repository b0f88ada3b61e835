import numpy as np
import pytest

from freqdet.data import SyntheticSpec, gen_synthetic
from freqdet.errors import ConfigError, TrainingDiverged
from freqdet.model import ModelConfig, branch_param_names, init_detector_params, named_params
from freqdet.train import TrainConfig, load_train_config, lr_schedule, parse_config_file, train

TINY_MODEL = dict(c_int=4, classifier_widths=(4, 8))


class TestSchedule:
    def test_paper_values(self):
        for epoch in range(10):
            assert lr_schedule(epoch, 2e-4) == pytest.approx(2e-4)
        assert lr_schedule(10, 2e-4) == pytest.approx(1.6e-4)
        assert lr_schedule(95, 2e-4) == pytest.approx(2e-4 * 0.8 ** 9)
        assert lr_schedule(95, 2e-4) == pytest.approx(2.684e-5, rel=1e-3)

    def test_closed_form_everywhere(self):
        for e in range(0, 201):
            assert lr_schedule(e, 1e-3) == pytest.approx(1e-3 * 0.8 ** (e // 10))

    def test_negative_epoch_rejected(self):
        with pytest.raises(ConfigError):
            lr_schedule(-1, 2e-4)


class TestConfig:
    def test_defaults_match_training_recipe(self):
        cfg = TrainConfig()
        assert cfg.lr == 2e-4
        assert cfg.decay_factor == 0.8 and cfg.decay_every == 10
        assert cfg.lambda_ == 0.4

    def test_file_parsing_with_lambda_alias(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("lr=1e-3\nbatch_size=8\nlambda=0.25\n# comment\n\nepochs=2\n")
        values = parse_config_file(p)
        assert values == {"lr": 1e-3, "batch_size": 8, "lambda_": 0.25, "epochs": 2}

    def test_flags_override_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("lr=1e-3\nepochs=7\n")
        cfg = load_train_config(p, lr=5e-4, seed=3)
        assert cfg.lr == 5e-4 and cfg.epochs == 7 and cfg.seed == 3

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("learning_rate=1\n")
        with pytest.raises(ConfigError):
            parse_config_file(p)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(lambda_=2.0)


@pytest.fixture(scope="module")
def overfit_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("overfit")
    spec = SyntheticSpec(n_per_class=4, size=16, seed=0, artifact_strength=1.0)
    return gen_synthetic(spec, out)


class TestTraining:
    def test_single_class_split_rejected(self, tmp_path):
        import json

        from freqdet.data import write_ppm

        img = np.zeros((3, 16, 16), dtype=np.uint8)
        for i in range(4):
            write_ppm(tmp_path / f"x{i}.ppm", img)
        lines = [json.dumps({"path": f"x{i}.ppm", "label": 0,
                             "split": "train" if i < 3 else "val"}) for i in range(4)]
        manifest = tmp_path / "m.jsonl"
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigError):
            train(TrainConfig(epochs=1, input_size=16), manifest)

    def test_overfit_smoke(self, overfit_corpus):
        # 8 images total (4/class at 80% -> 6 train; use all splits' worth by
        # training on the 6-image train split), 200 steps, lr tuned for
        # memorization; a correct implementation drives the loss under 0.05
        cfg = TrainConfig(lr=2e-3, batch_size=8, epochs=200, seed=0,
                          input_size=16, checkpoint_every=0)
        model_cfg = ModelConfig(input_size=16, seed=0, **TINY_MODEL)
        result = train(cfg, overfit_corpus, model_config=model_cfg)
        losses = [r["train_loss"] for r in result.log_rows]
        assert losses[-1] < 0.05
        # moving-average(5) of the loss is non-increasing after epoch 3
        ma = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert (np.diff(ma[3:]) <= 1e-9).all()

    def test_lambda_one_keeps_dwt_params_at_init(self, overfit_corpus):
        model_cfg = ModelConfig(input_size=16, seed=1, lambda_=1.0, **TINY_MODEL)
        init = init_detector_params(model_cfg)
        before = {name: t.data.copy() for name, t in named_params(init)}
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=3, lambda_=1.0,
                          seed=1, input_size=16, checkpoint_every=0)
        result = train(cfg, overfit_corpus, model_config=model_cfg, params_init=init)
        dwt_names = branch_param_names("dwt")
        changed_fft = 0
        for name, t in named_params(result.params):
            if name in dwt_names:
                assert t.data.tobytes() == before[name].tobytes(), name
            elif not np.array_equal(t.data, before[name]):
                changed_fft += 1
        assert changed_fft > 0

    def test_lambda_zero_keeps_fft_params_at_init(self, overfit_corpus):
        model_cfg = ModelConfig(input_size=16, seed=2, lambda_=0.0, **TINY_MODEL)
        init = init_detector_params(model_cfg)
        before = {name: t.data.copy() for name, t in named_params(init)}
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=2, lambda_=0.0,
                          seed=2, input_size=16, checkpoint_every=0)
        result = train(cfg, overfit_corpus, model_config=model_cfg, params_init=init)
        for name, t in named_params(result.params):
            if name in branch_param_names("fft"):
                assert t.data.tobytes() == before[name].tobytes(), name

    def test_same_seed_bitwise_identical_run(self, overfit_corpus, tmp_path):
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=2, seed=5,
                          input_size=16, checkpoint_every=0)
        model_cfg = ModelConfig(input_size=16, seed=5, **TINY_MODEL)
        r1 = train(cfg, overfit_corpus, out_dir=tmp_path / "a", model_config=model_cfg)
        r2 = train(cfg, overfit_corpus, out_dir=tmp_path / "b", model_config=model_cfg)
        assert r1.checkpoint_path.read_bytes() == r2.checkpoint_path.read_bytes()
        assert r1.log_path.read_text() == r2.log_path.read_text()

    def test_nan_loss_aborts_with_batch_index(self, overfit_corpus):
        model_cfg = ModelConfig(input_size=16, seed=3, **TINY_MODEL)
        params = init_detector_params(model_cfg)
        params.classifier.head_w.data[:] = np.nan
        cfg = TrainConfig(epochs=1, batch_size=4, seed=3, input_size=16,
                          checkpoint_every=0)
        with pytest.raises(TrainingDiverged, match="batch 0"):
            train(cfg, overfit_corpus, model_config=model_cfg, params_init=params)

    def test_checkpoint_schedule(self, overfit_corpus, tmp_path):
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=5, seed=6,
                          input_size=16, checkpoint_every=2)
        model_cfg = ModelConfig(input_size=16, seed=6, **TINY_MODEL)
        train(cfg, overfit_corpus, out_dir=tmp_path, model_config=model_cfg)
        names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
        assert names == ["epoch_0002.ckpt", "epoch_0004.ckpt", "final.ckpt"]

    def test_log_csv_format(self, overfit_corpus, tmp_path):
        cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=1, seed=7,
                          input_size=16, checkpoint_every=0)
        model_cfg = ModelConfig(input_size=16, seed=7, **TINY_MODEL)
        result = train(cfg, overfit_corpus, out_dir=tmp_path, model_config=model_cfg)
        lines = result.log_path.read_text().strip().splitlines()
        assert lines[0] == "epoch,lr,train_loss,val_acc,val_ap"
        assert len(lines) == 2
        fields = lines[1].split(",")
        assert fields[0] == "0" and float(fields[1]) == pytest.approx(1e-3)
