import json

import numpy as np
import pytest

from relaxgan import models as md, trainer as tr


def small_config(tmp_path, **over):
    cfg = {
        "seed": 3, "epochs": 2, "steps_per_epoch": 4, "batch_size": 4, "noise_dim": 6,
        "data": {"grammar": "builtin:holygrail", "train_size": 40},
        "generator": {"hidden": 6}, "discriminator": {"hidden": 6},
        "objective": {"n_critic": 2},
        "eval": {"samples": 16},
    }
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = val
    return cfg


def write_corpus(tmp_path, lines):
    p = tmp_path / "corpus.txt"
    p.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return str(p)


def test_noise_shape_and_seed():
    a = tr.sample_noise(3, 4, 5, np.random.default_rng(1))
    b = tr.sample_noise(3, 4, 5, np.random.default_rng(1))
    assert a.shape == (3, 4, 5) and np.array_equal(a, b)
    with pytest.raises(ValueError):
        tr.sample_noise(0, 4, 5, np.random.default_rng(1))


def test_noise_moments():
    z = tr.sample_noise(1000, 10, 100, np.random.default_rng(0))
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01


def test_smoke_on_five_sentence_corpus(tmp_path):
    corpus = write_corpus(tmp_path, ["a b c", "b c a", "c a b", "a a b", "b b c"])
    cfg = small_config(tmp_path, epochs=1, steps_per_epoch=None,
                       data={"corpus": corpus, "grammar": None}, batch_size=1, log_every=1,
                       curriculum={"start": 3})
    root = tr.train(tr.ExperimentConfig.from_dict(cfg, out_dir=tmp_path / "run"))
    rows = (root / "metrics.csv").read_text().splitlines()
    # 5 critic steps and 2 generator steps with n_critic = 2
    assert rows[0] == tr.mt.CSV_HEADER and len(rows) - 1 >= 1
    assert int(rows[-1].split(",")[1]) == 7
    assert [p.name for p in (root / "checkpoints").iterdir()] == ["epoch-1"]
    assert len((root / "samples" / "epoch-1.txt").read_text().splitlines()) == 16
    assert json.loads((root / "config.json").read_text())["seed"] == 3


def test_update_counts_follow_schedule(tmp_path):
    st = tr.init_state(tr.ExperimentConfig.from_dict(small_config(tmp_path, steps_per_epoch=11)))
    tr.run_epoch(st, 1)
    assert st.d_updates == 11 and st.g_updates == 5
    assert abs(st.g_updates * 2 - st.d_updates) < 2


def test_wgan_weights_stay_clipped(tmp_path):
    cfg = small_config(tmp_path, objective={"kind": "wgan", "clip": 0.01, "n_critic": 5})
    st = tr.init_state(tr.ExperimentConfig.from_dict(cfg))
    worst = []
    real = np.eye(len(st.data.vocab))[np.zeros((4, 5), dtype=int) + 4]
    for _ in range(20):
        tr.critic_update(st, real)
        worst.append(max(np.abs(p.data).max() for p in st.disc.params.values()))
    assert max(worst) <= 0.01


def test_identical_runs_give_identical_logs(tmp_path):
    cfg = small_config(tmp_path, log_every=1)
    a = tr.train(tr.ExperimentConfig.from_dict(cfg, out_dir=tmp_path / "a"))
    b = tr.train(tr.ExperimentConfig.from_dict(cfg, out_dir=tmp_path / "b"))
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "checkpoints" / "epoch-2").read_bytes() == (b / "checkpoints" / "epoch-2").read_bytes()


def test_resume_continues_the_same_trajectory(tmp_path):
    full = tr.train(tr.ExperimentConfig.from_dict(small_config(tmp_path, epochs=3, log_every=1),
                                                  out_dir=tmp_path / "full"))
    part = tr.ExperimentConfig.from_dict(small_config(tmp_path, epochs=1, log_every=1),
                                         out_dir=tmp_path / "part")
    tr.train(part)
    rest = tr.ExperimentConfig.from_dict(small_config(tmp_path, epochs=3, log_every=1),
                                         out_dir=tmp_path / "part")
    tr.train(rest, resume=True)
    assert (full / "metrics.csv").read_bytes() == (tmp_path / "part" / "metrics.csv").read_bytes()


def test_checkpoint_roundtrip_state(tmp_path):
    st = tr.init_state(tr.ExperimentConfig.from_dict(small_config(tmp_path)))
    tr.run_epoch(st, 1)
    st.epoch = 1
    tr.save_state(st, tmp_path / "ck")
    back = tr.load_state(tmp_path / "ck")
    for name, p in st.gen.params.items():
        assert np.array_equal(p.data, back.gen.params[name].data)
    for name, m in st.opt_d.m.items():
        assert np.array_equal(m, back.opt_d.m[name])
    assert back.step == st.step and back.opt_g.step == st.opt_g.step
    assert back.rng.standard_normal() == st.rng.standard_normal()


def test_divergence_keeps_last_checkpoint(tmp_path, monkeypatch):
    cfg = tr.ExperimentConfig.from_dict(small_config(tmp_path, epochs=3), out_dir=tmp_path / "run")
    real_update = tr.generator_update

    def flaky(st, n):
        if st.epoch >= 1:
            return float("nan") if tr._guard("g_loss", float("nan")) else 0.0
        return real_update(st, n)

    monkeypatch.setattr(tr, "generator_update", flaky)
    with pytest.raises(tr.TrainingDiverged, match="epoch 2"):
        tr.train(cfg)
    assert tr.latest_checkpoint(tmp_path / "run").name == "epoch-1"


def test_batch_checks():
    tr._check_real(np.eye(3)[[[0, 1]]])
    with pytest.raises(AssertionError):
        tr._check_real(np.full((1, 2, 3), 1 / 3))
    tr._check_fake(np.full((1, 2, 3), 1 / 3))
    with pytest.raises(AssertionError):
        tr._check_fake(np.full((1, 2, 3), 0.5))


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown key"):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, learning_rate=1))
    with pytest.raises(FileNotFoundError):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, data={"grammar": str(tmp_path / "nope")}))
    with pytest.raises(ValueError, match="version"):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, version=9))
    with pytest.raises(ValueError):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, batch_size=0))
    with pytest.raises(md.UnsupportedConfigError):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, generator={"conditional": True}))


def test_learning_rate_defaults(tmp_path):
    c = tr.ExperimentConfig.from_dict(small_config(tmp_path, generator={"arch": "cnn"}))
    assert c.raw["optimizer"]["generator"]["lr"] == 1e-4
    assert c.raw["optimizer"]["discriminator"]["lr"] == 2e-3
    # the critic drops batch norm when a penalty is active
    c = tr.ExperimentConfig.from_dict(small_config(tmp_path, discriminator={"arch": "cnn"}))
    assert c.raw["discriminator"]["batch_norm"] is False


def test_load_resolves_relative_paths(tmp_path):
    corpus = write_corpus(tmp_path, ["a b", "b a"])
    p = tmp_path / "exp.json"
    p.write_text(json.dumps({"data": {"corpus": "corpus.txt"}, "out_dir": "runs/x"}))
    c = tr.ExperimentConfig.load(p)
    assert c.raw["data"]["corpus"] == corpus and c.out_dir == tmp_path / "runs" / "x"


def test_conditional_cnn_training(tmp_path):
    lines = ["is it ?", "it is .", "who is ?", "he is ."] * 3
    corpus = write_corpus(tmp_path, lines)
    cnn = {"arch": "cnn", "channels": 4, "n_blocks": 1, "width": 3, "conditional": True}
    cfg = small_config(tmp_path, epochs=1, data={"corpus": corpus, "grammar": None,
                                                 "condition": {"rule": "question"}},
                       generator=cnn, discriminator=cnn, curriculum={"start": 3})
    root = tr.train(tr.ExperimentConfig.from_dict(cfg, out_dir=tmp_path / "run"))
    gen, vocab, raw, meta = tr.load_generator(root / "checkpoints" / "epoch-1")
    toks = tr.generate(gen, 4, 3, raw["noise_dim"], np.random.default_rng(0), labels=np.array([0, 1, 0, 1]))
    assert toks.shape == (4, 3)
    with pytest.raises(ValueError, match="condition"):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, generator=cnn, discriminator=cnn))


def test_linear_lr_schedule(tmp_path):
    cfg = tr.ExperimentConfig.from_dict(small_config(tmp_path, lr_schedule="linear", steps_per_epoch=5))
    st = tr.init_state(cfg)
    seen = []
    tr.run_epoch(st, 1, on_step=lambda s: seen.append(s.opt_d.lr))
    tr.run_epoch(st, 2, on_step=lambda s: seen.append(s.opt_d.lr))
    assert seen[0] == 2e-3 and all(a >= b for a, b in zip(seen, seen[1:]))
    assert 0 < seen[-1] < 2e-3 / 5
    with pytest.raises(ValueError):
        tr.ExperimentConfig.from_dict(small_config(tmp_path, lr_schedule="cosine"))
