"""Adversarial training loop with curriculum, critic scheduling and checkpoints.

A run directory holds ``config.json`` (the resolved configuration),
``metrics.csv``, ``checkpoints/epoch-<N>`` and ``samples/epoch-<N>.txt``.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as dp
from . import grammar as gr
from . import metrics as mt
from . import models as md
from . import objectives as ob
from . import optim

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
DIVERGENCE_LIMIT = 1e6
LSTM_LR, CNN_LR = 2e-3, 1e-4


class TrainingDiverged(RuntimeError):
    pass


def sample_noise(batch: int, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. standard normal noise of shape (batch, n, d)."""
    if batch < 1 or n < 1 or d < 1:
        raise ValueError("noise dimensions must be positive")
    return rng.standard_normal((batch, n, d))


def builtin_grammar_path() -> Path:
    return Path(str(resources.files("relaxgan") / "grammars" / "holygrail.cfg"))


def _resolve_path(p):
    if p is None:
        return None
    if p == "builtin:holygrail":
        return builtin_grammar_path()
    return Path(p)


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "epochs": 10,
    "steps_per_epoch": None,    # real batches per epoch; None means one pass over the data
    "batch_size": 64,
    "noise_dim": 128,
    "log_every": 0,             # also log losses every N steps (0: epoch rows only)
    "lr_schedule": "constant",  # or "linear": decay both learning rates to 0 over the run
    "data": {
        "corpus": None,         # text file, one sentence per line
        "grammar": None,        # CFG used for sampling training data and for accuracy
        "train_size": 10000,    # sentences sampled per length when training from a grammar
        "pcfg": None,           # PCFG for the NLL metric
        "level": "word",
        "vocab_size": 30000,
        "condition": None,      # {"rule": "question"} or {"rule": "sentiment-file", "labels": path}
    },
    "generator": {"arch": "lstm", "hidden": 128, "peephole": True},
    "discriminator": {"arch": "lstm", "hidden": 128, "peephole": False},
    "objective": {"kind": "wgan-gp", "clip": 0.01, "penalty_weight": 10.0, "n_critic": 5,
                  "penalty_point": "interpolate"},
    "optimizer": {
        "generator": {"kind": "adam", "lr": None, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
        "discriminator": {"kind": "adam", "lr": None, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
    },
    "curriculum": {"start": None, "max_length": None, "epochs_per_increment": 3},
    "eval": {"samples": 1280, "nll_samples": 64, "every": 1},
}


def _merge(base: dict, over: dict, where="config") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ValueError(f"unknown key {where}.{key}")
        if isinstance(base[key], dict) and key not in ("generator", "discriminator"):
            if not isinstance(val, dict):
                raise ValueError(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], val, f"{where}.{key}")
        elif key in ("generator", "discriminator"):
            out[key] = {**({} if val.get("arch", "lstm") != base[key].get("arch") else base[key]), **val}
        else:
            out[key] = val
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    out_dir: Path | None = None

    @classmethod
    def from_dict(cls, cfg: dict, out_dir=None, check_files: bool = True) -> "ExperimentConfig":
        if cfg.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {cfg.get('version')}")
        raw = _merge(DEFAULTS, {k: v for k, v in cfg.items() if k != "out_dir"})
        out_dir = out_dir if out_dir is not None else cfg.get("out_dir")
        self = cls(raw, Path(out_dir) if out_dir is not None else None)
        self._resolve(check_files)
        return self

    @classmethod
    def load(cls, path, out_dir=None) -> "ExperimentConfig":
        text = Path(path).read_text(encoding="utf-8")
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e})") from None
        base = Path(path).parent
        for key in ("corpus", "grammar", "pcfg"):
            p = cfg.get("data", {}).get(key)
            if p and not p.startswith("builtin:") and not Path(p).is_absolute():
                cfg["data"][key] = str(base / p)
        cond = cfg.get("data", {}).get("condition")
        if isinstance(cond, dict) and cond.get("labels") and not Path(cond["labels"]).is_absolute():
            cond["labels"] = str(base / cond["labels"])
        if out_dir is None and cfg.get("out_dir") and not Path(cfg["out_dir"]).is_absolute():
            cfg["out_dir"] = str(base / cfg["out_dir"])
        return cls.from_dict(cfg, out_dir)

    def _resolve(self, check_files):
        r = self.raw
        if r["batch_size"] < 1:
            raise ValueError("batch_size must be >= 1")
        if r["noise_dim"] < 1:
            raise ValueError("noise_dim must be > 0")
        if r["epochs"] < 1:
            raise ValueError("epochs must be >= 1")
        if r["lr_schedule"] not in ("constant", "linear"):
            raise ValueError("lr_schedule must be constant or linear")
        d = r["data"]
        if d["corpus"] is None and d["grammar"] is None:
            raise ValueError("data needs a corpus or a grammar")
        if check_files:
            for key in ("corpus", "grammar", "pcfg"):
                p = _resolve_path(d[key])
                if p is not None and not p.is_file():
                    raise FileNotFoundError(f"data.{key}: no such file {p}")
        self.objective  # validates
        cur = r["curriculum"]
        if cur["start"] is None:
            cur["start"] = dp.START_LENGTH[d["level"]]
        if cur["max_length"] is None:
            cur["max_length"] = cur["start"]
        dp.CurriculumState(cur["start"], cur["epochs_per_increment"], cur["max_length"])
        for role in ("generator", "discriminator"):
            arch = r[role]["arch"]
            if arch not in ("lstm", "cnn"):
                raise ValueError(f"{role}.arch must be lstm or cnn")
            if r[role].get("conditional") and arch == "lstm":
                raise md.UnsupportedConfigError("conditioning is only supported for convolutional models")
            o = r["optimizer"][role]
            if o["lr"] is None:
                o["lr"] = LSTM_LR if arch == "lstm" else CNN_LR
        cond = d["condition"]
        if cond is not None:
            if not isinstance(cond, dict) or cond.get("rule") not in ("question", "sentiment-file"):
                raise ValueError("data.condition.rule must be question or sentiment-file")
            if d["corpus"] is None:
                raise ValueError("conditional training needs a corpus")
            if cond["rule"] == "sentiment-file" and check_files and not Path(cond.get("labels", "")).is_file():
                raise FileNotFoundError(f"data.condition.labels: no such file {cond.get('labels')}")
            for role in ("generator", "discriminator"):
                if not r[role].get("conditional"):
                    raise ValueError(f"data.condition is set but {role}.conditional is not")
        elif r["generator"].get("conditional") or r["discriminator"].get("conditional"):
            raise ValueError("conditional models need data.condition")
        disc = r["discriminator"]
        if disc["arch"] == "cnn" and disc.get("batch_norm") is None:
            disc["batch_norm"] = not self.objective.uses_penalty
        elif disc["arch"] == "cnn" and disc["batch_norm"] and self.objective.uses_penalty:
            log.warning("batch norm in a critic with a gradient penalty couples samples")

    @property
    def objective(self) -> ob.ObjectiveConfig:
        return ob.ObjectiveConfig(**self.raw["objective"])

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# data

@dataclass
class TrainingData:
    vocab: dp.Vocabulary
    sentences: list[list[int]]   # token indices
    lengths: np.ndarray
    cfg: gr.Cfg | None = None
    pcfg: gr.Pcfg | None = None
    labels: np.ndarray | None = None   # binary attribute per sentence

    def draw_labels(self, size: int, rng: np.random.Generator) -> np.ndarray | None:
        """Attribute values for fake samples, drawn from the data's label frequencies."""
        if self.labels is None:
            return None
        return self.labels[rng.integers(0, len(self.labels), size)]

    def pool(self, length: int) -> np.ndarray:
        """Indices of sentences that fit in ``length`` tokens (shorter ones get padded)."""
        idx = np.flatnonzero(self.lengths <= length)
        if idx.size == 0:
            raise ValueError(f"no training sentences of length <= {length}")
        return idx


def prepare_data(cfg: ExperimentConfig, rng: np.random.Generator) -> TrainingData:
    d = cfg.raw["data"]
    cur = cfg.raw["curriculum"]
    grammar = pcfg = None
    if d["grammar"]:
        grammar = gr.load_cfg(_resolve_path(d["grammar"]).read_text(encoding="utf-8"))
    if d["pcfg"]:
        pcfg = gr.binarize_pcfg(gr.load_pcfg(_resolve_path(d["pcfg"]).read_text(encoding="utf-8")))
    if d["corpus"]:
        corpus = dp.read_corpus(_resolve_path(d["corpus"]), d["level"])
    else:
        corpus = [gr.sample_cfg(grammar, n, rng)
                  for n in range(cur["start"], cur["max_length"] + 1)
                  for _ in range(d["train_size"])]
    labels = None
    if d["condition"]:
        lab = dp.label_attribute(corpus, d["condition"]["rule"], d["condition"].get("labels"))
        labels = np.array(lab.labels, dtype=np.int64)
    vocab = dp.build_vocab(corpus, d["vocab_size"], d["level"])
    sents = [vocab.encode(s) for s in corpus]
    return TrainingData(vocab, sents, np.array([len(s) for s in sents]), grammar, pcfg, labels)


def _check_real(batch: np.ndarray):
    if not (np.all((batch == 0.0) | (batch == 1.0)) and np.all(batch.sum(-1) == 1.0)):
        raise AssertionError("real batch is not one-hot")


def _check_fake(batch: np.ndarray):
    if batch.min() < 0 or np.abs(batch.sum(-1) - 1.0).max() > 1e-9:
        raise AssertionError("fake batch is not row-stochastic")


# ---------------------------------------------------------------------------
# training state

@dataclass
class TrainState:
    config: ExperimentConfig
    data: TrainingData
    gen: object
    disc: object
    opt_g: optim.OptimizerState
    opt_d: optim.OptimizerState
    rng: np.random.Generator
    epoch: int = 0           # completed epochs
    step: int = 0            # schedule steps taken (critic + generator)
    d_updates: int = 0
    g_updates: int = 0
    last: dict = field(default_factory=lambda: {"d_loss": None, "g_loss": None})

    @property
    def objective(self) -> ob.ObjectiveConfig:
        return self.config.objective

    def curriculum(self, epoch: int) -> dp.CurriculumState:
        c = self.config.raw["curriculum"]
        st = dp.CurriculumState(c["start"], c["epochs_per_increment"], c["max_length"])
        return dp.curriculum_advance(st, epoch)


def init_state(config: ExperimentConfig) -> TrainState:
    seeds = np.random.SeedSequence(config.raw["seed"]).spawn(3)
    data_rng, init_rng, train_rng = (np.random.default_rng(s) for s in seeds)
    data = prepare_data(config, data_rng)
    k = len(data.vocab)
    r = config.raw
    gen = md.build_generator({**r["generator"], "noise_dim": r["noise_dim"]}, k, init_rng)
    disc = md.build_discriminator(r["discriminator"], k, init_rng)
    og = optim.OptimizerState(**r["optimizer"]["generator"])
    od = optim.OptimizerState(**r["optimizer"]["discriminator"])
    return TrainState(config, data, gen, disc, og, od, train_rng)


def _params_grads(graph, loss, params: dict) -> dict:
    gm = graph.backward(loss, wrt=list(params.values()))
    return {n: gm[t.node_id].data for n, t in params.items()}


def _guard(name: str, value: float):
    if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"{name} diverged: {value}")


def critic_update(st: TrainState, real: np.ndarray, labels: np.ndarray | None = None) -> float:
    """One discriminator step.  Fake samples share the real batch's labels."""
    objective = st.objective
    bsz, n, _ = real.shape
    cond = None if labels is None else np.concatenate([labels] * 3)
    with ad.no_grad():
        fake = st.gen(sample_noise(bsz, n, st.config.raw["noise_dim"], st.rng), train=True,
                      condition=labels).data
    _check_real(real)
    _check_fake(fake)
    disc = st.disc
    with ad.Graph() as g:
        shared = not getattr(disc, "use_bn", False)
        if shared:
            # one critic pass over real, fake and penalty points
            parts = [real, fake]
            if objective.uses_penalty:
                parts.append(ob.penalty_points(real, fake, objective.penalty_point, st.rng))
            x = ad.Tensor(np.concatenate(parts), requires_grad=objective.uses_penalty)
            scores = disc(x, train=True, condition=cond)
            s_real, s_fake = scores[:bsz], scores[bsz:2 * bsz]
        else:
            s_real = disc(real, train=True, condition=labels)
            s_fake = disc(fake, train=True, condition=labels)
        loss = ob.losses(objective.kind, s_real, s_fake).d_loss
        if objective.uses_penalty:
            if shared:
                grad = ad.grad_as_node(g, ad.sum(scores[2 * bsz:]), x)[2 * bsz:]
                norms = ad.l2_norm(ad.reshape(grad, (bsz, -1)), axis=1)
                penalty = objective.penalty_weight * ad.mean((norms - 1.0) ** 2)
            else:
                penalty = ob.gradient_penalty(lambda v: disc(v, train=True, condition=labels),
                                              real, fake, objective.penalty_weight,
                                              objective.penalty_point, st.rng, g)
            loss = loss + penalty
        _guard("d_loss", loss.item())
        grads = _params_grads(g, loss, disc.params)
    optim.step(st.opt_d, disc.params, grads)
    if objective.kind == "wgan":
        ob.clip_weights(disc.params, objective.clip)
    st.d_updates += 1
    return loss.item()


def generator_update(st: TrainState, n: int) -> float:
    objective = st.objective
    bsz = st.config.raw["batch_size"]
    cond = st.data.draw_labels(bsz, st.rng)
    with ad.Graph() as g:
        fake = st.gen(sample_noise(bsz, n, st.config.raw["noise_dim"], st.rng), train=True,
                      condition=cond)
        _check_fake(fake.data)
        s_fake = st.disc(fake, train=True, condition=cond)
        if objective.kind in ("gan", "gan-gp"):
            loss = ob.gan_losses_from_logits(s_fake, s_fake).g_loss
        elif objective.kind == "lsgan":
            loss = ob.lsgan_losses(s_fake, s_fake).g_loss
        else:
            loss = ob.wgan_losses(s_fake, s_fake).g_loss
        _guard("g_loss", loss.item())
        grads = _params_grads(g, loss, st.gen.params)
    optim.step(st.opt_g, st.gen.params, grads)
    st.g_updates += 1
    return loss.item()


def generate(gen, count: int, n: int, noise_dim: int, rng: np.random.Generator,
             batch: int = 256, labels: np.ndarray | None = None) -> np.ndarray:
    """Greedy-decoded token indices, shape (count, n).  ``labels`` gives one
    attribute value per sample for conditional generators."""
    out = []
    with ad.no_grad():
        for lo in range(0, count, batch):
            m = min(batch, count - lo)
            z = sample_noise(m, n, noise_dim, rng)
            cond = None if labels is None else labels[lo:lo + m]
            out.append(md.greedy_decode(gen(z, train=False, condition=cond)))
    return np.concatenate(out) if out else np.zeros((0, n), dtype=int)


def evaluate(st: TrainState, length: int, epoch: int) -> tuple[mt.EvalReport, list[list[str]]]:
    ev = st.config.raw["eval"]
    rng = np.random.default_rng([st.config.raw["seed"], 7919, epoch])
    count = max(ev["samples"], ev["nll_samples"] if st.data.pcfg else 0)
    labels = st.data.draw_labels(count, rng)
    toks = generate(st.gen, count, length, st.config.raw["noise_dim"], rng, labels=labels)
    samples = [st.data.vocab.decode(r) for r in toks]
    rep = mt.evaluate_samples(samples, st.data.cfg, st.data.pcfg, ev["nll_samples"],
                              epoch=epoch, step=st.step, d_loss=st.last["d_loss"],
                              g_loss=st.last["g_loss"])
    return rep, samples


# ---------------------------------------------------------------------------
# checkpoints and run directory

def save_state(st: TrainState, path):
    arrays = {}
    arrays.update(md.model_arrays(st.gen, "gen"))
    arrays.update(md.model_arrays(st.disc, "disc"))
    arrays.update(st.opt_g.arrays("opt_g"))
    arrays.update(st.opt_d.arrays("opt_d"))
    meta = {"config": st.config.raw, "vocab": list(st.data.vocab.tokens),
            "level": st.data.vocab.level, "epoch": st.epoch, "step": st.step,
            "d_updates": st.d_updates, "g_updates": st.g_updates, "last": st.last,
            "opt_g": st.opt_g.hyper(), "opt_d": st.opt_d.hyper(),
            "rng": st.rng.bit_generator.state}
    md.save_checkpoint(path, arrays, meta)


def load_state(path, check_files: bool = True) -> TrainState:
    arrays, meta = md.load_checkpoint(path)
    config = ExperimentConfig.from_dict(meta["config"], check_files=check_files)
    st = init_state(config) if check_files else None
    if st is None:
        raise ValueError("load_state needs the training data files")
    if list(st.data.vocab.tokens) != meta["vocab"]:
        raise md.CheckpointError("vocabulary rebuilt from the data differs from the checkpoint")
    _restore(st, arrays, meta)
    return st


def _restore(st: TrainState, arrays: dict, meta: dict):
    md.load_model_arrays(st.gen, arrays, "gen")
    md.load_model_arrays(st.disc, arrays, "disc")
    st.opt_g = optim.OptimizerState.restore(meta["opt_g"], arrays, "opt_g")
    st.opt_d = optim.OptimizerState.restore(meta["opt_d"], arrays, "opt_d")
    st.rng.bit_generator.state = meta["rng"]
    st.epoch, st.step = meta["epoch"], meta["step"]
    st.d_updates, st.g_updates = meta["d_updates"], meta["g_updates"]
    st.last = dict(meta["last"])


def load_generator(path):
    """Generator, vocabulary and config from a checkpoint, without the training data."""
    arrays, meta = md.load_checkpoint(path)
    r = meta["config"]
    vocab = dp.Vocabulary(tuple(meta["vocab"]), meta.get("level", "word"))
    gen = md.build_generator({**r["generator"], "noise_dim": r["noise_dim"]}, len(vocab),
                             np.random.default_rng(0))
    md.load_model_arrays(gen, arrays, "gen")
    return gen, vocab, r, meta


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class RunDir:
    def __init__(self, root: Path):
        self.root = Path(root)
        (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.root / "samples").mkdir(exist_ok=True)
        self.metrics = self.root / "metrics.csv"

    def start(self, config: ExperimentConfig, resume: bool):
        _write_atomic(self.root / "config.json", config.to_json())
        if not resume or not self.metrics.exists():
            _write_atomic(self.metrics, mt.CSV_HEADER + "\n")

    def truncate_after(self, step: int):
        """On resume, drop log rows written after the checkpoint being resumed."""
        lines = self.metrics.read_text(encoding="utf-8").splitlines()
        keep = [lines[0]] + [l for l in lines[1:] if int(l.split(",")[1]) <= step]
        _write_atomic(self.metrics, "\n".join(keep) + "\n")

    def append(self, row: str):
        with open(self.metrics, "a", encoding="utf-8") as fh:
            fh.write(row + "\n")

    def checkpoint(self, epoch: int) -> Path:
        return self.root / "checkpoints" / f"epoch-{epoch}"

    def samples(self, epoch: int, sents: list[list[str]], vocab: dp.Vocabulary):
        _write_atomic(self.root / "samples" / f"epoch-{epoch}.txt",
                      "".join(vocab.join(s) + "\n" for s in sents))


def latest_checkpoint(run_dir) -> Path | None:
    ck = Path(run_dir) / "checkpoints"
    found = [(int(p.name.split("-")[1]), p) for p in ck.glob("epoch-*") if p.name.split("-")[1].isdigit()]
    return max(found)[1] if found else None


# ---------------------------------------------------------------------------
# main loop

def _decay(st: TrainState, progress: float):
    opt = st.config.raw["optimizer"]
    st.opt_g.lr = opt["generator"]["lr"] * (1.0 - progress)
    st.opt_d.lr = opt["discriminator"]["lr"] * (1.0 - progress)


def run_epoch(st: TrainState, epoch: int, on_step=None):
    """One epoch at the epoch's curriculum length.  ``epoch`` counts from 1."""
    r = st.config.raw
    length = st.curriculum(epoch - 1).current
    pool = st.data.pool(length)
    bsz = r["batch_size"]
    n_batches = r["steps_per_epoch"] or max(1, len(pool) // bsz)
    order = st.rng.permutation(pool)
    pos = 0
    k = len(st.data.vocab)
    used = 0
    while used < n_batches:
        if r["lr_schedule"] == "linear":
            _decay(st, (epoch - 1 + used / n_batches) / r["epochs"])
        st.step += 1
        if ob.critic_schedule(st.step, st.objective.n_critic) == "discriminator":
            if pos + bsz > len(order):
                order, pos = st.rng.permutation(pool), 0
            ids = order[pos:pos + bsz]
            pos += bsz
            real = dp.encode_batch([st.data.sentences[i] for i in ids], k, length,
                                   st.data.vocab.pad_index)
            labels = None if st.data.labels is None else st.data.labels[ids]
            st.last["d_loss"] = critic_update(st, real, labels)
            used += 1
        else:
            st.last["g_loss"] = generator_update(st, length)
        if on_step is not None:
            on_step(st)
    return length


def train(config: ExperimentConfig, resume: bool = False, progress=None) -> Path:
    """Run training; returns the run directory."""
    if config.out_dir is None:
        raise ValueError("config needs an out_dir")
    run = RunDir(config.out_dir)
    st = None
    if resume:
        ck = latest_checkpoint(run.root)
        if ck is not None:
            st = load_state(ck)
            st.config = config
            run.start(config, resume=True)
            run.truncate_after(st.step)
    if st is None:
        st = init_state(config)
        run.start(config, resume=False)
    r = config.raw
    log_every = r["log_every"]

    def on_step(s):
        if log_every and s.step % log_every == 0:
            run.append(mt.EvalReport(s.epoch + 1, s.step, s.last["d_loss"], s.last["g_loss"]).row())

    while st.epoch < r["epochs"]:
        epoch = st.epoch + 1
        try:
            length = run_epoch(st, epoch, on_step)
        except (ad.NonFiniteError, TrainingDiverged) as e:
            raise TrainingDiverged(f"epoch {epoch}, step {st.step}: {e}") from e
        st.epoch = epoch
        if epoch % r["eval"]["every"] == 0 or epoch == r["epochs"]:
            rep, samples = evaluate(st, length, epoch)
            run.append(rep.row())
            run.samples(epoch, samples, st.data.vocab)
            if progress is not None:
                progress(rep)
        save_state(st, run.checkpoint(epoch))
    return run.root
