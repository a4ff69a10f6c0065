"""Training: MLE pretraining, the adversarial loop, checkpoints.

The adversarial step alternates a generator update (transcode a positive
input under a random pattern embedding, free-run decode, score the rollout
states against teacher-forced states of both pair classes) with one or
more critic updates on detached states. All randomness flows through two
explicit generators (torch for z / Gumbel noise / interpolation, numpy for
batch sampling) so checkpoints can resume bit-for-bit.
"""

import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import (NEGATIVE, PAD_ID, POSITIVE, Vocabulary, load_pair_corpus,
                     sample_batch)
from .critic import NEGATIVE_CLASS, POSITIVE_CLASS, CriticNet, gradient_penalty
from .embeddings import EmbeddingMatrix, load_pretrained, random_embeddings
from .losses import (_masked_token_ce, combined_generator_objective, critic_loss,
                     generator_loss, reconstruction_loss, wasserstein_estimate)
from .seqnets import (Decoder, Encoder, Transcoder, decode_free_run,
                      decode_teacher_forced, encode, sample_pattern, transcode)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PGWC"
CHECKPOINT_VERSION = 1

METRIC_COLUMNS = ("step", "W_pos", "W_neg", "L_g", "L_AE_p", "L_AE_n",
                  "L_c", "penalty_p", "penalty_n")


@dataclass
class TrainConfig:
    batch_size: int = 32
    pretrain_steps_ae: int = 2000
    pretrain_steps_trs: int = 2000
    adv_steps: int = 2000
    critic_updates_per_gen: int = 1
    lr_gen: float = 1e-4
    lr_critic: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    tau: float = 0.5
    alpha: float = 1.0
    beta: float = 0.5
    lam: float = 10.0
    seed: int = 0
    checkpoint_every: int = 500
    patience: int = 200
    grad_clip: float = 5.0
    max_len: int = 20
    emb_dim: int = 300
    hidden_size: int = 512
    pattern_dim: int = 128
    num_layers: int = 2
    train_embeddings_adv: bool = True
    paranoid_checks: bool = False
    corpus_path: str = ""
    vocab_path: str = ""
    embeddings_path: str = ""
    checkpoint_dir: str = "checkpoints"
    metrics_path: str = "metrics.tsv"

    def __post_init__(self):
        for name in ("batch_size", "checkpoint_every", "patience", "max_len",
                     "emb_dim", "hidden_size", "pattern_dim", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("pretrain_steps_ae", "pretrain_steps_trs", "adv_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 1 <= self.critic_updates_per_gen <= 5:
            raise ValueError("critic_updates_per_gen must lie in 1..5")
        for name in ("lr_gen", "lr_critic", "tau", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lam must be nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


def load_config(path):
    """Parse a flat "key = value" config file into a TrainConfig.

    Blank lines and '#' comments are skipped; unknown keys are errors.
    """
    defaults = TrainConfig()
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    overrides = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            key, sep, value = text.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = key.strip(), value.strip()
            if key not in names:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _coerce(key, value, type(getattr(defaults, key)),
                                     f"{path}:{lineno}")
    return TrainConfig(**overrides)


def _coerce(key, value, typ, where):
    if typ is bool:
        lowered = value.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"{where}: {key} expects a boolean, got {value!r}")
    if typ is int or typ is float:
        try:
            return typ(value)
        except ValueError:
            raise ValueError(f"{where}: {key} expects {typ.__name__}, got {value!r}") from None
    return value


@dataclass
class StepMetrics:
    step: int
    W_pos: float
    W_neg: float
    L_g: float
    L_AE_p: float
    L_AE_n: float
    L_c: float
    penalty_p: float
    penalty_n: float

    def row(self):
        return "\t".join(repr(getattr(self, c)) for c in METRIC_COLUMNS)


@dataclass
class ModelState:
    encoder: Encoder
    decoder: Decoder
    transcoder: Transcoder
    critic: CriticNet
    emb: EmbeddingMatrix
    opt_gen: torch.optim.Adam
    opt_critic: torch.optim.Adam
    gen_params: list
    step: int
    torch_gen: torch.Generator
    np_rng: np.random.Generator
    config: TrainConfig
    vocab: Vocabulary


def init_state(config, vocab, emb=None):
    """Fresh networks, optimizers and rng streams, seeded from config.seed."""
    torch.manual_seed(config.seed)
    if emb is None:
        emb = random_embeddings(len(vocab), config.emb_dim)
    if emb.dim != config.emb_dim:
        raise ValueError(f"embedding dim {emb.dim} does not match config ({config.emb_dim})")
    encoder = Encoder(config.emb_dim, config.hidden_size, config.num_layers)
    transcoder = Transcoder(config.emb_dim, config.pattern_dim,
                            config.hidden_size, config.num_layers)
    decoder = Decoder(config.emb_dim, config.hidden_size, len(vocab))
    critic = CriticNet(4 * config.hidden_size)
    gen_params = (list(encoder.parameters()) + list(decoder.parameters())
                  + list(transcoder.parameters()) + list(emb.parameters()))
    opt_gen = torch.optim.Adam(gen_params, lr=config.lr_gen,
                               betas=(config.beta1, config.beta2))
    opt_critic = torch.optim.Adam(critic.parameters(), lr=config.lr_critic,
                                  betas=(config.beta1, config.beta2))
    torch_gen = torch.Generator().manual_seed(config.seed)
    np_rng = np.random.default_rng(config.seed)
    return ModelState(encoder=encoder, decoder=decoder, transcoder=transcoder,
                      critic=critic, emb=emb, opt_gen=opt_gen, opt_critic=opt_critic,
                      gen_params=gen_params, step=0, torch_gen=torch_gen,
                      np_rng=np_rng, config=config, vocab=vocab)


def batch_tensors(pairs):
    """Stack a list of encoded pairs into (x, y) id tensors."""
    x = torch.tensor([p.x for p in pairs], dtype=torch.long)
    y = torch.tensor([p.y for p in pairs], dtype=torch.long)
    return x, y


def _require_finite(value, what, step):
    if not torch.isfinite(torch.as_tensor(value)).all():
        raise RuntimeError(f"non-finite {what} at step {step}; aborting")


def _per_token_ce(logits, targets):
    sums = _masked_token_ce(logits, targets, PAD_ID)
    tokens = (targets != PAD_ID).sum()
    return float(sums.sum() / tokens)


def _trim(targets, logits):
    """Drop the all-PAD target tail beyond the decoded step count."""
    return targets[:, : logits.shape[1]]


def _gen_step(state, loss):
    """Backward + clip + generator optimizer step (critic grads discarded)."""
    state.opt_gen.zero_grad(set_to_none=True)
    state.opt_critic.zero_grad(set_to_none=True)
    loss.backward()
    if not state.config.train_embeddings_adv:
        state.emb.weight.grad = None
    torch.nn.utils.clip_grad_norm_(state.gen_params, state.config.grad_clip)
    state.opt_gen.step()
    state.opt_critic.zero_grad(set_to_none=True)


def pretrain_autoencoder(state, corpus, steps):
    """Teacher-forced reconstruction of both pair sentences.

    Runs for ``steps`` updates or until the per-token cross-entropy stops
    improving for config.patience consecutive steps. Returns the per-token
    loss trace.
    """
    if not corpus.pairs:
        raise ValueError("cannot pretrain on an empty corpus")
    cfg = state.config
    trace = []
    best = math.inf
    since_best = 0
    for _ in range(steps):
        pairs = sample_batch(corpus, None, cfg.batch_size, state.np_rng)
        x, y = batch_tensors(pairs)
        logits_x, _ = decode_teacher_forced(state.decoder, encode(state.encoder, x, state.emb), x, state.emb)
        logits_y, _ = decode_teacher_forced(state.decoder, encode(state.encoder, y, state.emb), y, state.emb)
        x, y = _trim(x, logits_x), _trim(y, logits_y)
        loss = reconstruction_loss(logits_x, logits_y, x, y)
        _require_finite(loss, "auto-encoder loss", state.step)
        _gen_step(state, loss)
        state.step += 1
        with torch.no_grad():
            per_token = (_masked_token_ce(logits_x, x, PAD_ID).sum()
                         + _masked_token_ce(logits_y, y, PAD_ID).sum())
            tokens = (x != PAD_ID).sum() + (y != PAD_ID).sum()
            trace.append(float(per_token / tokens))
        if trace[-1] < best - 1e-6:
            best, since_best = trace[-1], 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.info("auto-encoder pretraining plateaued after %d steps", len(trace))
                break
    return trace


def pretrain_transcoder(state, corpus, steps):
    """Free-run MLE of the transcoder against the paraphrase target.

    Each step transcodes a positive batch under a fresh pattern embedding,
    rolls the decoder out for max_len + 1 steps feeding back Gumbel-softmax
    samples, and minimizes token cross-entropy of the rollout logits
    against y. Returns the per-token loss trace.
    """
    if not corpus.by_label(POSITIVE):
        raise ValueError("transcoder pretraining needs positive pairs")
    cfg = state.config
    trace = []
    best = math.inf
    since_best = 0
    for _ in range(steps):
        pairs = sample_batch(corpus, POSITIVE, cfg.batch_size, state.np_rng)
        x, y = batch_tensors(pairs)
        z = sample_pattern(x.shape[0], generator=state.torch_gen,
                           pattern_dim=cfg.pattern_dim)
        code = transcode(state.transcoder, x, z, state.emb)
        _, _, logits = decode_free_run(state.decoder, code, cfg.tau,
                                       cfg.max_len + 1, state.torch_gen,
                                       state.emb, return_logits=True)
        loss = _masked_token_ce(logits, y, PAD_ID).mean()
        _require_finite(loss, "transcoder loss", state.step)
        _gen_step(state, loss)
        state.step += 1
        trace.append(_per_token_ce(logits.detach(), y))
        if trace[-1] < best - 1e-6:
            best, since_best = trace[-1], 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.info("transcoder pretraining plateaued after %d steps", len(trace))
                break
    return trace


def _pad_states(h, width):
    """Zero-pad the step axis so real and rollout states share a width."""
    if h.shape[1] == width:
        return h
    pad = torch.zeros(h.shape[0], width - h.shape[1], h.shape[2], dtype=h.dtype)
    return torch.cat([h, pad], dim=1)


def _snapshot(params):
    return [p.detach().clone() for p in params]


def _unchanged(params, snap):
    return all(torch.equal(p.detach(), s) for p, s in zip(params, snap))


def train_step(state, pos_batch, neg_batch, config):
    """One alternation of generator and critic updates.

    Generator phase: transcode the positive input under a fresh z, free-run
    decode the rollout states, teacher-force both sentences of both classes,
    and descend the margin objective plus half of both reconstruction
    losses. Critic phase: critic_updates_per_gen updates on the detached
    states with a fresh interpolation coefficient each time.
    """
    x_p, y_p = batch_tensors(pos_batch)
    x_n, y_n = batch_tensors(neg_batch)
    if x_p.shape[0] != x_n.shape[0]:
        raise ValueError("class batches must have equal size")
    rollout = config.max_len + 1
    critic_snap = _snapshot(state.critic.parameters()) if config.paranoid_checks else None

    z = sample_pattern(x_p.shape[0], generator=state.torch_gen,
                       pattern_dim=config.pattern_dim)
    code_t = transcode(state.transcoder, x_p, z, state.emb)
    _, h_t = decode_free_run(state.decoder, code_t, config.tau, rollout,
                             state.torch_gen, state.emb)

    per_class = {}
    for class_index, (x, y) in ((POSITIVE_CLASS, (x_p, y_p)),
                                (NEGATIVE_CLASS, (x_n, y_n))):
        logits_x, h_x = decode_teacher_forced(
            state.decoder, encode(state.encoder, x, state.emb), x, state.emb)
        logits_y, h_y = decode_teacher_forced(
            state.decoder, encode(state.encoder, y, state.emb), y, state.emb)
        ae = reconstruction_loss(logits_x, logits_y, _trim(x, logits_x), _trim(y, logits_y))
        h_y = _pad_states(h_y, rollout)
        scores_real = state.critic.score_states(h_y, h_x)[:, class_index]
        scores_fake = state.critic.score_states(h_t, h_x)[:, class_index]
        w = wasserstein_estimate(scores_real, scores_fake)
        per_class[class_index] = (ae, w, h_x, h_y)

    ae_p, w_p = per_class[POSITIVE_CLASS][:2]
    ae_n, w_n = per_class[NEGATIVE_CLASS][:2]
    loss_g = generator_loss(w_p, w_n, config.alpha, config.beta)
    total = combined_generator_objective(loss_g, ae_p, ae_n)
    _require_finite(total, "generator objective", state.step)
    _gen_step(state, total)

    if config.paranoid_checks and not _unchanged(state.critic.parameters(), critic_snap):
        raise RuntimeError("generator update mutated critic parameters")
    gen_snap = _snapshot(state.gen_params) if config.paranoid_checks else None

    h_t_d = h_t.detach()
    detached = {i: (per_class[i][2].detach(), per_class[i][3].detach())
                for i in per_class}
    first_critic_loss = first_penalties = None
    for _ in range(config.critic_updates_per_gen):
        state.opt_critic.zero_grad(set_to_none=True)
        losses, penalties = [], {}
        for class_index in (POSITIVE_CLASS, NEGATIVE_CLASS):
            h_x_d, h_y_d = detached[class_index]
            scores_real = state.critic.score_states(h_y_d, h_x_d)[:, class_index]
            scores_fake = state.critic.score_states(h_t_d, h_x_d)[:, class_index]
            penalty = gradient_penalty(state.critic, h_y_d, h_t_d, h_x_d,
                                       class_index, generator=state.torch_gen)
            losses.append(critic_loss(scores_real, scores_fake, penalty, config.lam))
            penalties[class_index] = float(penalty.detach())
        loss_c = losses[0] + losses[1]
        _require_finite(loss_c, "critic loss", state.step)
        loss_c.backward()
        state.opt_critic.step()
        if first_critic_loss is None:
            first_critic_loss, first_penalties = float(loss_c.detach()), penalties

    if config.paranoid_checks and not _unchanged(state.gen_params, gen_snap):
        raise RuntimeError("critic update mutated generator parameters")

    state.step += 1
    metrics = StepMetrics(step=state.step,
                          W_pos=float(w_p.detach()), W_neg=float(w_n.detach()),
                          L_g=float(loss_g.detach()), L_AE_p=float(ae_p.detach()),
                          L_AE_n=float(ae_n.detach()), L_c=first_critic_loss,
                          penalty_p=first_penalties[POSITIVE_CLASS],
                          penalty_n=first_penalties[NEGATIVE_CLASS])
    for column in METRIC_COLUMNS:
        _require_finite(getattr(metrics, column), column, state.step)
    return metrics


def adversarial_loop(state, corpus, steps, log_file=None, checkpoint_dir=None):
    """Run ``steps`` adversarial alternations, logging and checkpointing."""
    cfg = state.config
    history = []
    for _ in range(steps):
        pos = sample_batch(corpus, POSITIVE, cfg.batch_size, state.np_rng)
        neg = sample_batch(corpus, NEGATIVE, cfg.batch_size, state.np_rng)
        metrics = train_step(state, pos, neg, cfg)
        history.append(metrics)
        if log_file is not None:
            log_file.write(metrics.row() + "\n")
            log_file.flush()
        if checkpoint_dir is not None and len(history) % cfg.checkpoint_every == 0:
            save_checkpoint(state, os.path.join(checkpoint_dir, f"step{state.step:07d}.ckpt"))
    return history


def train(config, corpus=None, vocab=None, state=None):
    """Full pipeline: pretrain both MLE stages, then the adversarial loop.

    Loads vocabulary/corpus/embeddings from config paths unless passed in.
    Writes the metrics log, periodic checkpoints, and a final checkpoint;
    returns (state, step metrics history).
    """
    if vocab is None:
        vocab = Vocabulary.load(config.vocab_path)
    if corpus is None:
        corpus = load_pair_corpus(config.corpus_path, vocab, config.max_len)
    if state is None:
        emb = None
        if config.embeddings_path:
            emb = load_pretrained(config.embeddings_path, vocab, dim=config.emb_dim)
        state = init_state(config, vocab, emb)
    os.makedirs(config.checkpoint_dir, exist_ok=True)
    pretrain_autoencoder(state, corpus, config.pretrain_steps_ae)
    pretrain_transcoder(state, corpus, config.pretrain_steps_trs)
    save_checkpoint(state, os.path.join(config.checkpoint_dir, "pretrained.ckpt"))
    with open(config.metrics_path, "w", encoding="utf-8") as log_file:
        log_file.write("\t".join(METRIC_COLUMNS) + "\n")
        history = adversarial_loop(state, corpus, config.adv_steps,
                                   log_file=log_file,
                                   checkpoint_dir=config.checkpoint_dir)
    save_checkpoint(state, os.path.join(config.checkpoint_dir, "final.ckpt"))
    return state, history


def _named_arrays(state):
    """Every parameter, buffer and optimizer moment as (name, float tensor)."""
    arrays = []
    modules = (("encoder", state.encoder), ("decoder", state.decoder),
               ("transcoder", state.transcoder), ("critic", state.critic),
               ("emb", state.emb))
    for prefix, module in modules:
        for name, tensor in module.state_dict().items():
            arrays.append((f"{prefix}.{name}", tensor))
    for opt_name, opt in (("opt_gen", state.opt_gen), ("opt_critic", state.opt_critic)):
        params = opt.param_groups[0]["params"]
        for i, p in enumerate(params):
            moments = opt.state.get(p)
            if not moments:
                continue
            arrays.append((f"{opt_name}.{i}.step", torch.as_tensor(moments["step"])))
            arrays.append((f"{opt_name}.{i}.exp_avg", moments["exp_avg"]))
            arrays.append((f"{opt_name}.{i}.exp_avg_sq", moments["exp_avg_sq"]))
    return arrays


def save_checkpoint(state, path):
    """Versioned binary dump of parameters, moments, step and rng streams.

    Layout: magic, u32 version, u64 meta length, meta JSON (config, vocab,
    numpy rng state, array names/shapes, step), u64 torch rng length, torch
    rng bytes, then each array as raw little-endian float32. The write goes
    to a temp file first and is renamed into place.
    """
    arrays = _named_arrays(state)
    meta = {
        "step": state.step,
        "config": dataclasses.asdict(state.config),
        "vocab": state.vocab.id_to_token,
        "numpy_rng": _jsonable(state.np_rng.bit_generator.state),
        "arrays": [{"name": n, "shape": list(t.shape)} for n, t in arrays],
    }
    meta_bytes = json.dumps(meta).encode("utf-8")
    rng_bytes = state.torch_gen.get_state().numpy().tobytes()
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<Q", len(rng_bytes)))
        f.write(rng_bytes)
        for _, tensor in arrays:
            f.write(tensor.detach().to(torch.float32).numpy().astype("<f4").tobytes())
    os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def load_checkpoint(path):
    """Rebuild a ModelState from a checkpoint file (bit-exact round trip)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    (meta_len,) = struct.unpack_from("<Q", data, 8)
    offset = 16
    meta = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (rng_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    torch_rng = data[offset:offset + rng_len]
    offset += rng_len

    config = TrainConfig(**meta["config"])
    tokens = meta["vocab"]
    vocab = Vocabulary(tokens[4:])
    if vocab.id_to_token != tokens:
        raise ValueError("checkpoint vocabulary does not start with the reserved tokens")
    state = init_state(config, vocab)

    tensors = {}
    for entry in meta["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        raw = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        tensors[entry["name"]] = torch.from_numpy(raw.copy()).reshape(entry["shape"])
    if offset != len(data):
        raise ValueError(f"corrupt checkpoint: {len(data) - offset} trailing bytes")

    modules = (("encoder", state.encoder), ("decoder", state.decoder),
               ("transcoder", state.transcoder), ("critic", state.critic),
               ("emb", state.emb))
    for prefix, module in modules:
        loaded = {}
        for name, live in module.state_dict().items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise ValueError(f"corrupt checkpoint: missing array {key}")
            loaded[name] = tensors[key].to(live.dtype).reshape(live.shape)
        module.load_state_dict(loaded)
    for opt_name, opt in (("opt_gen", state.opt_gen), ("opt_critic", state.opt_critic)):
        params = opt.param_groups[0]["params"]
        for i, p in enumerate(params):
            key = f"{opt_name}.{i}.step"
            if key not in tensors:
                continue
            opt.state[p] = {
                "step": tensors[key].reshape(()).clone(),
                "exp_avg": tensors[f"{opt_name}.{i}.exp_avg"].reshape(p.shape).clone(),
                "exp_avg_sq": tensors[f"{opt_name}.{i}.exp_avg_sq"].reshape(p.shape).clone(),
            }

    state.step = meta["step"]
    state.torch_gen.set_state(torch.frombuffer(bytearray(torch_rng), dtype=torch.uint8).clone())
    state.np_rng.bit_generator.state = meta["numpy_rng"]
    return state
