"""Acceptance gate: ten end-to-end properties the package must satisfy.

Each test prints a single "ACCEPTANCE n PASS/FAIL" verdict line (visible
under ``pytest -s``) on top of the usual pytest outcome. Tests 5-7 and
9-10 train small models on the templated toy corpora; together they take
roughly ten minutes of CPU time.
"""

import dataclasses
import functools
import math
import random
import time

import torch

from conftest import small_config, templated_corpus
from test_metrics import _oracle_bleu, _oracle_rouge, _random_sentence

from parawgan.corpus import encode_sentence, tokenize
from parawgan.critic import CriticNet, build_feature_map, gradient_penalty
from parawgan.losses import (combined_generator_objective, critic_loss,
                             generator_loss, multiclass_generator_loss,
                             wasserstein_estimate)
from parawgan.metrics import bleu4, evaluate_set, rouge_n
from parawgan.seqnets import (greedy_decode, gumbel_softmax, sample_gumbel,
                              sample_pattern, transcode)
from parawgan.trainer import (TrainConfig, adversarial_loop, init_state,
                              load_checkpoint, pretrain_autoencoder,
                              pretrain_transcoder, save_checkpoint)


def _verdict(n, desc):
    """Print one pass/fail line per criterion, then defer to pytest."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {n} FAIL - {desc}", flush=True)
                raise
            print(f"ACCEPTANCE {n} PASS - {desc}", flush=True)
        return run
    return wrap


# ---------------------------------------------------------------- 1


@_verdict(1, "gumbel-softmax simplex membership, temperature limits, gradients")
def test_acceptance_01_gumbel_softmax_suite():
    t0 = time.time()
    gen = torch.Generator().manual_seed(101)
    width = 7

    # 10^4 random draws across tau in [0.05, 10] stay on the simplex
    for _ in range(50):
        tau = 0.05 + 9.95 * float(torch.rand((), generator=gen))
        logits = (torch.rand(200, width, generator=gen) - 0.5) * 12
        noise = sample_gumbel(logits.shape, generator=gen)
        out = gumbel_softmax(logits, tau, noise)
        assert (out.sum(dim=-1) - 1.0).abs().max() <= 1e-6
        assert out.min() >= -1e-6 and out.max() <= 1.0 + 1e-6

    # tau = 0.01: the sample argmax matches argmax(logits + noise)
    logits = (torch.rand(10_000, width, generator=gen) - 0.5) * 12
    noise = sample_gumbel(logits.shape, generator=gen)
    out = gumbel_softmax(logits, 0.01, noise)
    agree = (out.argmax(dim=-1) == (logits + noise).argmax(dim=-1)).float().mean()
    assert float(agree) >= 0.999, f"argmax agreement {float(agree):.4f}"

    # tau = 10^3 with bounded logits: near-uniform rows
    logits = (torch.rand(10_000, width, generator=gen) - 0.5) * 10
    noise = sample_gumbel(logits.shape, generator=gen)
    out = gumbel_softmax(logits, 1e3, noise)
    assert (out - 1.0 / width).abs().max() <= 1e-2

    # analytic gradients match float64 central differences
    for tau in (0.3, 0.7, 2.0):
        logits = torch.randn(6, generator=gen, dtype=torch.float64).requires_grad_(True)
        noise = sample_gumbel((6,), generator=gen, dtype=torch.float64)
        weights = torch.randn(6, generator=gen, dtype=torch.float64)
        (weights * gumbel_softmax(logits, tau, noise)).sum().backward()
        h = 1e-5
        for i in range(6):
            with torch.no_grad():
                up = logits.detach().clone()
                down = logits.detach().clone()
                up[i] += h
                down[i] -= h
                numeric = float((weights * gumbel_softmax(up, tau, noise)).sum()
                                - (weights * gumbel_softmax(down, tau, noise)).sum()) / (2 * h)
            analytic = float(logits.grad[i])
            assert abs(analytic - numeric) <= 1e-4 * max(abs(numeric), 1e-6), \
                f"tau {tau} coord {i}: analytic {analytic}, numeric {numeric}"

    assert time.time() - t0 < 60


# ---------------------------------------------------------------- 2


@_verdict(2, "loss algebra hand cases to 1e-9 and the critic-loss identity")
def test_acceptance_02_loss_algebra():
    f64 = dict(dtype=torch.float64)

    real = torch.ones(4, **f64)
    fake = torch.full((4,), 0.2, **f64)
    assert abs(float(wasserstein_estimate(real, fake)) - 0.8) <= 1e-9

    zero = torch.zeros((), **f64)
    one = torch.ones((), **f64)
    assert abs(float(critic_loss(real, fake, zero, 10.0)) + 0.8) <= 1e-9
    assert abs(float(critic_loss(real, real, one, 10.0)) - 10.0) <= 1e-9

    W = torch.tensor([2.0, 1.0, 5.0], **f64)
    assert abs(float(multiclass_generator_loss(W, 0, 0.5, 0.6)) - 1.25) <= 1e-9

    w_pos = torch.tensor(2.0, **f64)
    w_neg = torch.tensor(1.0, **f64)
    assert abs(float(generator_loss(w_pos, w_neg, 0.5, 0.5)) - 1.75) <= 1e-9

    combined = combined_generator_objective(torch.tensor(1.75, **f64),
                                            torch.tensor(2.0, **f64),
                                            torch.tensor(4.0, **f64))
    assert abs(float(combined) - 4.75) <= 1e-9

    # critic_loss == -wasserstein_estimate + lam * penalty on random inputs
    gen = torch.Generator().manual_seed(202)
    for _ in range(1000):
        r = torch.randn(8, generator=gen, **f64)
        f = torch.randn(8, generator=gen, **f64)
        pen = torch.rand((), generator=gen, **f64)
        lam = 20.0 * float(torch.rand((), generator=gen))
        lhs = float(critic_loss(r, f, pen, lam))
        rhs = float(-wasserstein_estimate(r, f) + lam * pen)
        assert abs(lhs - rhs) <= 1e-9


# ---------------------------------------------------------------- 3


class _LinearCritic:
    """Scaled-sum scorer with gradient norm exactly ``scale``."""

    def __init__(self, scale):
        self.scale = scale

    def score_states(self, h, h_x):
        d = h[0].numel()
        s = self.scale * h.reshape(h.shape[0], -1).sum(dim=1) / math.sqrt(d)
        return torch.stack([s, s], dim=1)


@_verdict(3, "gradient penalty closed forms on linear critics")
def test_acceptance_03_gradient_penalty_closed_forms():
    gen_data = torch.Generator().manual_seed(303)
    h_real = torch.randn(8, 3, 4, generator=gen_data)
    h_fake = torch.randn(8, 3, 4, generator=gen_data)
    h_x = torch.randn(8, 3, 4, generator=gen_data)

    unit = gradient_penalty(_LinearCritic(1.0), h_real, h_fake, h_x, 0,
                            generator=torch.Generator().manual_seed(1))
    assert abs(float(unit)) <= 1e-6, f"unit-gradient penalty {float(unit)}"

    doubled = gradient_penalty(_LinearCritic(2.0), h_real, h_fake, h_x, 1,
                               generator=torch.Generator().manual_seed(2))
    assert abs(float(doubled) - 1.0) <= 1e-6, f"doubled-critic penalty {float(doubled)}"


# ---------------------------------------------------------------- 4


@_verdict(4, "matching feature map: hand case, channel count, equivariance")
def test_acceptance_04_feature_map():
    h_x = torch.tensor([[[1.0, -2.0]]])
    h = torch.tensor([[[3.0, 4.0]]])
    fmap = build_feature_map(h_x, h)
    assert fmap.shape == (1, 1, 1, 8)
    assert torch.equal(fmap[0, 0, 0],
                       torch.tensor([1.0, -2.0, 3.0, 4.0, 2.0, 6.0, 3.0, -8.0]))

    wide_x = torch.randn(2, 3, 512)
    wide_h = torch.randn(2, 5, 512)
    assert build_feature_map(wide_x, wide_h).shape == (2, 3, 5, 4 * 512)

    torch.manual_seed(404)
    critic = CriticNet(in_channels=4 * 6, growth=4, mlp_hidden=8)
    h_x = torch.randn(5, 3, 6)
    h = torch.randn(5, 4, 6)
    perm = torch.randperm(5, generator=torch.Generator().manual_seed(7))
    assert torch.equal(build_feature_map(h_x, h)[perm],
                       build_feature_map(h_x[perm], h[perm]))
    scores = critic.score_states(h, h_x)
    assert torch.allclose(scores[perm], critic.score_states(h[perm], h_x[perm]),
                          atol=1e-6)


# ---------------------------------------------------------------- 5


@_verdict(5, "critic-only Wasserstein estimate within 25% of the 1-D oracle")
def test_acceptance_05_wasserstein_sanity():
    t0 = time.time()
    torch.manual_seed(17)
    gen = torch.Generator().manual_seed(17)
    critic = CriticNet(in_channels=4, growth=8, mlp_hidden=64)
    opt = torch.optim.Adam(critic.parameters(), lr=2e-3, betas=(0.5, 0.9))
    batch = 256

    def draw(mu):
        return mu + 0.5 * torch.randn(batch, 1, 1, generator=gen)

    cond = torch.zeros(batch, 1, 1)
    for _ in range(3000):
        real, fake = draw(0.0), draw(3.0)
        pen = gradient_penalty(critic, real, fake, cond, 0, generator=gen)
        loss = critic_loss(critic.score_states(real, cond)[:, 0],
                           critic.score_states(fake, cond)[:, 0], pen, 20.0)
        opt.zero_grad()
        loss.backward()
        opt.step()

    with torch.no_grad():
        estimates = []
        for _ in range(40):
            real, fake = draw(0.0), draw(3.0)
            w = wasserstein_estimate(critic.score_states(real, cond)[:, 0],
                                     critic.score_states(fake, cond)[:, 0])
            estimates.append(abs(float(w)))
    estimate = sum(estimates) / len(estimates)

    assert abs(estimate - 3.0) <= 0.25 * 3.0, f"estimate {estimate:.3f}, oracle 3.0"
    assert time.time() - t0 < 300


# ---------------------------------------------------------------- 6


@_verdict(6, "32-pair overfit: auto-encoder < 0.1 CE, transcoder loss halves")
def test_acceptance_06_overfit(corpus32):
    t0 = time.time()
    vocab, corpus, _ = corpus32
    cfg = small_config(batch_size=32, emb_dim=32, hidden_size=64, lr_gen=5e-3)
    state = init_state(cfg, vocab)

    ae_trace = pretrain_autoencoder(state, corpus, 500)
    assert len(ae_trace) <= 500
    assert ae_trace[-1] < 0.1, f"final per-token CE {ae_trace[-1]:.4f}"

    trs_trace = pretrain_transcoder(state, corpus, 300)
    assert trs_trace[-1] < trs_trace[0] / 2, \
        f"transcoder loss {trs_trace[0]:.3f} -> {trs_trace[-1]:.3f}"
    assert time.time() - t0 < 600


# ---------------------------------------------------------------- 7


def _toy_run(corpus_bundle, seed, adv_steps, beta=0.5):
    """Pretrain + adversarial loop on the templated corpus at one seed."""
    vocab, corpus, _ = corpus_bundle
    cfg = TrainConfig(batch_size=16, max_len=8, emb_dim=16, hidden_size=32,
                      pattern_dim=8, num_layers=1, seed=seed, lr_gen=1e-3,
                      lr_critic=1e-3, tau=0.5, critic_updates_per_gen=1,
                      beta=beta, patience=10_000)
    state = init_state(cfg, vocab)
    pretrain_autoencoder(state, corpus, 400)
    pretrain_transcoder(state, corpus, 300)
    history = adversarial_loop(state, corpus, adv_steps)
    return state, history


def _median(values):
    return sorted(values)[len(values) // 2]


@_verdict(7, "2000-step adversarial run: W_pos decreases, finite, diverse")
def test_acceptance_07_end_to_end_training(corpus200):
    t0 = time.time()
    vocab, _, inputs = corpus200
    w_at_100, w_at_2000, ratios = [], [], []

    for seed in (11, 12, 13):
        state, history = _toy_run(corpus200, seed, 2000)
        assert len(history) == 2000
        for m in history:
            for name, value in dataclasses.asdict(m).items():
                assert math.isfinite(value), f"non-finite {name} at step {m.step}"
        trace = [m.W_pos for m in history]
        w_at_100.append(trace[99])
        w_at_2000.append(trace[1999])

        # K=3 pattern draws per input; outputs must be well-formed and diverse
        cfg = state.config
        gen = torch.Generator().manual_seed(999)
        distinct = 0
        for sentence in inputs:
            ids = torch.tensor([encode_sentence(vocab, tokenize(sentence), cfg.max_len)])
            outs = []
            for _ in range(3):
                z = sample_pattern(1, generator=gen, pattern_dim=cfg.pattern_dim)
                with torch.no_grad():
                    code = transcode(state.transcoder, ids, z, state.emb)
                out = greedy_decode(state.decoder, code[0], cfg.max_len + 1, state.emb)
                assert 0 < len(out) <= 21
                assert len(out) <= cfg.max_len + 1
                assert all(0 <= t < len(vocab) for t in out)
                outs.append(tuple(out))
            if len(set(outs)) >= 2:
                distinct += 1
        ratios.append(distinct / len(inputs))

    assert _median(w_at_2000) < _median(w_at_100), \
        f"W_pos medians: step 100 {_median(w_at_100):.3f}, step 2000 {_median(w_at_2000):.3f}"
    assert min(ratios) >= 0.30, f"distinct-sample ratios {ratios}"
    assert time.time() - t0 < 1800


# ---------------------------------------------------------------- 8


@_verdict(8, "metric oracles: brute-force agreement, self-identity, best>=average")
def test_acceptance_08_metric_oracles():
    rng = random.Random(808)
    for _ in range(50):
        hyp = _random_sentence(rng, hi=12)
        ref = _random_sentence(rng, hi=12)
        assert bleu4(hyp, [ref]) == _oracle_bleu(hyp, [ref])
        assert rouge_n(hyp, ref, 1) == _oracle_rouge(hyp, ref, 1)
        assert rouge_n(hyp, ref, 2) == _oracle_rouge(hyp, ref, 2)

    for sentence in (["the", "cat", "eats", "the", "apple"], ["a", "b", "c", "d"]):
        assert bleu4(sentence, [sentence]) == 100.0
        assert rouge_n(sentence, sentence, 1) == 100.0
        assert rouge_n(sentence, sentence, 2) == 100.0

    # best >= average in every report, stochastic and constant readouts alike
    reference = ["the", "dog", "sees", "the", "ball"]
    pairs = [(reference, reference)] * 6
    shuffler = random.Random(9)

    def stochastic(tokens):
        samples = []
        for _ in range(3):
            sample = list(tokens)
            shuffler.shuffle(sample)
            samples.append(sample)
        return samples

    for readout, k in ((stochastic, 3), (lambda tokens: [list(tokens)], 1)):
        report = evaluate_set(readout, pairs, k)
        for name, avg in report.average.items():
            assert report.best[name] >= avg - 1e-12, \
                f"{name}: best {report.best[name]} < average {avg}"


# ---------------------------------------------------------------- 9


def _rows(history):
    return [dataclasses.asdict(m) for m in history]


def _assert_rows_close(rows_a, rows_b, tol=1e-7):
    assert len(rows_a) == len(rows_b)
    for a, b in zip(rows_a, rows_b):
        for name in a:
            assert abs(a[name] - b[name]) <= tol, \
                f"{name} differs: {a[name]} vs {b[name]}"


@_verdict(9, "seeded reruns and checkpoint resume match within 1e-7")
def test_acceptance_09_determinism_and_persistence(corpus200, tmp_path):
    vocab, corpus, _ = corpus200
    cfg = small_config(seed=31)

    def fresh_history(steps):
        state = init_state(cfg, vocab)
        return state, adversarial_loop(state, corpus, steps)

    _, run_a = fresh_history(10)
    _, run_b = fresh_history(10)
    _assert_rows_close(_rows(run_a), _rows(run_b))

    state, head = fresh_history(5)
    path = tmp_path / "resume.ckpt"
    save_checkpoint(state, path)
    resumed = load_checkpoint(path)
    tail = adversarial_loop(resumed, corpus, 5)
    _assert_rows_close(_rows(run_a[5:]), _rows(tail))


# ---------------------------------------------------------------- 10


@_verdict(10, "hinge ablation: beta=0.5 keeps W_neg at or above the beta=0 run")
def test_acceptance_10_negative_class_margin(corpus200):
    with_hinge, without_hinge = [], []
    for seed in (21, 22, 23):
        _, history = _toy_run(corpus200, seed, 800, beta=0.5)
        with_hinge.append(history[-1].W_neg)
        _, history = _toy_run(corpus200, seed, 800, beta=0.0)
        without_hinge.append(history[-1].W_neg)

    assert _median(with_hinge) >= _median(without_hinge), \
        f"W_neg medians: beta=0.5 {_median(with_hinge):.3f}, beta=0 {_median(without_hinge):.3f}"
