"""Generator networks: encoder, pattern-conditioned transcoder, shared decoder.

The encoder and transcoder are 2-layer bidirectional GRUs pooled by an
additive self-attention that ignores PAD positions; both emit a single
latent code that seeds the shared single-layer GRU decoder. Decoding runs
either teacher-forced (training the auto-encoder) or free-run, where each
step feeds back a relaxed one-hot sample of its own output.
"""

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .embeddings import embed

GUMBEL_EPS = 1e-20


def sequence_lengths(ids):
    """Valid step count per row: position of the first EOS plus one."""
    is_eos = ids == EOS_ID
    has_eos = is_eos.any(dim=1)
    first = is_eos.int().argmax(dim=1)
    return torch.where(has_eos, first + 1, torch.full_like(first, ids.shape[1]))


def sample_gumbel(shape, generator=None, dtype=torch.float32):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def gumbel_softmax(logits, tau, noise):
    """Temperature-controlled relaxation of categorical sampling.

    Returns softmax((logits + noise) / tau) along the last dimension; the
    softmax subtracts its running maximum, so large logits stay stable.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if noise.shape != logits.shape:
        raise ValueError("noise shape must match logits")
    return F.softmax((logits + noise) / tau, dim=-1)


def sample_pattern(batch, generator=None, pattern_dim=128):
    """Draw i.i.d. standard-normal pattern embeddings, one per example."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return torch.randn(batch, pattern_dim, generator=generator)


class Encoder(nn.Module):
    """Bidirectional GRU stack pooled to one latent code by inner-attention.

    Each direction runs at hidden_size // 2 so concatenated states match
    the advertised width.
    """

    def __init__(self, input_dim, hidden_size=512, num_layers=2):
        super().__init__()
        if hidden_size % 2:
            raise ValueError("hidden_size must be even for a bidirectional encoder")
        self.input_dim = input_dim
        self.hidden_size = hidden_size
        self.gru = nn.GRU(input_dim, hidden_size // 2, num_layers=num_layers,
                          bidirectional=True, batch_first=True)
        self.attn_hidden = nn.Linear(hidden_size, hidden_size)
        self.attn_score = nn.Linear(hidden_size, 1, bias=False)
        self.proj = nn.Linear(hidden_size, hidden_size)

    def forward(self, inputs, lengths):
        """Pool embedded steps (B x T x input_dim) into latent codes (B x hidden)."""
        if inputs.shape[1] == 0 or (lengths < 1).any():
            raise ValueError("cannot encode a length-0 sequence")
        packed = pack_padded_sequence(inputs, lengths.cpu(), batch_first=True, enforce_sorted=False)
        states, _ = self.gru(packed)
        states, _ = pad_packed_sequence(states, batch_first=True, total_length=inputs.shape[1])
        scores = self.attn_score(torch.tanh(self.attn_hidden(states))).squeeze(-1)
        valid = torch.arange(inputs.shape[1], device=inputs.device).unsqueeze(0) < lengths.unsqueeze(1)
        scores = scores.masked_fill(~valid, float("-inf"))
        weights = F.softmax(scores, dim=1)
        return self.proj((weights.unsqueeze(-1) * states).sum(dim=1))


class Transcoder(nn.Module):
    """Encoder-shaped network consuming token embeddings concatenated with z."""

    def __init__(self, emb_dim, pattern_dim=128, hidden_size=512, num_layers=2):
        super().__init__()
        self.emb_dim = emb_dim
        self.pattern_dim = pattern_dim
        self.encoder = Encoder(emb_dim + pattern_dim, hidden_size, num_layers)

    def forward(self, inputs, lengths):
        return self.encoder(inputs, lengths)


def encode(encoder, ids, emb):
    """Latent code of a batch of token-id sequences (PAD-tail invariant)."""
    return encoder(embed(emb, ids), sequence_lengths(ids))


def transcode(transcoder, ids, z, emb):
    """Latent code of ids conditioned on pattern embeddings z (B x pattern_dim)."""
    if z.shape[-1] != transcoder.pattern_dim:
        raise ValueError(f"pattern embedding width {z.shape[-1]} != {transcoder.pattern_dim}")
    if not torch.isfinite(z).all():
        raise ValueError("pattern embedding must be finite")
    x = embed(emb, ids)
    per_step = torch.cat([x, z.unsqueeze(1).expand(-1, x.shape[1], -1)], dim=-1)
    return transcoder(per_step, sequence_lengths(ids))


class Decoder(nn.Module):
    """Single-layer GRU decoder with a projection to vocabulary logits.

    One instance serves both the auto-encoding (teacher-forced) and
    paraphrase (free-run) paths, so its weights are shared by contract.
    """

    def __init__(self, emb_dim, hidden_size, vocab_size):
        super().__init__()
        self.hidden_size = hidden_size
        self.vocab_size = vocab_size
        self.gru = nn.GRU(emb_dim, hidden_size, num_layers=1, batch_first=True)
        self.out = nn.Linear(hidden_size, vocab_size)


def decode_teacher_forced(decoder, code, targets, emb):
    """Decode with ground-truth inputs; returns (logits, hidden states).

    The decoder starts from ``code``; step t consumes the embedding of
    target token t-1 (BOS at step 0). Both outputs span the batch's
    longest through-EOS length; hidden states past a row's own EOS are
    zeroed so padded rows stay inert downstream.
    """
    if code.shape[-1] != decoder.hidden_size:
        raise ValueError("latent code width must equal decoder hidden size")
    lengths = sequence_lengths(targets)
    steps = int(lengths.max())
    bos = torch.full((targets.shape[0], 1), BOS_ID, dtype=targets.dtype, device=targets.device)
    input_ids = torch.cat([bos, targets[:, : steps - 1]], dim=1)
    states, _ = decoder.gru(embed(emb, input_ids), code.unsqueeze(0).contiguous())
    logits = decoder.out(states)
    valid = torch.arange(steps, device=targets.device).unsqueeze(0) < lengths.unsqueeze(1)
    return logits, states * valid.unsqueeze(-1).to(states.dtype)


def decode_free_run(decoder, code, tau, max_steps, generator, emb, return_logits=False):
    """Fixed-length rollout feeding back relaxed one-hot samples.

    Returns (simplex rows B x max_steps x V, hidden states B x max_steps x H),
    plus the pre-noise logits as a third element when ``return_logits`` is
    set. EOS does not stop the rollout; training consumers need rectangular
    feature maps.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    batch = code.shape[0]
    hidden = code.unsqueeze(0).contiguous()
    step_input = embed(emb, torch.full((batch, 1), BOS_ID, dtype=torch.long))
    simplexes, states, all_logits = [], [], []
    for _ in range(max_steps):
        out, hidden = decoder.gru(step_input, hidden)
        logits = decoder.out(out[:, 0])
        noise = sample_gumbel(logits.shape, generator=generator, dtype=logits.dtype)
        simplex = gumbel_softmax(logits, tau, noise)
        simplexes.append(simplex)
        states.append(out[:, 0])
        all_logits.append(logits)
        step_input = embed(emb, simplex).unsqueeze(1)
    if return_logits:
        return (torch.stack(simplexes, dim=1), torch.stack(states, dim=1),
                torch.stack(all_logits, dim=1))
    return torch.stack(simplexes, dim=1), torch.stack(states, dim=1)


def greedy_decode(decoder, code, max_steps, emb):
    """Argmax rollout of a single latent code; stops at EOS or max_steps.

    Ties break toward the lowest token id. The terminating EOS is included
    when emitted; PAD never appears.
    """
    if code.ndim != 1 or code.shape[0] != decoder.hidden_size:
        raise ValueError("greedy_decode expects a single latent code vector")
    ids = []
    with torch.no_grad():
        hidden = code.reshape(1, 1, -1)
        step_input = embed(emb, torch.tensor([[BOS_ID]]))
        for _ in range(max_steps):
            out, hidden = decoder.gru(step_input, hidden)
            logits = decoder.out(out[:, 0])
            logits[:, PAD_ID] = float("-inf")
            next_id = int(torch.argmax(logits, dim=-1))
            ids.append(next_id)
            if next_id == EOS_ID:
                break
            step_input = embed(emb, torch.tensor([[next_id]]))
    return ids
