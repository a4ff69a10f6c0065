"""Word embedding matrix shared by encoder, transcoder and decoder inputs.

Supports hard token-id lookup and soft lookup of vocabulary-simplex rows
(convex combinations), so relaxed one-hot outputs can be fed back into
recurrent decoding.
"""

import logging

import torch
from torch import nn

from .corpus import PAD_ID

log = logging.getLogger(__name__)

SIMPLEX_SUM_TOL = 1e-5


class EmbeddingMatrix(nn.Module):
    """V x D embedding table with a per-row trainable mask.

    The PAD row is frozen at zero by default so padding stays inert in
    recurrent sums.
    """

    def __init__(self, weight, trainable_mask=None):
        super().__init__()
        weight = torch.as_tensor(weight, dtype=torch.float32)
        if weight.ndim != 2:
            raise ValueError("embedding weight must be V x D")
        self.weight = nn.Parameter(weight)
        if trainable_mask is None:
            trainable_mask = torch.ones(weight.shape[0], dtype=torch.bool)
            trainable_mask[PAD_ID] = False
        self.register_buffer("trainable_mask", torch.as_tensor(trainable_mask, dtype=torch.bool))
        with torch.no_grad():
            if not self.trainable_mask[PAD_ID]:
                self.weight[PAD_ID] = 0.0
        self.weight.register_hook(self._mask_grad)
        self.coverage = None

    def _mask_grad(self, grad):
        return grad * self.trainable_mask.unsqueeze(1).to(grad.dtype)

    @property
    def num_tokens(self):
        return self.weight.shape[0]

    @property
    def dim(self):
        return self.weight.shape[1]

    def forward(self, ids_or_simplex):
        return embed(self, ids_or_simplex)


def embed(emb, ids_or_simplex):
    """Look up hard ids (integer tensor) or mix rows by simplex weights.

    A floating-point input is interpreted as per-step simplex vectors over
    the vocabulary (last dimension V): each output vector is the convex
    combination of embedding rows. Simplexes must be nonnegative and sum
    to 1 within 1e-5.
    """
    x = ids_or_simplex
    if not torch.is_tensor(x):
        x = torch.as_tensor(x)
    if not x.is_floating_point():
        if x.numel() and (x.min() < 0 or x.max() >= emb.num_tokens):
            raise ValueError("token id out of range")
        return emb.weight[x]
    if x.shape[-1] != emb.num_tokens:
        raise ValueError(
            f"simplex width {x.shape[-1]} does not match vocabulary size {emb.num_tokens}")
    with torch.no_grad():
        sums = x.sum(dim=-1)
        if (sums - 1.0).abs().max() > SIMPLEX_SUM_TOL:
            raise ValueError("simplex rows must sum to 1")
        if x.min() < -SIMPLEX_SUM_TOL:
            raise ValueError("simplex rows must be nonnegative")
    return x.to(emb.weight.dtype) @ emb.weight


def random_embeddings(vocab_size, dim, generator=None, std=0.1):
    """Fresh N(0, std^2) matrix with a zeroed PAD row."""
    weight = torch.empty(vocab_size, dim).normal_(0.0, std, generator=generator)
    weight[PAD_ID] = 0.0
    return EmbeddingMatrix(weight)


def load_pretrained(path, vocab, dim=300, generator=None):
    """Load GloVe-style text vectors for a vocabulary.

    In-vocabulary rows are copied from the file; out-of-vocabulary rows
    (reserved tokens included) are drawn from N(0, 0.1^2); the PAD row is
    zero. The fraction of content tokens found is stored as ``coverage``.
    """
    vectors = {}
    file_dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if file_dim is None:
                file_dim = len(values)
            elif len(values) != file_dim:
                raise ValueError(f"{path}:{lineno}: inconsistent embedding dimension")
            if token in vocab.token_to_id:
                vectors[token] = [float(v) for v in values]
    if file_dim is not None and file_dim != dim:
        raise ValueError(f"embedding file has dimension {file_dim}, expected {dim}")

    weight = torch.empty(len(vocab), dim).normal_(0.0, 0.1, generator=generator)
    found = 0
    for token, vec in vectors.items():
        weight[vocab.token_to_id[token]] = torch.tensor(vec)
        found += 1
    weight[PAD_ID] = 0.0
    emb = EmbeddingMatrix(weight)
    content = max(1, len(vocab) - 4)
    emb.coverage = found / content
    log.info("pretrained embedding coverage: %d/%d (%.1f%%)", found, content, 100.0 * emb.coverage)
    return emb
