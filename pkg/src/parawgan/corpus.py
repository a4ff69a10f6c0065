"""Corpus tooling: vocabulary, tokenization, pair loading and batch sampling.

Sentences are stored as fixed-width token-id sequences: content tokens,
one EOS, then PAD up to ``max_len + 1``. Four reserved ids occupy the
bottom of every vocabulary and never collide with corpus text.
"""

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)

POSITIVE = "positive"
NEGATIVE = "negative"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text):
    """Lowercase and split into word / punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bidirectional token<->id map with fixed reserved ids 0..3."""

    def __init__(self, content_tokens=()):
        self.id_to_token = list(RESERVED_TOKENS) + list(content_tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    @property
    def size(self):
        return len(self.id_to_token)

    def lookup(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx):
        return self.id_to_token[idx]

    def save(self, path):
        """One token per line in id order (reserved tokens first)."""
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.id_to_token:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary file {path} does not start with reserved tokens")
        return cls(tokens[4:])


@dataclass(frozen=True)
class SentencePair:
    x: tuple
    y: tuple
    label: str


@dataclass
class PairCorpus:
    pairs: list
    stats: dict = field(default_factory=dict)

    def by_label(self, label):
        if label is None:
            return self.pairs
        return [p for p in self.pairs if p.label == label]


def build_vocabulary(sentences, min_freq=1, max_size=20000):
    """Build a frequency-sorted vocabulary from tokenized sentences.

    Tokens are ordered by descending frequency, ties broken
    lexicographically, and truncated to ``max_size - 4`` content tokens.
    """
    if not sentences:
        raise ValueError("empty corpus")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept[: max(0, max_size - 4)])


def encode_sentence(vocab, tokens, max_len=20):
    """Map tokens to ids, truncate to max_len, append EOS, pad to max_len+1."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [vocab.lookup(t) for t in tokens[:max_len]]
    ids.append(EOS_ID)
    ids.extend([PAD_ID] * (max_len + 1 - len(ids)))
    return ids


def decode_sentence(vocab, ids):
    """Inverse of encode_sentence up to UNK substitution: content tokens only."""
    out = []
    for i in ids:
        if i == EOS_ID or i == PAD_ID:
            break
        if i in (BOS_ID,):
            continue
        out.append(vocab.token(int(i)))
    return out


def _label_from_field(raw, path, lineno):
    if raw == "1":
        return POSITIVE
    if raw == "0":
        return NEGATIVE
    raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {raw!r}")


def load_pair_corpus(path, vocab, max_len=20):
    """Load a TSV pair corpus: sentence1 <TAB> sentence2 <TAB> label.

    Pairs where either side exceeds max_len content tokens are dropped;
    the dropped count is reported in stats. Malformed records fail fast
    with their line number.
    """
    pairs = []
    dropped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            toks1, toks2 = tokenize(cols[0]), tokenize(cols[1])
            label = _label_from_field(cols[2].strip(), path, lineno)
            if len(toks1) > max_len or len(toks2) > max_len:
                dropped += 1
                continue
            pairs.append(SentencePair(
                x=tuple(encode_sentence(vocab, toks1, max_len)),
                y=tuple(encode_sentence(vocab, toks2, max_len)),
                label=label,
            ))
    stats = {
        POSITIVE: sum(1 for p in pairs if p.label == POSITIVE),
        NEGATIVE: sum(1 for p in pairs if p.label == NEGATIVE),
        "dropped": dropped,
    }
    return PairCorpus(pairs, stats)


def load_caption_groups(path):
    """Read "image_id <TAB> caption" lines into per-image caption groups."""
    groups = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(cols)}")
            groups.setdefault(cols[0], []).append(cols[1])
    return list(groups.values())


def pair_captions(caption_groups, n_pos, n_neg, seed, vocab=None, max_len=20):
    """Build positive pairs within caption groups and negative pairs across them.

    Positives are sampled without replacement from all distinct caption
    pairs inside a single group; negatives pair captions from two distinct
    groups and are likewise distinct from each other. Deterministic under
    seed. ``caption_groups`` holds raw caption strings; when ``vocab`` is
    given the result is encoded, otherwise token tuples are stored.
    """
    rng = np.random.default_rng(seed)
    tokenized = [[tokenize(c) for c in group] for group in caption_groups]

    within = [
        (g, a, b)
        for g, group in enumerate(tokenized)
        for a in range(len(group))
        for b in range(a + 1, len(group))
    ]
    if n_pos > len(within):
        raise ValueError(
            f"cannot sample {n_pos} positive pairs: only {len(within)} distinct within-group pairs exist")
    if n_neg > 0 and len(tokenized) < 2:
        raise ValueError("negative pairs need at least 2 caption groups")

    chosen_pos = [within[i] for i in rng.permutation(len(within))[:n_pos]]

    negatives = []
    seen = set()
    attempts = 0
    max_attempts = max(1000, 200 * n_neg)
    while len(negatives) < n_neg:
        if attempts >= max_attempts:
            raise ValueError("cannot sample enough distinct cross-group negative pairs")
        attempts += 1
        g1, g2 = rng.choice(len(tokenized), size=2, replace=False)
        a = int(rng.integers(len(tokenized[g1])))
        b = int(rng.integers(len(tokenized[g2])))
        key = (int(g1), a, int(g2), b)
        if key in seen:
            continue
        seen.add(key)
        negatives.append((int(g1), a, int(g2), b))

    def _enc(toks):
        if vocab is None:
            return tuple(toks)
        return tuple(encode_sentence(vocab, toks, max_len))

    pairs = [
        SentencePair(_enc(tokenized[g][a]), _enc(tokenized[g][b]), POSITIVE)
        for g, a, b in chosen_pos
    ]
    pairs += [
        SentencePair(_enc(tokenized[g1][a]), _enc(tokenized[g2][b]), NEGATIVE)
        for g1, a, g2, b in negatives
    ]
    stats = {POSITIVE: n_pos, NEGATIVE: n_neg, "dropped": 0}
    return PairCorpus(pairs, stats)


def sample_batch(corpus, label, batch_size, rng):
    """Sample batch_size pairs uniformly with replacement from one label class.

    ``label=None`` draws from the whole corpus. ``rng`` is a
    numpy Generator and is advanced by the call.
    """
    pool = corpus.by_label(label)
    if not pool:
        raise ValueError(f"no pairs with label {label!r} to sample from")
    idx = rng.integers(len(pool), size=batch_size)
    return [pool[int(i)] for i in idx]
