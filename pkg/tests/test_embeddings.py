"""Embedding table: file loading, simplex mixing, PAD freezing."""

import torch
import pytest

from parawgan.corpus import PAD_ID, build_vocabulary
from parawgan.embeddings import (EmbeddingMatrix, embed, load_pretrained,
                                 random_embeddings)


def toy_matrix():
    # row 0 is PAD and must stay zero
    weight = torch.tensor([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]])
    return EmbeddingMatrix(weight)


def test_pad_row_is_zero_even_if_given_nonzero():
    emb = EmbeddingMatrix(torch.ones(4, 3))
    assert torch.all(emb.weight[PAD_ID] == 0)


def test_weight_must_be_2d():
    with pytest.raises(ValueError):
        EmbeddingMatrix(torch.ones(5))


def test_hard_id_lookup_matches_rows():
    emb = toy_matrix()
    out = embed(emb, torch.tensor([1, 2, 0]))
    assert torch.equal(out, emb.weight[torch.tensor([1, 2, 0])])


def test_id_out_of_range_errors():
    emb = toy_matrix()
    with pytest.raises(ValueError):
        embed(emb, torch.tensor([3]))
    with pytest.raises(ValueError):
        embed(emb, torch.tensor([-1]))


def test_one_hot_simplex_equals_hard_id():
    emb = toy_matrix()
    one_hot = torch.tensor([[0.0, 0.0, 1.0]])
    assert torch.allclose(embed(emb, one_hot)[0], embed(emb, torch.tensor([2])))


def test_uniform_simplex_is_column_mean():
    emb = toy_matrix()
    uniform = torch.full((1, 3), 1.0 / 3.0)
    expected = emb.weight.mean(dim=0)
    assert torch.allclose(embed(emb, uniform)[0], expected, atol=1e-6)


def test_simplex_mixing_is_linear():
    emb = EmbeddingMatrix(torch.randn(6, 4))
    gen = torch.Generator().manual_seed(0)
    for _ in range(20):
        s1 = torch.softmax(torch.randn(3, 6, generator=gen), dim=-1)
        s2 = torch.softmax(torch.randn(3, 6, generator=gen), dim=-1)
        a = float(torch.rand((), generator=gen))
        mixed = embed(emb, a * s1 + (1 - a) * s2)
        parts = a * embed(emb, s1) + (1 - a) * embed(emb, s2)
        assert torch.allclose(mixed, parts, atol=1e-6)


def test_simplex_rows_must_sum_to_one_and_be_nonnegative():
    emb = toy_matrix()
    with pytest.raises(ValueError, match="sum to 1"):
        embed(emb, torch.tensor([[0.5, 0.5, 0.5]]))
    with pytest.raises(ValueError, match="nonnegative"):
        embed(emb, torch.tensor([[1.5, -0.5, 0.0]]))
    with pytest.raises(ValueError, match="width"):
        embed(emb, torch.tensor([[1.0, 0.0]]))


def test_pad_gradient_is_masked():
    emb = EmbeddingMatrix(torch.randn(5, 3))
    out = embed(emb, torch.tensor([0, 1, 2]))
    out.sum().backward()
    assert torch.all(emb.weight.grad[PAD_ID] == 0)
    assert torch.any(emb.weight.grad[1] != 0)


def test_random_embeddings_deterministic_and_pad_zero():
    e1 = random_embeddings(7, 4, generator=torch.Generator().manual_seed(5))
    e2 = random_embeddings(7, 4, generator=torch.Generator().manual_seed(5))
    assert torch.equal(e1.weight, e2.weight)
    assert torch.all(e1.weight[PAD_ID] == 0)


def _write_vectors(path, rows):
    path.write_text("".join(f"{tok} {' '.join(str(v) for v in vec)}\n"
                            for tok, vec in rows))


def test_load_pretrained_copies_file_vectors(tmp_path):
    vocab = build_vocabulary([["cat", "dog"]])
    path = tmp_path / "vecs.txt"
    _write_vectors(path, [("cat", [1.0, 2.0, 3.0, 4.0]),
                          ("unrelated", [9.0, 9.0, 9.0, 9.0])])
    emb = load_pretrained(path, vocab, dim=4)
    cat_id = vocab.lookup("cat")
    assert torch.allclose(emb.weight[cat_id],
                          torch.tensor([1.0, 2.0, 3.0, 4.0]))
    assert torch.all(emb.weight[PAD_ID] == 0)


def test_load_pretrained_initializes_missing_tokens(tmp_path):
    vocab = build_vocabulary([["cat", "dog"]])
    path = tmp_path / "vecs.txt"
    _write_vectors(path, [("cat", [1.0, 0.0, 0.0, 0.0])])
    emb = load_pretrained(path, vocab, dim=4)
    dog_id = vocab.lookup("dog")
    assert emb.weight[dog_id].abs().sum() > 0  # random init, not zeros
    assert emb.weight.shape == (len(vocab), 4)


def test_load_pretrained_rejects_wrong_width(tmp_path):
    vocab = build_vocabulary([["cat"]])
    path = tmp_path / "vecs.txt"
    _write_vectors(path, [("cat", [1.0, 2.0])])
    with pytest.raises(ValueError):
        load_pretrained(path, vocab, dim=4)
