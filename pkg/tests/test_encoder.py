import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from caslstm import cells, encoder
from caslstm.data import LabeledExample, collate
from caslstm.encoder import EmbeddingTable, EncoderConfig, EncoderParams
from caslstm.numerics import ShapeError, make_rng
from caslstm.training import gradcheck, gradcheck_instance


def randomize(params, rng, scale=1.0):
    for name, arr in params.tensors().items():
        if not name.endswith("lam_u"):
            arr[...] = rng.uniform(-scale, scale, arr.shape)
    return params


def as_oracle(stack):
    out = []
    for layer in stack:
        P = {k: v.tolist() for k, v in layer.tensors().items()}
        if isinstance(layer, cells.CasLayerParams):
            lam = layer.lam.realize()
            out.append(("cas", P, None if lam is None else lam.tolist()))
        elif isinstance(layer, cells.PeepholeParams):
            out.append(("peephole", P, None))
        else:
            out.append(("plain", P, None))
    return out


def make_encoder(rng, **kw):
    config = EncoderConfig(**kw)
    return config, randomize(EncoderParams.init(rng, config), rng)


def test_embed_examples():
    table = EmbeddingTable(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(encoder.embed([0], table), [[1, 2]])
    out = encoder.embed([2, 1, 2], table)
    np.testing.assert_array_equal(out[0], out[2])
    np.testing.assert_array_equal(encoder.embed([1, 2, 2], table), out[[1, 0, 2]])
    with pytest.raises(IndexError):
        encoder.embed([3], table)
    with pytest.raises(IndexError):
        encoder.embed([-1], table)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(num_layers=0)
    with pytest.raises(ValueError):
        EncoderConfig(cell_kind="gru")
    with pytest.raises(ValueError):
        EncoderConfig(pooling="attention")
    assert EncoderConfig(dim=5, bidirectional=True).output_dim == 10


def test_zero_params_single_step_gives_zero_row():
    config = EncoderConfig(num_layers=2, dim=3)
    params = EncoderParams.init(make_rng(0), config)
    for arr in params.tensors().values():
        arr[...] = 0
    H = encoder.encode(make_rng(1).normal(size=(1, 3)), params.forward).H
    np.testing.assert_array_equal(H, np.zeros((1, 3)))


def test_empty_sequence_is_error():
    params = EncoderParams.init(make_rng(0), EncoderConfig(num_layers=1, dim=2))
    with pytest.raises(ValueError):
        encoder.encode(np.zeros((0, 2)), params.forward)
    with pytest.raises(ShapeError):
        encoder.encode(np.zeros((3, 5)), params.forward)


def test_cas_lambda_zero_matches_plain_stack():
    rng = make_rng(2)
    config, cas = make_encoder(rng, num_layers=3, dim=4, cell_kind="cas", lambda_value=0.0)
    plain = EncoderParams([cells.LstmParams(**{k: v for k, v in layer.tensors().items()
                                               if not k.endswith("g")})
                           for layer in cas.forward])
    X = rng.normal(size=(5, 4))
    np.testing.assert_allclose(encoder.encode(X, cas.forward).H,
                               encoder.encode(X, plain.forward).H, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind, lam", [("plain_stacked", "constant"), ("cas", "constant"),
                                       ("cas", "trainable"), ("cas", "none"),
                                       ("peephole_variant", "constant")])
def test_encode_matches_recomposition_oracle(kind, lam):
    rng = make_rng(3)
    config, params = make_encoder(rng, num_layers=2, dim=4, cell_kind=kind, lambda_kind=lam)
    X = rng.normal(size=(3, 4))
    H_ref = oracle.encode_ref(X.tolist(), as_oracle(params.forward))
    np.testing.assert_allclose(encoder.encode(X, params.forward).H, H_ref, atol=1e-13)


def test_bidirectional_cas_matches_oracle():
    rng = make_rng(4)
    config, params = make_encoder(rng, num_layers=2, dim=4, cell_kind="cas", bidirectional=True)
    X = rng.normal(size=(3, 4))
    s = encoder.sentence_forward(X[None], None, config, params)[0][0]
    ref = oracle.sentence_ref(X.tolist(), as_oracle(params.forward), as_oracle(params.backward))
    assert s.shape == (8,)
    np.testing.assert_allclose(s, ref, atol=1e-13)


@pytest.mark.parametrize("pooling", ["mean", "last"])
def test_other_poolings_match_oracle(pooling):
    rng = make_rng(5)
    config, params = make_encoder(rng, num_layers=2, dim=3, cell_kind="cas", bidirectional=True,
                                  pooling=pooling)
    X = rng.normal(size=(4, 3))
    s = encoder.sentence_forward(X[None], None, config, params)[0][0]
    ref = oracle.sentence_ref(X.tolist(), as_oracle(params.forward), as_oracle(params.backward),
                              pooling)
    np.testing.assert_allclose(s, ref, atol=1e-13)


def test_pool_examples():
    H = np.array([[1.0, -2.0], [3.0, 0.0], [-1.0, 5.0]])
    np.testing.assert_array_equal(encoder.pool(H, "max"), [3, 5])
    row = np.array([[0.3, -0.7]])
    for method in encoder.POOLINGS:
        np.testing.assert_array_equal(encoder.pool(row, method), row[0])
    np.testing.assert_array_equal(encoder.pool(np.array([[1.0, 3.0], [3.0, 1.0]]), "mean"), [2, 2])
    with pytest.raises(ValueError):
        encoder.pool(H, "max", mask=np.zeros(3, dtype=bool))
    with pytest.raises(ValueError):
        encoder.pool(H, "median")


def test_pool_respects_mask():
    H = np.array([[1.0, -2.0], [3.0, 0.0], [9.0, 9.0]])
    mask = np.array([True, True, False])
    np.testing.assert_array_equal(encoder.pool(H, "max", mask), [3, 0])
    np.testing.assert_array_equal(encoder.pool(H, "mean", mask), [2, -1])
    np.testing.assert_array_equal(encoder.pool(H, "last", mask), [3, 0])


def test_max_pool_ignores_duplicated_rows():
    H = make_rng(6).normal(size=(4, 3))
    np.testing.assert_array_equal(encoder.pool(np.vstack([H, H[1:2]]), "max"), encoder.pool(H, "max"))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_max_pool_is_permutation_invariant(seed):
    rng = make_rng(seed)
    T, d = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    H = rng.normal(size=(T, d))
    np.testing.assert_array_equal(encoder.pool(H[rng.permutation(T)], "max"), encoder.pool(H, "max"))


def test_bidirectional_palindrome_swaps_halves():
    rng = make_rng(7)
    config, params = make_encoder(rng, num_layers=2, dim=3, cell_kind="cas", bidirectional=True)
    table = EmbeddingTable(rng.normal(size=(6, 3)))
    tokens = [2, 4, 1, 4, 2]
    s = encoder.encode_sentence(tokens, config, params, table)
    swapped = EncoderParams(params.backward, params.forward)
    s_swapped = encoder.encode_sentence(tokens, config, swapped, table)
    np.testing.assert_allclose(s_swapped, np.concatenate([s[3:], s[:3]]), atol=1e-14)


@pytest.mark.parametrize("pooling", encoder.POOLINGS)
@pytest.mark.parametrize("bidirectional", [False, True])
def test_padding_does_not_change_sentence_vector(pooling, bidirectional):
    rng = make_rng(8)
    config, params = make_encoder(rng, num_layers=2, dim=3, cell_kind="peephole_variant",
                                  bidirectional=bidirectional, pooling=pooling)
    table = EmbeddingTable(rng.normal(size=(9, 3)))
    for _ in range(20):
        T = int(rng.integers(1, 6))
        tokens = rng.integers(1, 9, T)
        alone = encoder.encode_sentence(tokens, config, params, table)
        pad = int(rng.integers(1, 4))
        padded = np.concatenate([tokens, np.zeros(pad, dtype=int)])
        mask = np.arange(T + pad) < T
        np.testing.assert_allclose(encoder.encode_sentence(padded, config, params, table, mask=mask),
                                   alone, rtol=0, atol=1e-12)


def test_trace_shapes():
    rng = make_rng(9)
    config, params = make_encoder(rng, num_layers=3, dim=4, cell_kind="cas")
    table = EmbeddingTable(rng.normal(size=(6, 4)))
    tokens = np.array([[1, 2, 3, 0], [4, 5, 0, 0]])
    mask = tokens > 0
    _, trace = encoder.encode_sentence(tokens, config, params, table, mask=mask, trace=True)
    assert sorted(trace.g) == [2, 3] and sorted(trace.o) == [1, 2, 3]
    assert [s.shape for s in trace.g[2]] == [(3, 4), (2, 4)]
    for series in trace.g.values():
        for s in series:
            assert np.all((s > 0) & (s < 1))


def test_batched_gradients_match_sum_of_single_example_gradients():
    ec = EncoderConfig(num_layers=2, dim=3, cell_kind="cas", bidirectional=True,
                       lambda_kind="trainable")
    net, _ = gradcheck_instance(ec, features="nli", length=4, seed=1)
    rng = make_rng(1)
    examples = [LabeledExample(tuple(rng.integers(2, 7, n)), int(rng.integers(0, 3)),
                               tuple(rng.integers(2, 7, m))) for n, m in ((4, 2), (1, 3), (3, 3))]
    _, batch_grads, _ = net.loss_and_grads(collate(examples))
    for k, v in batch_grads.items():
        total = sum(net.loss_and_grads(collate([ex]))[1][k] for ex in examples) / len(examples)
        np.testing.assert_allclose(v, total, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind, lam", [("plain_stacked", "constant"), ("cas", "trainable"),
                                       ("cas", "none"), ("peephole_variant", "constant")])
@pytest.mark.parametrize("pooling", encoder.POOLINGS)
def test_padded_batch_gradients_within_roundoff(kind, lam, pooling):
    ec = EncoderConfig(num_layers=2, dim=3, cell_kind=kind, bidirectional=True, pooling=pooling,
                       lambda_kind=lam)
    net, _ = gradcheck_instance(ec, features="pi", length=4, seed=2)
    rng = make_rng(2)
    batch = collate([LabeledExample(tuple(rng.integers(2, 7, n)), int(rng.integers(0, 3)),
                                    tuple(rng.integers(2, 7, 5 - n))) for n in (1, 2, 4)])
    result = gradcheck(net, batch)
    noise = oracle.fd_roundoff([net.loss(batch)], 1e-5)
    assert all(abs(a - n) <= 1e-4 * max(abs(a), abs(n)) + noise for _, a, n in result.flagged)
    assert result.checked == sum(v.size for v in net.tensors().values())
