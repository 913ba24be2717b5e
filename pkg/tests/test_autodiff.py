import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pointcube import autodiff as ad
from pointcube.autodiff import AttentionParams, Tensor
from pointcube.errors import AllKeysMasked, EmptyInput, ShapeMismatch, ZeroVector


def _numeric_grad(fn, array, eps=1e-6):
    """Central differences of a scalar fn with respect to every entry of array (perturbed in place)."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + eps
        plus = fn()
        array[idx] = original - eps
        minus = fn()
        array[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def _check(build, *shapes, rng, positive=False):
    """Compare backward() against central differences for a scalar-valued graph builder."""
    leaves = [Tensor(rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s), requires_grad=True)
              for s in shapes]
    weights = None

    def scalar():
        nonlocal weights
        out = build(*leaves)
        if weights is None:
            weights = rng.normal(size=out.shape)
        return out, float((out.data * weights).sum())

    out, _ = scalar()
    (out * Tensor(weights)).sum().backward()
    for leaf in leaves:
        numeric = _numeric_grad(lambda: scalar()[1], leaf.data)
        assert_allclose(leaf.grad, numeric, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize('name, build, shapes', [
    ('add-broadcast', lambda a, b: a + b, [(3, 4), (4,)]),
    ('sub', lambda a, b: a - b, [(3, 4), (3, 4)]),
    ('mul-broadcast', lambda a, b: a * b, [(3, 4), (1, 4)]),
    ('matmul', lambda a, b: a @ b, [(3, 5), (5, 2)]),
    ('transpose', lambda a: a.T @ a, [(4, 3)]),
    ('sum-axis', lambda a: a.sum(axis=0), [(3, 4)]),
    ('mean', lambda a: a.mean(axis=1, keepdims=True), [(3, 4)]),
    ('exp', lambda a: a.exp(), [(2, 3)]),
    ('reshape', lambda a: a.reshape(4, 3) @ a, [(3, 4)]),
    ('take-rows', lambda a: ad.take_rows(a, [0, 2, 2]), [(3, 4)]),
    ('slice-concat', lambda a: ad.concat_cols([ad.slice_cols(a, 2, 4), ad.slice_cols(a, 0, 1)]), [(3, 4)]),
    ('concat-rows', lambda a, b: ad.concat_rows([a, b]), [(2, 3), (1, 3)]),
    ('softmax', lambda a: ad.softmax_lastdim(a), [(3, 5)]),
    ('logsumexp', lambda a: ad.logsumexp_lastdim(a), [(3, 5)]),
    ('layer-norm', lambda x, g, b: ad.layer_norm(x, g, b), [(4, 6), (6,), (6,)]),
    ('l2-normalize', lambda a: ad.l2_normalize_rows(a), [(3, 4)]),
    ('cosine-matrix', lambda a, b: ad.cosine_matrix(a, b), [(3, 4), (5, 4)]),
])
def test_op_gradients_match_central_differences(name, build, shapes, rng):
    _check(build, *shapes, rng=rng)


@pytest.mark.parametrize('build', [lambda a, b: a / b, lambda a: a.log()])
def test_positive_domain_gradients(build, rng):
    shapes = [(3, 4)] * build.__code__.co_argcount
    _check(build, *shapes, rng=rng, positive=True)


def test_relu_gradient_away_from_zero(rng):
    data = rng.normal(size=(4, 5))
    data[np.abs(data) < 0.1] = 0.5
    x = Tensor(data, requires_grad=True)

    x.relu().sum().backward()

    assert_array_equal(x.grad, (data > 0).astype(float))


def test_shared_subexpression_accumulates_gradient():
    x = Tensor([[2.0, 3.0]], requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert_allclose(x.grad, [[5.0, 7.0]])


def test_maxpool_routes_gradient_to_lowest_tied_row():
    x = Tensor([[1.0, 5.0], [3.0, 5.0], [3.0, 2.0]], requires_grad=True)

    pooled, argmax = ad.maxpool_rows(x)
    (pooled * Tensor([[10.0, 20.0]])).sum().backward()

    assert_array_equal(pooled.data, [[3.0, 5.0]])
    assert argmax.tolist() == [1, 0]
    assert_array_equal(x.grad, [[0.0, 20.0], [10.0, 0.0], [0.0, 0.0]])


def test_maxpool_rejects_empty_input():
    with pytest.raises(EmptyInput):
        ad.maxpool_rows(Tensor(np.zeros((0, 3))))


def test_segment_max_with_empty_segment():
    x = Tensor([[1.0, -2.0], [4.0, -1.0], [0.0, 7.0]], requires_grad=True)
    segments = [np.array([0, 1]), np.array([], dtype=np.int64), np.array([2])]

    out = ad.segment_max(x, segments)
    out.sum().backward()

    assert_array_equal(out.data, [[4.0, -1.0], [0.0, 0.0], [0.0, 7.0]])
    assert_array_equal(x.grad, [[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])


def test_segment_max_matches_maxpool_per_segment(rng):
    x = Tensor(rng.normal(size=(10, 3)), requires_grad=True)
    segments = [np.arange(0, 4), np.arange(4, 10)]

    out = ad.segment_max(x, segments)

    for s, index in enumerate(segments):
        pooled, _ = ad.maxpool_rows(Tensor(x.data[index]))
        assert_array_equal(out.data[s], pooled.data[0])


def test_layer_norm_uses_population_variance(rng):
    x = Tensor(rng.normal(size=(3, 8)))
    out = ad.layer_norm(x, np.ones(8), np.zeros(8), eps=0.0).data
    assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    assert_allclose(out.var(axis=1), 1.0, atol=1e-12)


def test_layer_norm_rejects_single_feature():
    with pytest.raises(ShapeMismatch):
        ad.layer_norm(Tensor(np.ones((2, 1))), np.ones(1), np.zeros(1))


def test_l2_normalize_names_zero_row():
    with pytest.raises(ZeroVector) as excinfo:
        ad.l2_normalize_rows(Tensor([[1.0, 0.0], [0.0, 0.0]]))
    assert excinfo.value.index == 1


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_backward_requires_scalar_root():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        (x * 2.0).backward()


def test_cosine_similarity_values():
    assert ad.cosine_similarity([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert ad.cosine_similarity([1.0, 1.0], [2.0, 2.0]) == pytest.approx(1.0)
    assert ad.cosine_similarity([1.0, 0.0], [-3.0, 0.0]) == -1.0
    with pytest.raises(ZeroVector):
        ad.cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_attention_identity_weights_single_key():
    """One key means every query copies the value row exactly."""
    params = AttentionParams.identity(4)
    q = Tensor(np.arange(8.0).reshape(2, 4))
    k = Tensor([[1.0, 0.0, 0.0, 0.0]])
    v = Tensor([[0.5, -1.0, 2.0, 3.0]])

    out = ad.multihead_attention(q, k, v, params, heads=2)

    assert_allclose(out.data, np.tile(v.data, (2, 1)))


def test_attention_mask_ignores_masked_keys(rng):
    params = AttentionParams.init(4, rng)
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(5, 4)))
    mask = np.array([True, False, True, False, False])

    masked = ad.multihead_attention(q, k, k, params, heads=2, mask=mask)
    kept = Tensor(k.data[mask])
    reference = ad.multihead_attention(q, kept, kept, params, heads=2)

    assert_allclose(masked.data, reference.data, atol=1e-12)


def test_attention_all_keys_masked():
    params = AttentionParams.identity(2)
    x = Tensor(np.ones((2, 2)))
    with pytest.raises(AllKeysMasked):
        ad.multihead_attention(x, x, x, params, heads=1, mask=[False, False])


def test_attention_gradients(rng):
    params = AttentionParams.init(4, rng)
    mask = np.array([True, True, False])

    def build(q, k):
        return ad.multihead_attention(q, k, k, params, heads=2, mask=mask)
    _check(build, (2, 4), (3, 4), rng=rng)


def test_attention_heads_must_divide_width(rng):
    params = AttentionParams.init(4, rng)
    x = Tensor(np.ones((2, 4)))
    with pytest.raises(ShapeMismatch):
        ad.multihead_attention(x, x, x, params, heads=3)
