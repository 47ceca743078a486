import numpy as np
import pytest
import scipy.sparse as sp

from mcn.graph import Graph
from mcn.matrices import MotifBank, PsiKind, degenerate_gcn_matrix
from mcn.model import (MCN, ActionSelection, ModelParams, ModelSpec, build_propagation_matrix, compute_state,
                       counter_uniform, policy_probs, select_actions, self_attention_propagate)
from mcn.motifs import MotifKind, node_motif_counts


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return Graph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1))


def randomize(params, rng, scale=0.5):
    for arr in params.named().values():
        arr[...] = rng.normal(scale=scale, size=arr.shape)
    return params


def ref_elu(x):
    return np.where(x > 0, x, np.exp(np.minimum(x, 0)) - 1)


def ref_softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ref_gcn(adj, x, params):
    """Two-layer GCN written densely from the textbook formula."""
    n = adj.shape[0]
    a = adj + np.eye(n)
    d = a.sum(axis=1)
    prop = a / np.sqrt(np.outer(d, d))
    l0, l1 = params.layers
    h = ref_elu(prop @ x @ l0.W[0] + l0.b[0])
    return ref_softmax(prop @ h @ l1.W[0] + l1.b[0])


def ref_gat_layer(adj, h, W, a, b):
    n = adj.shape[0]
    mask = (adj + np.eye(n)) > 0
    outs = []
    for Wh, ah, bh in zip(W, a, b):
        z = h @ Wh
        d = z.shape[1]
        e = (z @ ah[:d])[:, None] + (z @ ah[d:])[None, :]
        e = np.where(e > 0, e, 0.2 * e)
        e = np.where(mask, e, -np.inf)
        alpha = ref_softmax(e)
        outs.append(alpha @ z + bh)
    return outs


def ref_gat(adj, x, params):
    l0, l1 = params.layers
    h = ref_elu(np.hstack(ref_gat_layer(adj, x, l0.W, l0.a, l0.b)))
    logits = np.mean(ref_gat_layer(adj, h, l1.W, l1.a, l1.b), axis=0)
    return ref_softmax(logits)


@pytest.mark.parametrize("draw", range(5))
def test_gcn_mode_matches_reference(draw):
    g = random_graph(30, 0.15, draw)
    rng = np.random.default_rng(100 + draw)
    x = rng.normal(size=(30, 6))
    spec = ModelSpec(6, 3, hidden=(5,), heads=(1, 1), self_attention=False)
    model = MCN(spec, MotifBank.single(g, degenerate_gcn_matrix(g)))
    randomize(model.params, rng)
    np.testing.assert_allclose(model.predict(x), ref_gcn(g.adjacency.toarray(), x, model.params), atol=1e-6, rtol=0)


@pytest.mark.parametrize("draw", range(5))
def test_gat_mode_matches_reference(draw):
    g = random_graph(30, 0.15, draw)
    rng = np.random.default_rng(200 + draw)
    x = rng.normal(size=(30, 6))
    spec = ModelSpec(6, 3, hidden=(4,), heads=(3, 2), self_attention=True)
    model = MCN(spec, MotifBank(g, (MotifKind.EDGE,), 1, PsiKind.UNWEIGHTED))
    randomize(model.params, rng)
    np.testing.assert_allclose(model.predict(x), ref_gat(g.adjacency.toarray(), x, model.params), atol=1e-6, rtol=0)


def motif_model(n=10, seed=0, k_max=2, heads=(2, 1), psi=PsiKind.SYMNORM):
    g = random_graph(n, 0.4, seed)
    motifs = (MotifKind.EDGE, MotifKind.TRIANGLE)
    bank = MotifBank(g, motifs, k_max, psi)
    counts = np.log1p(node_motif_counts(g, motifs).counts)
    spec = ModelSpec(5, 3, hidden=(4,), heads=heads, self_attention=True, count_dim=2, n_motifs=2, k_max=k_max)
    model = MCN(spec, bank, local=degenerate_gcn_matrix(g).matrix, counts=counts)
    rng = np.random.default_rng(seed + 1)
    randomize(model.params, rng)
    x = rng.normal(size=(n, 5))
    return g, model, x


def ce_loss(model, x, labels, frozen):
    probs, trace = model.forward(x, frozen_actions=frozen)
    loss = -np.sum(np.log(probs[np.arange(labels.size), labels]))
    return loss, probs, trace


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300)


def central_difference(f, arr, eps=1e-6):
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = f()
        arr[i] = old - eps
        down = f()
        arr[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def test_cross_entropy_gradients_match_finite_differences():
    g, model, x = motif_model()
    labels = np.random.default_rng(7).integers(0, 3, size=10)
    _, trace = model.forward(x)
    frozen = [(lt.selection.t.copy(), lt.selection.k.copy()) for lt in trace.layers]
    _, probs, trace = ce_loss(model, x, labels, frozen)
    dlogits = probs.copy()
    dlogits[np.arange(10), labels] -= 1
    grads = model.backward(trace, dlogits)
    for name, arr in model.params.named().items():
        fd = central_difference(lambda: ce_loss(model, x, labels, frozen)[0], arr)
        if ".f" in name:
            assert np.all(grads[name] == 0) and np.allclose(fd, 0, atol=1e-8), name
            continue
        assert rel_error(grads[name], fd) < 1e-5, name


def attention_loss(model, x, frozen, weights):
    _, trace = model.forward(x, frozen_actions=frozen)
    return model.policy_backward(trace, weights)


def test_policy_gradients_match_finite_differences():
    g, model, x = motif_model(seed=3)
    _, trace = model.forward(x)
    rng = np.random.default_rng(9)
    frozen = [(rng.integers(0, 2, 10), rng.integers(0, 2, 10)) for _ in trace.layers]
    weights = [rng.normal(size=10), rng.normal(size=10)]
    _, grads = attention_loss(model, x, frozen, weights)
    for name, arr in model.params.named().items():
        if ".f" not in name:
            continue
        fd = central_difference(lambda: attention_loss(model, x, frozen, weights)[0], arr)
        assert rel_error(grads[name], fd) < 1e-5, name


def test_policy_gradient_reaches_own_layer_embedding_only():
    g, model, x = motif_model(seed=4)
    rng = np.random.default_rng(2)
    frozen = [(rng.integers(0, 2, 10), rng.integers(0, 2, 10)) for _ in range(2)]
    weights = [rng.normal(size=10), np.zeros(10)]
    _, grads = attention_loss(model, x, frozen, weights)
    for name, arr in model.params.named().items():
        if name.endswith(".a"):
            assert np.all(grads[name] == 0), name
        if name.startswith("l0.") and name.endswith(".W") and ".f" not in name:
            fd = central_difference(lambda: attention_loss(model, x, frozen, weights)[0], arr)
            assert rel_error(grads[name], fd) < 1e-5, name


def test_policy_perturbation_leaves_prediction_loss_unchanged():
    g, model, x = motif_model(seed=5)
    labels = np.zeros(10, dtype=np.int64)
    _, trace = model.forward(x)
    frozen = [(lt.selection.t, lt.selection.k) for lt in trace.layers]
    base = ce_loss(model, x, labels, frozen)[0]
    model.params.layers[0].f_W += 3.0
    model.params.layers[1].fp_b -= 2.0
    assert ce_loss(model, x, labels, frozen)[0] == base


def test_output_rows_on_simplex():
    _, model, x = motif_model(n=25, seed=6, heads=(3, 2))
    np.testing.assert_allclose(model.predict(x).sum(axis=1), 1, atol=1e-6)


def test_permutation_equivariance():
    g, model, x = motif_model(n=20, seed=8)
    perm = np.random.default_rng(1).permutation(20)
    gp = g.permute(perm)
    motifs = model.bank.motifs
    bank = MotifBank(gp, motifs, model.bank.k_max, model.bank.psi)
    counts = np.empty_like(model.counts)
    counts[perm] = model.counts
    moved = MCN(model.spec, bank, params=model.params.copy(), local=degenerate_gcn_matrix(gp).matrix, counts=counts)
    xp = np.empty_like(x)
    xp[perm] = x
    out = model.predict(x)
    out_p = moved.predict(xp)
    np.testing.assert_allclose(out_p[perm], out, atol=1e-12)


def test_counts_irrelevant_with_singleton_action_space():
    g = random_graph(15, 0.3, 2)
    spec = ModelSpec(4, 2, hidden=(3,), heads=(2, 1))
    bank = MotifBank(g, (MotifKind.EDGE,), 1, PsiKind.UNWEIGHTED)
    rng = np.random.default_rng(0)
    params = randomize(ModelParams.init(spec), rng)
    x = rng.normal(size=(15, 4))
    a = MCN(spec, bank, params=params, counts=rng.random((15, 3)))
    b = MCN(spec, bank, params=params, counts=1000 * rng.random((15, 3)))
    np.testing.assert_array_equal(a.predict(x), b.predict(x))


def test_state_width_and_blocks():
    z = np.random.default_rng(0).normal(size=(4, 8))
    c = np.arange(12.0).reshape(4, 3)
    local = sp.identity(4, format="csr")
    s = compute_state(z, local, c)
    assert s.shape == (4, 11)
    np.testing.assert_array_equal(s[:, 8:], c)
    np.testing.assert_array_equal(s[:, :8], z)
    zero = compute_state(np.zeros((4, 8)), local, c)
    assert np.all(zero[:, :8] == 0)


def _zero_layer(s_dim, t, k):
    from mcn.model import LayerParams
    return LayerParams([], [], [], np.zeros((s_dim, t)), np.zeros(t), np.zeros((s_dim + t, k)), np.zeros(k))


def test_zero_policy_is_uniform_and_picks_first():
    lp = _zero_layer(5, 3, 2)
    sel = select_actions(np.random.default_rng(0).normal(size=(6, 5)), lp)
    np.testing.assert_allclose(sel.probs_f, 1 / 3)
    np.testing.assert_allclose(sel.probs_f_prime, 1 / 2)
    assert np.all(sel.t == 0) and np.all(sel.k == 0)


def test_singleton_actions_have_probability_one():
    lp = _zero_layer(5, 1, 1)
    pf, pfp, _ = policy_probs(np.ones((3, 5)), lp)
    assert np.all(pf == 1) and np.all(pfp == 1)


def test_full_exploration_is_uniform():
    n, t, k = 10_000, 3, 2
    lp = _zero_layer(2, t, k)
    lp.f_b[:] = [5.0, 0.0, 0.0]
    sel = select_actions(np.zeros((n, 2)), lp, mode="epsilon_greedy", epsilon=1.0, seed=42)
    for actions, m in ((sel.t, t), (sel.k, k)):
        freq = np.bincount(actions, minlength=m)
        p = 1 / m
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(freq - n * p) < 3 * sigma)


def test_exploration_is_replayable():
    a = counter_uniform(3, 1, 7, 0, np.arange(100))
    b = counter_uniform(3, 1, 7, 0, np.arange(100))
    c = counter_uniform(3, 1, 8, 0, np.arange(100))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all((a >= 0) & (a < 1))


def test_uniform_selection_reproduces_source_matrix():
    g = random_graph(12, 0.3, 0)
    bank = MotifBank(g, (MotifKind.EDGE, MotifKind.TRIANGLE), 2, PsiKind.TRANSITION)
    zeros = np.zeros(12, dtype=np.int64)
    ones = np.ones((12, 1))
    sel = ActionSelection(zeros, zeros, ones, ones, "greedy")
    assert (build_propagation_matrix(sel, bank) != bank[0, 0].matrix).nnz == 0


def test_mixed_selection_copies_rows():
    g = random_graph(12, 0.4, 1)
    bank = MotifBank(g, (MotifKind.EDGE, MotifKind.TRIANGLE), 2, PsiKind.TRANSITION)
    rng = np.random.default_rng(3)
    t, k = rng.integers(0, 2, 12), rng.integers(0, 2, 12)
    ones = np.ones((12, 1))
    a_hat = build_propagation_matrix(ActionSelection(t, k, ones, ones, "greedy"), bank).toarray()
    for i in range(12):
        np.testing.assert_array_equal(a_hat[i], bank[t[i], k[i]].matrix.toarray()[i])


def _csr_rows(m):
    m = sp.csr_matrix(m)
    return m, np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))


def test_self_loop_only_returns_own_embedding():
    a_hat, rows = _csr_rows(sp.identity(3) * 2.5)
    z = np.random.default_rng(0).normal(size=(3, 4))
    ht = self_attention_propagate(z, np.ones(8), np.zeros(4), a_hat, rows)
    np.testing.assert_allclose(ht.out, z)


def test_zero_attention_vector_gives_row_normalized_weights():
    g = random_graph(15, 0.3, 5)
    m = MotifBank(g, (MotifKind.EDGE,), 1, PsiKind.WEIGHTED)[0, 0].matrix
    a_hat, rows = _csr_rows(m)
    z = np.random.default_rng(1).normal(size=(15, 3))
    ht = self_attention_propagate(z, np.zeros(6), np.zeros(3), a_hat, rows)
    expected = a_hat.data / np.asarray(a_hat.sum(axis=1)).ravel()[rows]
    np.testing.assert_allclose(ht.w, expected, atol=1e-12)


def test_attention_weights_form_simplex():
    g = random_graph(40, 0.2, 9)
    a_hat, rows = _csr_rows(MotifBank(g, (MotifKind.TRIANGLE,), 2, PsiKind.SYMNORM)[0, 1].matrix)
    rng = np.random.default_rng(4)
    ht = self_attention_propagate(rng.normal(size=(40, 5)), rng.normal(size=10), np.zeros(5), a_hat, rows)
    np.testing.assert_allclose(np.bincount(rows, weights=ht.w), 1, atol=1e-7)
    assert np.all(ht.w >= 0)


def test_params_named_round_trip():
    spec = ModelSpec(4, 2, hidden=(3,), heads=(2, 1), count_dim=2, n_motifs=2, k_max=2)
    p = randomize(ModelParams.init(spec), np.random.default_rng(0))
    q = ModelParams.from_named(spec, {k: v.copy() for k, v in p.named().items()})
    for name, arr in p.named().items():
        np.testing.assert_array_equal(q.named()[name], arr)
    with pytest.raises(ValueError):
        ModelParams.from_named(spec, {**p.named(), "l0.h0.W": np.zeros((1, 1))})
