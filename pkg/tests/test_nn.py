import math

import numpy as np
import pytest

from sregnn.datasets import GenConfig, generate_rqc_dataset
from sregnn.graphs import encode_records
from sregnn.nn import (
    CLASSIFICATION,
    REGRESSION,
    AffineParams,
    ModelConfig,
    OptimizerState,
    TcLayerParams,
    adam_init,
    adam_step,
    bce_loss,
    build_graph_batch,
    forward,
    grad_check,
    huber_loss,
    init_params,
    load_checkpoint,
    loss_and_grads,
    mean_pool,
    save_checkpoint,
    set_normalization,
    sigmoid,
    tc_forward,
)

SMALL = ModelConfig(
    node_dim=9, mode=REGRESSION, global_dim=20,
    tc_widths=(8, 8, 8), heads=2, global_widths=(12,), head_widths=(10,),
)


def _scalar_layer(w_root=1.0, w_msg=1.0, w_query=1.0, w_key=1.0):
    return TcLayerParams(
        w_root=np.array([[w_root]]),
        w_msg=np.array([[w_msg]]),
        w_query=np.array([[w_query]]),
        w_key=np.array([[w_key]]),
        b_root=np.zeros(1),
        b_msg=np.zeros(1),
        heads=1,
    )


def _encoded_batch(rng, n_records=6, node_dim=9, global_dim=20):
    from sregnn.nn import _random_encoded

    return build_graph_batch(
        [_random_encoded(rng, node_dim, global_dim) for _ in range(n_records)]
    )


class TestTcForward:
    def test_isolated_node_root_only(self):
        layer = _scalar_layer(w_root=3.0)
        out = tc_forward(np.array([[2.0]]), [], layer)
        assert out[0, 0] == pytest.approx(6.0)

    def test_hand_worked_two_node_example(self):
        # u -> v with x_u=2, x_v=3, unit weights: single-neighbor softmax is
        # 1, so h_v = 3 + 2 = 5 and h_u = 2.
        layer = _scalar_layer()
        out = tc_forward(np.array([[2.0], [3.0]]), [(0, 1)], layer)
        assert out[1, 0] == pytest.approx(5.0)
        assert out[0, 0] == pytest.approx(2.0)

    def test_two_neighbors_softmax_weights(self):
        # v(id 2) receives from u0 (x=1) and u1 (x=3); q_v = 1 so scores are
        # 1 and 3, alpha = softmax([1, 3]), message = alpha . [1, 3].
        layer = _scalar_layer()
        x = np.array([[1.0], [3.0], [1.0]])
        out = tc_forward(x, [(0, 2), (1, 2)], layer)
        a = math.exp(1.0) / (math.exp(1.0) + math.exp(3.0))
        assert out[2, 0] == pytest.approx(1.0 + a * 1.0 + (1 - a) * 3.0)

    def test_permutation_equivariance(self, rng):
        layer = TcLayerParams(
            w_root=rng.normal(size=(4, 3)),
            w_msg=rng.normal(size=(4, 3)),
            w_query=rng.normal(size=(4, 3)),
            w_key=rng.normal(size=(4, 3)),
            b_root=rng.normal(size=4),
            b_msg=rng.normal(size=4),
            heads=2,
        )
        x = rng.normal(size=(5, 3))
        edges = [(0, 2), (1, 2), (2, 3), (0, 4), (3, 4)]
        out = tc_forward(x, edges, layer)
        perm = np.array([3, 0, 4, 1, 2])  # new id of each old node
        x_p = np.empty_like(x)
        x_p[perm] = x
        edges_p = [(perm[s], perm[d]) for s, d in edges]
        out_p = tc_forward(x_p, edges_p, layer)
        np.testing.assert_allclose(out_p[perm], out, atol=1e-10)


class TestMeanPool:
    def test_single_node(self):
        np.testing.assert_array_equal(mean_pool(np.array([[1.0, 2.0]])), [1.0, 2.0])

    def test_two_nodes(self):
        assert mean_pool(np.array([[1.0], [3.0]])) == pytest.approx([2.0])

    def test_permutation_invariant(self, rng):
        x = rng.normal(size=(7, 4))
        np.testing.assert_allclose(mean_pool(x), mean_pool(x[::-1]), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_pool(np.zeros((0, 3)))


class TestLosses:
    def test_bce_at_zero_logit(self):
        assert bce_loss(0.0, 1.0) == pytest.approx(math.log(2.0), abs=1e-12)
        assert bce_loss(0.0, 0.0) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_bce_extreme_logits_stable(self):
        assert bce_loss(1000.0, 1.0) == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(bce_loss(-1000.0, 1.0))

    def test_huber_piecewise(self):
        assert huber_loss(0.5, 0.0, delta=1.0) == pytest.approx(0.125)
        assert huber_loss(2.0, 0.0, delta=1.0) == pytest.approx(1.5)
        assert huber_loss(0.0, 0.0, delta=1.0) == 0.0

    def test_huber_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            huber_loss(1.0, 0.0, delta=0.0)

    def test_batch_losses_are_means(self):
        assert huber_loss([0.5, 2.0], [0.0, 0.0], delta=1.0) == pytest.approx(
            (0.125 + 1.5) / 2
        )


class TestModelForward:
    def test_all_zero_params_output_final_bias(self, rng):
        params = init_params(SMALL, seed=0)
        for _, arr in params.named():
            arr[...] = 0.0
        params.head_layers[-1].b[...] = 0.731
        batch = _encoded_batch(rng)
        out, _ = forward(params, batch)
        np.testing.assert_allclose(out, 0.731)

    def test_ablation_ignores_graph(self, rng):
        from dataclasses import replace
        from sregnn.nn import _random_encoded

        cfg = replace(SMALL, ablate_graph=True)
        params = init_params(cfg, seed=1)
        a = _random_encoded(rng, 9, 20)
        b = _random_encoded(rng, 9, 20)
        b.graph.global_features = a.graph.global_features.copy()
        out_a, _ = forward(params, build_graph_batch([a]))
        out_b, _ = forward(params, build_graph_batch([b]))
        assert out_a[0] == pytest.approx(out_b[0], abs=1e-14)

    def test_node_permutation_invariance(self, rng):
        from sregnn.nn import _random_encoded

        params = init_params(SMALL, seed=2)
        rec = _random_encoded(rng, 9, 20, n_nodes=12)
        out, _ = forward(params, build_graph_batch([rec]))
        perm = rng.permutation(12)
        rec_p = _random_encoded(rng, 9, 20, n_nodes=12)
        rec_p.graph.node_features = np.empty_like(rec.graph.node_features)
        rec_p.graph.node_features[perm] = rec.graph.node_features
        edges = rec.graph.edges.copy()
        rec_p.graph.edges = np.stack([perm[edges[:, 0]], perm[edges[:, 1]]], axis=1)
        rec_p.graph.global_features = rec.graph.global_features.copy()
        out_p, _ = forward(params, build_graph_batch([rec_p]))
        assert out_p[0] == pytest.approx(out[0], abs=1e-10)

    def test_classification_decision_rule(self, rng):
        # label 1 iff sigmoid(logit) > 0.5 iff logit > 0, scale-invariant
        logits = np.array([-3.0, -1e-9, 0.0, 1e-9, 5.0])
        decisions = sigmoid(logits) > 0.5
        np.testing.assert_array_equal(decisions, logits > 0)
        np.testing.assert_array_equal(sigmoid(7.3 * logits) > 0.5, decisions)

    def test_batching_matches_single(self, rng):
        from sregnn.nn import _random_encoded

        params = init_params(SMALL, seed=3)
        records = [_random_encoded(rng, 9, 20) for _ in range(5)]
        batched, _ = forward(params, build_graph_batch(records))
        singles = np.array(
            [forward(params, build_graph_batch([r]))[0][0] for r in records]
        )
        np.testing.assert_allclose(batched, singles, atol=1e-12)

    def test_no_relu_after_last_tc_by_default(self, rng):
        # negative components must survive into the pooled vector
        from sregnn.nn import _random_encoded

        params = init_params(SMALL, seed=4)
        records = [_random_encoded(rng, 9, 20) for _ in range(4)]
        batch = build_graph_batch(records)
        h = batch.nodes
        from sregnn.nn import _tc_layer_forward, _relu

        h1, _ = _tc_layer_forward(h, batch, params.tc_layers[0])
        h2, _ = _tc_layer_forward(_relu(h1), batch, params.tc_layers[1])
        h3, _ = _tc_layer_forward(_relu(h2), batch, params.tc_layers[2])
        assert (h3 < 0).any()
        pooled = np.add.reduceat(h3, batch.graph_starts, axis=0) / batch.graph_sizes[:, None]
        out, cache = forward(params, batch, want_cache=True)
        np.testing.assert_allclose(cache["concat"][:, :8], pooled, atol=1e-12)


class TestBackward:
    def test_zero_loss_head_gradients_vanish(self, rng):
        # a perfect regression fit pins the final layer's gradient to zero
        params = init_params(SMALL, seed=5)
        batch = _encoded_batch(rng, n_records=4)
        targets, _ = forward(params, batch)
        loss, grads, _ = loss_and_grads(params, batch, targets)
        assert loss == 0.0
        np.testing.assert_array_equal(grads["head2.w"], 0.0)
        np.testing.assert_array_equal(grads["head2.b"], 0.0)

    def test_grad_check_all_blocks(self):
        report = grad_check(seed=0)
        assert max(report.values()) < 1e-4

    def test_grad_check_five_seeds_both_modes(self):
        for seed in range(5):
            assert max(grad_check(seed=seed).values()) < 1e-4
        from dataclasses import replace

        cls_cfg = replace(SMALL, mode=CLASSIFICATION)
        for seed in range(2):
            assert max(grad_check(cls_cfg, seed=seed).values()) < 1e-4

    def test_grad_check_flags_corruption(self):
        report = grad_check(seed=0, corrupt_block="tc2.w_msg")
        assert report["tc2.w_msg"] > 1e-4
        clean = {k: v for k, v in report.items() if k != "tc2.w_msg"}
        assert max(clean.values()) < 1e-4

    def test_ablated_tc_gradients_exactly_zero(self, rng):
        from dataclasses import replace

        cfg = replace(SMALL, ablate_graph=True)
        params = init_params(cfg, seed=6)
        batch = _encoded_batch(rng)
        _, grads, _ = loss_and_grads(params, batch, np.zeros(batch.n_graphs))
        for name, g in grads.items():
            if name.startswith("tc"):
                assert not g.any()


class TestAdam:
    def test_first_step_magnitude(self):
        params = init_params(SMALL, seed=0)
        name = "head1.b"
        target = dict(params.named())[name]
        target[...] = 0.0
        state = adam_init(params, lr=0.1)
        grads = {n: np.zeros_like(a) for n, a in params.named()}
        grads[name] = np.ones_like(target)
        before = target.copy()
        adam_step(params, grads, state)
        delta = target - before
        np.testing.assert_allclose(delta, -0.1, rtol=1e-6)

    def test_zero_gradient_keeps_params(self):
        params = init_params(SMALL, seed=0)
        state = adam_init(params)
        snapshot = {n: a.copy() for n, a in params.named()}
        grads = {n: np.zeros_like(a) for n, a in params.named()}
        adam_step(params, grads, state)
        for n, a in params.named():
            np.testing.assert_array_equal(a, snapshot[n])

    def test_trajectories_bit_identical(self, rng):
        def run_steps():
            params = init_params(SMALL, seed=7)
            state = adam_init(params, lr=1e-3)
            g_rng = np.random.Generator(np.random.PCG64(3))
            for _ in range(5):
                grads = {n: g_rng.normal(size=a.shape) for n, a in params.named()}
                adam_step(params, grads, state)
            return {n: a.copy() for n, a in params.named()}

        a, b = run_steps(), run_steps()
        for n in a:
            np.testing.assert_array_equal(a[n], b[n])


class TestOverfitSmoke:
    def test_loss_drops_90_percent(self):
        # 200 Adam steps on a fixed 50-sample batch (overfit capability)
        cfg = GenConfig(master_seed=21, qubits=(2, 3), per_cell=13, rqc_gate_range=(0, 30))
        records = generate_rqc_dataset(cfg)[:50]
        encoded = encode_records(records, d_q=3)
        model_cfg = ModelConfig(
            node_dim=encoded[0].graph.layout.d, mode=REGRESSION,
            tc_widths=(16, 16, 16), heads=1, global_widths=(32,), head_widths=(32,),
        )
        params = init_params(model_cfg, seed=0)
        batch = build_graph_batch(encoded)
        set_normalization(params, batch.globals_raw)
        targets = np.array([r.m2 for r in encoded])
        state = adam_init(params, lr=3e-3)
        first = None
        for _ in range(200):
            loss, grads, _ = loss_and_grads(params, batch, targets)
            if first is None:
                first = loss
            adam_step(params, grads, state)
        final, _, _ = loss_and_grads(params, batch, targets)
        assert final <= 0.1 * first


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        params = init_params(SMALL, seed=9)
        set_normalization(params, rng.uniform(0, 5, size=(40, SMALL.global_dim)))
        state = adam_init(params, lr=2e-3)
        grads = {n: rng.normal(size=a.shape) for n, a in params.named()}
        adam_step(params, grads, state)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, params, optimizer=state, extra={"task": "sre-reg"})
        loaded, opt, extra = load_checkpoint(path)
        assert extra == {"task": "sre-reg"}
        assert loaded.config == SMALL
        for (n1, a1), (n2, a2) in zip(params.named(), loaded.named()):
            assert n1 == n2
            np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(loaded.norm_mean, params.norm_mean)
        np.testing.assert_array_equal(loaded.norm_std, params.norm_std)
        assert opt.t == state.t and opt.lr == state.lr
        np.testing.assert_array_equal(opt.m["tc1.w_root"], state.m["tc1.w_root"])

    def test_outputs_identical_after_reload(self, tmp_path, rng):
        params = init_params(SMALL, seed=10)
        batch = _encoded_batch(rng)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, params)
        loaded, _, _ = load_checkpoint(path)
        np.testing.assert_array_equal(forward(params, batch)[0], forward(loaded, batch)[0])

    def test_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXXXXXX")
        with pytest.raises(ValueError, match="checkpoint"):
            load_checkpoint(path)


class TestInit:
    def test_seeded_and_bounded(self):
        a = init_params(SMALL, seed=3)
        b = init_params(SMALL, seed=3)
        c = init_params(SMALL, seed=4)
        for (n1, a1), (_, b1), (_, c1) in zip(a.named(), b.named(), c.named()):
            np.testing.assert_array_equal(a1, b1)
            if a1.size > 4:
                assert not np.array_equal(a1, c1)
        bound = 1.0 / math.sqrt(SMALL.node_dim)
        assert np.abs(a.tc_layers[0].w_root).max() <= bound

    def test_head_count_must_divide(self):
        with pytest.raises(ValueError, match="divide"):
            ModelConfig(node_dim=5, mode=REGRESSION, tc_widths=(10, 10, 9), heads=2)
