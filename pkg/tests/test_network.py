"""Backbone forward pass, multi-task loss, gradient checks and SGD."""

import numpy as np
import pytest

from gridpose import autodiff as ad
from gridpose import codec
from gridpose import geometry as geo
from gridpose import network as net
from gridpose.errors import NonFiniteLoss, ShapeMismatch

from conftest import random_scene

# Micro configuration: 12x12 image over a 3x3x2 grid of 4px cells.
GRID = geo.GridSpec(h=3, w=3, d=2, cell_u_px=4.0, cell_v_px=4.0, cell_z_m=0.3,
                    z_min=0.2, cutoff_px=6.0, cutoff_m=0.15)
CAM = geo.CameraIntrinsics(fx=20.0, fy=20.0, cx=6.0, cy=6.0)
LABELS = codec.LabelSpec(n_objects=2, n_actions=3, n_interactions=6)
BB = net.BackboneConfig(channels=(6, 8), strides=(2, 2))
W = net.LossWeights()


def micro_batch(n=3, seed=0):
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n):
        scene, _, _ = random_scene(rng, grid=GRID, cam=CAM,
                                   n_actions=LABELS.n_actions, n_objects=LABELS.n_objects)
        scenes.append(scene)
    images = rng.uniform(0.0, 1.0, size=(n, 3, GRID.image_h, GRID.image_w))
    return net.BatchTargets.from_scenes(scenes, GRID, LABELS, CAM, images)


class TestForward:
    def test_zero_params_give_zero_logits_and_half_confidence(self):
        params = net.init_params(BB, GRID, LABELS, seed=0)
        for k in params.tensors:
            params.tensors[k][:] = 0.0
        img = np.zeros((1, 3, 12, 12))
        raw = net.forward(params, img, BB, GRID, LABELS)
        assert np.all(raw == 0.0)
        dec = codec.decode_grid(raw[0], GRID, LABELS)
        assert np.all(dec.hand_conf == 0.5)
        assert np.all(dec.object_conf == 0.5)

    def test_deterministic_bitwise(self):
        params = net.init_params(BB, GRID, LABELS, seed=7)
        img = np.random.default_rng(1).uniform(size=(2, 3, 12, 12))
        a = net.forward(params, img, BB, GRID, LABELS)
        b = net.forward(params, img, BB, GRID, LABELS)
        assert a.tobytes() == b.tobytes()

    def test_toy_output_channel_count(self):
        # 7x7x3 grid with 4 actions / 3 objects: 3 * ((63+4+1) + (63+3+1)) = 405
        grid = geo.GridSpec(h=7, w=7, d=3, cell_u_px=8, cell_v_px=8, cell_z_m=0.15)
        labels = codec.LabelSpec(n_objects=3, n_actions=4, n_interactions=12)
        assert net.output_channels(grid, labels) == 405
        bb = net.BackboneConfig(channels=(8, 8, 8), strides=(2, 2, 2))
        params = net.init_params(bb, grid, labels, seed=0)
        assert params.tensors["head.w"].shape == (405, 8, 1, 1)
        raw = net.forward(params, np.zeros((1, 3, 56, 56)), bb, grid, labels)
        assert raw.shape == (1, 7, 7, 3, labels.cell_channels)

    def test_shape_mismatch_rejected(self):
        params = net.init_params(BB, GRID, LABELS, seed=0)
        with pytest.raises(ShapeMismatch):
            net.forward(params, np.zeros((1, 3, 16, 16)), BB, GRID, LABELS)
        with pytest.raises(ShapeMismatch):
            net.forward(params, np.zeros((1, 1, 12, 12)), BB, GRID, LABELS)

    def test_stride_product_must_match_cell_size(self):
        bb_bad = net.BackboneConfig(channels=(6,), strides=(2,))
        params = net.init_params(bb_bad, GRID, LABELS, seed=0)
        with pytest.raises(ShapeMismatch):
            net.forward(params, np.zeros((1, 3, 12, 12)), bb_bad, GRID, LABELS)

    def test_seed_changes_params(self):
        a = net.init_params(BB, GRID, LABELS, seed=0)
        b = net.init_params(BB, GRID, LABELS, seed=1)
        assert any(not np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)


class TestLoss:
    def test_perfect_prediction_has_near_zero_loss(self):
        targets = micro_batch(n=2)
        b = len(targets)
        raw = np.zeros((b, GRID.h, GRID.w, GRID.d, LABELS.cell_channels))
        big = 50.0
        for i in range(b):
            u, v, z = targets.hand_cells[i]
            hand = np.zeros(LABELS.hand_slot)
            hand[:63] = targets.hand_offsets[i].ravel()
            hand[0:3] = codec.logit(targets.hand_offsets[i][0])
            hand[63 + targets.action_ids[i]] = big
            hand[-1] = big
            raw[i, v, u, z, :LABELS.hand_slot] = hand

            u, v, z = targets.object_cells[i]
            obj = np.zeros(LABELS.object_slot)
            obj[:63] = targets.object_offsets[i].ravel()
            obj[60:63] = codec.logit(targets.object_offsets[i][20])
            obj[63 + targets.object_ids[i]] = big
            obj[-1] = big
            raw[i, v, u, z, LABELS.hand_slot:] = obj
        # every non-responsible confidence logit to -big
        for i in range(b):
            mask = np.ones((GRID.h, GRID.w, GRID.d), dtype=bool)
            u, v, z = targets.hand_cells[i]
            mask[v, u, z] = False
            raw[i, ..., LABELS.hand_slot - 1][mask] = -big
            mask = np.ones((GRID.h, GRID.w, GRID.d), dtype=bool)
            u, v, z = targets.object_cells[i]
            mask[v, u, z] = False
            raw[i, ..., -1][mask] = -big

        loss, parts = net.loss_graph(ad.Tensor(raw), targets, W, GRID, LABELS,
                                     conf_targets="online")
        assert parts["pose"] < 1e-12
        assert parts["action"] < 1e-12
        assert parts["object"] < 1e-12
        assert parts["conf"] < 1e-12
        assert float(loss.data) < 1e-10

    def test_zero_raw_confidence_closed_form(self):
        # sigmoid(0) = 0.5 everywhere; fixed targets: 1 at the two
        # responsible slots, 0 elsewhere:
        #   conf = 2*5*(0.5-1)^2 + (2*h*w*d - 2)*0.1*(0.5-0)^2
        targets = micro_batch(n=1)
        raw = ad.Tensor(np.zeros((1, GRID.h, GRID.w, GRID.d, LABELS.cell_channels)))
        _, parts = net.loss_graph(raw, targets, W, GRID, LABELS, conf_targets="fixed")
        cells = GRID.cell_count()
        expect = 2 * 5.0 * 0.25 + (2 * cells - 2) * 0.1 * 0.25
        assert parts["conf"] == pytest.approx(expect, rel=1e-12)

    def test_uniform_logits_give_log_n_cross_entropy(self):
        targets = micro_batch(n=1)
        raw = ad.Tensor(np.zeros((1, GRID.h, GRID.w, GRID.d, LABELS.cell_channels)))
        _, parts = net.loss_graph(raw, targets, W, GRID, LABELS, conf_targets="fixed")
        assert parts["action"] == pytest.approx(np.log(LABELS.n_actions), rel=1e-12)
        assert parts["object"] == pytest.approx(np.log(LABELS.n_objects), rel=1e-12)

    def test_pose_weight_scales_gradient_linearly(self):
        targets = micro_batch(n=2)
        params = net.init_params(BB, GRID, LABELS, seed=3)
        pose_only = net.LossWeights(pose=1.0, action_class=0, object_class=0,
                                    conf_obj=0, conf_noobj=0)
        pose_k = net.LossWeights(pose=3.5, action_class=0, object_class=0,
                                 conf_obj=0, conf_noobj=0)
        _, g1, _ = net.multitask_loss(params, targets, pose_only, BB, GRID, LABELS)
        _, gk, _ = net.multitask_loss(params, targets, pose_k, BB, GRID, LABELS)
        for k in g1:
            np.testing.assert_allclose(gk[k], 3.5 * g1[k], rtol=1e-12, atol=1e-15)

    def test_nonfinite_loss_raises(self):
        targets = micro_batch(n=1)
        raw = np.zeros((1, GRID.h, GRID.w, GRID.d, LABELS.cell_channels))
        # confidence channels enter the loss at every cell
        raw[0, 0, 0, 0, LABELS.hand_slot - 1] = np.nan
        with pytest.raises(NonFiniteLoss):
            net.loss_graph(ad.Tensor(raw), targets, W, GRID, LABELS)

    def test_batch_loss_is_mean_of_per_frame_losses(self):
        targets = micro_batch(n=4, seed=5)
        params = net.init_params(BB, GRID, LABELS, seed=1)
        full, _, _ = net.multitask_loss(params, targets, W, BB, GRID, LABELS,
                                        conf_targets="fixed")
        singles = []
        for i in range(4):
            one = targets.take(np.array([i]))
            v, _, _ = net.multitask_loss(params, one, W, BB, GRID, LABELS,
                                         conf_targets="fixed")
            singles.append(v)
        assert full == pytest.approx(np.mean(singles), rel=1e-12)


class TestGradCheck:
    def test_full_loss_below_1e4(self):
        targets = micro_batch(n=2)
        params = net.init_params(BB, GRID, LABELS, seed=2)
        err = net.grad_check(params, targets, W, BB, GRID, LABELS,
                             eps=1e-4, n_samples=200, seed=0)
        assert err < 1e-4

    @pytest.mark.parametrize("name,weights", [
        ("pose", net.LossWeights(1, 0, 0, 0, 0)),
        ("action", net.LossWeights(0, 1, 0, 0, 0)),
        ("object", net.LossWeights(0, 0, 1, 0, 0)),
        ("conf", net.LossWeights(0, 0, 0, 5, 0.1)),
    ])
    def test_each_term_in_isolation(self, name, weights):
        targets = micro_batch(n=2)
        params = net.init_params(BB, GRID, LABELS, seed=2)
        err = net.grad_check(params, targets, weights, BB, GRID, LABELS,
                             eps=1e-4, n_samples=120, seed=1)
        assert err < 1e-4, name

    def test_error_grows_with_epsilon(self):
        # central differences have O(eps^2) truncation error; on a smooth
        # region a 10x bigger step should cost accuracy
        targets = micro_batch(n=1)
        params = net.init_params(BB, GRID, LABELS, seed=4)
        small = net.grad_check(params, targets, W, BB, GRID, LABELS,
                               eps=1e-4, n_samples=60, seed=3)
        large = net.grad_check(params, targets, W, BB, GRID, LABELS,
                               eps=1e-2, n_samples=60, seed=3)
        assert large > small

    def test_online_targets_match_fd_of_detached_loss(self):
        # online confidence targets are constants to the gradient; grad_check
        # evaluates the loss with the same convention, so it still agrees
        targets = micro_batch(n=1)
        params = net.init_params(BB, GRID, LABELS, seed=5)
        err = net.grad_check(params, targets, W, BB, GRID, LABELS,
                             eps=1e-4, n_samples=60, seed=2, conf_targets="fixed")
        assert err < 1e-4


class TestSgd:
    def test_zero_lr_keeps_params(self):
        targets = micro_batch(n=3)
        params = net.init_params(BB, GRID, LABELS, seed=0)
        before = {k: v.copy() for k, v in params.tensors.items()}
        net.sgd_epoch(params, targets, 0.0, W, BB, GRID, LABELS,
                      np.random.default_rng(0), batch_size=2)
        for k in before:
            np.testing.assert_array_equal(params.tensors[k], before[k])

    def test_update_rule_is_exact_gradient_step(self):
        targets = micro_batch(n=1)
        params = net.init_params(BB, GRID, LABELS, seed=1)
        _, grads, _ = net.multitask_loss(params, targets, W, BB, GRID, LABELS,
                                         conf_targets="fixed")
        expected = {k: params.tensors[k] - 0.01 * grads[k] for k in grads}
        net.sgd_epoch(params, targets, 0.01, W, BB, GRID, LABELS,
                      np.random.default_rng(0), batch_size=1, conf_targets="fixed")
        for k in expected:
            np.testing.assert_array_equal(params.tensors[k], expected[k])

    def test_loss_decreases_on_single_sample(self):
        # repeated steps on one sample: the quadratic-ish local model must
        # shrink the loss for a small enough learning rate
        targets = micro_batch(n=1)
        params = net.init_params(BB, GRID, LABELS, seed=6)
        rng = np.random.default_rng(0)
        losses = [net.sgd_epoch(params, targets, 0.01, W, BB, GRID, LABELS,
                                rng, batch_size=1, conf_targets="fixed")
                  for _ in range(8)]
        assert losses[-1] < losses[0]
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))

    def test_determinism_same_seed_same_params(self):
        targets = micro_batch(n=6)
        runs = []
        for _ in range(2):
            params = net.init_params(BB, GRID, LABELS, seed=9)
            rng = np.random.default_rng(42)
            for _ in range(3):
                net.sgd_epoch(params, targets, 0.05, W, BB, GRID, LABELS,
                              rng, batch_size=2)
            runs.append({k: v.copy() for k, v in params.tensors.items()})
        for k in runs[0]:
            assert runs[0][k].tobytes() == runs[1][k].tobytes()


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = net.init_params(BB, GRID, LABELS, seed=11)
        meta = {"kind": "backbone", "epoch": 3, "seed": 11,
                "config_hash": "abc", "signature": params.signature}
        path = tmp_path / "model.ckpt"
        net.save_checkpoint(path, params.tensors, meta)
        tensors, header = net.load_checkpoint(path)
        assert header["epoch"] == 3
        assert header["signature"] == params.signature
        assert set(tensors) == set(params.tensors)
        for k in tensors:
            np.testing.assert_array_equal(
                tensors[k], params.tensors[k].astype(np.float32).astype(np.float64))

    def test_serialization_is_deterministic(self, tmp_path):
        params = net.init_params(BB, GRID, LABELS, seed=0)
        meta = {"kind": "backbone", "epoch": 0, "seed": 0, "config_hash": "x"}
        net.save_checkpoint(tmp_path / "a.ckpt", params.tensors, meta)
        net.save_checkpoint(tmp_path / "b.ckpt", params.tensors, meta)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert net.file_hash(tmp_path / "a.ckpt") == net.file_hash(tmp_path / "b.ckpt")
