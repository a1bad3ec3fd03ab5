import numpy as np
import pytest

from poe.nets import (
    ArchConfig,
    ArchError,
    BranchedModel,
    build_blocknet,
    build_head,
    count_flops,
    count_params,
    extract_head,
    head_internal_conv_params,
    load_named_tensors,
    predict_logits,
    split_library,
    state_digest,
)

DESK = ArchConfig(depth=10, widen_common=1, widen_special=1, num_classes=10, input_shape=(3, 32, 32))


def small_batch(n=4, shape=(3, 32, 32), seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 1, size=(n, *shape)).astype(np.float32)


class TestArchConfig:
    def test_invalid_depth_rejected(self):
        with pytest.raises(ArchError):
            ArchConfig(11, 1, 1, 10)
        with pytest.raises(ArchError):
            ArchConfig(4, 1, 1, 10)

    def test_blocks_per_group(self):
        assert ArchConfig(10, 1, 1, 10).blocks_per_group == 1
        assert ArchConfig(16, 1, 1, 10).blocks_per_group == 2
        assert ArchConfig(40, 1, 1, 10).blocks_per_group == 6

    def test_channel_plan(self):
        assert ArchConfig(10, 2, 2, 10).channels == (16, 32, 64, 128)
        assert ArchConfig(10, 1, 0.25, 10).channels == (16, 16, 32, 16)

    def test_fractional_widths_round_half_up_floor_one(self):
        cfg = ArchConfig(10, 0.01, 0.01, 2)
        assert cfg.channels == (16, 1, 1, 1)
        assert ArchConfig(10, 1, 0.336, 2).channels[3] == 22  # 21.5 rounds up


class TestBlockNet:
    def test_forward_shape_contract(self):
        model = build_blocknet(DESK, seed=0)
        out = model.forward(small_batch(4))
        assert out.shape == (4, 10)

    def test_same_seed_bit_identical(self):
        a = build_blocknet(DESK, seed=7)
        b = build_blocknet(DESK, seed=7)
        for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
            assert na == nb
            assert ta.tobytes() == tb.tobytes()
        assert state_digest(a.named_tensors()) == state_digest(b.named_tensors())

    def test_different_seed_differs(self):
        a = build_blocknet(DESK, seed=7)
        b = build_blocknet(DESK, seed=8)
        assert state_digest(a.named_tensors()) != state_digest(b.named_tensors())

    def test_batchnorm_running_stats_update_only_in_training(self):
        model = build_blocknet(DESK, seed=0)
        before = model.conv2.blocks[0].bn1.running_mean.copy()
        model.forward(small_batch(4), training=False)
        np.testing.assert_array_equal(model.conv2.blocks[0].bn1.running_mean, before)
        model.forward(small_batch(4), training=True)
        assert not np.array_equal(model.conv2.blocks[0].bn1.running_mean, before)


class TestLibrarySplit:
    def test_composition_is_bit_exact(self):
        model = build_blocknet(DESK, seed=3)
        split = split_library(model)
        head = extract_head(model)
        x = small_batch(5)
        direct = model.forward(x).data
        composed = head.forward(split.library.forward(x)).data
        assert direct.tobytes() == composed.tobytes()

    def test_library_has_no_classifier_parameters(self):
        split = split_library(build_blocknet(DESK, seed=3))
        names = [n for n, _ in split.library.named_tensors()]
        assert not any("fc" in n or "conv4" in n or "head_bn" in n for n in names)

    def test_library_output_spatial_size(self):
        # conv3 is the only stride-2 group inside the library: 32 -> 16
        split = split_library(build_blocknet(DESK, seed=3))
        f = split.library.forward(small_batch(2))
        assert f.shape == (2, 16, 16, 32)  # NHWC, channels = 32*k_c

    def test_head_template_records_remainder(self):
        split = split_library(build_blocknet(DESK, seed=3))
        t = split.head_template
        assert t.in_channels == 32
        assert t.blocks == 1
        assert t.num_classes == 10

    def test_split_does_not_alias_model_weights(self):
        model = build_blocknet(DESK, seed=3)
        split = split_library(model)
        before = split.library.digest()
        model.stem.w.data += 1.0
        assert split.library.digest() == before


class TestCounting:
    def test_linear_param_count(self):
        model = build_blocknet(ArchConfig(10, 1, 1, 10, (3, 32, 32)), seed=0)
        # 64 -> 10 with bias
        assert model.fc.w.size + model.fc.b.size == 650

    def test_conv_param_count_is_9_cin_cout(self):
        model = build_blocknet(DESK, seed=0)
        assert model.stem.w.size == 9 * 3 * 16

    def test_running_stats_excluded(self):
        model = build_blocknet(DESK, seed=0)
        named_total = sum(a.size for _, a in model.named_tensors())
        assert named_total > count_params(model)

    def test_flops_conventions(self):
        model = build_blocknet(DESK, seed=0)
        assert model.fc.flops() == 2 * 64 * 10  # bias excluded
        f, hw = model.conv2.blocks[0].conv1.flops(8, 8)
        assert f == 2 * 9 * 16 * 16 * 64 and hw == (8, 8)

    def test_branched_flops_and_params_are_additive(self):
        model = build_blocknet(DESK, seed=1)
        split = split_library(model)
        heads = [(f"t{i}", build_head(split.head_template, seed=i, num_classes=3, widen_special=0.25))
                 for i in range(3)]
        branched = BranchedModel(split.library, heads, class_map=list(range(9)))
        shape = (3, 32, 32)
        assert count_params(branched) == count_params(split) + sum(count_params(h) for _, h in heads)
        lib_flops = count_flops(split.library, shape)
        total = count_flops(branched, shape)
        feature_shape = (32, 16, 16)  # library output for 32x32 inputs
        assert total == lib_flops + sum(count_flops(h, feature_shape) for _, h in heads)

    def test_widening_one_head_scales_internal_convs_quadratically(self):
        model = build_blocknet(DESK, seed=1)
        template = split_library(model).head_template
        base = build_head(template, seed=0, num_classes=4, widen_special=1.0)
        for n in (2, 4):
            wide = build_head(template, seed=0, num_classes=4, widen_special=float(n))
            ratio = head_internal_conv_params(wide) / head_internal_conv_params(base)
            assert ratio > n ** 1.8
            # n separate branches only multiply total head params by n
            assert count_params(wide) > n * count_params(base) * 0.9

    def test_whole_head_ratio_approaches_quadratic_with_depth(self):
        # two-block head: k_s-dependent inner convs dominate already at x=1
        template = split_library(build_blocknet(
            ArchConfig(16, 1, 1, 10, (3, 32, 32)), seed=0)).head_template
        base = build_head(template, seed=0, num_classes=4, widen_special=1.0)
        for n in (2, 4):
            wide = build_head(template, seed=0, num_classes=4, widen_special=float(n))
            assert count_params(wide) / count_params(base) > n ** 1.8


class TestBranchedModel:
    def make(self, seed=2, n_heads=3, per=4):
        model = build_blocknet(ArchConfig(10, 1, 1, n_heads * per, (3, 16, 16)), seed=seed)
        split = split_library(model)
        heads = [(f"t{i}", build_head(split.head_template, seed=10 + i, num_classes=per, widen_special=0.25))
                 for i in range(n_heads)]
        class_map = list(range(n_heads * per))
        return split, BranchedModel(split.library, heads, class_map)

    def test_logit_width_is_sum_of_branches(self):
        _, branched = self.make()
        x = small_batch(3, (3, 16, 16))
        assert branched.forward(x).shape == (3, 12)

    def test_each_slice_matches_standalone_branch_bit_exactly(self):
        split, branched = self.make()
        x = small_batch(6, (3, 16, 16))
        out = branched.forward(x).data
        f = split.library.forward(x)
        off = 0
        for tid, head in branched.branches:
            alone = head.forward(f).data
            assert out[:, off : off + head.num_classes].tobytes() == alone.tobytes()
            off += head.num_classes

    def test_duplicate_class_map_rejected(self):
        split, _ = self.make()
        heads = [("a", build_head(split.head_template, seed=1, num_classes=2, widen_special=0.25)),
                 ("b", build_head(split.head_template, seed=2, num_classes=2, widen_special=0.25))]
        with pytest.raises(ArchError):
            BranchedModel(split.library, heads, class_map=[0, 1, 1, 2])

    def test_rebuild_from_state_reproduces_forward(self):
        _, branched = self.make()
        desc = branched.describe()
        entries = {n: a.copy() for n, a in branched.named_tensors()}
        rebuilt = BranchedModel.from_description(desc)
        load_named_tensors(rebuilt, entries)
        x = small_batch(4, (3, 16, 16))
        assert branched.forward(x).data.tobytes() == rebuilt.forward(x).data.tobytes()


class TestParallelForward:
    def test_results_independent_of_worker_count(self):
        model = build_blocknet(ArchConfig(10, 1, 1, 6, (3, 16, 16)), seed=5)
        x = small_batch(37, (3, 16, 16))
        seq = predict_logits(model, x, batch_size=8, workers=1)
        par = predict_logits(model, x, batch_size=8, workers=4)
        assert seq.tobytes() == par.tobytes()
