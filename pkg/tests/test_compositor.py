import json

import numpy as np
import pytest

from segstyle.compositor import (
    NetworkStylizer,
    PipelineRun,
    apply_paste_order,
    compare_grid,
    identity_stylizer,
    paste,
    run_pipeline,
    save_run,
)
from segstyle.errors import ContractError, PipelineError
from segstyle.imaging import BinaryMask, Image, ResizePolicy, load_image
from segstyle.segmentation import InstanceMask, SegmentationResult

from conftest import box_mask, make_rng, random_image, smooth_image, three_piece_segmentation


class TestPaste:
    def test_all_zeros_mask_keeps_base(self):
        base, piece = random_image(8, 8, seed=1), random_image(8, 8, seed=2)
        out = paste(base, piece, BinaryMask(np.zeros((8, 8), dtype=bool)))
        assert np.array_equal(out.pixels, base.pixels)

    def test_all_ones_mask_takes_piece(self):
        base, piece = random_image(8, 8, seed=1), random_image(8, 8, seed=2)
        out = paste(base, piece, BinaryMask(np.ones((8, 8), dtype=bool)))
        assert np.array_equal(out.pixels, piece.pixels)

    def test_random_mask_per_pixel_select(self):
        rng = make_rng(3)
        base, piece = random_image(10, 6, seed=4), random_image(10, 6, seed=5)
        bits = rng.random((6, 10)) > 0.5
        out = paste(base, piece, BinaryMask(bits))
        for y in range(6):  # elementwise oracle
            for x in range(10):
                src = piece if bits[y, x] else base
                assert np.array_equal(out.pixels[y, x], src.pixels[y, x])

    def test_dims_mismatch(self):
        with pytest.raises(ContractError):
            paste(random_image(8, 8), random_image(9, 8), BinaryMask(np.ones((8, 8), dtype=bool)))

    def test_later_paste_wins_on_overlap(self):
        # overlapping masks are resolved upstream; at the paste level the
        # later write simply owns the contested pixels
        base = Image(np.zeros((8, 8, 3), dtype=np.float32))
        red = Image(np.tile(np.array([1, 0, 0], dtype=np.float32), (8, 8, 1)))
        blue = Image(np.tile(np.array([0, 0, 1], dtype=np.float32), (8, 8, 1)))
        m1 = box_mask(8, 8, 0, 0, 6, 6)
        m2 = box_mask(8, 8, 3, 3, 8, 8)
        out = paste(paste(base, red, m1), blue, m2)
        assert np.array_equal(out.pixels[4, 4], [0, 0, 1])
        assert np.array_equal(out.pixels[1, 1], [1, 0, 0])


class TestPasteOrder:
    def test_area_desc(self):
        seg = three_piece_segmentation()
        shuffled = SegmentationResult.from_instances(
            [seg.instances[1], seg.instances[0], seg.instances[2]], seg.source_dims
        )
        ordered = apply_paste_order(shuffled, "area-desc")
        areas = [i.area for i in ordered.instances]
        assert areas == sorted(areas, reverse=True)

    def test_manifest_keeps_order(self):
        seg = three_piece_segmentation()
        assert apply_paste_order(seg, "manifest") is seg

    def test_explicit_permutation(self):
        seg = three_piece_segmentation()
        out = apply_paste_order(seg, [2, 0, 1])
        assert [i.label for i in out.instances] == [
            seg.instances[2].label,
            seg.instances[0].label,
            seg.instances[1].label,
        ]

    def test_bad_permutation_rejected(self):
        seg = three_piece_segmentation()
        with pytest.raises(ContractError):
            apply_paste_order(seg, [0, 0, 1])
        with pytest.raises(ContractError):
            apply_paste_order(seg, [0, 1])


class TestRunPipeline:
    def test_identity_stylizer_reassembles_content(self):
        content = random_image(48, 40, seed=6)
        seg = three_piece_segmentation()
        run = run_pipeline(content, random_image(32, 32, seed=7), seg, identity_stylizer)
        assert np.array_equal(run.final.pixels, content.pixels)

    def test_identity_closure_on_random_partitions(self):
        rng = make_rng(8)
        for trial in range(3):
            w, h = int(rng.integers(16, 40)), int(rng.integers(16, 40))
            content = Image(rng.random((h, w, 3)).astype(np.float32))
            labels = rng.integers(0, 3, size=(h, w))
            instances = []
            for k in range(3):
                bits = labels == k
                if bits.any():
                    instances.append(InstanceMask(BinaryMask(bits), f"r{k}", 0.9))
            seg = SegmentationResult.from_instances(instances, (w, h))
            run = run_pipeline(content, content, seg, identity_stylizer)
            assert np.array_equal(run.final.pixels, content.pixels)

    def test_zero_instances_final_is_stylized_background(self):
        content = random_image(20, 20, seed=9)
        seg = SegmentationResult.from_instances([], (20, 20))
        marker = random_image(20, 20, seed=10)
        run = run_pipeline(content, content, seg, lambda c, s: marker)
        assert np.array_equal(run.final.pixels, marker.pixels)
        assert run.pieces_stylized == []

    def test_region_exactness_with_real_net(self, tiny_net):
        content = smooth_image(48, 40, seed=11)
        style = smooth_image(64, 64, seed=12)
        seg = three_piece_segmentation()
        stylizer = NetworkStylizer(tiny_net, ResizePolicy(max_side=64))
        run = run_pipeline(content, style, seg, stylizer)
        bg = run.seg.background.bits
        assert np.array_equal(run.final.pixels[bg], run.background_stylized.pixels[bg])
        for inst, piece in zip(run.seg.instances, run.pieces_stylized):
            m = inst.mask.bits
            assert np.array_equal(run.final.pixels[m], piece.pixels[m])

    def test_timing_and_counts(self):
        content = random_image(48, 40, seed=13)
        seg = three_piece_segmentation()
        run = run_pipeline(content, content, seg, identity_stylizer)
        assert len(run.pieces_stylized) == 3
        for key in ("order", "extract", "stylize-background", "stylize-pieces", "paste", "total"):
            assert key in run.timing

    def test_stage_errors_are_tagged(self):
        content = random_image(48, 40, seed=14)
        seg = three_piece_segmentation()

        def broken(c, s):
            raise RuntimeError("boom")

        with pytest.raises(PipelineError) as err:
            run_pipeline(content, content, seg, broken)
        assert err.value.stage == "stylize-background"

    def test_dims_mismatch_rejected(self):
        with pytest.raises(ContractError):
            run_pipeline(
                random_image(8, 8), random_image(8, 8), three_piece_segmentation(), identity_stylizer
            )

    def test_deterministic(self, tiny_net):
        content = smooth_image(32, 32, seed=15)
        style = smooth_image(32, 32, seed=16)
        seg = SegmentationResult.from_instances(
            [InstanceMask(box_mask(32, 32, 4, 4, 20, 20), "a", 0.9)], (32, 32)
        )
        stylizer = NetworkStylizer(tiny_net, ResizePolicy(max_side=64))
        a = run_pipeline(content, style, seg, stylizer)
        b = run_pipeline(content, style, seg, stylizer)
        assert np.array_equal(a.final.pixels, b.final.pixels)


class TestNetworkStylizer:
    def test_output_has_content_dims(self, tiny_net):
        stylizer = NetworkStylizer(tiny_net, ResizePolicy(max_side=64))
        out = stylizer(smooth_image(50, 30, seed=17), smooth_image(40, 40, seed=18))
        assert out.dims == (50, 30)

    def test_pad_mode(self, tiny_net):
        stylizer = NetworkStylizer(tiny_net, ResizePolicy("pad-to-pow2", 64))
        out = stylizer(smooth_image(50, 30, seed=19), smooth_image(40, 40, seed=20))
        assert out.dims == (50, 30)


class TestCompareGrid:
    def test_equal_sizes_layout(self):
        panels = [random_image(256, 256, seed=k) for k in range(4)]
        grid = compare_grid(*panels)
        assert grid.dims == (4 * 256 + 3 * 4, 256)

    def test_mixed_sizes_scale_to_min_height(self):
        a = random_image(100, 50, seed=1)
        b = random_image(60, 30, seed=2)  # min height 30
        c = random_image(90, 60, seed=3)
        d = random_image(40, 40, seed=4)
        grid = compare_grid(a, b, c, d)
        widths = [round(100 * 30 / 50), 60, round(90 * 30 / 60), round(40 * 30 / 40)]
        assert grid.dims == (sum(widths) + 3 * 4, 30)

    def test_identical_inputs_identical_panels(self):
        img = random_image(32, 32, seed=5)
        grid = compare_grid(img, img, img, img)
        for k in range(4):
            x0 = k * (32 + 4)
            panel = grid.pixels[:, x0 : x0 + 32]
            assert np.array_equal(panel, img.pixels)


class TestSaveRun:
    def test_run_directory_contents(self, tmp_path):
        content = random_image(48, 40, seed=21)
        seg = three_piece_segmentation()
        run = run_pipeline(content, content, seg, identity_stylizer)
        save_run(run, tmp_path / "run", {"seed": 0}, compare=random_image(64, 16, seed=22))
        d = tmp_path / "run"
        for name in ("final.png", "background.png", "piece_0.png", "piece_1.png",
                     "piece_2.png", "manifest.json", "compare.png"):
            assert (d / name).exists(), name
        doc = json.loads((d / "manifest.json").read_text())
        assert doc["config"] == {"seed": 0}
        assert "total" in doc["timing"]
        assert len(doc["instances"]) == 3
        final = load_image(d / "final.png")
        assert final.dims == content.dims


class TestPipelineRunInvariants:
    def test_counts_enforced(self):
        content = random_image(8, 8, seed=23)
        seg = SegmentationResult.from_instances(
            [InstanceMask(box_mask(8, 8, 0, 0, 4, 4), "a", 0.5)], (8, 8)
        )
        with pytest.raises(ContractError):
            PipelineRun(content, content, seg, [], content, content)

    def test_final_dims_enforced(self):
        content = random_image(8, 8, seed=24)
        seg = SegmentationResult.from_instances([], (8, 8))
        with pytest.raises(ContractError):
            PipelineRun(content, content, seg, [], content, random_image(9, 9))
