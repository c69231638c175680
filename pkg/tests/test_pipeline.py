import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tempotrack import BBox, Tracker, TrackerConfig, init_model
from tempotrack.backbone import ConvParams
from tempotrack.errors import InputError, StateError
from tempotrack.model import HeadParams
from tempotrack.pipeline import (
    best_cell,
    crop_patch,
    crop_side,
    decode_cell,
    foreground_prob,
    init,
    track,
)
from tempotrack.synth import generate


class TestCrop:
    def test_identity(self, rng):
        frame = rng.integers(0, 256, (40, 50, 3), dtype=np.uint8)
        patch = crop_patch(frame, BBox.from_xywh(10, 5, 16, 16), 16, context=0.0)
        assert np.array_equal(patch, frame[5:21, 10:26].transpose(2, 0, 1).astype(np.float32))

    def test_corner_fill_is_channel_mean(self, rng):
        frame = rng.integers(0, 256, (30, 30, 3), dtype=np.uint8)
        patch = crop_patch(frame, BBox.from_xywh(0, 0, 10, 10), 20, context=0.5)
        mean = frame.reshape(-1, 3).mean(axis=0).astype(np.float32)
        # the crop spans [-5, 15) on both axes; the first four rows/cols lie wholly outside
        assert np.array_equal(patch[:, :4, :], np.broadcast_to(mean[:, None, None], (3, 4, 20)))
        assert np.array_equal(patch[:, :, :4], np.broadcast_to(mean[:, None, None], (3, 20, 4)))

    def test_side_formula(self):
        assert crop_side(BBox(50, 50, 100, 100), 0.5) == 200.0
        assert crop_side(BBox(0, 0, 10, 40), 0.0) == 20.0

    def test_output_shape(self, rng):
        frame = rng.integers(0, 256, (64, 80, 3), dtype=np.uint8)
        assert crop_patch(frame, BBox(40, 30, 20, 12), 32, 0.5, scale=2.0).shape == (3, 32, 32)


class TestDecode:
    def test_hand_case(self):
        # 21x21 map on a 287 patch: cell (10, 10) sits at the patch centre
        cx, cy, w, h = decode_cell(10, 10, (2, 2, 2, 2), 8, 21, 287)
        assert (w, h) == (32.0, 32.0)
        assert (cx, cy) == (143.5, 143.5)

    def test_asymmetric_offsets(self):
        cx, cy, w, h = decode_cell(0, 2, (1, 0, 3, 2), 8, 5, 64)
        # cell centre x = 32 + (2 - 2) * 8 = 32, y = 32 - 16 = 16
        assert (cx, cy, w, h) == (32 + 8.0, 16 + 8.0, 32.0, 16.0)

    def test_tie_breaks_to_first_cell(self):
        assert best_cell(np.zeros((2, 4, 5), np.float32)) == (0, 0, 0.5)

    @given(arrays(np.float32, (2, 3, 4), elements=st.floats(-20, 20, width=32)), st.floats(0, 30, width=32))
    def test_raising_winner_keeps_it(self, cls, bump):
        i, j, score = best_cell(cls)
        assert 0.0 <= score <= 1.0
        assert score == pytest.approx(float(foreground_prob(cls).max()))
        raised = cls.copy()
        raised[1, i, j] += np.float32(bump)
        assert best_cell(raised)[:2] == (i, j)


def zero_head(params):
    z = lambda c: ConvParams(np.zeros_like(c.weight), np.zeros_like(c.bias))
    h = params.head
    return dataclasses.replace(params, head=HeadParams(z(h.cls1), z(h.cls2), z(h.reg1), z(h.reg2)))


class TestTracker:
    def test_init_shapes(self, tiny_params, short_sequence):
        state = init(short_sequence.frames[0], BBox.from_xywh(*short_sequence.groundtruth[0]), tiny_params)
        assert state.template_features.shape == (12, 10, 10)
        assert state.prior.tokens.shape == (289, 12)
        assert state.frame_index == 1

    def test_paper_template_shape(self):
        cfg = TrackerConfig.paper()
        seq = generate(3, 2, (200, 200))
        state = init(seq.frames[0], BBox.from_xywh(*seq.groundtruth[0]), init_model(cfg))
        assert state.template_features.shape == (96, 6, 6)
        assert state.prior.tokens.shape == (441, 96)

    def test_init_deterministic(self, tiny_params, short_sequence):
        box = BBox.from_xywh(*short_sequence.groundtruth[0])
        a = init(short_sequence.frames[0], box, tiny_params)
        b = init(short_sequence.frames[0], box, tiny_params)
        assert a.serialize() == b.serialize()

    def test_degenerate_box(self, tiny_params, short_sequence):
        with pytest.raises(InputError):
            init(short_sequence.frames[0], BBox(10, 10, 0.5, 8), tiny_params)

    def test_track_before_init(self, tiny_params, short_sequence):
        with pytest.raises(StateError):
            Tracker(tiny_params).track(short_sequence.frames[0])

    def test_track_outputs(self, tiny_params, short_sequence):
        tr = Tracker(tiny_params)
        tr.init(short_sequence.frames[0], BBox.from_xywh(*short_sequence.groundtruth[0]))
        template = tr.state.template_features.copy()
        h, w = short_sequence.frames[0].shape[:2]
        for t, frame in enumerate(short_sequence.frames[1:], start=2):
            box, score = tr.track(frame)
            assert 0.0 <= score <= 1.0
            assert box.w >= 1 and box.h >= 1 and 0 <= box.cx <= w and 0 <= box.cy <= h
            assert tr.state.frame_index == t
        assert np.array_equal(tr.state.template_features, template)

    def test_zero_head_decodes_first_cell(self, tiny_params, short_sequence):
        params = zero_head(tiny_params)
        cfg = params.config
        box0 = BBox.from_xywh(*short_sequence.groundtruth[0])
        state = init(short_sequence.frames[0], box0, params)
        box, score = track(state, short_sequence.frames[1], params)
        assert score == 0.5
        scale = crop_side(box0, cfg.context) * (cfg.search_size / cfg.template_size) / cfg.search_size
        cell_x = cfg.search_size / 2 + (0 - (cfg.map_size - 1) / 2) * cfg.total_stride
        assert box.cx == pytest.approx(box0.cx + (cell_x - cfg.search_size / 2) * scale)
        assert box.cy == pytest.approx(box0.cy + (cell_x - cfg.search_size / 2) * scale)
        assert (box.w, box.h) == (1.0, 1.0)

    def test_state_size_constant(self, tiny_params, short_sequence):
        tr = Tracker(tiny_params)
        tr.init(short_sequence.frames[0], BBox.from_xywh(*short_sequence.groundtruth[0]))
        sizes = {len(tr.state.serialize())}
        for frame in short_sequence.frames[1:]:
            tr.track(frame)
            sizes.add(len(tr.state.serialize()))
        assert len(sizes) == 1

    def test_reset(self, tiny_params, short_sequence):
        tr = Tracker(tiny_params)
        tr.init(short_sequence.frames[0], BBox.from_xywh(*short_sequence.groundtruth[0]))
        tr.reset()
        with pytest.raises(StateError):
            tr.track(short_sequence.frames[1])

    def test_zero_temporal_degeneration(self, tiny_config, short_sequence):
        # zero calibration + prior reset each frame: output depends only on (frame, last box)
        params = init_model(tiny_config, seed=8)
        frames = short_sequence.frames
        box0 = BBox.from_xywh(*short_sequence.groundtruth[0])

        def after(history):
            state = init(frames[0], box0, params)
            for f in history:
                track(state, f, params, reset_prior=True)
            state.last_box = box0
            return track(state, frames[5], params, reset_prior=True)

        assert after([frames[1], frames[2], frames[3]]) == after([frames[3], frames[1]]) == after([])
