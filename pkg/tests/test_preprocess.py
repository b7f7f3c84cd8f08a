"""Preprocessing tests: channel split, dedup, range selection, IO."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gastro3d.errors import InvalidInputError
from gastro3d.formats import read_image, write_image
from gastro3d.preprocess import (
    FrameRecord,
    dedup_frames,
    load_frame_dir,
    merge_channels,
    run_preprocess,
    select_range,
    split_channels,
)


def rgb_frame(index=0, value=(10, 20, 30), shape=(16, 16)):
    img = np.zeros((*shape, 3), dtype=np.uint8)
    img[:, :] = value
    return FrameRecord(index=index, image=img)


def test_split_channels_values():
    r, g, b = split_channels(rgb_frame())
    assert r.image[0, 0] == 10 and g.image[0, 0] == 20 and b.image[0, 0] == 30
    assert r.channel_tag == "red" and g.channel_tag == "green" and b.channel_tag == "blue"
    assert r.index == 0


def test_split_channels_grayscale_content():
    img = np.random.default_rng(0).integers(0, 255, (8, 8), np.uint8)
    frame = FrameRecord(index=1, image=np.repeat(img[:, :, None], 3, axis=2))
    r, g, b = split_channels(frame)
    assert np.array_equal(r.image, g.image) and np.array_equal(g.image, b.image)


def test_split_channels_rejects_single_channel():
    with pytest.raises(InvalidInputError):
        split_channels(FrameRecord(index=0, image=np.zeros((8, 8), np.uint8)))


def test_split_merge_round_trip():
    rng = np.random.default_rng(1)
    frame = FrameRecord(index=2, image=rng.integers(0, 255, (12, 9, 3), np.uint8))
    assert np.array_equal(merge_channels(*split_channels(frame)).image, frame.image)


def test_channel_contrast_ranking():
    # inject band-limited texture into red only; Laplacian std must rank red
    # highest
    rng = np.random.default_rng(2)
    h = w = 64
    base = np.full((h, w), 120.0)
    yy, xx = np.mgrid[0:h, 0:w]
    texture = 40 * np.sin(xx * 0.7) * np.cos(yy * 0.9)
    img = np.stack([base + texture, base + 0.3 * texture, base], axis=2)
    img = np.clip(img, 0, 255).astype(np.uint8)
    r, g, b = split_channels(FrameRecord(index=0, image=img))

    def lap_std(plane):
        p = plane.astype(np.float64)
        lap = -4 * p[1:-1, 1:-1] + p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
        return lap.std()

    assert lap_std(r.image) > lap_std(g.image) > lap_std(b.image)


def frame_of_constant(index, value, shape=(16, 16)):
    return FrameRecord(index=index, image=np.full(shape, value, np.uint8), channel_tag="red")


class TestDedup:
    def test_identical_dropped(self):
        frames = [frame_of_constant(0, 100), frame_of_constant(1, 100)]
        assert [f.index for f in dedup_frames(frames, tau=1.0)] == [0]

    def test_distinct_kept(self):
        frames = [frame_of_constant(i, v) for i, v in enumerate((0, 50, 100))]
        assert [f.index for f in dedup_frames(frames, tau=1.0)] == [0, 1, 2]

    def test_boundary_exactly_tau_is_kept(self):
        frames = [frame_of_constant(0, 100), frame_of_constant(1, 101)]
        assert len(dedup_frames(frames, tau=1.0)) == 2
        assert len(dedup_frames(frames, tau=1.0 + 1e-9)) == 1

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        frames = [
            FrameRecord(index=i, image=rng.integers(0, 255, (32, 32), np.uint8), channel_tag="red")
            for i in range(10)
        ]
        once = dedup_frames(frames, tau=30.0)
        twice = dedup_frames(once, tau=30.0)
        assert [f.index for f in once] == [f.index for f in twice]

    def test_output_is_subsequence(self):
        rng = np.random.default_rng(4)
        frames = [
            FrameRecord(index=i, image=rng.integers(0, 255, (16, 16), np.uint8), channel_tag="red")
            for i in range(20)
        ]
        kept = dedup_frames(frames, tau=20.0)
        indices = [f.index for f in kept]
        assert indices == sorted(indices)
        assert set(indices) <= set(range(20))
        for f in kept:
            assert f is frames[f.index]

    def test_mismatched_dims_rejected(self):
        frames = [frame_of_constant(0, 1, (8, 8)), frame_of_constant(1, 1, (9, 9))]
        with pytest.raises(InvalidInputError):
            dedup_frames(frames, tau=1.0)

    @given(st.lists(st.integers(0, 255), min_size=1, max_size=12), st.floats(0.0, 60.0))
    @settings(max_examples=40, deadline=None)
    def test_idempotence_property(self, values, tau):
        frames = [frame_of_constant(i, v) for i, v in enumerate(values)]
        once = dedup_frames(frames, tau=tau)
        assert [f.index for f in dedup_frames(once, tau=tau)] == [f.index for f in once]


class TestSelectRange:
    def setup_method(self):
        self.frames = [frame_of_constant(i, i) for i in range(10)]

    def test_full(self):
        assert len(select_range(self.frames, 0, 10)) == 10

    def test_empty(self):
        assert select_range(self.frames, 3, 3) == []

    def test_slice(self):
        assert [f.index for f in select_range(self.frames, 2, 5)] == [2, 3, 4]

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            select_range(self.frames, 5, 11)
        with pytest.raises(InvalidInputError):
            select_range(self.frames, -1, 5)
        with pytest.raises(InvalidInputError):
            select_range(self.frames, 6, 5)


def test_run_preprocess_end_to_end(tmp_path):
    rng = np.random.default_rng(5)
    src = tmp_path / "frames"
    src.mkdir()
    base = rng.integers(0, 255, (32, 32, 3), np.uint8)
    for i in range(6):
        img = base if i % 2 else rng.integers(0, 255, (32, 32, 3), np.uint8)
        write_image(src / f"frame_{i:06d}.png", img)
    out = tmp_path / "out"
    manifest = run_preprocess(src, out, channel="red", tau=2.0)
    assert manifest["channel"] == "red"
    assert manifest["kept_indices"][0] == 0
    saved = json.loads((out / "manifest.json").read_text())
    assert saved == manifest
    for idx in manifest["kept_indices"]:
        img = read_image(out / f"frame_{idx:06d}.png")
        assert img.ndim == 2


def test_load_frame_dir_sorted(tmp_path):
    for i in (3, 1, 2):
        write_image(tmp_path / f"frame_{i:06d}.png", np.full((8, 8), i, np.uint8))
    frames = load_frame_dir(tmp_path)
    assert [f.index for f in frames] == [1, 2, 3]
    with pytest.raises(InvalidInputError):
        load_frame_dir(tmp_path / "missing")
