import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from viewembed.backbones import Backbone, TAP_LAST, TAP_THIRD, UnsupportedTap, preprocess
from viewembed.cli import main
from viewembed.extract import (
    Box,
    FrameSpec,
    LayoutOutOfBounds,
    ViewLayout,
    extract,
    load_frame_specs,
    load_layouts,
)
from viewembed.video import UndecodableFrame, VideoSource

# round-trip reads go through the training side of the shared file contract
from lectkit.mtlvision import read_embeddings

FPS = 2.0
WIDTH, HEIGHT = 96, 64
LAYOUT = ViewLayout(camera=Box(0, 0, 40, 64), screen=Box(40, 0, 56, 64))


def make_video(path: Path, n_frames: int = 10, gray: bool = False) -> Path:
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), FPS,
                             (WIDTH, HEIGHT))
    assert writer.isOpened()
    for i in range(n_frames):
        if gray:
            frame = np.full((HEIGHT, WIDTH, 3), 128, np.uint8)
        else:
            frame = np.zeros((HEIGHT, WIDTH, 3), np.uint8)
            frame[:, :40] = (i * 20 % 255, 40, 200)  # camera region varies
            frame[:, 40:] = (10, i * 13 % 255, 60)  # screen region varies
        writer.write(frame)
    writer.release()
    return path


@pytest.fixture(scope="module")
def backbone():
    return Backbone.create("alexnet", TAP_THIRD, seed=1)


@pytest.fixture(scope="module")
def video_path(tmp_path_factory):
    return make_video(tmp_path_factory.mktemp("video") / "lecture.avi")


def specs_for(n, lecture="lec1"):
    return [FrameSpec(lecture, i / FPS) for i in range(n)]


class TestRoundTrip:
    def test_ten_frame_round_trip_bit_exact(self, tmp_path, video_path, backbone):
        out = tmp_path / "emb.lemb"
        with VideoSource(video_path) as video:
            result = extract(video, LAYOUT, backbone, specs_for(10), out)
        assert result.accepted == 10
        assert result.skipped == []

        header, records = read_embeddings(out)
        assert len(records) == 2 * 10
        assert header["dim"] == backbone.dim == 4096
        assert all(r.vector.shape == (header["dim"],) for r in records)
        assert header["backbone"] == "alexnet"
        assert header["tap"] == TAP_THIRD
        assert header["meta"]["tap_module"] == "classifier.1"

        # re-embed one frame directly: stored bytes match the fresh computation
        with VideoSource(video_path) as video:
            frame = video.frame_at(0.0)
        fresh = backbone.embed(LAYOUT.camera.crop(frame))
        assert records[0].view_id == 0
        assert records[0].vector.tobytes() == fresh.tobytes()

    def test_determinism_byte_identical(self, tmp_path, video_path):
        outs = []
        for name in ("a.lemb", "b.lemb"):
            backbone = Backbone.create("alexnet", TAP_THIRD, seed=1)
            out = tmp_path / name
            with VideoSource(video_path) as video:
                extract(video, LAYOUT, backbone, specs_for(10), out)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_spec_beyond_duration_skipped_file_valid(self, tmp_path, video_path,
                                                     backbone):
        out = tmp_path / "partial.lemb"
        specs = specs_for(3) + [FrameSpec("lec1", 99.0)]
        with VideoSource(video_path) as video:
            result = extract(video, LAYOUT, backbone, specs, out)
        assert result.accepted == 3
        assert len(result.skipped) == 1
        assert "99.0" in result.skipped[0]["frame_id"] or \
            result.skipped[0]["time_s"] == 99.0
        header, records = read_embeddings(out)
        assert len(records) == 2 * 3
        assert header["meta"]["skipped_frames"] == 1

    def test_gray_frame_gives_identical_views(self, tmp_path, backbone):
        video_file = make_video(tmp_path / "gray.avi", n_frames=4, gray=True)
        out = tmp_path / "gray.lemb"
        # equal-size boxes so the letterboxed inputs coincide exactly
        layout = ViewLayout(camera=Box(0, 0, 48, 64), screen=Box(48, 0, 48, 64))
        with VideoSource(video_file) as video:
            extract(video, layout, backbone, specs_for(1), out)
        _, records = read_embeddings(out)
        camera = next(r for r in records if r.view_id == 0)
        screen = next(r for r in records if r.view_id == 1)
        assert camera.vector.tobytes() == screen.vector.tobytes()

    def test_layout_out_of_bounds(self, tmp_path, video_path, backbone):
        bad = ViewLayout(camera=Box(0, 0, WIDTH + 10, HEIGHT), screen=Box(0, 0, 8, 8))
        with VideoSource(video_path) as video:
            with pytest.raises(LayoutOutOfBounds):
                extract(video, bad, backbone, specs_for(2), tmp_path / "x.lemb")


class TestBackbones:
    def test_five_supported_pairs(self):
        for name, tap in (("alexnet", TAP_LAST), ("alexnet", TAP_THIRD),
                          ("vgg19", TAP_LAST), ("vgg19", TAP_THIRD),
                          ("resnet50", TAP_LAST)):
            Backbone.create(name, tap, seed=0)  # constructs without error

    def test_resnet_third_rejected(self):
        with pytest.raises(UnsupportedTap):
            Backbone.create("resnet50", TAP_THIRD)

    def test_tap_dimensions(self):
        assert Backbone.create("alexnet", TAP_LAST, seed=0).dim == 1000
        assert Backbone.create("alexnet", TAP_THIRD, seed=0).dim == 4096

    def test_seeded_weights_are_reproducible(self):
        a = Backbone.create("alexnet", TAP_LAST, seed=3)
        b = Backbone.create("alexnet", TAP_LAST, seed=3)
        image = np.random.default_rng(0).integers(0, 255, (50, 70, 3)).astype(np.uint8)
        assert a.embed(image).tobytes() == b.embed(image).tobytes()

    def test_preprocess_letterboxes(self):
        image = np.full((10, 224, 3), 255, np.uint8)  # very wide
        chw = preprocess(image)
        assert chw.shape == (3, 224, 224)
        # top rows are padding (normalized black)
        pad_value = (0.0 - 0.485) / 0.229
        assert chw[0, 0, 0] == pytest.approx(pad_value, abs=1e-5)


class TestVideoSource:
    def test_nearest_frame_and_duration(self, video_path):
        with VideoSource(video_path) as video:
            assert video.frame_count == 10
            assert video.duration_s == pytest.approx(5.0)
            frame = video.frame_at(1.0)  # frame index 2
            assert frame.shape == (HEIGHT, WIDTH, 3)
            with pytest.raises(UndecodableFrame):
                video.frame_at(5.0)
            with pytest.raises(UndecodableFrame):
                video.frame_at(-0.4)

    def test_frame_directory_source(self, tmp_path):
        for i in range(4):
            cv2.imwrite(str(tmp_path / f"frame_{i:03d}.png"),
                        np.full((8, 8, 3), i * 10, np.uint8))
        with VideoSource(tmp_path, fps=2.0) as video:
            assert video.frame_count == 4
            assert video.frame_at(0.5)[0, 0, 0] == 10


class TestCli:
    def test_end_to_end(self, tmp_path, video_path):
        layout_path = tmp_path / "layout.json"
        layout_path.write_text(json.dumps(
            {"lec1": {"camera": [0, 0, 40, 64], "screen": [40, 0, 56, 64]}}))
        specs_path = tmp_path / "specs.jsonl"
        with open(specs_path, "w") as fh:
            for spec in specs_for(4):
                fh.write(json.dumps({"lecture_id": spec.lecture_id,
                                     "time_s": spec.time_s,
                                     "labels": [0] * 9}) + "\n")
        out = tmp_path / "out.lemb"
        code = main(["--video", str(video_path), "--layout", str(layout_path),
                     "--lecture", "lec1", "--specs", str(specs_path),
                     "--backbone", "alexnet", "--tap", TAP_THIRD,
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        header, records = read_embeddings(out)
        assert len(records) == 8
        assert header["meta"]["weights"] == "seeded:1"

        # the training side joins these records on the canonical frame id
        from lectkit.labeling import parse_frame_specs
        from lectkit.mtlvision import frames_from_embeddings

        with open(specs_path) as fh:
            frames = frames_from_embeddings(records, parse_frame_specs(fh))
        assert len(frames) == 4
        assert frames[0].camera.shape == (4096,)

    def test_unknown_lecture_exit_2(self, tmp_path, video_path, capsys):
        layout_path = tmp_path / "layout.json"
        layout_path.write_text("{}")
        specs_path = tmp_path / "specs.jsonl"
        specs_path.write_text("")
        code = main(["--video", str(video_path), "--layout", str(layout_path),
                     "--lecture", "ghost", "--specs", str(specs_path),
                     "--out", str(tmp_path / "o.lemb")])
        assert code == 2
        assert "UnknownLecture" in capsys.readouterr().err

    def test_loaders(self, tmp_path):
        layout_path = tmp_path / "layout.json"
        layout_path.write_text(json.dumps(
            {"lec1": {"camera": [1, 2, 3, 4], "screen": [5, 6, 7, 8]}}))
        layouts = load_layouts(layout_path)
        assert layouts["lec1"].camera == Box(1, 2, 3, 4)

        specs_path = tmp_path / "specs.jsonl"
        specs_path.write_text('{"lecture_id": "lec1", "time_s": 2.5, "labels": []}\n')
        (spec,) = load_frame_specs(specs_path)
        assert spec.frame_id == "lec1@2.500"
