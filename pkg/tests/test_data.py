import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gentron.data import (
    COLORS, DIRECTIONS, POSITIONS, SHAPE_PROMPTS, SHAPES, ImageDataset, VideoDataset,
    classification_accuracy, gen_synthetic_dataset, load_dataset, quantize, read_clip,
    read_ppm, write_clip, write_ppm,
)
from gentron.errors import ConfigError

SHAPES_GRAMMAR = re.compile(rf"^({'|'.join(COLORS)}) ({'|'.join(SHAPES)}) ({'|'.join(POSITIONS)})$")
MOTION_GRAMMAR = re.compile(rf"^({'|'.join(COLORS)}) ({'|'.join(SHAPES)}) moving ({'|'.join(DIRECTIONS)})$")


@pytest.mark.parametrize("kind", ["gaussians", "shapes", "moving-shapes"])
def test_same_seed_identical_files(tmp_path, kind):
    gen_synthetic_dataset(kind, 12, 5, tmp_path / "a")
    gen_synthetic_dataset(kind, 12, 5, tmp_path / "b")
    for name in ("latents.npy", "prompts.txt", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other = gen_synthetic_dataset(kind, 12, 6)
    again = load_dataset(tmp_path / "a")
    arr = again.clips if isinstance(again, VideoDataset) else again.latents
    assert not np.array_equal(arr, other.clips if kind == "moving-shapes" else other.latents)


def test_shapes_grammar_and_coverage():
    ds = gen_synthetic_dataset("shapes", 16, 0)
    assert all(SHAPES_GRAMMAR.match(p) for p in ds.prompts)
    assert sorted(ds.prompts) == sorted(SHAPE_PROMPTS) and len(SHAPE_PROMPTS) == 16
    assert ds.latents.shape == (16, 8, 8, 4)


def test_shapes_render_where_the_prompt_says():
    ds = gen_synthetic_dataset("shapes", 16, 0)
    for x, prompt in zip(ds.latents, ds.prompts):
        color, shape, position = prompt.split()
        lit = x[..., 2] > 0.5
        rows, cols = np.nonzero(lit)
        assert (rows.max() < 4) == position.startswith("top")
        assert (cols.max() < 4) == position.endswith("left")
        assert lit.sum() == (9 if shape == "square" else 5)
        assert (x[lit, 0].mean() > 0) == (color == "red")


def test_moving_shapes_move():
    ds = gen_synthetic_dataset("moving-shapes", 8, 0, frames=4)
    assert ds.clips.shape == (8, 4, 8, 8, 4)
    assert all(MOTION_GRAMMAR.match(p) for p in ds.prompts)
    for clip, prompt in zip(ds.clips, ds.prompts):
        direction = prompt.split()[-1]
        axis, step = {"left": (1, -1), "right": (1, 1), "up": (0, -1), "down": (0, 1)}[direction]
        lit = clip[..., 2] > 0.5
        assert np.array_equal(np.roll(lit[0], step, axis=axis), lit[1])


def test_cluster_means_within_3_se():
    ds = gen_synthetic_dataset("gaussians", 3000, 1, latent_shape=(2, 2, 1), n_clusters=3)
    means = np.asarray(ds.meta["means"])
    std = ds.meta["std"]
    assert set(ds.prompts) == {"alpha", "beta", "gamma"}
    for k, name in enumerate(ds.meta["clusters"]):
        members = ds.latents[ds.labels == k]
        assert all(p == name for p, l in zip(ds.prompts, ds.labels) if l == k)
        se = std / np.sqrt(len(members))
        assert np.all(np.abs(members.mean(axis=0) - means[k]) < 3 * se)


def test_invalid_requests():
    with pytest.raises(ConfigError):
        gen_synthetic_dataset("faces", 4, 0)
    with pytest.raises(ConfigError):
        gen_synthetic_dataset("shapes", 0, 0)
    with pytest.raises(ConfigError):
        gen_synthetic_dataset("gaussians", 4, 0, n_clusters=5)


def test_load_missing_dataset(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "absent")


def test_roundtrip_dataset(tmp_path):
    ds = gen_synthetic_dataset("gaussians", 9, 0, tmp_path / "g")
    back = load_dataset(tmp_path / "g")
    assert isinstance(back, ImageDataset)
    assert back.latents.tobytes() == ds.latents.tobytes() and back.prompts == ds.prompts
    assert json.loads((tmp_path / "g" / "manifest.json").read_text())["kind"] == "gaussians"


def test_classifier_on_training_data():
    ds = gen_synthetic_dataset("shapes", 32, 0)
    assert classification_accuracy(ds.latents, ds.prompts, ds) == 1.0


# -- PPM ------------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(-3, 3, width=32)))
def test_ppm_roundtrip_recovers_quantized_latent(tmp_path_factory, latent):
    path = tmp_path_factory.mktemp("ppm") / "x.ppm"
    write_ppm(path, latent)
    back = read_ppm(path)
    assert back.shape == latent.shape
    assert back.tobytes() == quantize(latent).tobytes()
    assert np.all(np.abs(back - np.clip(latent, -1, 1)) <= 1 / 255 + 1e-6)


def test_ppm_pixel_mapping(tmp_path):
    latent = np.array([[[-1.0, 0.0, 1.0, 5.0]]], dtype=np.float32)
    write_ppm(tmp_path / "p.ppm", latent)
    raw = (tmp_path / "p.ppm").read_bytes()
    assert raw.startswith(b"P6\n")
    assert list(raw[-12::3]) == [0, 128, 255, 255]


def test_clip_files(tmp_path):
    clip = np.random.default_rng(0).uniform(-1, 1, (3, 4, 4, 2)).astype(np.float32)
    names = write_clip(tmp_path / "c", clip)
    assert names == ["frame_000.ppm", "frame_001.ppm", "frame_002.ppm"]
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["t"] == 3 and manifest["frames"] == names
    assert read_clip(tmp_path / "c").tobytes() == np.stack([quantize(f) for f in clip]).tobytes()
