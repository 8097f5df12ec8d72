import io
from dataclasses import replace

import numpy as np
import pytest

from synergy_tta.errors import ConfigError
from synergy_tta.simstream import (CORRUPTIONS, NOISE, OBJECT, CorruptionSpec, DomainConfig,
                                   StreamConfig, apply_corruption, dump_stream,
                                   generate_stream, load_stream, make_scene)


def scenes(n, cfg=StreamConfig(), seed=0):
    rng = np.random.default_rng(seed)
    return [make_scene(rng, cfg) for _ in range(n)], rng


def test_stream_is_deterministic():
    cfg = StreamConfig(num_batches=3, schedule=(("snow", "heavy", 1), ("fog", "light", 2)))
    a, b = generate_stream(cfg, 5), generate_stream(cfg, 5)
    for x, y in zip(a, b):
        assert x.corruption == y.corruption
        for s, t in zip(x.scenes, y.scenes):
            assert s.points.tobytes() == t.points.tobytes()
            assert s.gt_boxes.boxes.tobytes() == t.gt_boxes.boxes.tobytes()
    c = generate_stream(cfg, 6)
    assert c[0].scenes[0].points.shape != a[0].scenes[0].points.shape or \
        not np.array_equal(c[0].scenes[0].points, a[0].scenes[0].points)


def test_schedule_cycles():
    cfg = StreamConfig(schedule=(("fog", "heavy", 2), ("snow", "light", 1)))
    kinds = [cfg.corruption_at(t).kind for t in range(7)]
    assert kinds == ["fog", "fog", "snow", "fog", "fog", "snow", "fog"]


def test_objects_receive_points():
    (s,), _ = scenes(1, StreamConfig(objects_per_scene=(3, 3)))
    assert len(s.gt_boxes) == 3
    for box in s.gt_boxes.boxes:
        inside = np.abs(s.points[:, :2] - box[:2]).max(axis=1) < max(box[3], box[4])
        assert inside.sum() > 0


def test_target_size_statistics():
    dom = DomainConfig(size_scale=(1.2, 1.0, 1.0))
    cfg = StreamConfig(target=dom, objects_per_scene=(5, 5))
    rng = np.random.default_rng(0)
    lengths = []
    while len(lengths) < 500:
        lengths.extend(make_scene(rng, cfg).gt_boxes.boxes[:, 3])
    lengths = np.array(lengths[:500])
    mean = dom.size_mean[0] * 1.2
    sigma = dom.size_std[0] * 1.2 / np.sqrt(500)
    assert abs(lengths.mean() - mean) < 3 * sigma


def test_none_is_identity():
    (s,), rng = scenes(1)
    out = apply_corruption(s, CorruptionSpec("none", "heavy"), rng)
    assert out.points.tobytes() == s.points.tobytes()


def test_beam_missing_heavy_drops_half_the_bands():
    ss, rng = scenes(30)
    ratios = []
    for s in ss:
        out = apply_corruption(s, CorruptionSpec("beam_missing", "heavy"), rng)
        before = np.unique(s.beam[s.beam >= 0])
        after = np.unique(out.beam[out.beam >= 0])
        assert len(after) == len(before) - round(0.5 * len(before))
        ratios.append(len(out.points) / len(s.points))
    assert 0.4 <= np.mean(ratios) <= 0.6


def test_fog_heavy_removes_more_than_light():
    ss, _ = scenes(100)
    diffs = []
    for i, s in enumerate(ss):
        light = apply_corruption(s, CorruptionSpec("fog", "light"), np.random.default_rng(i))
        heavy = apply_corruption(s, CorruptionSpec("fog", "heavy"), np.random.default_rng(i))
        diffs.append(len(light.points) - len(heavy.points))
    assert np.mean(diffs) > 0


@pytest.mark.parametrize("kind", CORRUPTIONS[1:])
def test_every_corruption_changes_points(kind):
    ss, rng = scenes(3)
    for s in ss:
        out = apply_corruption(s, CorruptionSpec(kind, "heavy"), rng)
        assert out.points.shape[1] == 3 and len(out.points) == len(out.kinds) == len(out.beam)
        assert out.points.shape != s.points.shape or not np.array_equal(out.points, s.points)
        # ground truth never changes
        assert out.gt_boxes.boxes.tobytes() == s.gt_boxes.boxes.tobytes()


def test_snow_adds_noise_and_echo_thins_objects():
    (s,), rng = scenes(1)
    snow = apply_corruption(s, CorruptionSpec("snow", "heavy"), rng)
    assert np.any(snow.kinds == NOISE)
    echo = apply_corruption(s, CorruptionSpec("incomplete_echo", "heavy"), rng)
    assert (echo.kinds == OBJECT).sum() < 0.5 * (s.kinds == OBJECT).sum()


def test_bad_specs_rejected():
    with pytest.raises(ConfigError):
        CorruptionSpec("hail", "heavy")
    with pytest.raises(ConfigError):
        CorruptionSpec("fog", "extreme")
    with pytest.raises(ConfigError):
        StreamConfig(num_batches=0).validate()
    with pytest.raises(ConfigError):
        StreamConfig(schedule=()).validate()


def test_stream_file_roundtrip():
    cfg = StreamConfig(num_batches=2, schedule=(("crosstalk", "moderate", 1),))
    stream = generate_stream(cfg, 1)
    raw = dump_stream(stream)
    back = load_stream(raw)
    assert len(back) == 2
    for a, b in zip(stream, back):
        assert a.corruption == b.corruption
        for s, t in zip(a.scenes, b.scenes):
            assert np.allclose(s.points, t.points, atol=1e-4)
            assert np.array_equal(s.kinds, t.kinds)
    buf = io.BytesIO()
    dump_stream(back, buf)
    assert buf.getvalue() == raw
    with pytest.raises(ConfigError):
        load_stream(b"NOPE")


def test_config_dict_roundtrip():
    cfg = replace(StreamConfig(), schedule=(("wet", "light", 3),))
    again = StreamConfig.from_dict(cfg.to_dict())
    assert again == cfg
