import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dreamnav.data import Dataset, Episode
from dreamnav.errors import ConfigError, FormatError
from dreamnav.nn import ParamStore
from dreamnav import persist


def _episode(rng, steps=5, size=8, target=2):
    return Episode(
        frames=rng.integers(0, 256, size=(steps + 1, size, size, 3), dtype=np.uint8),
        actions=rng.uniform(-30, 30, size=(steps, 3)).astype(np.float32),
        labels=rng.random(steps + 1) > 0.8,
        target_type=target,
    )


def test_episode_roundtrip_bytes(tmp_path):
    rng = np.random.default_rng(0)
    ep = _episode(rng)
    p = tmp_path / "ep.drms"
    persist.write_episode(p, ep)
    loaded = persist.read_episode(p, target_type=ep.target_type)
    assert np.array_equal(loaded.frames, ep.frames)
    assert np.array_equal(loaded.actions, ep.actions)
    assert np.array_equal(loaded.labels, ep.labels)
    # write -> read -> write is byte-identical
    p2 = tmp_path / "ep2.drms"
    persist.write_episode(p2, loaded)
    assert p.read_bytes() == p2.read_bytes()


@settings(max_examples=20, deadline=None)
@given(steps=st.integers(1, 12), size=st.sampled_from([4, 8]), seed=st.integers(0, 100))
def test_episode_roundtrip_property(tmp_path_factory, steps, size, seed):
    ep = _episode(np.random.default_rng(seed), steps=steps, size=size)
    p = tmp_path_factory.mktemp("eps") / "ep.drms"
    persist.write_episode(p, ep)
    loaded = persist.read_episode(p)
    assert np.array_equal(loaded.frames, ep.frames)
    assert np.array_equal(loaded.actions, ep.actions)


def test_episode_trailing_bytes_rejected(tmp_path):
    ep = _episode(np.random.default_rng(1))
    p = tmp_path / "ep.drms"
    persist.write_episode(p, ep)
    p.write_bytes(p.read_bytes() + b"x")
    with pytest.raises(FormatError, match="bytes"):
        persist.read_episode(p)


def test_episode_bad_magic(tmp_path):
    p = tmp_path / "ep.drms"
    p.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(FormatError, match="magic"):
        persist.read_episode(p)


def test_dataset_roundtrip_with_manifest(tmp_path):
    rng = np.random.default_rng(2)
    ds = Dataset([_episode(rng, steps=3, target=0), _episode(rng, steps=7, target=4)])
    persist.write_dataset(tmp_path / "data", ds)
    loaded = persist.read_dataset(tmp_path / "data")
    assert loaded.n_episodes == 2 and loaded.n_triples == 10
    assert [e.target_type for e in loaded.episodes] == [0, 4]
    manifest = (tmp_path / "data" / "manifest.txt").read_text()
    assert "total_triples=10" in manifest


def test_manifest_count_mismatch_detected(tmp_path):
    rng = np.random.default_rng(3)
    ds = Dataset([_episode(rng, steps=3)])
    persist.write_dataset(tmp_path / "d", ds)
    m = tmp_path / "d" / "manifest.txt"
    m.write_text(m.read_text().replace("total_triples=3", "total_triples=4"))
    with pytest.raises(FormatError):
        persist.read_dataset(tmp_path / "d")


def test_checkpoint_roundtrip_byte_identical(tmp_path):
    rng = np.random.default_rng(4)
    store = ParamStore()
    store.add("enc/c0/w", rng.normal(size=(4, 4, 3, 8)).astype(np.float32))
    store.add("enc/c0/b", np.zeros(8, np.float32))
    store.add("head/w", rng.normal(size=(8, 2)).astype(np.float32))
    meta = {"kind": "world", "latent_hw": "2", "seed": "17"}
    p1 = tmp_path / "a.drmw"
    persist.write_checkpoint(p1, store, meta)
    tensors, meta2 = persist.read_checkpoint(p1)
    assert meta2 == meta
    assert set(tensors) == set(store.names())
    assert np.array_equal(tensors["head/w"], store["head/w"].data)

    store2 = ParamStore()
    for name, arr in tensors.items():
        store2.add(name, arr)
    p2 = tmp_path / "b.drmw"
    persist.write_checkpoint(p2, store2, meta2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.drmw"
    p.write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(FormatError, match="magic"):
        persist.read_checkpoint(p)


def test_checkpoint_truncation_detected(tmp_path):
    store = ParamStore()
    store.add("w", np.ones((4, 4), np.float32))
    p = tmp_path / "x.drmw"
    persist.write_checkpoint(p, store, {"k": "v"})
    p.write_bytes(p.read_bytes()[:20])
    with pytest.raises(FormatError):
        persist.read_checkpoint(p)


def test_config_parsing_types_and_unknown_keys():
    defaults = {"epochs": 20, "lr": 0.001, "tsd": False, "mode": "offline"}
    cfg = persist.parse_config_text("epochs=5\nlr=0.01\ntsd=true\n# comment\n", defaults)
    assert cfg == {"epochs": 5, "lr": 0.01, "tsd": True, "mode": "offline"}
    with pytest.raises(ConfigError, match="unknown key"):
        persist.parse_config_text("nope=1", defaults)
    with pytest.raises(ConfigError, match="bad value"):
        persist.parse_config_text("epochs=ten", defaults)
    roundtrip = persist.parse_config_text(persist.config_to_text(cfg), defaults)
    assert roundtrip == cfg


def test_ppm_roundtrip_and_header(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(6, 9, 3), dtype=np.uint8)
    p = tmp_path / "img.ppm"
    persist.write_ppm(p, img)
    head = p.read_bytes()[:11]
    assert head == b"P6\n9 6\n255\n"
    assert np.array_equal(persist.read_ppm(p), img)


def test_strip_width_matches_frame_grid():
    frames = np.zeros((5, 8, 8, 3), np.uint8)
    strip = persist.frames_to_strip(frames)
    assert strip.shape == (8, 40, 3)


def test_topdown_plot_marks_endpoints():
    pos = np.array([[50.0, 50.0], [100.0, 100.0], [150.0, 150.0]])
    img = persist.topdown_plot(pos, (400.0, 400.0), (500.0, 500.0))
    assert img.shape == (256, 256, 3)
    assert (img == np.array([220, 40, 40])).all(axis=-1).any()  # start
    assert (img == np.array([40, 180, 60])).all(axis=-1).any()  # target


def test_csv_is_deterministic(tmp_path):
    rows = [["a", 0.123456789, 1], ["b", 2.0, 3]]
    p1, p2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    persist.write_csv(p1, ["name", "value", "count"], rows)
    persist.write_csv(p2, ["name", "value", "count"], rows)
    assert p1.read_bytes() == p2.read_bytes()
    assert "0.123457" in p1.read_text()
