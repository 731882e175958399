import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specaware.data import (
    Dataset, Endmember, HsiCube, NormStats, PatchFormatError, SceneRecipe, batch_iterator, candidate_starts,
    compute_stats, decode_patch, encode_patch, endmember_library, epoch_plan, nearest_rank, normalize,
    read_patch, render_cube, resample, sample_band_view, solar_illumination, stats_from_population, view_seed,
    write_patch,
)
from specaware.sensors import get_sensor

from conftest import toy_spec

LIB = endmember_library(4)


# -- synthesis ------------------------------------------------------------------------

def test_flat_single_endmember_scene_is_uniform():
    recipe = SceneRecipe([LIB[0]], noise=0.0)
    cube, label = render_cube(recipe, get_sensor("AVIRIS-3", "L2"), 8, 8, seed=1)
    assert label == 0
    assert np.all(cube.data == cube.data[:, :1, :1])


def test_constant_spectrum_resamples_to_constant():
    flat = Endmember(0.42, [])
    np.testing.assert_allclose(resample(flat, get_sensor("AVIRIS-NG", "L2")), 0.42, rtol=1e-12)


def test_cross_sensor_consistency():
    recipe = SceneRecipe(LIB, dominant=2, noise=0.0)
    classic, _ = render_cube(recipe, get_sensor("AVIRIS-Classic", "L2"), 8, 8, seed=5)
    ng, _ = render_cube(recipe, get_sensor("AVIRIS-NG", "L2"), 8, 8, seed=5)
    wl_c = get_sensor("AVIRIS-Classic").wavelengths_um
    wl_n = get_sensor("AVIRIS-NG").wavelengths_um
    inside = wl_c <= wl_n[-1]
    sc = classic.data.mean(axis=(1, 2))[inside]
    sn = np.interp(wl_c[inside], wl_n, ng.data.mean(axis=(1, 2)))
    assert np.max(np.abs(sc - sn) / np.abs(sn)) < 0.02


def test_illumination_and_abundances():
    assert np.all(solar_illumination(np.linspace(0.3, 2.7, 50)) > 0)
    l1, _ = render_cube(SceneRecipe(LIB, noise=0.0), get_sensor("AVIRIS-3", "L1"), 8, 8, seed=2)
    l2, _ = render_cube(SceneRecipe(LIB, noise=0.0), get_sensor("AVIRIS-3", "L2"), 8, 8, seed=2)
    ratio = l1.data / l2.data
    np.testing.assert_allclose(ratio, ratio[:, :1, :1] * np.ones_like(ratio), rtol=1e-5)


def test_missing_strip_sets_valid_fraction():
    cube, _ = render_cube(SceneRecipe(LIB, missing_fraction=0.3), get_sensor("AVIRIS-3"), 10, 10, seed=0)
    assert cube.valid_fraction == pytest.approx(0.7)
    assert not np.any(cube.data[:, :, 7:])


# -- patch files ---------------------------------------------------------------------------

@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5))
def test_fp16_round_trip_bit_exact(seed, c, h, w):
    rng = np.random.default_rng(seed)
    data = (rng.standard_normal((c, h, w)) * 10 ** rng.uniform(-3, 3)).astype(np.float16)
    cube = HsiCube(toy_spec(c), data.astype(np.float32))
    back = decode_patch(encode_patch(cube))
    assert back.data.dtype == np.float16
    np.testing.assert_array_equal(back.data.view(np.uint16), data.view(np.uint16))


def test_header_echo_and_errors(tmp_path):
    cube = HsiCube(get_sensor("AVIRIS-3", "L2"), np.ones((284, 4, 6), dtype=np.float32), 0.9, 2)
    path = tmp_path / "p.hspc"
    write_patch(path, cube)
    blob = path.read_bytes()
    assert blob[:4] == b"HSPC"
    assert int.from_bytes(blob[6:8], "little") == 284
    back = read_patch(path)
    assert back.sensor.name == "AVIRIS-3" and back.sensor.level.short == "L2"
    assert back.data.shape == (284, 4, 6) and back.label == 2 and back.valid_fraction == 0.9
    with pytest.raises(PatchFormatError, match="bad magic"):
        decode_patch(b"NOPE" + blob[4:])
    with pytest.raises(PatchFormatError, match="truncated"):
        decode_patch(blob[:-1])
    with pytest.raises(PatchFormatError, match="version"):
        decode_patch(blob[:4] + (9).to_bytes(2, "little") + blob[6:])
    with pytest.raises(ValueError):
        encode_patch(HsiCube(toy_spec(1), np.full((1, 1, 1), np.nan, dtype=np.float32)))


def test_dataset_build_rejects_incomplete_patches(small_dataset):
    ds, _ = small_dataset
    assert len(ds) == 24
    assert all(e.valid_fraction >= 0.8 for e in ds.entries)
    again = Dataset.open(ds.root)
    assert [e.file for e in again.entries] == [e.file for e in ds.entries]
    assert again.manifest()["patch_count"] == 24
    assert set(again.manifest()["sensors"]) == {"AVIRIS-Classic/L1", "AVIRIS-NG/L1", "AVIRIS-3/L1"}


def test_missing_rate_one_rejects_some(tmp_path):
    from specaware.data import build_dataset

    ds = build_dataset(tmp_path, [get_sensor("AVIRIS-3")], per_sensor=6, size=8, missing_rate=1.0, seed=1)
    assert len(ds) == 6 and ds.rejected > 0


# -- statistics --------------------------------------------------------------------------------

def test_nearest_rank_sort_oracle():
    vals = np.arange(1, 101, dtype=np.float64)[:, None]
    st_ = stats_from_population(np.random.default_rng(0).permutation(vals))
    assert st_.p1[0] == 1 and st_.p99[0] == 99
    srt = np.sort(np.random.default_rng(1).normal(size=37))
    for q in (0.01, 0.25, 0.5, 0.99):
        assert nearest_rank(srt, q) == srt[int(np.ceil(q * 37)) - 1]


def test_constant_band_floored():
    pix = np.column_stack([np.full(50, 3.0), np.arange(50.0)])
    s = stats_from_population(pix)
    assert s.std[0] == 1e-6 and s.floored == [0]
    assert np.all(s.std > 0) and np.all(s.p1 <= s.p99)


def test_stats_deterministic_and_normalized(small_dataset, tmp_path):
    ds, stats = small_dataset
    again = compute_stats(ds, seed=0)
    for key in stats.sensors:
        np.testing.assert_array_equal(again[key].mean, stats[key].mean)
    stats.save(tmp_path / "s.json")
    loaded = NormStats.load(tmp_path / "s.json")
    np.testing.assert_array_equal(loaded["AVIRIS-3/L1"].p99, stats["AVIRIS-3/L1"].p99)
    key = "AVIRIS-3/L1"
    cubes = np.stack([normalize(ds.load(i), stats) for i, e in enumerate(ds.entries) if e.sensor == key])
    assert np.max(np.abs(cubes.mean(axis=(0, 2, 3)))) < 0.1
    with pytest.raises(KeyError):
        normalize(ds.load(0), NormStats({}))


def test_normalize_formula_and_clipping(small_dataset):
    _, stats = small_dataset
    s = stats["AVIRIS-NG/L1"]
    x = np.stack([s.p1, s.p99, s.p99 + 10.0])[:, :, None].transpose(1, 0, 2)  # (C, 3, 1)
    out = normalize(x, s)
    np.testing.assert_allclose(out[:, 0, 0], (s.p1 - s.mean) / s.std, rtol=1e-5)
    np.testing.assert_array_equal(out[:, 2, 0], out[:, 1, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
def test_normalize_monotone_and_idempotent_on_clipped(values):
    pop = np.linspace(-5, 5, 200)[:, None]
    s = stats_from_population(pop)
    x = np.sort(np.array(values))[None, :, None]
    y = normalize(x, s)[0, :, 0]
    assert np.all(np.diff(y) >= 0)
    clipped = np.clip(x, s.p1[0], s.p99[0])
    np.testing.assert_array_equal(normalize(clipped, s)[0, :, 0], y)
    back = y[None, :, None].astype(np.float64) * s.std[0] + s.mean[0]
    np.testing.assert_allclose(normalize(back, s)[0, :, 0], y, atol=1e-5)


# -- band views --------------------------------------------------------------------------------

def test_candidate_start_enumeration():
    assert candidate_starts(425) == [0, 32, 64, 96, 128, 160, 192, 224, 256, 288, 320, 325]
    assert candidate_starts(224) == [0, 32, 64, 96, 124]
    assert candidate_starts(284) == [0, 32, 64, 96, 128, 160, 184]
    assert candidate_starts(100) == [0]


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["AVIRIS-Classic", "AVIRIS-NG", "AVIRIS-3"]), st.integers(0, 10**6),
       st.integers(1, 150))
def test_views_contiguous_in_range(name, seed, window):
    spec = get_sensor(name)
    sel = sample_band_view(spec, window, 32, seed)
    assert sel.length == window
    assert sel.indices == tuple(range(sel.start, sel.start + window))
    assert sel.start + window <= spec.band_count
    assert sel.start in candidate_starts(spec.band_count, window)


def test_view_edge_cases():
    spec = toy_spec(50)
    assert sample_band_view(spec, 50, seed=0).indices == tuple(range(50))
    with pytest.warns(UserWarning):
        assert sample_band_view(spec, 100, seed=0).length == 50
    a, b = view_seed(0, 1, 5), view_seed(0, 2, 5)
    assert a.integers(1 << 30) != b.integers(1 << 30)


def test_all_starts_reached():
    ng = get_sensor("AVIRIS-NG")
    seen = {sample_band_view(ng, 100, 32, view_seed(0, 0, t)).start for t in range(400)}
    assert seen == set(candidate_starts(425))


# -- batching ------------------------------------------------------------------------------------

def test_epoch_covers_every_patch_once(small_dataset):
    ds, _ = small_dataset
    idx = [i for i, e in enumerate(ds.entries) if e.sensor == "AVIRIS-3/L1"][:6] + [0, 1, 2, 3]
    plan = epoch_plan(ds, idx, 2, seed=0, epoch=0)
    assert sorted(i for b in plan for i in b) == sorted(idx)
    assert len(plan) == 5
    for b in plan:
        assert len({ds.entries[i].sensor for i in b}) == 1


def test_iterator_deterministic_and_mixed_channels(small_dataset):
    ds, stats = small_dataset

    def run():
        return [(b.ids, b.selection.start, b.cubes.shape[1]) for b in
                batch_iterator(ds, stats, 4, seed=7, epoch=1, window=150)]
    first = run()
    assert first == run()
    assert {c for _, _, c in first} == {150}
    full = [b.cubes.shape[1] for b in batch_iterator(ds, stats, 4, seed=7, window=None)]
    assert set(full) == {224, 425, 284}


def test_worker_count_preserves_multiset(small_dataset):
    ds, stats = small_dataset
    one = sorted(i for b in batch_iterator(ds, stats, 3, 1, workers=1) for i in b.ids)
    three = sorted(i for b in batch_iterator(ds, stats, 3, 1, workers=3) for i in b.ids)
    assert one == three == list(range(len(ds)))
