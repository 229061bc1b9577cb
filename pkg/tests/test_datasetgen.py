import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewave.datasetgen import (
    ClassGenerationError,
    ClassSpec,
    GenerationContext,
    ParameterGrid,
    SelectionPolicy,
    assign_splits,
    class_seed,
    class_split_labels,
    draw_augmentation,
    enumerate_classes,
    generate_class,
    paramfile_text,
    parse_paramfile,
    read_class_paramfile,
    reproject_identity,
    select_frames,
    select_steps,
    split_sizes,
    spread_values,
    write_class_paramfile,
)
from rewave.dynamics import ACTIVE, GlobalDynamicsConfig, WaveParams, init_state
from rewave.manifest import (
    ManifestRow,
    build_manifest,
    image_path,
    manifest_csv,
    parse_manifest_csv,
)

FOUR = {
    "dendritic_radius": (1.0, 1.2, 1.4, 1.6),
    "activation_threshold": (0.1, 0.2, 0.3, 0.4),
    "propagation_prob": (0.5, 0.6, 0.7, 0.8),
    "active_duration": (2, 3, 4, 5),
    "refractory_mean": (20.0, 30.0, 40.0, 50.0),
    "spontaneous_rate": (1e-4, 2e-4, 3e-4, 4e-4),
}


def grid_of(names):
    return ParameterGrid(tuple((n, FOUR[n]) for n in names))


def test_class_counts():
    names = list(FOUR)
    assert len(enumerate_classes(grid_of(names[:5]), 0)) == 1024
    assert len(enumerate_classes(grid_of(names), 0)) == 4096
    one = enumerate_classes(ParameterGrid((("propagation_prob", (0.6,)),)), 3)
    assert len(one) == 1
    assert one[0].params == WaveParams(propagation_prob=0.6)


def test_enumeration_is_lexicographic():
    specs = enumerate_classes(grid_of(["activation_threshold", "active_duration"]), 1)
    got = [(s.params.activation_threshold, s.params.active_duration) for s in specs]
    assert got == list(itertools.product(FOUR["activation_threshold"], FOUR["active_duration"]))
    assert [s.class_id for s in specs] == list(range(16))
    assert specs[5].class_seed == class_seed(1, 5)
    assert len({s.class_seed for s in specs}) == 16


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_class_count_law(sizes):
    names = list(FOUR)[: len(sizes)]
    grid = ParameterGrid(tuple((n, FOUR[n][:k]) for n, k in zip(names, sizes)))
    assert len(enumerate_classes(grid, 9)) == int(np.prod(sizes)) == grid.n_classes


def test_grid_validation():
    with pytest.raises(ValueError):
        ParameterGrid(())
    with pytest.raises(ValueError):
        ParameterGrid((("propagation_prob", ()),))
    with pytest.raises(ValueError):
        ParameterGrid((("propagation_prob", (0.5, 2.0)),))
    with pytest.raises(ValueError):
        ParameterGrid((("nonsense", (1.0,)),))
    with pytest.raises(ValueError):
        ParameterGrid((("active_duration", (2, 2)),))


def test_spread_values():
    assert spread_values(40.0, 0.5) == pytest.approx([20.0, 40 * (1 - 0.5 / 3), 40 * (1 + 0.5 / 3), 60.0])
    assert spread_values(3, 0.5, integer=True) == [2, 3, 4, 5]


def test_select_steps_examples():
    assert select_steps(np.zeros(30, int), 4, 1) == []
    assert select_steps(np.array([1]), 1, 1) == [0]
    assert select_steps(np.full(10, 100), 3, 50) == [0, 3, 6, 9]
    assert select_steps(np.array([60, 0, 0, 10, 0, 0, 70]), 3, 50) == [0, 6]


@pytest.fixture(scope="module")
def small_ctx():
    return GenerationContext(12.0, 16, GlobalDynamicsConfig(max_steps=120, quiet_steps=50))


def test_select_frames_quiescent_and_single_pixel(small_ctx):
    lat = small_ctx.lattice
    quiet = [init_state(lat) for _ in range(9)]
    for i, f in enumerate(quiet):
        f.step = i
    assert select_frames(quiet, SelectionPolicy(1, 1), small_ctx) == []
    one_px = int(np.flatnonzero(small_ctx.weights == 1)[0])
    f = init_state(lat)
    f.state[one_px] = ACTIVE
    assert small_ctx.identity_count(f) == 1
    assert select_frames([f], SelectionPolicy(1, 1), small_ctx) == [0]


@pytest.fixture(scope="module")
def desk_ctx():
    return GenerationContext(80.0, 128, GlobalDynamicsConfig())


def test_generate_class_without_adjustment(desk_ctx):
    spec = ClassSpec(0, WaveParams(), class_seed(2024, 0))
    res = generate_class(spec, 10, SelectionPolicy(), desk_ctx)
    assert len(res.images) == 10
    assert (res.spacing_used, res.threshold_used, res.ladder) == (4, 50, [])
    for g in res.images:
        assert g.frame_step % 4 == 0
        assert g.active_pixels >= 50
        assert g.image.pixels.shape == (128, 128)
        assert g.image.invalid_values() == set()
        assert g.aug == draw_augmentation(spec.class_seed, g.image_index)
    assert reproject_identity(spec, res.images[3].episode_id, res.images[3].frame_step, desk_ctx) == res.images[
        3
    ].active_pixels
    order = [(g.episode_id, g.frame_step) for g in res.images]
    assert order == sorted(order)
    again = generate_class(spec, 10, SelectionPolicy(), desk_ctx)
    assert all(a.image == b.image for a, b in zip(res.images, again.images))


def test_silent_class_raises(small_ctx):
    spec = ClassSpec(7, WaveParams(spontaneous_rate=0.0), 1)
    with pytest.raises(ClassGenerationError) as info:
        generate_class(spec, 5, SelectionPolicy(max_episodes_per_attempt=2), small_ctx)
    assert info.value.class_id == 7
    assert "class 7" in str(info.value)


def test_ladder_relaxes_then_reuses():
    ctx = GenerationContext(6.0, 8, GlobalDynamicsConfig(max_steps=12, quiet_steps=50))
    spec = ClassSpec(2, WaveParams(spontaneous_rate=0.01), 77)
    res = generate_class(spec, 200, SelectionPolicy(3, 4, 1), ctx)
    assert res.ladder[:2] == ["spacing", "spacing"]
    assert res.ladder[-1] == "reuse"
    assert (res.spacing_used, res.threshold_used) == (1, 1)
    assert len(res.images) == 200
    rounds = Counter(g.reuse_round for g in res.images)
    assert rounds[0] < 200 and max(rounds) >= 1
    by_frame = {}
    for g in res.images:
        by_frame.setdefault((g.episode_id, g.frame_step), []).append(g)
        assert g.active_pixels >= 1
    repeated = [gs for gs in by_frame.values() if len(gs) > 1]
    assert repeated
    for gs in repeated:
        assert len({(g.aug.mirror, g.aug.rotation) for g in gs}) == len(gs)


def test_ladder_threshold_step_only_when_needed():
    ctx = GenerationContext(6.0, 8, GlobalDynamicsConfig(max_steps=40, quiet_steps=50))
    spec = ClassSpec(0, WaveParams(spontaneous_rate=0.01), 5)
    res = generate_class(spec, 4, SelectionPolicy(1, 1000, 1), ctx)
    assert res.ladder[0] == "threshold"
    assert res.spacing_used == 1 and res.threshold_used < 1000
    assert all(g.active_pixels >= res.threshold_used for g in res.images)


def test_split_sizes():
    assert split_sizes(1000) == (800, 100, 100)
    assert split_sizes(2000) == (1600, 200, 200)
    assert split_sizes(10) == (8, 1, 1)
    for bad in (15, 7, 1001):
        with pytest.raises(ValueError):
            split_sizes(bad)
    with pytest.raises(ValueError):
        split_sizes(10, (0.5, 0.3, 0.3))


@pytest.mark.parametrize("n", [10, 40, 1000, 2000])
def test_splits_balanced(n):
    labels = assign_splits(range(6), n, 123)
    want = dict(zip(("train", "val", "test"), split_sizes(n)))
    for cid, lab in labels.items():
        assert Counter(lab) == want
    assert labels[0] != labels[1]
    assert class_split_labels(3, n, 123) == labels[3]


def test_paramfile(tmp_path):
    specs = enumerate_classes(grid_of(["activation_threshold", "active_duration"]), 8)
    spec = specs[6]
    text = paramfile_text(spec)
    assert "activation_threshold=0.2" in text.splitlines()
    assert f"class_id={spec.class_id}" in text
    keys = [ln.split("=")[0] for ln in text.splitlines() if ln and not ln.startswith("#")]
    assert keys == sorted(keys)
    path = write_class_paramfile(spec, tmp_path / "p.txt")
    back = read_class_paramfile(path)
    assert back == spec
    theta = enumerate_classes(ParameterGrid((("activation_threshold", (0.25,)),)), 0)[0]
    assert "activation_threshold=0.25" in paramfile_text(theta).splitlines()
    texts = [set(paramfile_text(s).splitlines()) - {f"class_id={s.class_id}", f"class_seed={s.class_seed}"} for s in specs]
    assert all(a != b for a, b in itertools.combinations(texts, 2))


@settings(max_examples=50, deadline=None)
@given(
    theta=st.floats(0.001, 1.0),
    p=st.floats(0.001, 1.0),
    d=st.integers(1, 20),
    rate=st.floats(0.0, 0.01),
)
def test_paramfile_round_trip(theta, p, d, rate):
    spec = ClassSpec(3, WaveParams(activation_threshold=theta, propagation_prob=p, active_duration=d, spontaneous_rate=rate), 2**63 + 5)
    assert parse_paramfile(paramfile_text(spec)) == spec


def test_paramfile_write_error_names_path(tmp_path):
    spec = ClassSpec(0, WaveParams(), 1)
    with pytest.raises(OSError, match="missing"):
        write_class_paramfile(spec, tmp_path / "missing" / "p.txt")


def _rows(n_classes, n):
    rows = []
    for cid in range(n_classes):
        labels = class_split_labels(cid, n, 0)
        for i in range(n):
            rows.append(ManifestRow(image_path(labels[i], cid, i), cid, i, labels[i], 0, 4 * i, i % 2 == 0, 12.5 * i, 4, 50))
    return rows


def test_manifest_rows_and_round_trip():
    rows = _rows(2, 10)
    m = build_manifest(list(reversed(rows)), {"master_seed": 0})
    assert len(m.rows) == 20
    assert [(r.class_id, r.image_index) for r in m.rows] == [(c, i) for c in range(2) for i in range(10)]
    for cid, rs in m.by_class().items():
        assert Counter(r.split for r in rs) == {"train": 8, "val": 1, "test": 1}
    assert m.metadata["master_seed"] == 0
    text = manifest_csv(m)
    assert "\r" not in text
    assert parse_manifest_csv(text) == m.rows


def test_manifest_duplicate_path():
    rows = _rows(1, 10)
    with pytest.raises(RuntimeError):
        build_manifest(rows + rows[:1], {})
