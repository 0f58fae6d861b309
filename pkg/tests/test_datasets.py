import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glnloc import datasets as ds
from glnloc.floorplan import alternating_split


def tiny_table(n_groups=2, dim=8, k=4):
    rng = np.random.default_rng(0)
    rows = n_groups * 4
    return ds.FeatureTable(
        dim=dim,
        locations=np.repeat(np.arange(n_groups) % k, 4),
        views=np.tile(np.arange(4), n_groups),
        groups=np.repeat(np.arange(n_groups), 4),
        features=rng.normal(size=(rows, dim)),
    )


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def test_binary_round_trip(tmp_path):
    table = tiny_table()
    path = tmp_path / "feat.ftb"
    ds.save_features(path, table)
    loaded = ds.load_features(path)
    assert loaded.n_records == 8
    assert loaded.dim == 8
    assert np.array_equal(loaded.locations, table.locations)
    assert np.array_equal(loaded.views, table.views)
    assert np.array_equal(loaded.groups, table.groups)
    # payload is float32 on disk
    assert np.allclose(loaded.features, table.features, atol=1e-6)


def test_missing_view_rejected_with_group_named(tmp_path):
    table = tiny_table()
    keep = ~((table.groups == 1) & (table.views == 3))
    broken = ds.FeatureTable(dim=table.dim, locations=table.locations[keep],
                             views=table.views[keep], groups=table.groups[keep],
                             features=table.features[keep])
    path = tmp_path / "feat.ftb"
    ds.save_features(path, broken)
    with pytest.raises(ds.DataError, match=r"incomplete.*\[1\]"):
        ds.load_features(path)


def test_duplicate_group_view_rejected():
    table = tiny_table()
    table.views[3] = 0  # group 0 now has two view-0 records
    with pytest.raises(ds.DataError, match="duplicate record for group 0 view 0"):
        ds.validate_table(table)


def test_bad_magic(tmp_path):
    path = tmp_path / "feat.ftb"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ds.DataError, match="bad magic"):
        ds.load_features(path)


def test_truncated_file(tmp_path):
    table = tiny_table()
    path = tmp_path / "feat.ftb"
    ds.save_features(path, table)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ds.DataError, match="truncated"):
        ds.load_features(path)


def test_csv_alternative_matches_binary(tmp_path):
    table = tiny_table(dim=3)
    bin_path = tmp_path / "feat.ftb"
    ds.save_features(bin_path, table)
    csv_path = tmp_path / "feat.csv"
    with open(csv_path, "w") as fh:
        fh.write("location,view,group," + ",".join(f"f{i}" for i in range(3)) + "\n")
        for i in range(table.n_records):
            vals = ",".join(repr(float(v)) for v in table.features[i])
            fh.write(f"{table.locations[i]},{table.views[i]},{table.groups[i]},{vals}\n")
    from_csv = ds.load_features(csv_path)
    assert np.array_equal(from_csv.groups, table.groups)
    assert np.allclose(from_csv.features, table.features)


def test_group_assembly_preserves_view_order():
    table = tiny_table()
    # scramble record order; assembly must still produce front..left rows
    perm = np.random.default_rng(1).permutation(table.n_records)
    shuffled = ds.FeatureTable(dim=table.dim, locations=table.locations[perm],
                               views=table.views[perm], groups=table.groups[perm],
                               features=table.features[perm])
    samples = ds.group_samples(shuffled)
    by_group = {s.group: s for s in samples}
    for g in range(2):
        for v in range(4):
            idx = np.flatnonzero((table.groups == g) & (table.views == v))[0]
            assert np.array_equal(by_group[g].views[v], table.features[idx])


def test_sample_outside_plan_rejected():
    table = tiny_table(n_groups=2, k=4)
    plan, _ = ds.generate_synthetic(ds.SynthConfig(width=2, height=2, samples_per_location=1))
    object.__setattr__(table, "locations", table.locations + 100)
    with pytest.raises(ds.DataError, match="outside plan"):
        ds.assemble_samples(table, plan)


# ---------------------------------------------------------------------------
# standard split
# ---------------------------------------------------------------------------


def make_samples(n_locations=10, per_location=4, dim=4, plan_k=None):
    rng = np.random.default_rng(5)
    samples = []
    group = 0
    for loc in range(n_locations):
        for _ in range(per_location):
            samples.append(ds.MultiViewSample(location=loc,
                                              views=rng.normal(size=(4, dim)), group=group))
            group += 1
    return ds.SampleSet(tuple(samples), plan_k or n_locations)


def test_ratio_split_counts():
    train, test = ds.standard_split(make_samples(10, 4), 0.75, seed=0)
    assert len(train) == 30
    assert len(test) == 10


def test_split_is_partition():
    samples = make_samples(7, 5)
    train, test = ds.standard_split(samples, 0.6, seed=3)
    train_groups = {s.group for s in train.samples}
    test_groups = {s.group for s in test.samples}
    assert not (train_groups & test_groups)
    assert train_groups | test_groups == {s.group for s in samples.samples}


@settings(deadline=None, max_examples=30)
@given(st.integers(2, 8), st.integers(2, 6),
       st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_partition_property(n_loc, per_loc, ratio, seed):
    samples = make_samples(n_loc, per_loc)
    train, test = ds.standard_split(samples, ratio, seed=seed)
    assert len(train) + len(test) == len(samples)
    assert {s.location for s in train.samples} == set(range(n_loc))  # stratified


def test_single_sample_location_goes_to_train():
    samples = make_samples(3, 1)
    with pytest.warns(UserWarning, match="single sample"):
        train, test = ds.standard_split(samples, 0.5, seed=0)
    assert len(train) == 3
    assert len(test) == 0


def test_explicit_file_split(tmp_path):
    samples = make_samples(4, 2)
    path = tmp_path / "split.txt"
    lines = []
    for i, s in enumerate(samples.samples):
        lines.append(f"{'train' if i % 2 == 0 else 'test'} {s.group}")
    path.write_text("\n".join(lines) + "\n")
    train, test = ds.standard_split(samples, path)
    assert [s.group for s in train.samples] == [s.group for i, s in enumerate(samples.samples)
                                                if i % 2 == 0]
    assert len(test) == len(samples) // 2


def test_split_determinism():
    samples = make_samples(6, 4)
    a = ds.standard_split(samples, 0.75, seed=11)
    b = ds.standard_split(samples, 0.75, seed=11)
    assert [s.group for s in a[0].samples] == [s.group for s in b[0].samples]


def test_bad_ratio_rejected():
    with pytest.raises(ds.DataError):
        ds.standard_split(make_samples(2, 2), 1.5, seed=0)


# ---------------------------------------------------------------------------
# synthetic world
# ---------------------------------------------------------------------------


def test_synthetic_clean_features_are_orthogonal_identities():
    plan, table = ds.generate_synthetic(
        ds.SynthConfig(width=3, height=3, rho=0.0, noise=0.0, samples_per_location=1))
    samples = ds.group_samples(table)
    for s in samples:
        for v in range(4):
            vec = s.views[v]
            assert vec[s.location] == pytest.approx(1.0)
            assert np.count_nonzero(vec) == 1
    # distinct locations -> orthogonal features
    for a in samples:
        for b in samples:
            if a.location != b.location:
                assert float(a.views[0] @ b.views[0]) == 0.0


def test_synthetic_high_overlap_parallel_views_similar():
    cfg = ds.SynthConfig(width=4, height=3, rho=0.99, noise=0.0, samples_per_location=1)
    plan, table = ds.generate_synthetic(cfg)
    samples = {s.location: s for s in ds.group_samples(table)}
    # locations 0 and 1 sit on the same row; their right-views share a corridor vector
    a, b = samples[0].views[2], samples[1].views[2]
    cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos > 0.9


def test_synthetic_grid_combinatorics():
    w, h = 5, 7
    plan, table = ds.generate_synthetic(ds.SynthConfig(width=w, height=h, samples_per_location=2))
    assert plan.k == w * h
    assert len(plan.edges) == 2 * w * h - w - h
    assert table.n_records == w * h * 2 * 4


def test_synthetic_spacing_is_one_meter():
    plan, _ = ds.generate_synthetic(ds.SynthConfig(width=3, height=2, samples_per_location=1))
    for a, b in plan.edges:
        assert np.linalg.norm(plan.coords[a] - plan.coords[b]) == pytest.approx(1.0)


def test_synthetic_bit_reproducible():
    cfg = ds.SynthConfig(width=3, height=4, rho=0.3, noise=0.2, samples_per_location=2, seed=9)
    _, t1 = ds.generate_synthetic(cfg)
    _, t2 = ds.generate_synthetic(cfg)
    assert np.array_equal(t1.features, t2.features)
    assert np.array_equal(t1.groups, t2.groups)


def test_synthetic_dim_too_small_rejected():
    with pytest.raises(ds.DataError, match="too small"):
        ds.generate_synthetic(ds.SynthConfig(width=3, height=3, dim=5))


def test_synthetic_invalid_config_values():
    with pytest.raises(ds.DataError):
        ds.SynthConfig(width=1, height=5)
    with pytest.raises(ds.DataError):
        ds.SynthConfig(rho=1.0)
    with pytest.raises(ds.DataError):
        ds.SynthConfig(noise=-0.1)


def test_alternating_split_on_grid_is_checkerboard():
    plan, _ = ds.generate_synthetic(ds.SynthConfig(width=4, height=4, samples_per_location=1))
    split = alternating_split(plan)
    for a, b in plan.edges:
        assert (a in split.seen) != (b in split.seen)
