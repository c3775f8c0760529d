import numpy as np
import pytest
from hypothesis import given, strategies as st

from echodistill.errors import (
    ConfigError,
    DimensionError,
    DomainError,
    DuplicateIdError,
    ManifestError,
    OrderingError,
)
from echodistill.feature_store import (
    CLASS_NAMES,
    DEFAULT_BOUNDS,
    DatasetManifest,
    derive_frame_indices,
    ef_to_class,
    format_bounds,
    load_csv_manifest,
    load_manifest,
    make_record,
    parse_bounds,
    save_csv_manifest,
    save_manifest,
)


@pytest.mark.parametrize(
    "ef, label",
    [(0.0, 0), (29.999, 0), (30.0, 1), (39.5, 1), (40.0, 2), (49.99, 2), (50.0, 3), (70.0, 3), (70.0001, 4), (100.0, 4)],
)
def test_ef_to_class_boundaries(ef, label):
    assert ef_to_class(ef) == label


@pytest.mark.parametrize("ef", [-0.1, 100.5, float("nan"), float("inf")])
def test_ef_outside_domain(ef):
    with pytest.raises(DomainError):
        ef_to_class(ef)


@given(st.floats(min_value=0.0, max_value=100.0))
def test_classes_partition_the_domain(ef):
    assert sum(ef in iv for iv in DEFAULT_BOUNDS) == 1


def test_bounds_text_round_trip():
    text = format_bounds(DEFAULT_BOUNDS)
    assert text == "[0,30),[30,40),[40,50),[50,70],(70,100]"
    assert parse_bounds(text) == DEFAULT_BOUNDS
    assert len(CLASS_NAMES) == len(DEFAULT_BOUNDS)


@pytest.mark.parametrize("text", ["[0,30),[35,100]", "[0,50],[50,100]", "[0,30)", "[10,100]", "(0,100]", "nonsense"])
def test_bad_bounds_rejected(text):
    with pytest.raises(ConfigError):
        parse_bounds(text)


def test_custom_bounds_move_labels():
    bounds = parse_bounds("[0,50),[50,100]")
    assert ef_to_class(49.9, bounds) == 0
    assert ef_to_class(50.0, bounds) == 1


@pytest.mark.parametrize(
    "i0, i2, expected",
    [(10, 40, (10, 25, 40, 48, 55)), (0, 1, (0, 0, 1, 1, 1)), (0, 3, (0, 2, 3, 4, 5)), (5, 9, (5, 7, 9, 10, 11))],
)
def test_frame_indices_hand_cases(i0, i2, expected):
    f = derive_frame_indices(i0, i2)
    assert (f.i0, f.i1, f.i2, f.i3, f.i4) == expected


def test_degenerate_frames_flagged():
    assert derive_frame_indices(0, 1).degenerate
    assert not derive_frame_indices(10, 40).degenerate


@pytest.mark.parametrize("i0, i2", [(5, 5), (9, 3), (-1, 4)])
def test_frame_ordering_errors(i0, i2):
    with pytest.raises(OrderingError):
        derive_frame_indices(i0, i2)


@given(st.integers(0, 10_000), st.integers(1, 2_000), st.integers(0, 10_000))
def test_frame_translation_equivariance(i0, span, k):
    a = derive_frame_indices(i0, i0 + span)
    b = derive_frame_indices(i0 + k, i0 + span + k)
    assert (b.i1 - k, b.i3 - k, b.i4 - k) == (a.i1, a.i3, a.i4)


def _manifest(n=12, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    recs = [make_record(f"v{i}", float(rng.uniform(0, 100)), rng.standard_normal(dim)) for i in range(n)]
    return DatasetManifest(tuple(recs), dim)


def test_binary_round_trip_keeps_order_and_bits(tmp_path):
    m = _manifest()
    back = load_manifest(save_manifest(m, tmp_path / "m.txt"))
    assert back.records == m.records
    assert back.dim == m.dim
    assert all(r.source is not None for r in back.records)


def test_csv_round_trip(tmp_path):
    m = _manifest(dim=3)
    path = save_csv_manifest(m, tmp_path / "m.csv")
    assert load_csv_manifest(path).records == m.records
    # auto-detection falls back to CSV
    assert load_manifest(path).records == m.records


def test_linked_sub_manifest_reads_original_bytes(tmp_path):
    m = load_manifest(save_manifest(_manifest(), tmp_path / "src" / "m.txt"))
    sub = m.subset(["v3", "v1"])
    path = save_manifest(sub, tmp_path / "out" / "sub.txt", link_features=True)
    assert not (tmp_path / "out" / "sub.f32").exists()
    assert [r.video_id for r in load_manifest(path).records] == ["v3", "v1"]
    assert load_manifest(path).records == sub.records


def test_manifest_without_column_row(tmp_path):
    path = save_manifest(_manifest(), tmp_path / "m.txt")
    lines = path.read_text().splitlines()
    path.write_text("\n".join([lines[0]] + lines[2:]) + "\n")
    assert len(load_manifest(path)) == 12


def test_class_membership():
    m = _manifest(n=40)
    assert sum(m.class_counts()) == 40
    for c in range(m.class_count):
        assert all(r.class_label == c for r in m.class_members(c))


def test_validation_errors(tmp_path):
    rec = make_record("a", 55.0, np.zeros(4))
    with pytest.raises(DuplicateIdError):
        DatasetManifest((rec, rec), 4)
    with pytest.raises(DimensionError):
        DatasetManifest((rec,), 5)
    with pytest.raises(ManifestError, match="no records"):
        DatasetManifest((), 4)
    with pytest.raises(ManifestError):
        make_record("a", 55.0, np.zeros(4), split="holdout")


@pytest.mark.parametrize(
    "mutate, exc",
    [
        (lambda t: t.replace("dim=6", "dim=x"), ManifestError),
        (lambda t: t.replace("classes=5", "classes=4"), ConfigError),
        (lambda t: t.replace(",train,", ",holdout,", 1), ManifestError),
        (lambda t: t.replace("m.f32", "missing.f32", 1), ManifestError),
        (lambda t: t.replace("dim=6", "dim=7"), DimensionError),
    ],
)
def test_malformed_manifests(tmp_path, mutate, exc):
    path = save_manifest(_manifest(), tmp_path / "m.txt")
    path.write_text(mutate(path.read_text()))
    with pytest.raises(exc):
        load_manifest(path)


def test_out_of_range_ef_on_disk(tmp_path):
    path = save_csv_manifest(_manifest(dim=2), tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    parts = lines[1].split(",")
    parts[1] = "101"
    path.write_text("\n".join([lines[0], ",".join(parts)] + lines[2:]) + "\n")
    with pytest.raises(ManifestError, match="outside"):
        load_manifest(path)


def test_csv_ragged_row(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("video_id,ef,split,f0,f1\na,50,train,1,2\nb,60,train,1\n")
    with pytest.raises(DimensionError):
        load_csv_manifest(path)
