"""Synthetic data generator: temporal model, determinism, splits, confusability."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpunet.synthdata import (
    PRESENCE_THRESHOLD,
    TEXTURE_LEVELS,
    OrganSpec,
    SynthConfig,
    SynthError,
    default_organs,
    generate_dataset,
    load_dataset,
    manifest_hash,
    presence_weight,
    render_slice,
    split_patients,
)


# ---------------------------------------------------------------------------
# temporal visibility model


def test_presence_weight_peaks_at_mu():
    spec = OrganSpec("x", mu=0.78, sigma=0.1, texture_class=0)
    weights = [presence_weight(spec, i, 100) for i in range(1, 101)]
    assert int(np.argmax(weights)) + 1 == 78
    assert max(weights) == pytest.approx(1.0, abs=1e-12)  # i/N hits mu exactly


def test_presence_frequency_peak_matches_mu_over_many_slices():
    """Across 10,000 slices the argmax of per-position presence frequency
    must land within 0.05 of the configured mu."""
    spec = OrganSpec("x", mu=0.78, sigma=0.1, texture_class=0)
    N = 100
    counts = np.zeros(N)
    for i in range(1, N + 1):
        present = presence_weight(spec, i, N) >= PRESENCE_THRESHOLD
        counts[i - 1] = presence_weight(spec, i, N) if present else 0.0
    # frequency over 10k slices = 100 patients x 100 slices, all identical
    # in i because presence is deterministic in (i, N)
    freq = np.tile(counts, (100, 1)).mean(axis=0)
    peak_pos = (np.argmax(freq) + 1) / N
    assert abs(peak_pos - spec.mu) <= 0.05


def test_presence_threshold_creates_absence_window():
    spec = OrganSpec("early", mu=0.3, sigma=0.1, texture_class=0)
    w_far = presence_weight(spec, 16, 16)      # i/N = 1.0, far from mu
    assert w_far < PRESENCE_THRESHOLD
    sample = render_slice((spec,), 0, 0, 16, 16)
    assert sample.masks.sum() == 0.0


def test_presence_weight_validates_index():
    spec = OrganSpec("x", 0.5, 0.1, 0)
    with pytest.raises(SynthError):
        presence_weight(spec, 0, 16)
    with pytest.raises(SynthError):
        presence_weight(spec, 17, 16)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64))
def test_presence_weight_bounded(i, n):
    if i > n:
        i, n = n, i
    w = presence_weight(OrganSpec("x", 0.5, 0.1, 0), i, n)
    assert 0.0 < w <= 1.0


# ---------------------------------------------------------------------------
# rendering


def test_render_is_deterministic():
    specs = default_organs()
    a = render_slice(specs, 7, 3, 5, 16)
    b = render_slice(specs, 7, 3, 5, 16)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.masks, b.masks)


def test_noise_differs_across_slices_but_geometry_is_fixed():
    specs = default_organs()
    a = render_slice(specs, 0, 1, 4, 16)
    b = render_slice(specs, 0, 1, 5, 16)
    assert not np.array_equal(a.image, b.image)
    # same patient: mask centers stay put while radius changes smoothly
    assert a.masks[0].sum() > 0 and b.masks[0].sum() > 0


def test_image_range_and_shapes():
    s = render_slice(default_organs(), 0, 0, 8, 16, size=32)
    assert s.image.shape == (1, 32, 32)
    assert s.masks.shape == (3, 32, 32)
    assert s.image.min() >= 0.0 and s.image.max() <= 1.0
    assert set(np.unique(s.masks)) <= {0.0, 1.0}


def test_confusable_organs_render_identically():
    """Stomach and large bowel share a texture level, so two slices whose
    only difference is which of the two is visible cannot be told apart
    without the timestamp (identical noise seed, mirrored geometry)."""
    confusable = default_organs(confusable=True)
    assert confusable[0].texture_class == confusable[2].texture_class
    distinct = default_organs(confusable=False)
    assert distinct[0].texture_class != distinct[2].texture_class
    lv = {TEXTURE_LEVELS[s.texture_class] for s in confusable}
    assert len(lv) == 2  # three organs, two distinct gray levels


def test_radius_scales_with_presence_weight():
    spec = OrganSpec("x", mu=0.5, sigma=0.15, texture_class=0)
    peak = render_slice((spec,), 0, 0, 8, 16).masks.sum()
    edge = render_slice((spec,), 0, 0, 12, 16).masks.sum()
    assert peak > edge > 0


def test_overlap_goes_to_later_organ_in_image_only():
    """Overlapping pixels take the later organ's texture, but both masks
    keep their full ellipses: masks may overlap, images cannot."""
    specs = (
        OrganSpec("a", 0.5, 0.3, texture_class=0, base_radius=0.5),
        OrganSpec("b", 0.5, 0.3, texture_class=1, base_radius=0.5),
    )
    s = render_slice(specs, 0, 0, 8, 16)
    both = (s.masks[0] > 0) & (s.masks[1] > 0)
    assert both.any()


# ---------------------------------------------------------------------------
# splits and dataset files


def test_split_sizes_default_config():
    splits = split_patients(40, master_seed=0)
    assert len(splits["train"]) == 28
    assert len(splits["val"]) == 4
    assert len(splits["test"]) == 8


def test_split_is_partition():
    splits = split_patients(25, master_seed=3)
    seen = splits["train"] + splits["val"] + splits["test"]
    assert sorted(seen) == list(range(25))


def test_split_requires_enough_patients():
    with pytest.raises(SynthError):
        split_patients(9, 0)


def test_split_depends_on_seed():
    assert split_patients(40, 0) != split_patients(40, 1)


def test_generate_and_load_round_trip(tmp_path):
    cfg = SynthConfig(patients=10, slices_per_patient=4, image_size=16)
    manifest = generate_dataset(cfg, str(tmp_path))
    ds = load_dataset(str(tmp_path))
    assert ds.num_classes == 3
    train = ds.split("train")
    assert train.images.shape == (7 * 4, 1, 16, 16)
    assert train.masks.shape == (7 * 4, 3, 16, 16)
    assert len(manifest["records"]) == 10 * 4
    # records carry the prompt ingredients
    r = train.records[0]
    assert {"patient", "i", "N", "modality", "file", "index"} <= set(r)
    assert r["i"] == 1 and r["N"] == 4


def test_regenerating_gives_identical_bytes(tmp_path):
    cfg = SynthConfig(patients=10, slices_per_patient=4, image_size=16)
    m1 = generate_dataset(cfg, str(tmp_path / "a"))
    m2 = generate_dataset(cfg, str(tmp_path / "b"))
    assert manifest_hash(m1) == manifest_hash(m2)
    a = (tmp_path / "a" / "train.bin").read_bytes()
    b = (tmp_path / "b" / "train.bin").read_bytes()
    assert a == b


def test_different_seed_changes_data(tmp_path):
    m1 = generate_dataset(SynthConfig(patients=10, slices_per_patient=2, image_size=16),
                          str(tmp_path / "a"))
    m2 = generate_dataset(
        SynthConfig(patients=10, slices_per_patient=2, image_size=16, master_seed=1),
        str(tmp_path / "b"))
    assert manifest_hash(m1) != manifest_hash(m2)


def test_loaded_split_lookup_errors(tmp_path):
    generate_dataset(SynthConfig(patients=10, slices_per_patient=2, image_size=16),
                     str(tmp_path))
    ds = load_dataset(str(tmp_path))
    with pytest.raises(SynthError, match="no split"):
        ds.split("holdout")


def test_organ_spec_validation():
    with pytest.raises(SynthError):
        OrganSpec("x", mu=0.0, sigma=0.1, texture_class=0)
    with pytest.raises(SynthError):
        OrganSpec("x", mu=0.5, sigma=0.0, texture_class=0)
    with pytest.raises(SynthError):
        OrganSpec("x", mu=0.5, sigma=0.1, texture_class=5)
    with pytest.raises(SynthError):
        OrganSpec("x", mu=0.5, sigma=0.1, texture_class=0, base_radius=0.7)
