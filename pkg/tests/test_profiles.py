import numpy as np
import pytest

from gridstate.errors import ProfileError
from gridstate.profiles import (CLIP_FLOOR, LoadProfile, import_profile,
                                lag_autocorrelation, save_profile,
                                synth_profile)


def test_synthetic_profile_shape_and_bounds():
    prof = synth_profile(8760, seed=42)
    assert prof.hours == 8760
    assert prof.values.max() == 1.0
    assert prof.values.min() >= CLIP_FLOOR / prof.values.max() - 1e-12
    assert np.all(prof.values > 0)
    assert prof.provenance == {"kind": "synthetic", "hours": 8760,
                               "seed": 42, "noise_amp": 0.05}


def test_synthetic_profile_has_a_daily_cycle():
    prof = synth_profile(8760, seed=42)
    assert lag_autocorrelation(prof.values, 24) > 0.5


def test_synthetic_profile_is_seed_deterministic():
    a = synth_profile(200, seed=9)
    b = synth_profile(200, seed=9)
    c = synth_profile(200, seed=10)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_synthetic_profile_validation():
    with pytest.raises(ProfileError, match="at least 48"):
        synth_profile(47, seed=0)
    with pytest.raises(ProfileError, match="nonnegative"):
        synth_profile(100, seed=0, noise_amp=-0.1)


def test_save_import_round_trip(tmp_path):
    prof = synth_profile(96, seed=5)
    path = tmp_path / "profile.txt"
    save_profile(prof, path)
    again = import_profile(path)
    assert np.array_equal(prof.values, again.values)
    assert again.provenance["kind"] == "imported"
    assert len(again.provenance["sha256"]) == 64


def test_import_normalizes_to_peak(tmp_path):
    path = tmp_path / "raw.txt"
    path.write_text("100\n50\n\n25\n")
    prof = import_profile(path)
    assert np.array_equal(prof.values, np.array([1.0, 0.5, 0.25]))


def test_import_reports_bad_line_location(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1.0\n0.9\noops\n")
    with pytest.raises(ProfileError, match=r"bad\.txt:3: not a number"):
        import_profile(path)


def test_import_rejects_nonpositive_entries(tmp_path):
    path = tmp_path / "neg.txt"
    path.write_text("1.0\n-0.5\n")
    with pytest.raises(ProfileError, match=r"neg\.txt:2: entries must be positive"):
        import_profile(path)


def test_import_rejects_empty_files(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("\n\n")
    with pytest.raises(ProfileError, match="no values"):
        import_profile(path)


def test_profile_invariants_are_enforced():
    with pytest.raises(ProfileError, match="peak-normalized"):
        LoadProfile(np.array([0.5, 0.7]), {})
    with pytest.raises(ProfileError, match="finite and nonnegative"):
        LoadProfile(np.array([1.0, np.nan]), {})
    with pytest.raises(ProfileError, match="nonempty"):
        LoadProfile(np.array([]), {})
