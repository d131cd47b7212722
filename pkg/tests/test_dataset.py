import numpy as np
import pytest

from gridstate.dataset import (Dataset, NoiseSpec, generate_dataset,
                               load_dataset, save_dataset)
from gridstate.errors import DatasetError
from gridstate.measurement import default_plan
from gridstate.profiles import LoadProfile, synth_profile


@pytest.fixture(scope="module")
def plan14(ieee14):
    return default_plan("minimal14", ieee14)


@pytest.fixture(scope="module")
def profile48():
    return synth_profile(48, seed=21)


@pytest.fixture(scope="module")
def small_dataset(ieee14, plan14, profile48):
    return generate_dataset(ieee14, plan14, profile48,
                            NoiseSpec("gaussian", snr_db=50.0), seed=77,
                            case_name="ieee14")


def test_every_hour_produces_a_row(small_dataset, profile48):
    ds = small_dataset
    assert ds.n_rows == profile48.hours
    assert np.array_equal(ds.timestamps, np.arange(48))
    assert ds.z_clean.shape == (48, 32)
    assert ds.x_true.shape == (48, 28)
    assert ds.manifest["rows"] == 48
    assert ds.manifest["skipped"] == []
    assert ds.manifest["noise"] == {"kind": "gaussian", "snr_db": 50.0,
                                    "max_pct": 0.03}
    assert ds.manifest["profile"]["kind"] == "synthetic"


def test_wls_labels_track_truth_at_50_db(small_dataset):
    err = np.abs(small_dataset.x_wls - small_dataset.x_true)
    assert np.max(err) < 2e-2
    assert np.mean(err) < 3e-3


def test_noiseless_labels_reproduce_truth(ieee14, plan14, profile48):
    ds = generate_dataset(ieee14, plan14, profile48, NoiseSpec("none"),
                          seed=0, case_name="ieee14")
    assert np.array_equal(ds.z_clean, ds.z_noisy)
    assert np.max(np.abs(ds.x_wls - ds.x_true)) < 1e-6


def test_parallel_generation_matches_serial(ieee14, plan14, profile48,
                                            small_dataset):
    parallel = generate_dataset(ieee14, plan14, profile48,
                                NoiseSpec("gaussian", snr_db=50.0), seed=77,
                                case_name="ieee14", workers=3)
    assert np.array_equal(parallel.z_noisy, small_dataset.z_noisy)
    assert np.array_equal(parallel.x_wls, small_dataset.x_wls)
    assert np.array_equal(parallel.timestamps, small_dataset.timestamps)


def test_save_load_round_trip_is_exact(small_dataset, tmp_path):
    save_dataset(small_dataset, tmp_path / "ds", run_hash="cafe01234567")
    again = load_dataset(tmp_path / "ds")
    assert np.array_equal(again.z_noisy, small_dataset.z_noisy)
    assert np.array_equal(again.z_clean, small_dataset.z_clean)
    assert np.array_equal(again.x_true, small_dataset.x_true)
    assert np.array_equal(again.x_wls, small_dataset.x_wls)
    assert again.manifest["run"] == "cafe01234567"
    first = (tmp_path / "ds" / "rows.csv").read_text().splitlines()[0]
    assert first == "# run cafe01234567"


def test_load_rejects_foreign_directories(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(DatasetError, match="does not contain a dataset"):
        load_dataset(tmp_path)


def test_infeasible_hours_abort_generation(ieee14, plan14):
    # a profile this steep drives half the hours past voltage collapse
    values = np.concatenate([np.full(24, 0.02), [1.0] * 24])
    profile = LoadProfile(values / values.max(),
                          {"kind": "synthetic", "hours": 48, "seed": 0,
                           "noise_amp": 0.0})
    heavy = _scaled_case(ieee14, 60.0)
    with pytest.raises(DatasetError, match="failed to converge"):
        generate_dataset(heavy, plan14, profile, NoiseSpec("none"), seed=0)


def _scaled_case(case, factor):
    from dataclasses import replace

    from gridstate.cases import make_case
    buses = [replace(b, p_load_mw=b.p_load_mw * factor,
                     q_load_mvar=b.q_load_mvar * factor)
             for b in case.buses]
    return make_case(case.base_mva, buses, list(case.branches))


def test_noise_spec_validation():
    with pytest.raises(ValueError, match="noise kind"):
        NoiseSpec("salt-and-pepper")
    spec = NoiseSpec("bounded", max_pct=0.05)
    values = np.full(8, 10.0)
    noisy = spec.apply(values, seed=3)
    assert np.all(np.abs(noisy - values) <= 0.05 * 10.0 + 1e-12)


def test_bounded_noise_path_in_generation(ieee14, plan14, profile48):
    ds = generate_dataset(ieee14, plan14, profile48,
                          NoiseSpec("bounded", max_pct=0.01), seed=5,
                          case_name="ieee14")
    rel = np.abs(ds.z_noisy - ds.z_clean) / np.maximum(np.abs(ds.z_clean), 1e-12)
    assert np.max(rel) <= 0.01 + 1e-9
