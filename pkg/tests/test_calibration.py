import dataclasses
import math

import numpy as np
import pytest

from nearfield_sim.calibration import COLUMNS, CalibrationDataset, fit_coefficients, generate_dataset
from nearfield_sim.config import ImperfectionParams
from nearfield_sim.errors import CalibrationError
from nearfield_sim.unfd import evaluate_at

from conftest import WAVELENGTH
from synthetic import TRUTH, plant, settings_grid

def test_round_trip_recovers_planted_coefficients(rng):
    data = plant(settings_grid(rng), TRUTH)
    fit = fit_coefficients(data, list(TRUTH)).coefficients
    for name, value in TRUTH.items():
        tol = 0.05 if name in ("mu", "nu") else 0.01
        assert getattr(fit, name) == pytest.approx(value, rel=tol), name


def test_additive_axial_terms(rng):
    cols = settings_grid(rng)
    k0 = 2 * math.pi / WAVELENGTH
    y = 1 + 0.7 * (cols["delta_C"] * cols["r"]) ** 2 + 2.5 * (cols["delta_a4"] * cols["r"] ** 3 / k0) ** 2
    cols.update(fwhm_lat=cols["ideal_lat"], fwhm_ax=y * cols["ideal_ax"])
    fit = fit_coefficients(CalibrationDataset(cols), ["xi_ax2", "xi_ax4"]).coefficients
    assert fit.xi_ax2 == pytest.approx(0.7, rel=1e-8)
    assert fit.xi_ax4 == pytest.approx(2.5, rel=1e-8)


def test_baseline_constants(rng):
    cols = settings_grid(rng)
    cols.update(fwhm_lat=cols["ideal_lat"], fwhm_ax=cols["ideal_ax"])
    fit = fit_coefficients(CalibrationDataset(cols), ["c_lat", "c_ax"]).coefficients
    assert fit.c_lat == pytest.approx(1.03, rel=1e-12)
    assert fit.c_ax == pytest.approx(7.0, rel=1e-12)


def test_all_ideal_data_gives_zero_inflation(rng):
    cols = settings_grid(rng)
    cols.update(fwhm_lat=cols["ideal_lat"], fwhm_ax=cols["ideal_ax"] * (cols["R_eq"] / cols["r"]) ** 2)
    names = ["xi_lat", "gamma_loss", "gamma_quant", "gamma_gap", "beta", "xi_ali", "chi_lat"]
    fit = fit_coefficients(CalibrationDataset(cols), names)
    for name in names:
        assert getattr(fit.coefficients, name) == pytest.approx(0.0, abs=1e-9), name


def test_zero_wrms_is_unidentifiable(rng):
    cols = settings_grid(rng)
    cols["wrms"] = np.zeros(len(cols["r"]))
    data = plant(cols, TRUTH)
    with pytest.raises(CalibrationError, match="xi_lat"):
        fit_coefficients(data, ["xi_lat"])


def test_fit_input_errors(rng):
    data = plant(settings_grid(rng, n=5), TRUTH)
    with pytest.raises(CalibrationError, match="unknown"):
        fit_coefficients(data, ["alpha"])
    with pytest.raises(CalibrationError, match="rows"):
        fit_coefficients(data, ["xi_lat", "beta", "mu"])


def test_fitted_model_monotone_in_misalignment(rng):
    fit = fit_coefficients(plant(settings_grid(rng), TRUTH), list(TRUTH)).coefficients
    rel = np.linspace(0, 1.5, 40)
    lat = 1 / (1 - fit.chi_lat * 3 * rel ** fit.mu)
    ax = 1 + fit.xi_ali * 3 * rel ** fit.nu
    assert np.all(np.diff(lat) >= 0) and np.all(np.diff(ax) >= 0)


def test_dataset_csv_round_trip(tmp_path, rng):
    data = plant(settings_grid(rng, n=12), TRUTH)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    text = path.read_text().splitlines()
    path.write_text("# tag line\n" + "\n".join(text) + "\n")
    back = CalibrationDataset.from_csv(path)
    for c in COLUMNS:
        assert np.array_equal(back[c], data[c])


def test_dataset_validation():
    cols = {c: [1.0] for c in COLUMNS}
    cols["weight_lat"] = [0.0]
    with pytest.raises(CalibrationError):
        CalibrationDataset(cols)
    with pytest.raises(CalibrationError):
        CalibrationDataset({c: [1.0] for c in COLUMNS[:-1]})


def test_generate_dataset_cardinality_and_fields(small_config):
    grid = {"layer_counts": [1, 2], "r_fracs": [0.05, 0.06, 0.07],
            "imperfections": [{"misalignment": 0.001}]}
    data = generate_dataset(small_config, grid)
    assert len(data) == 6
    cfg = dataclasses.replace(small_config, imperfections=ImperfectionParams(misalignment=0.001))
    rep = evaluate_at(cfg, 2, data["r"][4])
    assert data["L"][4] == 2
    assert data["fwhm_lat"][4] == rep.fwhm_lat or (math.isnan(rep.fwhm_lat) and math.isnan(data["fwhm_lat"][4]))
    assert data["wrms"][4] == rep.wrms and data["delta_C"][4] == rep.delta_C
    assert data["weight_ax"][4] == 1 / rep.dl_ax


def test_generate_dataset_empty_grid(small_config):
    with pytest.raises(CalibrationError, match="empty"):
        generate_dataset(small_config, {"layer_counts": [], "r_fracs": [0.1]})
