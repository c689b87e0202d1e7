"""Shared fixtures: published reference values and the fitted field model."""

import numpy as np
import pytest

import twincal as tc

# published photoelectron moments of the reference measurement
REF_MEAN_S = 2.411
REF_MEAN_I = 2.353
REF_VAR_S = 2.489
REF_VAR_I = 2.449
REF_COV = 0.597

# fitted detection efficiencies and field parameters of that measurement
REF_ETA_S = 0.243
REF_ETA_I = 0.235
REF_FIELD = {"b_p": 0.058, "M_p": 170.0, "b_s": 33.2, "M_s": 0.0007,
             "b_i": 10.6, "M_i": 0.0101}


@pytest.fixture(scope="session")
def ref_moments():
    return tc.PhotoelectronMoments.from_variances(
        REF_MEAN_S, REF_MEAN_I, REF_VAR_S, REF_VAR_I, REF_COV,
        stderr_mean_s=0.002, stderr_mean_i=0.004,
        stderr_second_s=0.003, stderr_second_i=0.005, stderr_cross=0.003,
    )


@pytest.fixture(scope="session")
def ref_model():
    return tc.TwinBeamModel.from_params_dict(REF_FIELD)


@pytest.fixture(scope="session")
def ref_detectors():
    return (tc.DetectorParams(8192, REF_ETA_S, 2.4e-5),
            tc.DetectorParams(8192, REF_ETA_I, 3.0e-5))


@pytest.fixture(scope="session")
def small_experiment():
    """Cheap simulated experiment reused by fast pipeline tests."""
    model = tc.TwinBeamModel(
        pair=tc.FieldComponentParams(20.0, 0.1),
        noise_s=tc.FieldComponentParams(0.01, 5.0),
        noise_i=tc.FieldComponentParams(0.02, 3.0),
    )
    detectors = (tc.DetectorParams(4096, 0.3, 1e-5), tc.DetectorParams(4096, 0.28, 2e-5))
    config = tc.SimulationConfig(model=model, detectors=detectors, shots=20000, seed=99)
    hist, dark, truth = tc.simulate_experiment(config)
    return config, hist, dark, truth


def pad_to_common(a: np.ndarray, b: np.ndarray):
    rows = max(a.shape[0], b.shape[0])
    cols = max(a.shape[1], b.shape[1])
    pa = np.zeros((rows, cols))
    pa[:a.shape[0], :a.shape[1]] = a
    pb = np.zeros((rows, cols))
    pb[:b.shape[0], :b.shape[1]] = b
    return pa, pb
