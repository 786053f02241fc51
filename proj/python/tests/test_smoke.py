import json

import numpy as np
import pytest

import reduction_lab as rl

SMALL = {
    "hamiltonian": {"eigenvalues": [0, 1, 2]},
    "rho0": {"re": [[0.25, 0.1, 0.1], [0.1, 0.25, 0.05], [0.1, 0.05, 0.5]]},
    "grid": {"t_max": 0.5, "dt": 0.001},
    "seed": 5,
}


def test_defaults_are_filled():
    cfg = rl.normalize_config({"hamiltonian": {"eigenvalues": [0, 1]}, "rho0": {"re": [[1, 0], [0, 0]]}})
    assert cfg["sigma"] == 1.0
    assert cfg["hbar"] == 1.0
    assert cfg["grid"]["dt"] == 0.001


def test_errors_carry_their_kind():
    bad = {"hamiltonian": {"re": [[0, 1], [0.5, 1]]}, "rho0": {"re": [[1, 0], [0, 0]]}}
    with pytest.raises(rl.LabError) as info:
        rl.normalize_config(bad)
    assert info.value.kind == "NotHermitian"
    assert info.value.measured == pytest.approx(0.5)
    with pytest.raises(rl.LabError) as info:
        rl.normalize_config('{"rho0": ')
    assert info.value.kind == "ParseError"


def test_simulate_both_modes_share_the_noise():
    out = rl.simulate(SMALL, mode="both")
    assert set(out) == {"closed-form", "sde"}
    cf, sde = out["closed-form"], out["sde"]
    assert cf["t"].shape == (501,)
    assert cf["pi"].shape == (501, 3)
    np.testing.assert_allclose(cf["pi"].sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(cf["W"], sde["W"], atol=1e-12)
    assert np.max(np.abs(cf["final_state"] - sde["final_state"])) < 2e-2
    again = rl.simulate(json.dumps(SMALL), mode="both")
    np.testing.assert_array_equal(cf["H"], again["closed-form"]["H"])


def test_closed_form_state_at_time_zero_is_rho0():
    rho0 = np.array([[0.5, 0.25], [0.25, 0.5]], dtype=complex)
    np.testing.assert_allclose(rl.closed_form_state([0.0, 1.0], rho0, 1.0, 1.0, 0.0, 0.0), rho0, atol=1e-15)
    late = rl.closed_form_state([0.0, 1.0], rho0, 1.0, 1.0, 400.0, 400.0)
    assert abs(late[1, 1] - 1.0) < 1e-12


def test_ensemble_summary():
    summary = rl.ensemble(SMALL, paths=200, checks=["martingales"])
    assert summary["n_paths"] == 200
    assert [v["check"] for v in summary["verdicts"]] == ["martingales"]
    assert summary["initial_energy"] == pytest.approx(1.25)


def test_reference_configs_parse():
    for name in "ABC":
        assert rl.normalize_config(rl.reference_config(name))["hamiltonian"]


def test_verify_single_criterion():
    (result,) = rl.verify([8])
    assert result["id"] == 8
    assert result["passed"]
