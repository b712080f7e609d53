import warnings

import numpy as np
import pytest

from scaleinv.casestudy import (
    OUTPUT,
    RegimeWarning,
    TakedaModel,
    TakedaParams,
    TakedaReduction,
    fast_output_ratio,
    overlap,
    reduction_fidelity,
    takeda_reduction,
    takeda_steps,
)
from scaleinv.integrate import find_steady_state, integrate


def test_negative_parameters_rejected():
    with pytest.raises(ValueError, match="k_RAS"):
        TakedaParams(k_RAS=-1.0)
    with pytest.raises(ValueError):
        TakedaModel().with_params(r1=-0.1)


def test_decays_without_input_or_basal_activity():
    fld = TakedaModel().with_params(r1=0.0, r2=0.0).field()
    x0 = np.array([0.05, 0.4, 0.2, 0.3, 0.5, 0.5])
    traj = integrate(fld, x0, 0.0, 300.0, samples=3)
    np.testing.assert_allclose(traj.states[-1, :4], 0.0, atol=1e-6)
    assert np.all(traj.states[:, :4] >= -1e-12)


def test_regime_warning():
    with pytest.warns(RegimeWarning):
        takeda_reduction(v_range=(0.5, 4.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        red = takeda_reduction(v_range=(2.0, 4.0))
    assert red.regime_ok(2.0) and not red.regime_ok(1.0)


def test_core_steady_state_closed_form():
    p = TakedaParams()
    fld = TakedaReduction(p).field()
    for u in (0.001, 0.004):
        x = find_steady_state(fld, u, np.zeros(3)).state
        gef, gap = p.k_GEF * u / p.km_GEF, p.k_GAP * u / p.km_GAP
        ras = p.k_RAS * gef * p.RAS_tot / (p.k_RAS * gef + p.km_RAS * gap)
        np.testing.assert_allclose(x, [gef, gap, ras], rtol=1e-8)


def test_core_output_is_scale_free():
    fld = TakedaReduction().field()
    a = find_steady_state(fld, 0.001, np.zeros(3)).state
    b = find_steady_state(fld, 0.003, np.zeros(3)).state
    np.testing.assert_allclose(b[:2], 3 * a[:2], rtol=1e-8)
    assert b[2] == pytest.approx(a[2], rel=1e-8)


def test_linear_receptor_field_is_homogeneous():
    fld = TakedaReduction().linear_receptor_field()
    x = np.array([0.01, 0.02, 0.003, 0.004, 0.2])
    scaled = fld(np.r_[2 * x[:4], x[4]], 2.0)
    np.testing.assert_allclose(scaled[:4], 2 * fld(x, 1.0)[:4], rtol=1e-12)


def test_fast_output_ratio_by_hand():
    p = TakedaParams()
    red = TakedaReduction(p)
    u = float(red.u_of_v(2.0))
    gef, gap = p.k_GEF * u / p.km_GEF, p.k_GAP * u / p.km_GAP
    expected = (p.k_RAS * gef + p.km_RAS * gap) / max(p.km_GEF, p.km_GAP)
    assert fast_output_ratio(red, 2.0) == pytest.approx(expected, rel=1e-6)


def test_steps_start_adapted():
    model = TakedaModel()
    fld = model.field()
    trajs = takeda_steps(model, samples=200)
    assert len(trajs) == 2
    for traj, v0 in zip(trajs, (1.0, 2.0)):
        assert np.max(np.abs(fld(traj.states[0], v0))) < 1e-9
        assert traj.output_index == OUTPUT


def test_overlap_of_identical_responses():
    traj = takeda_steps(samples=200)[0]
    assert overlap(traj, traj) == 0.0


def test_reduction_fidelity_in_regime():
    assert reduction_fidelity(v0=2.0, v1=4.0) < 0.05
