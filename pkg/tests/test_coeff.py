import logging

import numpy as np
import pytest

from coeff import (
    BasePermField,
    CoefficientModel,
    FieldFamily,
    blend,
    constant_field,
    derive_kappa_max,
    eval_coefficient,
    field_family,
    gen_channelized,
    gen_random_inclusions,
    load_field_matrix,
    save_field_matrix,
)
from errors import DomainError, InvalidConfigurationError
from grid import build_grids


def test_inclusions_without_fill_are_background():
    field = gen_random_inclusions(40, seed=3, kappa_max=100.0, fill_fraction=0.0)
    assert np.all(field.values == 1.0)


def test_inclusions_fill_and_levels():
    field = gen_random_inclusions(100, seed=7, kappa_max=9.0, fill_fraction=0.1)
    raised = field.values > 1.0
    assert abs(raised.mean() - 0.1) < 0.01
    assert field.values[raised].min() >= 4.5
    assert field.values.max() <= 9.0


def test_inclusions_deterministic():
    a = gen_random_inclusions(50, seed=11, kappa_max=1e3, fill_fraction=0.2)
    b = gen_random_inclusions(50, seed=11, kappa_max=1e3, fill_fraction=0.2)
    c = gen_random_inclusions(50, seed=12, kappa_max=1e3, fill_fraction=0.2)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("kappa_max,fill", [(1.0, 0.1), (10.0, 0.3), (10.0, -0.1)])
def test_inclusions_reject_bad_parameters(kappa_max, fill):
    with pytest.raises(DomainError):
        gen_random_inclusions(20, 0, kappa_max, fill)


def test_channelized_values():
    assert np.all(gen_channelized(50, 1.0).values == 1.0)
    field = gen_channelized(100, 500.0)
    assert field.values.max() == 500.0
    assert set(np.unique(field.values)) == {1.0, 500.0}


def test_horizontal_channel_crosses_coarse_elements():
    field = gen_channelized(100, 50.0, "horizontal")
    rows = np.flatnonzero(np.all(field.values == 50.0, axis=1))
    assert len(rows) == 4  # two channels, two cells wide
    # a full row crosses every one of the 10 coarse columns
    assert field.values[rows[0]].reshape(10, 10).min(axis=1).min() == 50.0


def test_channel_sets_differ():
    horizontal = gen_channelized(40, 10.0, "horizontal").values
    bent = gen_channelized(40, 10.0, "bent").values
    both = gen_channelized(40, 10.0, "all").values
    assert np.array_equal(both, np.maximum(horizontal, bent))
    assert not np.array_equal(horizontal, bent)
    with pytest.raises(InvalidConfigurationError):
        gen_channelized(40, 10.0, "diagonal")


def test_blend_endpoints_and_interior():
    k1 = gen_channelized(20, 10.0, "horizontal")
    k2 = gen_channelized(20, 10.0, "bent")
    assert np.array_equal(blend(k1, k2, 1.0).values, k1.values)
    assert np.array_equal(blend(k1, k2, 0.0).values, k2.values)
    assert np.allclose(blend(k1, k2, 0.2).values, 0.2 * k1.values + 0.8 * k2.values)
    same = blend(k1, k1, 0.3)
    assert np.array_equal(same.values, k1.values)


def test_blend_rejects_bad_input():
    k1 = constant_field(10, 2.0)
    with pytest.raises(DomainError):
        blend(k1, constant_field(12, 2.0), 0.5)
    with pytest.raises(DomainError):
        blend(k1, k1, 1.5)


def test_family_selects_online_blend():
    family = field_family("channelized", 20, 10.0, mu_p=0.2)
    assert family.parameterized
    expected = 0.2 * family.k1.values + 0.8 * family.k2.values
    assert np.allclose(family.base.values, expected)
    assert np.array_equal(family.at(1.0).values, family.k1.values)

    single = FieldFamily.single(constant_field(10, 3.0))
    assert not single.parameterized
    assert single.at(0.5) is single.k1


def test_coefficient_values():
    field = constant_field(4, 1.0)
    model = CoefficientModel(field)
    assert np.all(model.evaluate(0.0) == 1.0)
    assert np.allclose(model.evaluate(np.log(2.0)), 2.0, rtol=1e-15)


def test_coefficient_matches_exp(rng):
    values = rng.uniform(0.0, 50.0, (6, 6))
    model = CoefficientModel(BasePermField(values))
    u = rng.uniform(-1.0, 1.0, 36)
    assert np.allclose(eval_coefficient(model, u), np.exp(values.ravel() * u), rtol=1e-14)


def test_coefficient_rejects_nonfinite():
    model = CoefficientModel(constant_field(3, 1.0))
    with pytest.raises(DomainError):
        model.evaluate(np.full(9, np.nan))


def test_coefficient_cap_warns(caplog):
    model = CoefficientModel(constant_field(3, 1000.0))
    with caplog.at_level(logging.WARNING, logger="coeff"):
        values = model.evaluate(1.0)
    assert np.all(np.isfinite(values))
    assert np.allclose(values, np.exp(700.0))
    assert "capped" in caplog.text


def test_derive_kappa_max_matches_contrast():
    fine, _ = build_grids(20, 2)
    kappa_max = derive_kappa_max(fine, 1e4, 1.0)
    # u_max of -laplace(u) = 1 on the unit square is about 0.0737
    assert 110.0 < kappa_max < 140.0


def test_field_matrix_file(tmp_path):
    field = gen_random_inclusions(20, seed=1, kappa_max=50.0, fill_fraction=0.1)
    path = save_field_matrix(field, tmp_path / "out" / "field.txt")
    lines = path.read_text().splitlines()
    assert len(lines) == 20 and len(lines[0].split()) == 20
    assert np.array_equal(load_field_matrix(path).values, field.values)
