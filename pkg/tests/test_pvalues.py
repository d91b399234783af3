import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from artifact.bootstrap_engine import CountTable
from artifact.core_stats import std_normal_upper
from artifact.pvalues import (
    p_bp,
    p_et_si,
    p_sdbp,
    p_values_A,
    p_values_B,
    psi,
    report_from_derivatives,
    selective_from_z,
    taylor_pvalues,
)
from artifact.region_oracle import RegionSpec
from artifact.scaling_models import FitResult, ModelSpec, fit_mle, select_model

from conftest import lung_table

z = st.floats(-6, 6, allow_nan=False)


def fit_of(name, beta):
    return FitResult(ModelSpec.parse(name), np.asarray(beta, dtype=float), math.nan, math.nan, True, 13)


class TestPsi:
    @pytest.mark.parametrize("alpha,s2,expect", [
        (0.5, 4.0, 0.0),
        (std_normal_upper(1.0), 1.0, 1.0),
        (std_normal_upper(2.0), 4.0, 4.0),
    ])
    def test_examples(self, alpha, s2, expect):
        assert psi(alpha, s2) == pytest.approx(expect, abs=1e-12)

    def test_sentinels(self):
        assert psi(0.0, 1.0) == math.inf and psi(1.0, 1.0) == -math.inf


class TestBootstrapProbability:
    def test_half(self):
        assert p_bp(CountTable([0.5, 1.0], 10000, [4000, 5000])) == 0.5

    def test_lung_57_selective_side(self):
        assert p_bp(lung_table(57)) == pytest.approx(0.6807)
        assert p_bp(lung_table(57).complement()) == pytest.approx(1 - 0.6807)

    def test_zero_count(self):
        assert p_bp(CountTable([1.0], 100, [0])) == 0.0

    def test_requires_unit_scale(self):
        with pytest.raises(ValueError, match="interpolation"):
            p_bp(CountTable([0.5, 2.0], 100, [10, 20]))


class TestSelectiveFromZ:
    def test_origin(self):
        p_au, p_si, flags = selective_from_z(0.0, 0.0)
        assert p_au == 0.5 and p_si == 1.0

    def test_lung_57_values(self):
        # psi_{-1} = 1.583 and psi_0 = 1.008 for the H side, so z_S = -1.008
        p_au, p_si, flags = selective_from_z(1.583, -1.008)
        assert p_si == pytest.approx(0.2006, abs=5e-4)
        assert not flags

    def test_clamp(self):
        _, p_si, flags = selective_from_z(1.0, 0.5)
        assert p_si == 1.0 and flags == {"clamped_si"}

    def test_degenerate_tails(self):
        p_au, p_si, flags = selective_from_z(9.0, 1.0)
        assert p_si == 1.0 and {"degenerate_fit", "clamped_si"} <= flags

    @given(z, z)
    def test_range_and_order(self, zh, zs):
        p_au, p_si, flags = selective_from_z(zh, zs)
        assert 0 <= p_au <= 1 and 0 <= p_si <= 1
        if "clamped_si" not in flags:
            assert p_si >= p_au - 1e-15

    @given(z, z, st.floats(0.01, 2))
    def test_monotone_in_zh(self, zh, zs, dz):
        a1, s1, f1 = selective_from_z(zh, zs)
        a2, s2, f2 = selective_from_z(zh + dz, zs)
        assert a2 < a1 or a1 < 1e-300
        assume(not f1 and not f2)
        assert s2 <= s1


class TestProcedureA:
    def test_zero(self):
        rep = p_values_A(fit_of("poly.1", [0.0]), fit_of("poly.1", [0.0]))
        assert rep.p_au == 0.5 and rep.p_si == 1.0

    @pytest.mark.parametrize("t", [0.3, 1.0, 2.0])
    def test_flat_boundary_doubles(self, t):
        fit_H = fit_of("poly.2", [t, 0.0])
        rep = p_values_A(fit_H, fit_H.negated())
        assert rep.p_si == pytest.approx(2 * rep.p_au, rel=1e-12)
        assert rep.p_au == pytest.approx(std_normal_upper(t), rel=1e-12)

    def test_sing_rejected(self):
        f = fit_of("sing.3", [0.0, 1.0, 0.5])
        with pytest.raises(ValueError, match="p_values_B"):
            p_values_A(f, f.negated())


class TestProcedureB:
    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_poly2_matches_procedure_A(self, k):
        fit_H = fit_of("poly.2", [1.1, -0.4])
        a = p_values_A(fit_H, fit_H.negated())
        b = p_values_B(fit_H, fit_H.negated(), k)
        assert b.z_H == pytest.approx(a.z_H) and b.z_S == pytest.approx(a.z_S)
        assert b.p_si == pytest.approx(a.p_si)

    def test_lung_57(self):
        best, _ = select_model(lung_table(57).complement())
        rep = p_values_B(best, best.negated(), 3, 1.0, 1.0)
        assert rep.z_H == pytest.approx(1.583, abs=0.03)
        assert rep.t_hat == pytest.approx(1.008, abs=0.03)
        assert rep.gamma_hat == pytest.approx(rep.t_hat - rep.z_H)

    def test_lung_67_clamped(self):
        best, _ = select_model(lung_table(67).complement())
        rep = p_values_B(best, best.negated())
        assert rep.t_hat == pytest.approx(-0.322, abs=0.03)
        assert rep.p_si == 1.0
        assert {"clamped_si", "negative_signed_distance"} <= rep.flags

    def test_complement_consistency(self):
        # fitting the selective side separately gives psi_0(S) = -psi_0(H) up to fit tolerance
        ct = lung_table(57)
        fit_H = fit_mle(ct.complement(), "poly.3")
        fit_S = fit_mle(ct, "poly.3")
        a = p_values_B(fit_H, fit_S)
        b = p_values_B(fit_H, fit_H.negated())
        assert a.z_S == pytest.approx(b.z_S, abs=1e-4)
        assert a.z_S == pytest.approx(-a.t_hat, abs=1e-4)

    def test_standard_errors(self):
        ct = lung_table(57).complement()
        best, _ = select_model(ct)
        rep = p_values_B(best, best.negated(), with_se=True)
        assert rep.se_au is not None and 0 < rep.se_au < 0.05
        assert rep.se_si is not None and 0 < rep.se_si < 0.05

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        dH = rng.normal(size=(3, 25))
        dS = -dH + 0.1 * rng.normal(size=(3, 25))
        zH, zS, pau, psi_ = taylor_pvalues(dH, dS, 3)
        for j in range(25):
            rep = report_from_derivatives(dH[:, j], dS[:, j], 3)
            assert rep.z_H == pytest.approx(zH[j]) and rep.p_si == pytest.approx(psi_[j])
            assert rep.p_au == pytest.approx(pau[j])


class TestOracleForms:
    @pytest.mark.parametrize("t", [0.0, 0.5, 1.0, 2.0])
    def test_halfspace(self, t):
        H = RegionSpec.halfspace()
        expect = min(1.0, 2 * std_normal_upper(t))
        assert p_sdbp(H, None, [0.0, t]) == pytest.approx(expect, abs=1e-12)
        assert p_et_si(H, "complement", [0.0, t]) == pytest.approx(expect, abs=1e-12)

    def test_general_selective_region_unsupported(self):
        H = RegionSpec.halfspace()
        with pytest.raises(NotImplementedError):
            p_sdbp(H, RegionSpec.named("concave-smooth"), [0.0, 1.0])
