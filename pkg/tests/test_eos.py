import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uvnflash import eos
from uvnflash.eos import EOSDomainError, StateTVN, TemperatureSolveError

from oracles import fd_gradient, fd_jacobian, rel_error, roundoff_floor


def _state(mix, T, packing, fractions, ntot=10.0):
    """State with sum(c_i b_i) = packing."""
    x = np.asarray(fractions, float)
    x = x / x.sum()
    N = ntot * x
    V = (N @ mix.b) / packing
    return T, V, N


states = st.tuples(
    st.floats(120.0, 700.0),
    st.floats(0.005, 0.9),
    st.lists(st.floats(0.05, 1.0), min_size=6, max_size=6),
)


def _mix_for(request, name):
    return request.getfixturevalue(name)


@pytest.mark.parametrize("mixname", ["c1h2s", "c2c5", "co2"])
@pytest.mark.parametrize("fn", ["helmholtz_derivatives", "entropy_derivatives", "energy_derivatives"])
@given(s=states)
def test_derivatives_match_finite_differences(request, mixname, fn, s):
    mix = _mix_for(request, mixname)
    T, V, N = _state(mix, s[0], s[1], s[2][: mix.n])
    deriv = getattr(eos, fn)
    z = np.concatenate([[T, V], N])
    f = lambda z: deriv(mix, z[0], z[1], z[2:])
    val, g, H = f(z)
    gf = fd_gradient(lambda z: f(z)[0], z)
    Hf = fd_jacobian(lambda z: f(z)[1], z)
    assert rel_error(g, gf, roundoff_floor(abs(val), z)) < 1e-6
    scale = np.abs(g)[:, None] / np.maximum(np.abs(z), 1e-8)[None, :]
    assert rel_error(H, Hf, 1e-6 * scale) < 1e-5


@given(s=states)
def test_value_functions_agree_with_derivative_triples(c2c5, s):
    T, V, N = _state(c2c5, *s)
    assert eos.helmholtz_value(c2c5, T, V, N) == pytest.approx(eos.helmholtz_derivatives(c2c5, T, V, N)[0], rel=1e-12, abs=1e-9)
    assert eos.entropy_value(c2c5, T, V, N) == pytest.approx(eos.entropy_derivatives(c2c5, T, V, N)[0], rel=1e-12, abs=1e-9)
    U, Cv = eos.energy_and_cv(c2c5, T, V, N)
    u, gu, _ = eos.energy_derivatives(c2c5, T, V, N)
    assert U == pytest.approx(u, rel=1e-12, abs=1e-9)
    assert Cv == pytest.approx(gu[0], rel=1e-10)


@pytest.mark.parametrize("mixname", ["c1h2s", "c2c5"])
@given(s=states)
def test_thermodynamic_identities(request, mixname, s):
    mix = _mix_for(request, mixname)
    T, V, N = _state(mix, s[0], s[1], s[2][: mix.n])
    A, gA, HA = eos.helmholtz_derivatives(mix, T, V, N)
    S, gS, _ = eos.entropy_derivatives(mix, T, V, N)
    U, gU, _ = eos.energy_derivatives(mix, T, V, N)
    b = eos.properties(mix, StateTVN(T, V, N))
    # A = U - TS
    assert A == pytest.approx(U - T * S, rel=1e-6, abs=1e-6 * abs(U))
    # S = -dA/dT, P = -dA/dV, mu = dA/dN
    assert -gA[0] == pytest.approx(S, rel=1e-6, abs=1e-9)
    assert -gA[1] == pytest.approx(b.pressure, rel=1e-6)
    np.testing.assert_allclose(gA[2:], b.chem_potential, rtol=1e-6, atol=1e-6 * np.max(np.abs(b.chem_potential)))
    # Maxwell: dS/dV = dP/dT
    assert gS[1] == pytest.approx(b.dp_dT, rel=1e-6)
    # dU/dV = T dP/dT - P
    assert gU[1] == pytest.approx(T * b.dp_dT - b.pressure, rel=1e-6, abs=1e-6 * abs(b.pressure))
    # dU/dT = T dS/dT = Cv
    assert gU[0] == pytest.approx(T * gS[0], rel=1e-6)


@given(s=states, lam=st.floats(0.1, 10.0))
def test_extensivity(c1h2s, s, lam):
    T, V, N = _state(c1h2s, s[0], s[1], s[2][:2])
    for fn in (eos.helmholtz_value, eos.entropy_value):
        assert fn(c1h2s, T, lam * V, lam * N) == pytest.approx(lam * fn(c1h2s, T, V, N), rel=1e-10, abs=1e-8)
    p1 = eos.pressure(c1h2s, StateTVN(T, V, N))
    p2 = eos.pressure(c1h2s, StateTVN(T, lam * V, lam * N))
    assert p2 == pytest.approx(p1, rel=1e-10)


@given(s=states, perm=st.permutations(range(6)))
def test_component_permutation(c2c5, s, perm):
    T, V, N = _state(c2c5, *s)
    names = [c2c5.names[i] for i in perm]
    sub = c2c5.subset(names)
    A0 = eos.helmholtz_value(c2c5, T, V, N)
    A1 = eos.helmholtz_value(sub, T, V, N[list(perm)])
    assert A1 == pytest.approx(A0, rel=1e-12, abs=1e-9)
    mu0 = eos.chemical_potential(c2c5, T, V, N)
    mu1 = eos.chemical_potential(sub, T, V, N[list(perm)])
    np.testing.assert_allclose(mu1, mu0[list(perm)], rtol=1e-12, atol=1e-9)


def test_ideal_gas_limit(c1h2s):
    T, N = 300.0, np.array([1.0, 2.0])
    for V in (1e2, 1e4):
        P = eos.pressure(c1h2s, StateTVN(T, V, N))
        assert P == pytest.approx(N.sum() * eos.GAS_CONSTANT * T / V, rel=1e2 / V**2)


def test_ideal_gas_reference_state(co2):
    # at T0 the dilute gas has u = u0 and s = R ln(v P0 / (R T0)) with s0(T0) = 0
    T0, P0, R = co2.t_ref, co2.p_ref, eos.GAS_CONSTANT
    N = np.array([1.0])
    v = 1e5  # m3/mol: residual contributions ~1e-6 J/mol
    U = eos.energy_and_cv(co2, T0, v, N)[0]
    S = eos.entropy_value(co2, T0, v, N)
    assert U == pytest.approx(co2.u0[0], abs=1e-4)
    assert S == pytest.approx(R * np.log(v * P0 / (R * T0)), abs=1e-6)


def test_series_branch_is_continuous(c1h2s):
    # F(V, B) switches to a series for small B/V; both sides must agree
    N = np.array([0.5, 0.5])
    B = N @ c1h2s.b
    for t in (0.9e-3, 1.1e-3):
        V = B / t
        left = eos.helmholtz_derivatives(c1h2s, 300.0, V * (1 - 1e-9), N)
        right = eos.helmholtz_derivatives(c1h2s, 300.0, V * (1 + 1e-9), N)
        assert left[0] == pytest.approx(right[0], rel=1e-8)
        np.testing.assert_allclose(left[1], right[1], rtol=1e-6)
    # tiny B/V does not blow up
    val, g, H = eos.helmholtz_derivatives(c1h2s, 300.0, 1e9, N)
    assert np.all(np.isfinite(g)) and np.all(np.isfinite(H))


@given(T=st.floats(100.0, 900.0), packing=st.floats(0.01, 0.85))
def test_heat_capacity_is_positive_and_matches_du_dt(co2, T, packing):
    _, V, N = _state(co2, T, packing, [1.0])
    U, Cv = eos.energy_and_cv(co2, T, V, N)
    assert Cv > 0
    h = 1e-4 * T
    dU = (eos.energy_and_cv(co2, T + h, V, N)[0] - eos.energy_and_cv(co2, T - h, V, N)[0]) / (2 * h)
    assert Cv == pytest.approx(dU, rel=1e-6)


@given(T=st.floats(110.0, 1500.0), packing=st.floats(0.01, 0.85), fr=st.lists(st.floats(0.05, 1.0), min_size=2, max_size=2))
def test_temperature_inversion_round_trip(c1h2s, T, packing, fr):
    _, V, N = _state(c1h2s, T, packing, fr)
    U = eos.energy_and_cv(c1h2s, T, V, N)[0]
    for guess in (None, 0.7 * T, 1.3 * T):
        T_back = eos.solve_temperature(c1h2s, U, V, N, guess, atol=1e-12 * abs(U) + 1e-9)
        assert T_back == pytest.approx(T, rel=1e-9)


def test_temperature_sweep_is_monotone(c2c5):
    # U(T) along a fine sweep: strictly increasing and smooth (no branch switch)
    N = np.array([10.8, 360.8, 146.5, 233.0, 233.0, 15.9])
    V = 0.289
    Ts = np.linspace(20.0, 2000.0, 2000)
    U = np.array([eos.energy_and_cv(c2c5, T, V, N)[0] for T in Ts])
    assert np.all(np.diff(U) > 0)
    d2 = np.diff(U, 2)
    assert np.max(np.abs(d2)) < 50 * np.median(np.abs(d2)) + 1e-6


def test_inversion_out_of_range(c1h2s):
    N = np.array([1.0, 1.0])
    with pytest.raises(TemperatureSolveError) as exc:
        eos.solve_temperature(c1h2s, 1e12, 1.0, N)
    assert exc.value.u_bracket is not None
    with pytest.raises(TemperatureSolveError):
        eos.solve_temperature(c1h2s, 1e12, 1.0, N, 300.0)


def test_domain_errors(c1h2s):
    N = np.array([1.0, 1.0])
    with pytest.raises(EOSDomainError):
        eos.helmholtz_derivatives(c1h2s, 300.0, 0.5 * (N @ c1h2s.b), N)
    with pytest.raises(EOSDomainError):
        eos.helmholtz_derivatives(c1h2s, -1.0, 1.0, N)
    with pytest.raises(EOSDomainError):
        eos.helmholtz_derivatives(c1h2s, 300.0, 1.0, np.array([1.0, 0.0]))


def test_database_contents(db):
    assert {"C1", "H2S", "C2", "C3H6", "C3", "iC4", "nC4", "C5", "CO2"} <= set(db["components"])
    for key in ("C1-H2S", "C2-C5", "CO2"):
        mix = eos.mixture_from_database(db, key)
        np.testing.assert_array_equal(mix.kij, mix.kij.T)
        assert mix.p_ref == 1e5 and mix.t_ref == 298.15
    # u0 = -R T0 for every component
    for c in db["components"].values():
        assert c.u0 == pytest.approx(-eos.GAS_CONSTANT * 298.15, rel=1e-12)


def test_missing_component_and_bad_kij(db, tmp_path):
    with pytest.raises(KeyError):
        eos.mixture_from_database(db, ["C1", "XX"])
    with pytest.raises(ValueError):
        eos.mixture_from_database(db, ["C1", "H2S"], kij=[[0, 0.1], [0.2, 0]])
    raw = json.loads(eos.DEFAULT_DATABASE.read_text())
    raw["components"] = raw["components"][:1]
    p = tmp_path / "db.json"
    p.write_text(json.dumps(raw))
    small = eos.load_database(p)
    assert list(small["components"]) == [raw["components"][0]["name"]]


def test_mixture_round_trip(c2c5):
    d = eos.mixture_to_dict(c2c5)
    assert d["kij"] == c2c5.kij.tolist()
    assert [c["name"] for c in d["components"]] == c2c5.names
