import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jrlab.fields import (GaugeField, HiggsConfig, PlanePatch, ScalingSchedule, SpinorField, Torus,
                          ZeroDatum, covariant_winding, export_csv, lattice_circle, load_field,
                          perturbation_margin, sample_model_phi, sample_phi, save_field,
                          torus_gauge_field, winding_number)


def test_plane_patch_cell_centres():
    g = PlanePatch(2.0, 4)
    assert g.h == 1.0
    assert np.allclose(g.axis(0), [-1.5, -0.5, 0.5, 1.5])
    z = g.coords()
    assert z.shape == (4, 4)
    assert z[1, 2] == complex(-0.5, 0.5)


def test_torus_geometry():
    g = Torus(2.0, 1.0, 8, 4)
    assert (g.hx, g.hy) == (0.25, 0.25)
    assert g.n_sites == 32
    assert g.area == 2.0
    with pytest.raises(ValueError):
        Torus(-1.0, 1.0, 4, 4)


def test_model_phi_examples():
    g = PlanePatch(2.0, 16)
    h = sample_model_phi(g, 1.0, 1, 0)
    assert np.array_equal(h.phi, g.coords())
    assert h.zeros == (ZeroDatum(0j, 1, 1),)
    h = sample_model_phi(g, 1.0, 1, 2)
    assert (h.zeros[0].k, h.zeros[0].m) == (-1, 3)
    h = sample_model_phi(g, 1.0, 1, 0, perturbation={(0, 1): 0.5}, eps=0.5)
    assert h.total_index == 1
    assert math.isclose(perturbation_margin(1.0, 1, {(0, 1): 0.5}), 0.5)
    with pytest.raises(ValueError, match="perturbation too large"):
        sample_model_phi(g, 1.0, 1, 0, perturbation={(0, 1): 0.6}, eps=0.5)


def test_zero_datum_parity():
    with pytest.raises(ValueError):
        ZeroDatum(0j, 1, 2)
    with pytest.raises(ValueError):
        ZeroDatum(0j, 3, 1)


def test_winding_examples():
    g = PlanePatch(2.0, 64)
    z = g.coords()
    assert winding_number(z, lattice_circle(g, 0j, 1.0)) == 1
    assert winding_number(np.conj(z) ** 2, lattice_circle(g, 0j, 0.5)) == -2
    assert winding_number(z ** 2 + 0.1 * np.conj(z) ** 2, lattice_circle(g, 0j, 1.0)) == 2


def test_winding_zero_on_loop():
    g = PlanePatch(2.0, 16)
    with pytest.raises(ValueError, match="zero encountered"):
        winding_number(np.zeros(g.shape, complex), lattice_circle(g, 0j, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.45, 0.45), st.floats(-0.45, 0.45), st.integers(-2, 2))
def test_winding_stable_under_small_perturbation(a, b, m):
    if m == 0:
        m = 1
    g = PlanePatch(2.0, 64)
    z = g.coords()
    base = z ** m if m > 0 else np.conj(z) ** (-m)
    pert = complex(a, b) * np.conj(base) * 0 + complex(a, b) * np.abs(z) ** abs(m)
    w = winding_number(base + pert, lattice_circle(g, 0j, 1.0))
    assert w == m


def test_torus_gauge_flux():
    g = Torus(1.0, 1.0, 8, 8)
    assert np.all(torus_gauge_field(g, 0).ux == 1)
    f = torus_gauge_field(g, 1).plaquette_flux()
    assert np.allclose(f, 2 * math.pi / 64, atol=1e-13)
    assert math.isclose(torus_gauge_field(g, -2).total_flux(), -4 * math.pi, abs_tol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(-6, 6), st.integers(4, 12), st.integers(4, 12),
       st.tuples(st.booleans(), st.booleans()))
def test_torus_flux_quantized(deg, nx, ny, tw):
    g = Torus(1.0, float(ny) / nx, nx, ny)
    assert math.isclose(torus_gauge_field(g, deg, tw).total_flux(), 2 * math.pi * deg, abs_tol=1e-10)


def test_covariant_winding_gauge_invariant(rng):
    g = Torus(1.0, 1.0, 16, 16)
    z = g.coords()
    phi = np.exp(2j * np.pi * (z.real + 0.1 * z.imag)) + 0.3
    gauge = GaugeField.trivial(g)
    w0 = covariant_winding(phi, gauge, (2, 2), (10, 10))
    mu = np.exp(1j * rng.uniform(0, 2 * np.pi, g.shape))
    ux = mu * gauge.ux * np.conj(np.roll(mu, -1, axis=0))
    uy = mu * gauge.uy * np.conj(np.roll(mu, -1, axis=1))
    w1 = covariant_winding(mu * phi, GaugeField(g, ux, uy), (2, 2), (10, 10))
    assert w0 == w1


def test_schedule():
    s = ScalingSchedule((1.0, 4.0, 16.0), 1)
    assert np.allclose(s.tau(s.t_values), [1, 2, 4])
    with pytest.raises(ValueError):
        ScalingSchedule((2.0, 1.0), 1)
    with pytest.raises(ValueError):
        ScalingSchedule((0.0, 1.0), 1)


def test_higgs_validation():
    g = PlanePatch(2.0, 32)
    h = sample_phi(g, lambda z: (z - 0.5) * (z + 0.5), (ZeroDatum(0.5, 1, 1), ZeroDatum(-0.5, 1, 1)))
    assert h.delta() == 0.25
    h.validate()
    bad = sample_phi(g, lambda z: (z - 0.5) * (z + 0.5) * (z - 1.2), (ZeroDatum(0.5, 1, 1), ZeroDatum(-0.5, 1, 1)))
    bad_phi = bad.phi.copy()
    bad_phi[28, 16] = 0
    with pytest.raises(ValueError, match="vanishes"):
        HiggsConfig(g, bad_phi, bad.zeros).validate()
    with pytest.raises(ValueError, match="distinct"):
        HiggsConfig(g, h.phi, (ZeroDatum(0.5, 1, 1), ZeroDatum(0.5, 1, 1))).validate()


@pytest.mark.parametrize("grid", [PlanePatch(1.0, 6), Torus(1.0, 2.0, 4, 8)])
def test_roundtrip(tmp_path, rng, grid):
    def rnd():
        return rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    objs = [SpinorField(grid, rnd(), rnd()),
            HiggsConfig(grid, rnd(), (ZeroDatum(0.1 + 0.2j, -1, 1),), 3.5)]
    if isinstance(grid, Torus):
        objs.append(torus_gauge_field(grid, 3, (True, False)))
    for obj in objs:
        p = tmp_path / "f.bin"
        save_field(p, obj)
        back = load_field(p)
        assert type(back) is type(obj)
        for name in ("plus", "minus", "phi", "ux", "uy"):
            if hasattr(obj, name):
                assert np.array_equal(getattr(back, name), getattr(obj, name))
        if isinstance(obj, HiggsConfig):
            assert back.zeros == obj.zeros and back.t == obj.t
        if isinstance(obj, GaugeField):
            assert back.twists == obj.twists


def test_load_errors(tmp_path):
    g = PlanePatch(1.0, 4)
    p = tmp_path / "f.bin"
    save_field(p, HiggsConfig(g, np.ones(g.shape)))
    with pytest.raises(ValueError, match="grid mismatch"):
        load_field(p, PlanePatch(1.0, 6))
    empty = tmp_path / "e.bin"
    empty.write_bytes(b"")
    with pytest.raises(ValueError, match="malformed"):
        load_field(empty)


def test_export_csv(tmp_path):
    g = PlanePatch(1.0, 2)
    paths = export_csv(tmp_path / "h", HiggsConfig(g, np.array([[1, 2j], [3, 4]])))
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "ix,iy,re,im"
    assert lines[2] == "0,1,0,2"
