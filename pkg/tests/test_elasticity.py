import csv
import io
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import catalog_mesh
from kornlab.elasticity import (export_displacement_csv, manufactured_load, rigid_projection, solve_equilibrium)
from kornlab.errors import ValidationError
from kornlab.fem import assemble, interpolate
from kornlab.rigid import rigid_basis
from kornlab.spectra import poincare_elasticity_constant


def smooth(x):
    return np.sin(2 * x) + np.roll(x, 1, axis=-1) ** 2


def centered(mesh, forms, w):
    return w - rigid_projection(mesh, w, forms)(mesh.vertices).reshape(-1)


@pytest.fixture(params=[("square", 6), ("disk", 3), ("cube", 2)], ids=lambda p: p[0])
def setup(request):
    m = catalog_mesh(*request.param)
    return m, assemble(m)


class TestEquilibrium:
    def test_rigid_load_gives_zero(self, setup):
        m, F = setup
        for r in rigid_basis(m.dim):
            sol = solve_equilibrium(m, 2.5 * interpolate(m, r), forms=F)
            assert np.max(np.abs(sol.displacement)) <= 1e-10
            assert_allclose(sol.removed_rigid.coefficients, 2.5 * r.coefficients, atol=1e-10)

    def test_manufactured_recovery(self, setup):
        m, F = setup
        w = centered(m, F, interpolate(m, smooth))
        sol = solve_equilibrium(m, manufactured_load(m, w, F), forms=F)
        e = w - sol.displacement
        assert math.sqrt(F.energy("A_sym", e) / F.energy("A_sym", w)) <= 1e-8
        assert sol.residual <= 1e-8

    def test_solution_orthogonal_to_rigid(self, setup, rng):
        m, F = setup
        sol = solve_equilibrium(m, rng.standard_normal(F.n_dofs), forms=F)
        R = np.column_stack([interpolate(m, r) for r in rigid_basis(m.dim)])
        assert np.max(np.abs(R.T @ F.M @ sol.displacement)) <= 1e-10 * max(1, np.abs(sol.displacement).max())

    def test_energy_identity(self, setup, rng):
        m, F = setup
        sol = solve_equilibrium(m, rng.standard_normal(F.n_dofs), forms=F)
        rhs = sol.load @ F.M @ sol.displacement
        assert sol.energy == pytest.approx(rhs, rel=1e-9)

    def test_linearity(self, setup, rng):
        m, F = setup
        f, g = rng.standard_normal((2, F.n_dofs))
        a, b = rng.standard_normal(2)
        lhs = solve_equilibrium(m, a * f + b * g, forms=F).displacement
        rhs = a * solve_equilibrium(m, f, forms=F).displacement + b * solve_equilibrium(m, g, forms=F).displacement
        assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())

    def test_poincare_bound_holds_for_solution(self, rng):
        m = catalog_mesh("square", 4)
        F = assemble(m)
        c = poincare_elasticity_constant(m).constant
        sol = solve_equilibrium(m, rng.standard_normal(F.n_dofs), forms=F)
        assert math.sqrt(F.energy("M", sol.displacement)) <= c * math.sqrt(sol.energy) * (1 + 1e-10)

    def test_wrong_length(self):
        with pytest.raises(ValidationError, match="entries"):
            solve_equilibrium(catalog_mesh("square", 2), np.zeros(5))

    def test_non_finite(self):
        f = np.zeros(18)
        f[3] = np.nan
        with pytest.raises(ValidationError, match="non-finite"):
            solve_equilibrium(catalog_mesh("square", 2), f)


def test_csv_export():
    m = catalog_mesh("square", 2)
    sol = solve_equilibrium(m, np.arange(18.0))
    rows = list(csv.reader(io.StringIO(export_displacement_csv(m, sol))))
    assert rows[0] == ["vertex", "x1", "x2", "u1", "u2"]
    assert len(rows) == 1 + len(m.vertices)
    assert_allclose([float(v) for v in rows[5][3:]], sol.nodal_displacement[4], rtol=1e-15)
