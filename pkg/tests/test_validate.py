import numpy as np
import pytest

from mixedfem import validate
from mixedfem.solver import MixedFEMSolver

# long scene runs are covered by the acceptance suite
SLOW = {"solver.beam_newton", "solver.stiff_drop"}


@pytest.mark.parametrize("check", [c for c in validate.REGISTRY if c.qualname not in SLOW], ids=lambda c: c.qualname)
def test_check_passes(check):
    (result,) = validate.run_checks(check.qualname, seed=0)
    assert result.passed, result.detail


def test_filter_selects_module():
    names = {c.module for c in validate.select("rotation")}
    assert names == {"rotation"}
    assert len(validate.select("mesh,scene.contact")) == len(validate.select("mesh")) + 2


def test_every_module_has_checks():
    assert {c.module for c in validate.REGISTRY} == {"mesh", "kinematics", "materials", "rotation", "linsolve", "solver", "scene"}


def test_crash_is_reported_as_failure(monkeypatch):
    def boom(rng):
        raise RuntimeError("broken")

    monkeypatch.setattr(validate, "REGISTRY", [validate.Check("x", "boom", boom)])
    (res,) = validate.run_checks()
    assert not res.passed and "broken" in res.detail


def test_flipped_rhs_sign_fails_dense_oracle(monkeypatch):
    """Mutation test: negating the H^-1 g term of the constraint rows must be caught."""
    original = MixedFEMSolver.quadratic_model

    def mutated(self, q, s, q_t, q_prev, f_ext, R, g, Hinv, l_ref=None, stiffness=None):
        system, rhs, W = original(self, q, s, q_t, q_prev, f_ext, R, g, Hinv, l_ref, stiffness)
        term = self.dv[:, None] * np.einsum("tij,tj->ti", W @ Hinv, g)
        rhs = rhs.copy()
        rhs[self.projection.n_free :] += 2 * term.ravel()
        return system, rhs, W

    monkeypatch.setattr(MixedFEMSolver, "quadratic_model", mutated)
    (res,) = validate.run_checks("solver.dense_kkt")
    assert not res.passed
    assert "mismatch" in res.detail
