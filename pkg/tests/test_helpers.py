"""Tests for misreg.utils and misreg.config."""

import numpy as np
import pytest

from misreg.config import Settings, apply_settings, settings, validate_settings
from misreg.exceptions import InputError, NumericalError
from misreg.utils.helpers import derive_rng, derive_seed, ensure_output_dir, format_duration, quantile_interval
from misreg.utils.linalg import cho_logdet, cholesky_jittered, is_psd, numeric_jacobian, ridge_inverse


class TestSeeds:
    """Tests for reproducible random streams."""

    def test_negative_seed(self):
        with pytest.raises(InputError):
            derive_seed(-1)

    def test_streams_are_reproducible_and_distinct(self):
        a = derive_rng(5, 0).standard_normal(4)
        assert np.array_equal(a, derive_rng(5, 0).standard_normal(4))
        assert not np.array_equal(a, derive_rng(5, 1).standard_normal(4))
        assert not np.array_equal(a, derive_rng(5).standard_normal(4))


class TestHelpers:
    def test_quantile_interval(self):
        lo, hi = quantile_interval(np.arange(101, dtype=float), 0.9)
        assert lo == pytest.approx(5.0)
        assert hi == pytest.approx(95.0)

    def test_quantile_interval_bad_level(self):
        with pytest.raises(InputError):
            quantile_interval(np.ones(3), 1.0)

    def test_output_dir_over_a_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        with pytest.raises(InputError):
            ensure_output_dir(blocker)

    def test_format_duration(self):
        assert format_duration(12.34) == "12.3s"
        assert format_duration(90) == "1.5m"
        assert format_duration(7200) == "2.0h"


class TestLinalg:
    """Tests for factorizations and finite differences."""

    def test_jitter_rescues_a_singular_matrix(self):
        ones = np.ones((3, 3))
        factor = cholesky_jittered(ones, scale=1.0, jitter=1e-6)
        assert np.isfinite(cho_logdet(factor))

    def test_indefinite_matrix_fails(self):
        with pytest.raises(NumericalError, match="not positive definite"):
            cholesky_jittered(np.diag([1.0, -1.0]), scale=1.0)

    def test_logdet(self):
        factor = cholesky_jittered(np.diag([2.0, 3.0]), scale=1.0)
        assert cho_logdet(factor) == pytest.approx(np.log(6.0))

    def test_ridge_inverse(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert ridge_inverse(S, ridge_factor=0.0) == pytest.approx(np.linalg.inv(S))
        assert ridge_inverse(-np.eye(2)) is None

    def test_numeric_jacobian(self):
        jac = numeric_jacobian(lambda x: np.array([x[0] * x[1], x[0] ** 2]), np.array([2.0, 3.0]), 1e-5)
        assert jac == pytest.approx(np.array([[3.0, 2.0], [4.0, 0.0]]), abs=1e-6)

    def test_is_psd(self):
        assert is_psd(np.ones((2, 2)))
        assert not is_psd(np.diag([1.0, -0.5]))


class TestSettings:
    def test_config_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("N_STARTS=5\nCOV_KIND=gaussian\n", encoding="utf-8")
        loaded = Settings(_env_file=path)
        assert loaded.N_STARTS == 5
        assert loaded.COV_KIND == "gaussian"

    def test_apply_settings_overrides(self):
        apply_settings(Settings(), LOG_LEVEL="DEBUG", WORKERS=None)
        assert settings.LOG_LEVEL == "DEBUG"
        assert settings.WORKERS == Settings().WORKERS

    def test_validation_notes(self):
        notes = validate_settings(Settings(BOOTSTRAP_DRAWS=20, ABC_XI=0.0))
        assert len(notes) == 2
        assert validate_settings(Settings()) == []
