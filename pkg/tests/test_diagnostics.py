import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colnorm import diagnostics, optim
from colnorm.diagnostics import RunLog, ScalarRow, histogram, record_spectrum
from colnorm.models import make_rng


class TestRecordSpectrum:
    def test_identity(self):
        rec = record_spectrum(0, "W", np.eye(3))
        assert rec.ln_cond == pytest.approx(0.0, abs=1e-15)
        assert rec.log10_sigmas == (0.0, 0.0, 0.0)

    def test_diagonal(self):
        rec = record_spectrum(5, "W", np.diag([10.0, 0.1]))
        assert rec.ln_cond == pytest.approx(4.6052, abs=1e-4)
        assert rec.log10_sigmas == pytest.approx((1.0, -1.0))

    def test_muon_direction_unit_spectrum(self):
        m = make_rng(1).standard_normal((6, 9))
        rec = record_spectrum(1, "W", optim.muon_svd_direction(m))
        assert rec.ln_cond <= 1e-8

    def test_length_and_clamp(self):
        rec = record_spectrum(1, "W", np.diag([1.0, 0.0, 0.0]) @ np.ones((3, 5)))
        assert len(rec.log10_sigmas) == 3
        assert min(rec.log10_sigmas) == -300.0
        assert rec.ln_cond == 0.0

    def test_zero_update_is_inf(self):
        assert math.isinf(record_spectrum(1, "W", np.zeros((2, 2))).ln_cond)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32), c=st.floats(1e-6, 1e6))
    def test_scale_shift(self, seed, c):
        u = make_rng(seed).standard_normal((4, 6))
        a, b = record_spectrum(0, "W", u), record_spectrum(0, "W", c * u)
        assert b.ln_cond == pytest.approx(a.ln_cond, abs=1e-8)
        np.testing.assert_allclose(np.array(b.log10_sigmas) - a.log10_sigmas, math.log10(c), atol=1e-10)


class TestHistogram:
    def test_empty(self):
        np.testing.assert_array_equal(histogram([], 1.0, 0.0, 5.0), np.zeros(5))

    def test_all_at_min(self):
        np.testing.assert_array_equal(histogram([-2.0] * 7, 0.5, -2.0, 0.0), [7, 0, 0, 0])

    def test_clamps_out_of_range(self):
        np.testing.assert_array_equal(histogram([-100.0, 0.5, 3.0, 100.0], 1.0, 0.0, 3.0), [2, 0, 2])

    def test_seeded_uniform(self):
        counts = histogram(make_rng(2024).uniform(-3.0, 2.0, 1000), 0.5, -3.0, 2.0)
        assert counts.tolist() == [87, 129, 106, 87, 96, 102, 104, 88, 99, 102]
        assert np.all(np.abs(counts - 100) <= 5 * math.sqrt(1000 * 0.1 * 0.9))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), max_size=200), st.floats(0.01, 10.0))
    def test_counts_sum(self, values, width):
        assert histogram(values, width, -5.0, 5.0).sum() == len(values)

    @pytest.mark.parametrize("args", [(0.0, 0.0, 1.0), (1.0, 1.0, 1.0), (1.0, 2.0, 1.0)])
    def test_rejects_bad_bins(self, args):
        with pytest.raises(ValueError):
            histogram([1.0], *args)


def toy_log(steps=2):
    log = RunLog(config={"b": "2", "a": "1"})
    rng = make_rng(3)
    for t in range(1, steps + 1):
        u = rng.standard_normal((3, 4))
        rec = record_spectrum(t, "W", u)
        log.spectra.append(rec)
        log.add_scalar(ScalarRow(t, "W", 1.0 / t, float(np.linalg.norm(u)), float(np.sqrt(np.mean(u * u))), rec.ln_cond))
    return log


class TestWriteCsv:
    def test_empty_run_header_only(self, tmp_path):
        diagnostics.write_csv(RunLog(), tmp_path)
        assert (tmp_path / "scalars.csv").read_text() == ",".join(diagnostics.SCALARS_HEADER) + "\n"
        assert (tmp_path / "spectra.csv").read_text() == ",".join(diagnostics.SPECTRA_HEADER) + "\n"

    def test_two_steps(self, tmp_path):
        diagnostics.write_csv(toy_log(2), tmp_path)
        assert len(diagnostics.read_scalars(tmp_path / "scalars.csv")) == 2
        assert len((tmp_path / "spectra.csv").read_text().splitlines()) == 1 + 2 * 3

    def test_round_trip(self, tmp_path):
        log = toy_log(5)
        diagnostics.write_csv(log, tmp_path)
        for row, rec in zip(diagnostics.read_scalars(tmp_path / "scalars.csv"), log.scalars):
            assert int(row["step"]) == rec.step
            assert float(row["loss"]) == rec.loss
            assert float(row["grad_norm"]) == rec.grad_norm
            assert float(row["update_rms"]) == rec.update_rms
            assert float(row["ln_cond"]) == rec.ln_cond

    def test_byte_deterministic(self, tmp_path):
        diagnostics.write_csv(toy_log(4), tmp_path / "a")
        diagnostics.write_csv(toy_log(4), tmp_path / "b")
        for name in ("scalars.csv", "spectra.csv", "run_meta.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_metadata_sorted(self, tmp_path):
        diagnostics.write_csv(toy_log(1), tmp_path)
        assert (tmp_path / "run_meta.txt").read_text() == "a = 1\nb = 2\n"

    def test_io_error_has_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            diagnostics.write_csv(RunLog(), blocker / "sub")

    def test_steps_must_not_decrease(self):
        log = RunLog()
        log.add_scalar(ScalarRow(2, "W", 1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            log.add_scalar(ScalarRow(1, "W", 1.0, 1.0, 1.0))


@pytest.mark.parametrize("value,text", [
    (0.1, "0.1"), (1 / 3, "0.3333333333333333"), (math.inf, "inf"), (None, ""), (3, "3"), (np.float64(2.5), "2.5"),
])
def test_fmt(value, text):
    assert diagnostics.fmt(value) == text
