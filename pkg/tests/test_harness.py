import json
import math

import numpy as np
import pytest

from marginal_lds.errors import ConfigError, MissingConstants, NonPositiveRegret
from marginal_lds.harness import (
    EXIT_OK,
    choose_mu,
    config_from_dict,
    exponent_fit,
    hindsight_predictor,
    kalman_for,
    load_config,
    regret_full,
    regret_hindsight,
    regret_partial,
    run_cell,
    run_experiment,
    simulate_cell,
    thread_count,
)
from marginal_lds.kalman import steady_state_predict
from marginal_lds.predictors import run_ar_learner, run_lds_learner
from marginal_lds.systems import NoiseConfig, SystemSpec, simulate_full


class TestChooseMu:
    def test_adversarial_r1(self):
        assert choose_mu("full-adversarial", 4096, r=1) == pytest.approx(512.0, rel=1e-12)

    def test_adversarial_r2(self):
        assert choose_mu("full-adversarial", 4096, r=2) == pytest.approx(1024.0, rel=1e-12)

    @pytest.mark.parametrize("setting", ["full-stochastic", "partial-stochastic"])
    def test_stochastic(self, setting):
        assert choose_mu(setting, 4096) == 1.0

    def test_explicit(self):
        assert choose_mu("full-adversarial", 10, rule="explicit", value=3.5) == 3.5

    def test_structural_formula(self):
        got = choose_mu("full-adversarial", 100, m=2, c1=0.5, c2=0.25, alpha=1.0)
        want = 2**1.5 * 100**0.75 / (0.5**0.5 * 0.25**1.0)
        assert got == pytest.approx(want, rel=1e-12)

    def test_structural_needs_constants(self):
        with pytest.raises(MissingConstants):
            choose_mu("full-adversarial", 100, rule="theorem-structural", m=2)

    def test_bad_block_size(self):
        with pytest.raises(ValueError):
            choose_mu("full-adversarial", 100, r=0)


def scalar_noiseless(T):
    sys = SystemSpec(A=[[1.0]], B=np.zeros((1, 0)), noise=NoiseConfig(kind="none"), x0=[1.0])
    return simulate_full(sys, "zero", T, 0)


class TestRegretFull:
    def test_hand_computed(self):
        tr = scalar_noiseless(3)
        preds, _ = run_lds_learner(tr, 1.0)
        np.testing.assert_allclose(preds[:, 0], [0.0, 0.5, 2 / 3], atol=1e-15)
        rec = regret_full(tr, preds, [[1.0]])
        assert rec.regret == pytest.approx(1 + 1 / 4 + 1 / 9, rel=1e-12)
        np.testing.assert_allclose(rec.cumulative, [1.0, 1.25, 1 + 1 / 4 + 1 / 9])
        assert rec.max_pred_err == pytest.approx(1.0)

    def test_self_regret_is_zero(self):
        tr = simulate_full(SystemSpec(A=[[0.9]], B=np.zeros((1, 0)), noise=NoiseConfig(kind="gaussian")), "zero", 50, 3)
        rec = regret_full(tr, tr.states[:-1] * 0.9, [[0.9]])
        assert rec.regret == 0.0

    def test_converged_learner_stops_accruing(self):
        rec = regret_full(tr := scalar_noiseless(2000), run_lds_learner(tr, 1.0)[0], [[1.0]])
        assert rec.cumulative[-1] - rec.cumulative[999] <= 1e-3
        assert rec.learner_loss[-1] <= 1e-6

    def test_length_mismatch(self):
        tr = scalar_noiseless(3)
        with pytest.raises(ValueError):
            regret_full(tr, np.zeros((2, 1)), [[1.0]])

    def test_hindsight_fits_exactly_on_noiseless_data(self):
        A = np.array([[0.9, 0.2], [-0.1, 0.8]])
        sys = SystemSpec(A=A, B=np.zeros((2, 0)), noise=NoiseConfig(kind="none"), x0=[1.0, -1.0])
        tr = simulate_full(sys, "zero", 30, 0)
        np.testing.assert_allclose(hindsight_predictor(tr), A, atol=1e-8)

    def test_hindsight_dominates_true_comparator(self):
        sys = SystemSpec(A=[[1.0]], B=np.zeros((1, 0)), noise=NoiseConfig(kind="bounded_iid", c_xi=1.0), x0=[0.0])
        tr = simulate_full(sys, "zero", 300, 4)
        preds, _ = run_lds_learner(tr, 5.0)
        assert regret_hindsight(tr, preds).regret >= regret_full(tr, preds, [[1.0]]).regret - 1e-9


class TestRegretPartial:
    def golden_run(self, T=400):
        cfg = config_from_dict({"setting": "partial-stochastic", "horizons": [T], "system": "golden", "seed": 5})
        sys, tr = simulate_cell(cfg, T)
        return sys, tr, kalman_for(sys)

    def test_kalman_against_itself(self):
        _, tr, kf = self.golden_run()
        rec = regret_partial(tr, steady_state_predict(kf, tr), kf, 8)
        assert rec.regret == 0.0 and rec.start == 9

    def test_empty_window(self):
        _, tr, kf = self.golden_run(20)
        assert regret_partial(tr, np.zeros((21, 1)), kf, 20).regret == 0.0

    def test_golden_ar_finite(self):
        _, tr, kf = self.golden_run(4096)
        preds, _ = run_ar_learner(tr, 1.0, 8)
        rec = regret_partial(tr, preds, kf, 8)
        assert np.isfinite(rec.regret)
        # innovation variance is phi + 1 > 0, so the comparator cannot be perfect
        assert np.mean(rec.comparator_loss) >= 0.5 * np.trace(kf.innovation_cov)


class TestExponentFit:
    def test_exact_power_law(self):
        T = 2.0 ** np.arange(10, 15)
        fit = exponent_fit(T, T**0.75)
        assert fit.slope == pytest.approx(0.75, abs=1e-9)
        assert not fit.flagged

    def test_constant(self):
        assert exponent_fit([10, 100, 1000], [5.0, 5.0, 5.0]).slope == pytest.approx(0.0, abs=1e-12)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(0)
        T = 2.0 ** np.arange(6, 16)
        fit = exponent_fit(T, T**0.6 * (1 + 0.05 * rng.uniform(-1, 1, T.size)))
        assert abs(fit.slope - 0.6) <= 0.05

    def test_non_positive(self):
        fit = exponent_fit([1, 2, 4], [1.0, -1.0, 4.0])
        assert fit.flagged
        with pytest.raises(NonPositiveRegret):
            exponent_fit([1, 2, 4], [1.0, 0.0, 4.0], strict=True)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            exponent_fit([1, 2], [1.0, 2.0])


class TestConfig:
    def base(self, **kw):
        d = {"setting": "full-adversarial", "horizons": [16, 32], "system": "rotation"}
        d.update(kw)
        return d

    def test_defaults(self):
        cfg = config_from_dict(self.base())
        assert cfg.trials == 1 and cfg.delta == 0.1 and cfg.comparator == "true"

    @pytest.mark.parametrize(
        "override,field",
        [
            ({"horizons": [32, 16]}, "horizons"),
            ({"horizons": []}, "horizons"),
            ({"trials": 0}, "trials"),
            ({"delta": 1.0}, "delta"),
            ({"setting": "bogus"}, "setting"),
            ({"comparator": "oracle"}, "comparator"),
            ({"mu": {"rule": "explicit", "value": -1}}, "mu.value"),
            ({"colour": 1}, "colour"),
        ],
    )
    def test_rejects(self, override, field):
        with pytest.raises(ConfigError) as exc:
            config_from_dict(self.base(**override))
        assert exc.value.field == field

    def test_error_line_number(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{\n  "setting": "full-stochastic",\n  "horizons": [4],\n  "trials": -2\n}\n')
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert exc.value.field == "trials" and exc.value.line == 4

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{\n  "setting": \n}')
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert exc.value.line is not None

    def test_hash_ignores_output(self):
        a = config_from_dict(self.base(output={"dir": "a"}))
        b = config_from_dict(self.base(output={"dir": "b"}))
        assert a.hash() == b.hash()
        assert a.hash() != config_from_dict(self.base(seed=1)).hash()

    def test_thread_env_override(self, monkeypatch):
        monkeypatch.setenv("MARGINAL_LDS_THREADS", "3")
        assert thread_count(1) == 3
        monkeypatch.setenv("MARGINAL_LDS_THREADS", "many")
        with pytest.raises(ConfigError):
            thread_count(1)


class TestExperiment:
    @pytest.mark.parametrize("T", [1, 10, 100])
    def test_lower_bound(self, T):
        cfg = config_from_dict({"setting": "ols-lower-bound", "horizons": [T], "trials": 2})
        res = run_experiment(cfg, write=False)
        assert res.summary["mean_regret"][str(T)] == pytest.approx(T * T, rel=1e-9)

    def test_outputs_and_determinism(self, tmp_path):
        d = {"setting": "full-stochastic", "horizons": [64, 128, 256], "system": "rotation", "trials": 2, "seed": 7}
        cfg = config_from_dict(d)
        a = run_experiment(cfg, tmp_path / "a")
        b = run_experiment(cfg, tmp_path / "b", threads=2)
        assert a.exit_code == EXIT_OK
        assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()
        header = (tmp_path / "a" / "runs.csv").read_text().splitlines()[0]
        assert header == "config_hash,setting,T,trial,mu,ell,regret,max_pred_err,slope_group"
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert set(summary["mean_regret"]) == {"64", "128", "256"} and "fit" in summary
        assert a.runs_csv == b.runs_csv

    @pytest.mark.parametrize("setting,system", [("full-stochastic", "rotation"), ("partial-stochastic", "golden")])
    def test_horizons_share_prefix(self, setting, system):
        cfg = config_from_dict({"setting": setting, "horizons": [50, 100], "system": system})
        _, short = simulate_cell(cfg, 50)
        _, long = simulate_cell(cfg, 100)
        np.testing.assert_array_equal(short.states, long.states[:51])

    def test_ridge_bound_recorded(self):
        cfg = config_from_dict({"setting": "full-adversarial", "horizons": [256], "system": "rotation"})
        cell = run_cell(cfg, 256, 0)
        assert cell.mu == pytest.approx(256**0.75)
        assert cell.regret <= cell.extra["ridge_bound"] and not cell.violations

    def test_partial_cell(self):
        cfg = config_from_dict({"setting": "partial-stochastic", "horizons": [512], "system": "golden", "ell": 8})
        cell = run_cell(cfg, 512, 0)
        assert cell.ell == 8 and math.isfinite(cell.regret)

    def test_lower_bound_has_no_system(self):
        cfg = config_from_dict({"setting": "ols-lower-bound", "horizons": [3]})
        with pytest.raises(ConfigError):
            simulate_cell(cfg, 3)
