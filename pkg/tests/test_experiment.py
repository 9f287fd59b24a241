"""Tests for the experiment driver and its tables."""

import time

import numpy as np
import pandas as pd
import pytest

from rsrdiff.errors import StageError
from rsrdiff.models import ExperimentConfig
from rsrdiff.services import experiment
from rsrdiff.services.denoiser import NetDenoiser, init_params
from rsrdiff.services.metrics import METRICS, MetricRecord, MetricReport, build_report
from rsrdiff.services.sampler import SamplerConfig, run_sampler
from rsrdiff.services.scheduler import build_schedule, sub_schedule


def timing_free(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.drop(columns=[c for c in frame.columns if c.startswith("seconds")])


def synthetic_report(offsets: dict[str, float], n: int = 8) -> MetricReport:
    rng = np.random.default_rng(0)
    records = []
    for method, offset in offsets.items():
        for i in range(n):
            noise = rng.normal(0, 0.1)
            records.append(
                MetricRecord(
                    image_id=f"img-{i}",
                    method=method,
                    psnr=25 + offset + noise,
                    ssim=0.8 + offset / 100,
                    gmsd=0.1 - offset / 100 + noise / 100,
                    perceptual=0.2 - offset / 100,
                    seconds=0.01 * (i + 1),
                )
            )
    return build_report(records)


class TestTables:
    """Test Table 1 and Table 2 assembly on synthetic records."""

    def test_method_table(self):
        report = synthetic_report({"nearest": 0.0, "conv": 3.0, "swin": 3.05})
        table = experiment.method_table(report)
        assert table["method"].tolist() == ["conv", "nearest", "swin"]
        assert (table["n"] == 8).all()
        for metric in METRICS:
            mean = table[f"{metric}_mean"]
            assert (table[f"{metric}_ci_low"] <= mean + 1e-12).all()
            assert (mean - 1e-12 <= table[f"{metric}_ci_high"]).all()
        by_method = table.set_index("method")
        assert by_method.loc["swin", "psnr_ns_vs_best"]
        # nearest is far below the best method
        assert not by_method.loc["nearest", "psnr_ns_vs_best"]

    def test_ablation_table(self):
        report = synthetic_report({"conv": 0.0, "swin": 1.0})
        table = experiment.ablation_table(report.records).set_index("metric")
        assert list(table.index) == [*METRICS, "seconds"]
        assert table.loc["psnr", "attention_better"]
        assert table.loc["gmsd", "attention_better"]
        expected = table.loc["psnr", "swin_mean"] / table.loc["psnr", "conv_mean"] - 1
        assert table.loc["psnr", "delta_pct"] == pytest.approx(100 * expected)
        assert table.loc["psnr", "abs_delta_pct"] >= 0
        assert table.loc["psnr", "wilcoxon_p"] < 0.05


class TestRunExperiment:
    """Smoke runs of the full pipeline."""

    def test_outputs(self, smoke_experiment):
        result = experiment.run_experiment(smoke_experiment)
        out = smoke_experiment.out_dir
        for name in (
            "report.csv",
            "table1.csv",
            "table2.csv",
            "experiment.log",
            "train_conv.csv",
            "train_swin.csv",
            "denoiser_conv.ckpt",
            "denoiser_swin.ckpt",
        ):
            assert (out / name).exists(), name
        assert result.table1["method"].tolist() == ["conv", "nearest", "swin"]
        assert len(result.table2) == len(METRICS) + 1
        figures = sorted(p.name for p in (out / "figures").glob("*.pgm"))
        assert len(figures) == 2 + 2 * 3
        assert "Stage 'evaluate' finished" in (out / "experiment.log").read_text()

    def test_deterministic(self, smoke_experiment, tmp_path):
        """Without wall-clock timing a rerun writes byte-identical CSVs."""
        untimed = smoke_experiment.model_copy(update={"timing": False})
        experiment.run_experiment(untimed)
        again = untimed.model_copy(update={"out_dir": tmp_path / "again"})
        experiment.run_experiment(again)
        for name in ("report.csv", "table1.csv", "table2.csv", "train_swin.csv"):
            first = (untimed.out_dir / name).read_bytes()
            assert first == (again.out_dir / name).read_bytes(), name

    def test_timing_recorded_by_default(self, smoke_experiment):
        result = experiment.run_experiment(smoke_experiment)
        seconds = result.report.records.set_index("method")["seconds"]
        assert (seconds.loc["swin"] > 0).all()
        assert (seconds.loc["nearest"] == 0).all()

    def test_skip_train_reuses_checkpoints(self, smoke_experiment):
        first = experiment.run_experiment(smoke_experiment)
        ckpt = experiment.checkpoint_path(smoke_experiment, "swin")
        stamp = ckpt.stat().st_mtime_ns
        reused = smoke_experiment.model_copy(update={"skip_train": True})
        second = experiment.run_experiment(reused)
        assert ckpt.stat().st_mtime_ns == stamp
        pd.testing.assert_frame_equal(
            timing_free(first.table1), timing_free(second.table1)
        )

    def test_single_variant_has_no_ablation(self, smoke_experiment):
        config = smoke_experiment.model_copy(update={"variants": ("conv",)})
        result = experiment.run_experiment(config)
        assert result.table2 is None
        assert not (config.out_dir / "table2.csv").exists()

    def test_failure_names_stage(self, smoke_experiment, monkeypatch):
        def broken(*args, **kwargs):
            raise RuntimeError("out of memory")

        monkeypatch.setattr(experiment, "train", broken)
        with pytest.raises(StageError, match="train-conv") as info:
            experiment.run_experiment(smoke_experiment)
        assert info.value.stage == "train-conv"

    def test_config_lists_from_strings(self):
        config = ExperimentConfig.model_validate(
            {"variants": "swin", "kinds": "ellipses, checker-lesion"}
        )
        assert config.variants == ("swin",)
        assert config.kinds == ("ellipses", "checker-lesion")


@pytest.mark.slow
class TestDeskScale:
    """Full desk-scale runs; excluded from the default test selection."""

    @pytest.mark.parametrize("variant", ["conv", "swin"])
    def test_beats_nearest(self, tmp_path, variant):
        """Each variant gains at least 1 dB PSNR and lowers GMSD."""
        config = ExperimentConfig(out_dir=tmp_path / "desk", variants=(variant,))
        result = experiment.run_experiment(config)
        table = result.table1.set_index("method")
        gain = table.loc[variant, "psnr_mean"] - table.loc["nearest", "psnr_mean"]
        assert gain >= 1.0
        assert table.loc[variant, "gmsd_mean"] < table.loc["nearest", "gmsd_mean"]

    def test_slice_throughput(self):
        """Four steps on one 256x256 slice in under a second."""
        config = ExperimentConfig()
        net = init_params(config.net_config("swin"), seed=0)
        schedule = build_schedule(config.schedule_config())
        sampler_config = SamplerConfig(sub=sub_schedule(schedule, 4), gamma=2.0)
        lr = np.random.default_rng(0).uniform(size=(256, 256))
        denoiser = NetDenoiser(net)
        run_sampler(lr, denoiser, sampler_config)
        start = time.perf_counter()
        run_sampler(lr, denoiser, sampler_config)
        assert time.perf_counter() - start < 1.0
