"""End-to-end experiment orchestration with content-addressed, resumable stages.

Every stage derives a config hash from the resolved settings it depends on
(including its upstream stage hashes). Artifacts are written through a temp
file and renamed to <stage>-<contentsha12>.<ext>; the manifest records
stage -> {config_hash, file, sha256}. A rerun (or --resume another-dir)
reuses an artifact only when both the config hash and the file checksum
match; a mismatch is a refusal, never a silent mix.
"""
from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

from .baselines import l1_channel_prune, probe_layer_prune, random_layer_prune
from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash, write_resolved
from .dataset import SignalDataset, export_dataset, generate_dataset, ingest_external
from .errors import ConfigError, NumericError, PipelineError
from .fusion import FusionConfig, prune_model_channels, save_prune_plan
from .graph import ModelGraph
from .metrics import PruneReport, count_params_flops, emit_report, evaluate
from .models import build_model
from .probe import run_lacd, write_probe_csv
from .train import TrainSettings, train_model

log = logging.getLogger("fcos.pipeline")

MANIFEST_NAME = "manifest.json"


def _report_to_dict(r: PruneReport) -> dict:
    return {
        "method": r.method,
        "pruning_type": r.pruning_type,
        "stage": r.stage,
        "original_params": r.original_params,
        "pruned_params": r.pruned_params,
        "original_flops": r.original_flops,
        "pruned_flops": r.pruned_flops,
        "original_acc": r.original_acc,
        "pruned_acc": r.pruned_acc,
        "original_per_snr": {str(k): v for k, v in r.original_per_snr.items()},
        "pruned_per_snr": {str(k): v for k, v in r.pruned_per_snr.items()},
    }


def _report_from_dict(d: dict) -> PruneReport:
    return PruneReport(
        method=d["method"],
        pruning_type=d["pruning_type"],
        stage=d["stage"],
        original_params=d["original_params"],
        pruned_params=d["pruned_params"],
        original_flops=d["original_flops"],
        pruned_flops=d["pruned_flops"],
        original_acc=d["original_acc"],
        pruned_acc=d["pruned_acc"],
        original_per_snr={float(k): v for k, v in d["original_per_snr"].items()},
        pruned_per_snr={float(k): v for k, v in d["pruned_per_snr"].items()},
    )


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, out_dir, workers: int = 1, resume=None):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.workers = workers
        self.resume_dir = Path(resume) if resume else None
        if self.resume_dir and not (self.resume_dir / MANIFEST_NAME).exists():
            raise PipelineError(f"--resume {self.resume_dir}: no {MANIFEST_NAME} found")
        self.state = self._load_state(self.out)
        self._resume_state = self._load_state(self.resume_dir) if self.resume_dir else None
        self.resolved = cfg.resolved()
        write_resolved(cfg, self.out / "resolved-config.json")
        self._dataset: SignalDataset | None = None
        self._models: dict[str, ModelGraph] = {}

    # -- state -----------------------------------------------------------

    @staticmethod
    def _load_state(root) -> dict:
        if root is None:
            return {"stages": {}, "reports": [], "curves": {}}
        path = Path(root) / MANIFEST_NAME
        if path.exists():
            return json.loads(path.read_text())
        return {"stages": {}, "reports": [], "curves": {}}

    def _save_state(self) -> None:
        (self.out / MANIFEST_NAME).write_text(json.dumps(self.state, indent=2, sort_keys=True))

    def _publish(self, stage: str, key: str, tmp_path: Path, stem: str, ext: str) -> Path:
        sha = file_sha256(tmp_path)
        final = self.out / f"{stem}-{sha[:12]}{ext}"
        tmp_path.rename(final)
        self.state["stages"][stage] = {"config_hash": key, "file": final.name, "sha256": sha}
        self._save_state()
        return final

    def _reuse(self, stage: str, key: str) -> Path | None:
        """Returns a verified artifact path for the stage, copying on resume."""
        for state, root in ((self.state, self.out), (self._resume_state, self.resume_dir)):
            if state is None:
                continue
            entry = state["stages"].get(stage)
            if entry is None:
                continue
            if entry["config_hash"] != key:
                if root == self.resume_dir:
                    raise PipelineError(
                        f"resume refused: stage {stage!r} in {root} was produced with a "
                        f"different config (hash {entry['config_hash'][:12]} != {key[:12]})"
                    )
                continue  # stale local entry from an older config: recompute
            path = Path(root) / entry["file"]
            if not path.exists() or file_sha256(path) != entry["sha256"]:
                raise PipelineError(f"artifact {path} is missing or corrupt (checksum mismatch)")
            if root != self.out:
                local = self.out / entry["file"]
                if not local.exists():
                    shutil.copy2(path, local)
                self.state["stages"][stage] = dict(entry)
                self._save_state()
                path = local
            log.info("stage %s: reusing %s", stage, path.name)
            return path
        return None

    def _add_report(self, report: PruneReport) -> None:
        self.state["reports"] = [
            r for r in self.state["reports"]
            if not (r["method"] == report.method and r["stage"] == report.stage)
        ]
        self.state["reports"].append(_report_to_dict(report))
        self._save_state()

    def _add_curve(self, label: str, rows) -> None:
        self.state["curves"][label] = [[e, s, a] for e, s, a in rows]
        self._save_state()

    # -- stage keys --------------------------------------------------------

    def _key_dataset(self) -> str:
        return config_hash({"dataset": self.resolved["dataset"]})

    def _key_baseline(self) -> str:
        return config_hash(
            {
                "upstream": self._key_dataset(),
                "model": self.resolved["model"],
                "train": self.resolved["train"],
            }
        )

    def _key_stage1(self) -> str:
        fc = self.resolved["fcos"]
        fusion = {k: fc[k] for k in ("keep_ratio", "metric", "scheme", "order", "input_mode")}
        return config_hash({"upstream": self._key_baseline(), "fusion": fusion})

    def _key_lacd(self) -> str:
        fc = self.resolved["fcos"]
        lacd = {k: fc[k] for k in ("beta", "warm_epochs", "probe_epochs", "final_epochs")}
        train = {k: self.resolved["train"][k] for k in ("lr", "batch_size", "optimizer", "seed")}
        return config_hash({"upstream": self._key_stage1(), "lacd": lacd, "train": train})

    # -- stages ------------------------------------------------------------

    def ensure_dataset(self) -> SignalDataset:
        if self._dataset is not None:
            return self._dataset
        key = self._key_dataset()
        path = self._reuse("dataset", key)
        if path is None:
            d = self.resolved["dataset"]
            ds = generate_dataset(
                classes=d["classes"],
                snr_grid_db=d["snr_db"],
                per_cell=d["per_cell"],
                length=d["length"],
                seed=d["seed"],
            )
            tmp = self.out / "dataset.tmp"
            export_dataset(ds, tmp)
            self._publish("dataset", key, tmp, "dataset", ".bin")
            self._dataset = ds
        else:
            self._dataset = ingest_external(path)
        return self._dataset

    def _train_guarded(self, model, settings, stage: str, track_test=False):
        try:
            return train_model(model, self.ensure_dataset(), settings, track_test=track_test)
        except NumericError as exc:
            abort = self.out / f"abort-{stage}.ckpt"
            save_checkpoint(model, abort, {"aborted_stage": stage, "error": str(exc)})
            raise PipelineError(
                f"stage {stage}: numeric failure ({exc}); inputs checkpointed to {abort}"
            ) from exc

    def ensure_baseline(self) -> ModelGraph:
        if "baseline" in self._models:
            return self._models["baseline"]
        key = self._key_baseline()
        path = self._reuse("train", key)
        if path is None:
            ds = self.ensure_dataset()
            m = self.resolved["model"]
            model = build_model(
                m["arch"],
                widths=m["widths"] or None,
                num_classes=ds.num_classes,
                input_shape=(2, ds.length),
                seed=m["seed"],
                kernel=m["kernel"] or None,
                blocks_per_stage=m["blocks_per_stage"],
            )
            t = self.resolved["train"]
            result = self._train_guarded(
                model,
                TrainSettings(
                    epochs=t["epochs"], lr=t["lr"], batch_size=t["batch_size"],
                    optimizer=t["optimizer"], seed=t["seed"],
                ),
                "train",
            )
            tmp = self.out / "baseline.tmp"
            save_checkpoint(
                result.model, tmp,
                {
                    "epochs": result.epochs_run,
                    "seed": t["seed"],
                    "dataset_fingerprint": ds.fingerprint(),
                    "best_epoch": result.best_epoch,
                },
            )
            self._publish("train", key, tmp, "baseline", ".ckpt")
            self._add_curve("baseline", result.curve)
            self._models["baseline"] = result.model
        else:
            self._models["baseline"] = load_checkpoint(path)
        return self._models["baseline"]

    def ensure_stage1(self) -> ModelGraph:
        if "stage1" in self._models:
            return self._models["stage1"]
        key = self._key_stage1()
        path = self._reuse("prune-channels", key)
        if path is None:
            baseline = self.ensure_baseline()
            ds = self.ensure_dataset()
            fc = self.resolved["fcos"]
            fusion_cfg = FusionConfig(
                keep_ratio=fc["keep_ratio"],
                metric=fc["metric"],
                scheme=fc["scheme"],
                order=fc["order"],
                input_mode=fc["input_mode"],
            )
            pruned, plan = prune_model_channels(baseline, fusion_cfg)
            tmp = self.out / "stage1.tmp"
            save_checkpoint(pruned, tmp, {"stage": "stage1", "dataset_fingerprint": ds.fingerprint()})
            final = self._publish("prune-channels", key, tmp, "stage1", ".ckpt")
            plan_path = final.with_suffix(".plan")
            save_prune_plan(plan, plan_path)
            self.state["stages"]["prune-channels"]["plan_file"] = plan_path.name
            self._save_state()

            p0, f0 = count_params_flops(baseline)
            p1, f1 = count_params_flops(pruned)
            acc0, snr0 = evaluate(baseline, ds, "test")
            acc1, snr1 = evaluate(pruned, ds, "test")
            self._add_report(
                PruneReport(
                    method="fcos-stage1", pruning_type="Channel", stage="stage1",
                    original_params=p0, pruned_params=p1,
                    original_flops=f0, pruned_flops=f1,
                    original_acc=acc0, pruned_acc=acc1,
                    original_per_snr=snr0, pruned_per_snr=snr1,
                )
            )
            self._models["stage1"] = pruned
        else:
            self._models["stage1"] = load_checkpoint(path)
        return self._models["stage1"]

    def ensure_lacd(self) -> ModelGraph:
        if "final" in self._models:
            return self._models["final"]
        key = self._key_lacd()
        path = self._reuse("lacd", key)
        if path is None:
            stage1 = self.ensure_stage1()
            ds = self.ensure_dataset()
            fc = self.resolved["fcos"]
            t = self.resolved["train"]
            try:
                result = run_lacd(
                    stage1, ds,
                    beta=fc["beta"],
                    final_epochs=fc["final_epochs"],
                    warm_epochs=fc["warm_epochs"],
                    probe_epochs=fc["probe_epochs"],
                    lr=t["lr"], batch_size=t["batch_size"], optimizer=t["optimizer"],
                    seed=t["seed"], workers=self.workers,
                )
            except NumericError as exc:
                abort = self.out / "abort-lacd.ckpt"
                save_checkpoint(stage1, abort, {"aborted_stage": "lacd", "error": str(exc)})
                raise PipelineError(
                    f"stage lacd: numeric failure ({exc}); inputs checkpointed to {abort}"
                ) from exc
            tmp = self.out / "final.tmp"
            save_checkpoint(
                result.model, tmp,
                {
                    "stage": "final",
                    "removed_units": result.removed_units,
                    "dataset_fingerprint": ds.fingerprint(),
                    "seed": t["seed"],
                },
            )
            final = self._publish("lacd", key, tmp, "final", ".ckpt")
            probes = final.with_name(final.stem + "-probes.csv")
            write_probe_csv(result.profile, result.diagnosis, probes)
            self.state["stages"]["lacd"]["probes_file"] = probes.name
            self._save_state()
            self._add_curve("fcos-finetune", result.curve)
            self._add_report(result.report)

            baseline = self.ensure_baseline()
            p0, f0 = count_params_flops(baseline)
            p1, f1 = count_params_flops(result.model)
            acc0, snr0 = evaluate(baseline, ds, "test")
            acc1, snr1 = evaluate(result.model, ds, "test")
            self._add_report(
                PruneReport(
                    method="fcos", pruning_type="Channel+Layer", stage="final",
                    original_params=p0, pruned_params=p1,
                    original_flops=f0, pruned_flops=f1,
                    original_acc=acc0, pruned_acc=acc1,
                    original_per_snr=snr0, pruned_per_snr=snr1,
                )
            )
            self._models["final"] = result.model
        else:
            self._models["final"] = load_checkpoint(path)
        return self._models["final"]

    def run_baseline(self, method: str | None = None) -> PruneReport:
        method = method or self.cfg.baseline.method
        if not method:
            raise ConfigError("no baseline method configured ([baseline] method=...)")
        b = self.resolved["baseline"]
        key = config_hash(
            {
                "upstream": self._key_baseline(),
                "baseline": {**b, "method": method},
                "final_epochs": self.resolved["fcos"]["final_epochs"],
                "train": self.resolved["train"],
            }
        )
        stage = f"baseline-{method}"
        path = self._reuse(stage, key)
        if path is not None:
            model = load_checkpoint(path)
            for r in self.state["reports"]:
                if r["method"] == method:
                    return _report_from_dict(r)
        baseline = self.ensure_baseline()
        ds = self.ensure_dataset()
        if method == "l1-channel":
            pruned = l1_channel_prune(baseline, b["keep_ratio"])
            ptype = "Channel"
        elif method == "random-layer":
            pruned = random_layer_prune(baseline, b["count"], b["seed"])
            ptype = "Layer"
        elif method == "probe-layer":
            pruned = probe_layer_prune(
                baseline, ds, b["count"], seed=b["seed"], workers=self.workers
            )
            ptype = "Layer"
        else:
            raise ConfigError(f"unknown baseline method {method!r}")
        t = self.resolved["train"]
        result = self._train_guarded(
            pruned,
            TrainSettings(
                epochs=self.resolved["fcos"]["final_epochs"], lr=t["lr"],
                batch_size=t["batch_size"], optimizer=t["optimizer"], seed=t["seed"],
            ),
            stage,
        )
        tmp = self.out / f"{stage}.tmp"
        save_checkpoint(result.model, tmp, {"stage": stage, "seed": t["seed"]})
        self._publish(stage, key, tmp, stage, ".ckpt")
        self._add_curve(stage, result.curve)
        p0, f0 = count_params_flops(baseline)
        p1, f1 = count_params_flops(result.model)
        acc0, snr0 = evaluate(baseline, ds, "test")
        acc1, snr1 = evaluate(result.model, ds, "test")
        report = PruneReport(
            method=method, pruning_type=ptype, stage="baseline",
            original_params=p0, pruned_params=p1,
            original_flops=f0, pruned_flops=f1,
            original_acc=acc0, pruned_acc=acc1,
            original_per_snr=snr0, pruned_per_snr=snr1,
        )
        self._add_report(report)
        return report

    def finetune(self, model_path, epochs: int | None = None) -> Path:
        """Standalone fine-tune of any checkpoint; writes finetuned-<sha>.ckpt."""
        model = load_checkpoint(model_path)
        t = self.resolved["train"]
        settings = TrainSettings(
            epochs=epochs or self.resolved["fcos"]["final_epochs"],
            lr=t["lr"], batch_size=t["batch_size"], optimizer=t["optimizer"], seed=t["seed"],
        )
        result = self._train_guarded(model, settings, "finetune", track_test=True)
        tmp = self.out / "finetuned.tmp"
        save_checkpoint(result.model, tmp, {"stage": "finetune", "source": str(model_path)})
        key = config_hash({"source": file_sha256(model_path), "epochs": settings.epochs})
        final = self._publish("finetune", key, tmp, "finetuned", ".ckpt")
        self._add_curve("finetune", result.curve)
        return final

    def emit_reports(self) -> list[Path]:
        reports = [_report_from_dict(d) for d in self.state["reports"]]
        if not reports:
            raise PipelineError("no reports recorded yet; run stages first")
        curves = {label: [(e, s, a) for e, s, a in rows] for label, rows in self.state["curves"].items()}
        return emit_report(reports, self.out, curves=curves)

    def run(self) -> dict:
        self.ensure_dataset()
        self.ensure_baseline()
        self.ensure_stage1()
        self.ensure_lacd()
        if self.cfg.baseline.method:
            self.run_baseline()
        paths = self.emit_reports()
        return {"out": self.out, "reports": paths, "stages": dict(self.state["stages"])}
