"""Model directories: tensorio parameter files plus a JSON description.

Layout::

    config.json           train config, bin spec, best epoch, head list
    ecdf.weights ...      one tensorio file per array of each head present
    metrics.csv           epoch,train_loss,val_rps,val_crps
    steps.csv             multi-task step log (multitask objective only)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from raincast.binning import BinSpec, make_spec
from raincast.dataset import fmt
from raincast.tensorio import read_json, read_tensor, write_json, write_tensor
from raincast.train import EcdfModel, HurdleModel, TrainConfig, TrainResult

MODEL_FORMAT = 1
ECDF_ARRAYS = ("weights", "bias", "feat_mean", "feat_scale")
HURDLE_ARRAYS = ("weights", "bias", "log_var", "feat_mean", "feat_scale")


@dataclass
class SavedModel:
    cfg: TrainConfig
    spec: BinSpec
    ecdf: EcdfModel | None
    hurdle: HurdleModel | None
    best_epoch: int

    @property
    def heads(self) -> list[str]:
        return [name for name, m in (("ecdf", self.ecdf), ("hurdle", self.hurdle)) if m is not None]


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header] + [",".join(fmt(v) if isinstance(v, float) else str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def save_model(result: TrainResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    heads = []
    if result.ecdf is not None:
        heads.append("ecdf")
        for name in ECDF_ARRAYS:
            write_tensor(np.atleast_1d(getattr(result.ecdf, name)), out / f"ecdf.{name}")
    if result.hurdle is not None:
        heads.append("hurdle")
        for name in HURDLE_ARRAYS:
            write_tensor(np.atleast_1d(getattr(result.hurdle, name)), out / f"hurdle.{name}")
    write_json(
        {
            "format_version": MODEL_FORMAT,
            "train": asdict(result.cfg),
            "bins": result.cfg.spec.to_json(),
            "heads": heads,
            "best_epoch": result.best_epoch,
            "init_val_rps": result.init_val_rps,
        },
        out / "config.json",
    )
    _write_csv(
        out / "metrics.csv",
        "epoch,train_loss,val_rps,val_crps",
        [(m.epoch, m.train_loss, m.val_rps, m.val_crps) for m in result.metrics],
    )
    if result.steps:
        _write_csv(
            out / "steps.csv",
            "step,l_pixel,l_agg,ema_pixel,ema_agg,total",
            [(s.step, s.l_pixel, s.l_agg, s.ema_pixel, s.ema_agg, s.total) for s in result.steps],
        )
    return out


def load_model(model_dir) -> SavedModel:
    d = Path(model_dir)
    p = d / "config.json"
    if not p.exists():
        raise FileNotFoundError(f"no config.json in {model_dir}")
    meta = read_json(p)
    if meta.get("format_version") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {meta.get('format_version')!r}")
    cfg = TrainConfig.from_dict(meta["train"])
    spec = make_spec(cfg.r_max, cfg.epsilon)
    ecdf = hurdle = None
    if "ecdf" in meta["heads"]:
        a = {name: read_tensor(d / f"ecdf.{name}") for name in ECDF_ARRAYS}
        ecdf = EcdfModel(spec, **a)
    if "hurdle" in meta["heads"]:
        a = {name: read_tensor(d / f"hurdle.{name}") for name in HURDLE_ARRAYS}
        hurdle = HurdleModel(**a)
    return SavedModel(cfg, spec, ecdf, hurdle, int(meta["best_epoch"]))
