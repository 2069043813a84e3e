"""Two-stage training: prior estimation with the ground truth attached,
then distillation into a student that sees only the degraded image."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import metrics
from .config import RunConfig
from .data import SynthSample, make_dataset
from .fileio import atomic_write_text
from .losses import correlation_loss, kl_loss, l1_loss
from .model import (DDEM, DDEMConfig, RestorationModel, load_checkpoint,
                    save_checkpoint)
from .optim import AdamW, CosineRestartSchedule
from .tensor import Tensor, no_grad


class TrainingDivergedError(RuntimeError):
    pass


CSV_HEADER = "step,l1,l_cor,l_kl,total,lr"


@dataclass
class TrainResult:
    checkpoint_path: str
    csv_path: str
    steps: int
    loss_first: float
    loss_final: float
    psnr_degraded: float
    psnr_restored: float
    ssim_restored: float


def _ddem_config(cfg: RunConfig, in_channels: int) -> DDEMConfig:
    # prior widths come from the backbone so the two halves agree
    bb = cfg.backbone
    return DDEMConfig(
        in_channels=in_channels, channels=cfg.ddem.channels,
        num_groups=cfg.ddem.num_groups, mdsl_per_group=cfg.ddem.mdsl_per_group,
        c_d=bb.c_d, c_d1=bb.c_d1, c_d2=bb.c_d2,
        d_state=cfg.ddem.d_state, dt_rank=cfg.ddem.dt_rank,
        scan_kind=cfg.ddem.scan_kind,
    )


def build_model(cfg: RunConfig, stage: int) -> RestorationModel:
    in_ch = 6 if stage == 1 else 3
    return RestorationModel(_ddem_config(cfg, in_ch), cfg.backbone, seed=cfg.seed)


def _fmt(v: float) -> str:
    return f"{v:.10e}"


def _ddem_input(sample: SynthSample, stage: int) -> Tensor:
    if stage == 1:
        return Tensor(np.concatenate([sample.degraded, sample.clean], axis=0))
    return Tensor(sample.degraded)


def evaluate(model: RestorationModel, samples: list[SynthSample],
             stage: int) -> tuple[float, float, float]:
    """Held-out (psnr_degraded, psnr_restored, ssim_restored) means."""
    p_deg, p_res, s_res = [], [], []
    with no_grad():
        for s in samples:
            restored, _ = model(Tensor(s.degraded), _ddem_input(s, stage))
            out = np.clip(restored.data, 0.0, 1.0)
            p_deg.append(metrics.psnr(s.degraded, s.clean))
            p_res.append(metrics.psnr(out, s.clean))
            s_res.append(metrics.ssim(out, s.clean))
    return float(np.mean(p_deg)), float(np.mean(p_res)), float(np.mean(s_res))


def _inherit_stage1(student: RestorationModel,
                    stage1_state: dict[str, np.ndarray]) -> None:
    """Copy every stage-1 parameter into the 3-channel student; the stem
    weight keeps only the slices that read the degraded image."""
    params = student.parameters()
    for name, p in params.items():
        src = stage1_state[name]
        if name == "ddem.stem.weight":
            src = src[:, : p.data.shape[1]]
        if src.shape != p.data.shape:
            raise ValueError(f"stage-1 shape mismatch for {name}: "
                             f"{src.shape} vs {p.data.shape}")
        p.data = src.copy()


def _run_loop(cfg: RunConfig, model: RestorationModel, stage: int,
              teacher: DDEM | None, train_set: list[SynthSample],
              heldout: list[SynthSample], tag: str) -> TrainResult:
    tc = cfg.train
    params = model.parameters()
    if stage == 2 and tc.freeze_backbone:
        params = {k: v for k, v in params.items() if not k.startswith("backbone.")}
    opt = AdamW(params, lr=tc.base_lr, betas=tc.betas,
                weight_decay=tc.weight_decay)
    sched = CosineRestartSchedule(tc.base_lr, list(tc.periods),
                                  list(tc.restart_weights), list(tc.eta_mins))
    batch_rng = np.random.default_rng(cfg.seed + 777)

    rows = [CSV_HEADER]
    totals: list[float] = []
    for step in range(tc.iterations):
        lr = sched.lr(step)
        opt.zero_grad()
        idx = batch_rng.integers(0, len(train_set), size=tc.batch_size)
        l1_acc = cor_acc = kl_acc = 0.0
        for i in idx:
            s = train_set[int(i)]
            restored, priors = model(Tensor(s.degraded), _ddem_input(s, stage))
            target = Tensor(s.clean)
            l1 = l1_loss(restored, target)
            cor, _ = correlation_loss(restored, target)
            loss = l1 + cor
            if stage == 2:
                with no_grad():
                    t_priors = teacher(_ddem_input(s, 1))
                kl = kl_loss(t_priors.z_tilde.data, priors.z_tilde)
                loss = loss + kl
                kl_acc += float(kl.data)
            (loss * (1.0 / tc.batch_size)).backward()
            l1_acc += float(l1.data)
            cor_acc += float(cor.data)
        l1_m = l1_acc / tc.batch_size
        cor_m = cor_acc / tc.batch_size
        kl_m = kl_acc / tc.batch_size
        total = l1_m + cor_m + (kl_m if stage == 2 else 0.0)
        if not np.isfinite(total):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: l1={l1_m} cor={cor_m} kl={kl_m}"
            )
        totals.append(total)
        if step % tc.log_every == 0 or step == tc.iterations - 1:
            kl_field = _fmt(kl_m) if stage == 2 else ""
            rows.append(f"{step},{_fmt(l1_m)},{_fmt(cor_m)},{kl_field},"
                        f"{_fmt(total)},{_fmt(lr)}")
        opt.step(lr=lr)

    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, f"loss_{tag}.csv")
    atomic_write_text(csv_path, "\n".join(rows) + "\n")
    ckpt_path = os.path.join(cfg.output_dir, f"{tag}.ckpt")
    save_checkpoint(ckpt_path, model.state(), stage=stage)

    p_deg, p_res, s_res = evaluate(model, heldout, stage)
    k = min(10, len(totals))
    return TrainResult(
        checkpoint_path=ckpt_path, csv_path=csv_path, steps=tc.iterations,
        loss_first=totals[0], loss_final=float(np.mean(totals[-k:])),
        psnr_degraded=p_deg, psnr_restored=p_res, ssim_restored=s_res,
    )


def _datasets(cfg: RunConfig) -> tuple[list[SynthSample], list[SynthSample]]:
    dc = cfg.data
    train_set = make_dataset(dc.n_train, dc.patch, dc.patch, dc.kinds,
                             dc.severity, cfg.seed)
    heldout = make_dataset(dc.n_heldout, dc.patch, dc.patch, dc.kinds,
                           dc.severity, cfg.seed + 10_000)
    return train_set, heldout


def train_stage1(cfg: RunConfig) -> TrainResult:
    """Stage 1: the estimation network reads the degraded image with its
    ground truth attached along the channel axis."""
    train_set, heldout = _datasets(cfg)
    model = build_model(cfg, stage=1)
    return _run_loop(cfg, model, 1, None, train_set, heldout, "stage1")


def train_stage2(cfg: RunConfig, stage1_ckpt: str) -> TrainResult:
    """Stage 2: a frozen copy of the stage-1 estimator teaches a student
    that sees only the degraded image; the student inherits the stage-1
    weights (stem input slices included) before fine-tuning."""
    tensors, stage = load_checkpoint(stage1_ckpt)
    if stage != 1:
        raise ValueError(f"expected a stage-1 checkpoint, got stage tag {stage}")

    teacher = DDEM(_ddem_config(cfg, 6), np.random.default_rng(cfg.seed))
    teacher.load_state({k[len("ddem."):]: v for k, v in tensors.items()
                        if k.startswith("ddem.")})
    teacher_snapshot = {k: v.data.copy() for k, v in teacher.parameters().items()}

    student = build_model(cfg, stage=2)
    _inherit_stage1(student, tensors)

    train_set, heldout = _datasets(cfg)
    result = _run_loop(cfg, student, 2, teacher, train_set, heldout, "stage2")

    # the teacher must come out of training bit-identical
    for k, v in teacher.parameters().items():
        if not np.array_equal(v.data, teacher_snapshot[k]):
            raise RuntimeError(f"teacher parameter {k} changed during stage 2")
    return result
