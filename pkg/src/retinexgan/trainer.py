"""Optimization loop: alternating discriminator/generator Adam updates,
milestone learning-rate decay, CSV logging and bit-exact checkpoints."""

import csv
import io
import json
import os
import time
from dataclasses import dataclass

import torch

from . import losses as L
from . import model as M
from .config import RunConfig
from .dataset import iterate_batches

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint file is corrupt or belongs to a different config."""


@dataclass
class TrainState:
    generator: M.Generator
    discriminator: M.PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int
    config: RunConfig


def init_state(config):
    """Deterministically initialized networks and fresh optimizers."""
    if config.deterministic:
        torch.set_num_threads(1)
    mc = config.model
    gen, disc = M.init_params(config.seed, mc.strategy_enum(), depth=mc.depth,
                              base_width=mc.base_width,
                              enhancer_sees_reflectance=mc.enhancer_sees_reflectance)
    oc = config.optim
    opt_g = torch.optim.Adam(gen.parameters(), lr=oc.lr,
                             betas=(oc.beta1, oc.beta2), eps=oc.epsilon)
    opt_d = torch.optim.Adam(disc.parameters(), lr=oc.lr,
                             betas=(oc.beta1, oc.beta2), eps=oc.epsilon)
    return TrainState(generator=gen, discriminator=disc, opt_g=opt_g,
                      opt_d=opt_d, step=0, config=config)


def _generator_objective(gout, x, y, lc, strategy, score_fake=None):
    """All generator-side loss tensors for one batch."""
    flags = lc.flags
    rec_x, rec_y, reg = L.rec_loss(x, y, gout.dec_x, gout.dec_y, strategy,
                                   reg_cfg=lc.reg,
                                   use_smooth_l1=flags.use_smooth_l1)
    dec = L.dec_loss(gout.dec_x, gout.dec_y, use_smooth_l1=flags.use_smooth_l1,
                     tie_factor=lc.tie_factor)
    enh = L.enh_loss(y, gout.dec_x.R, gout.I_x_enh,
                     use_smooth_l1=flags.use_smooth_l1)
    if flags.use_ssim:
        ssim_ms = L.ms_ssim_loss(gout.x_hat, y, lc.ssim)
    else:
        ssim_ms = torch.zeros((), dtype=x.dtype)
    com = L.com_loss(enh, ssim_ms, alpha=lc.weights.alpha,
                     use_ssim=flags.use_ssim)
    if flags.use_gan and score_fake is not None:
        cgan_g = -torch.log(score_fake.clamp(min=1e-8)).mean()
    else:
        cgan_g = torch.zeros((), dtype=x.dtype)
    total = L.total_loss(rec_x, rec_y, reg, dec, com, cgan_g,
                         lc.weights, strategy, flags)
    return {"rec_x": rec_x, "rec_y": rec_y, "reg": reg, "dec": dec,
            "enh": enh, "ssim_ms": ssim_ms, "com": com, "cgan_g": cgan_g,
            "total": total}


def _breakdown(parts, cgan_d):
    vals = {k: float(v.item()) for k, v in parts.items()}
    vals["cgan_d"] = float(cgan_d.item()) if torch.is_tensor(cgan_d) else float(cgan_d)
    return L.LossBreakdown(**vals)


def evaluate_losses(state, batch):
    """Loss breakdown of the current parameters on a batch, no updates."""
    lc = state.config.loss
    strategy = state.config.model.strategy_enum()
    with torch.no_grad():
        gout = state.generator(batch.x, batch.y)
        if lc.flags.use_gan:
            score_real = state.discriminator(batch.x, batch.y)
            score_fake = state.discriminator(batch.x, gout.x_hat)
            cgan_d, _ = L.cgan_losses(score_real, score_fake)
        else:
            score_fake = None
            cgan_d = torch.zeros(())
        parts = _generator_objective(gout, batch.x, batch.y, lc, strategy,
                                     score_fake=score_fake)
    return _breakdown(parts, cgan_d)


def train_step(state, batch):
    """One optimization step: discriminator first (when adversarial
    training is on), then the generator on the weighted total. The
    returned breakdown is evaluated after both updates."""
    lc = state.config.loss
    strategy = state.config.model.strategy_enum()
    x, y = batch.x, batch.y

    state.step += 1
    _apply_milestones(state)

    gout = state.generator(x, y)

    if lc.flags.use_gan:
        score_real = state.discriminator(x, y)
        score_fake_d = state.discriminator(x, gout.x_hat.detach())
        cgan_d, _ = L.cgan_losses(score_real, score_fake_d)
        if not torch.isfinite(cgan_d):
            raise FloatingPointError("non-finite loss component cgan_d")
        state.opt_d.zero_grad()
        cgan_d.backward()
        state.opt_d.step()
        score_fake = state.discriminator(x, gout.x_hat)
    else:
        score_fake = None

    parts = _generator_objective(gout, x, y, lc, strategy,
                                 score_fake=score_fake)
    state.opt_g.zero_grad()
    parts["total"].backward()
    state.opt_g.step()

    return evaluate_losses(state, batch)


def _apply_milestones(state):
    for milestone in state.config.optim.lr_milestones:
        step, factor = milestone
        if step == state.step:
            for opt in (state.opt_g, state.opt_d):
                for group in opt.param_groups:
                    group["lr"] *= factor


def current_lr(state):
    return state.opt_g.param_groups[0]["lr"]


LOG_FIELDS = ("step",) + L.LossBreakdown.FIELDS + ("lr", "wall_ms")


def train(config, manifest, out_dir, state=None, log_path=None):
    """Run up to config.optim.max_steps over seeded epoch shuffles.

    Checkpoints every checkpoint_every steps and at the end; appends one
    CSV log row per step. Resuming from a partial checkpoint continues the
    step counter and the log.
    """
    os.makedirs(out_dir, exist_ok=True)
    if state is None:
        state = init_state(config)
    oc = config.optim
    log_path = log_path or os.path.join(out_dir, "train_log.csv")
    fresh_log = state.step == 0 or not os.path.exists(log_path)
    log_fh = open(log_path, "w" if fresh_log else "a", newline="")
    writer = csv.writer(log_fh)
    if fresh_log:
        writer.writerow(LOG_FIELDS)
    try:
        epoch = 0
        while state.step < oc.max_steps:
            for batch in iterate_batches(manifest, "train", oc.batch_size,
                                         config.seed, epoch):
                if state.step >= oc.max_steps:
                    break
                t0 = time.perf_counter()
                breakdown = train_step(state, batch)
                wall_ms = (time.perf_counter() - t0) * 1e3
                row = [state.step] + [f"{breakdown.as_dict()[k]:.8f}"
                                      for k in L.LossBreakdown.FIELDS]
                row += [f"{current_lr(state):.8g}", f"{wall_ms:.2f}"]
                writer.writerow(row)
                if state.step % oc.checkpoint_every == 0:
                    save_checkpoint(state, os.path.join(out_dir, "checkpoint.pt"))
            epoch += 1
    finally:
        log_fh.close()
    save_checkpoint(state, os.path.join(out_dir, "checkpoint.pt"))
    return state


def save_checkpoint(state, path):
    """Single binary blob plus a JSON sidecar with step/seed/digest."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_digest": state.config.digest(),
        "step": state.step,
        "seed": state.config.seed,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())
    sidecar = {
        "step": state.step,
        "seed": state.config.seed,
        "config_digest": state.config.digest(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_checkpoint(path, config, check_digest=True):
    """Restore a TrainState; refuses checkpoints of a different config."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unrecognized checkpoint format in {path}")
    if check_digest and payload["config_digest"] != config.digest():
        raise CheckpointError(
            f"config digest mismatch: checkpoint {payload['config_digest']} "
            f"vs current {config.digest()}")
    state = init_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.step = payload["step"]
    return state
