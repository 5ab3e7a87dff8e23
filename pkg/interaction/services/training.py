"""
Training Service - optimizes the perception head and steering conduit against
the hybrid objective while the generator and stand-in encoders stay frozen.

Handles:
- Per-batch loss assembly (salience, generative, contrastive, logic, classifier)
- AdamW with a cosine or constant learning-rate schedule
- Per-step metrics log (JSONL) and the run ledger
- Frozen-checksum assertion before and after training
- Checkpoint writing
"""

import json
import logging
import math

import numpy as np
import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import CosineAnnealingLR, LambdaLR

from interaction.exceptions import FrozenParameterError, HOIError
from interaction.services.layers import parameter_checksum
from interaction.services.ledger import RunLedger
from interaction.services.objectives import (
    bce_salience, first_step_verb_probs, loss_classifier, loss_generative, loss_logic,
    loss_nce, teacher_forced_logits, total_loss,
)

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.jsonl'
CHECKPOINT_FILE = 'checkpoint.pt'


def batch_losses(model, workspace, bundles, weights):
    """Loss components for one batch of scene bundles, keyed by component name"""
    cfg = workspace.config
    components = {}

    sal_terms = []
    local, scene, verbs = [], [], []
    for bundle in bundles:
        if not bundle.pairs:
            continue
        _, u_tilde, s = model.score_pairs(bundle)
        sal_terms.append(bce_salience(s, bundle.labels))
        for k, verb in bundle.positives:
            local.append(u_tilde[k])
            scene.append(bundle.f_global)
            verbs.append(verb)
    if sal_terms:
        components['sal'] = torch.stack(sal_terms).mean()

    if not verbs:
        return components
    v = torch.stack(local)
    f_global = torch.stack(scene)

    if model.classifier is not None:
        components['cls'] = loss_classifier(model.classifier(v), verbs)
        return components

    kernels = model.kernels(v, f_global)
    append_eos = cfg.toggles.append_eos
    if weights.gen > 0 or weights.logic > 0:
        targets = [workspace.vocab.target_tokens(verb, append_eos) for verb in verbs]
        logits, _ = teacher_forced_logits(kernels, targets, workspace.generator, workspace.inquiry_tokens)
        if weights.gen > 0:
            components['gen'] = loss_generative(kernels, targets, workspace.generator, workspace.vocab,
                                                workspace.inquiry_tokens, append_eos=append_eos,
                                                logits=logits)
        if weights.logic > 0 and len(workspace.exclusions):
            probs = first_step_verb_probs(logits[:, 0], workspace.vocab, masked=cfg.toggles.logic_masked,
                                          append_eos=append_eos)
            components['logic'] = loss_logic(probs, workspace.exclusions)
    if weights.nce > 0 and kernels.shape[1] > 0:
        negatives = workspace.negatives.batch(verbs)
        components['nce'] = loss_nce(kernels, verbs, negatives, workspace.verb_embeddings, weights.tau)
    return components


def build_schedule(optimizer, config):
    opt = config.optimizer
    if opt.schedule == 'cosine' and opt.steps > 0:
        return CosineAnnealingLR(optimizer, T_max=opt.steps)
    return LambdaLR(optimizer, lambda step: 1.0)


class TrainingService:
    """One training run for a workspace"""

    def __init__(self, workspace, output_dir, ledger=None):
        self.workspace = workspace
        self.config = workspace.config
        self.output_dir = output_dir
        self.ledger = ledger or RunLedger()
        self.weights = self.config.loss_weights()

    def batch_order(self, steps):
        """Seeded image order: a fresh permutation per epoch, cut into batches"""
        samples = list(self.workspace.train)
        if not samples:
            return []
        rng = np.random.default_rng(self.config.seed)
        size = min(self.config.optimizer.batch_size, len(samples))
        order = []
        while len(order) < steps * size:
            order.extend(rng.permutation(len(samples)).tolist())
        return [[samples[i] for i in order[b * size:(b + 1) * size]] for b in range(steps)]

    def train(self, model=None):
        """Returns (model, checkpoint path, history of per-step metric dicts)"""
        ws, cfg = self.workspace, self.config
        torch.manual_seed(cfg.seed)
        model = model or ws.new_model()
        model.train()

        frozen_before = ws.frozen_checksum()
        self.ledger.start(cfg, self.output_dir, frozen_before)
        optimizer = AdamW([p for p in model.parameters() if p.requires_grad],
                          lr=cfg.optimizer.lr, weight_decay=cfg.optimizer.weight_decay)
        schedule = build_schedule(optimizer, cfg)

        metrics_path = self.output_dir / METRICS_FILE
        history = []
        try:
            with metrics_path.open('w', encoding='utf-8') as fh:
                for step, batch in enumerate(self.batch_order(cfg.optimizer.steps), start=1):
                    bundles = [ws.bundle(sample) for sample in batch]
                    components = batch_losses(model, ws, bundles, self.weights)
                    loss = total_loss(components, self.weights)

                    optimizer.zero_grad()
                    if loss.requires_grad:
                        loss.backward()
                        if cfg.optimizer.grad_clip > 0:
                            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optimizer.grad_clip)
                        optimizer.step()
                    learning_rate = optimizer.param_groups[0]['lr']
                    schedule.step()

                    record = {
                        'step': step,
                        'total': float(loss.detach()),
                        'components': {k: float(v.detach()) for k, v in sorted(components.items())},
                        'lr': learning_rate,
                    }
                    history.append(record)
                    fh.write(json.dumps(record, sort_keys=True) + '\n')
                    self.ledger.step(step, record['total'], record['components'], learning_rate)
                    if step == 1 or step % cfg.optimizer.log_every == 0:
                        parts = ' '.join(f"{k}={v:.4f}" for k, v in record['components'].items())
                        logger.info(f"step {step}/{cfg.optimizer.steps} loss={record['total']:.4f} {parts}")

            frozen_after = ws.frozen_checksum()
            if frozen_after != frozen_before:
                raise FrozenParameterError(
                    f"frozen parameters changed during training ({frozen_before[:12]} -> {frozen_after[:12]})")
        except HOIError as e:
            self.ledger.fail(e)
            raise

        model.eval()
        checkpoint_path = save_checkpoint(self.output_dir / CHECKPOINT_FILE, model, ws, frozen_before)
        initial = history[0]['total'] if history else None
        final = history[-1]['total'] if history else None
        self.ledger.finish(checkpoint_path, parameter_checksum(model), initial, final)
        logger.info(f"training finished: {len(history)} steps, loss {initial} -> {final}")
        return model, checkpoint_path, history


def save_checkpoint(path, model, workspace, frozen_checksum):
    torch.save({
        'model_state': model.state_dict(),
        'config': workspace.config.as_dict(),
        'verbs': list(workspace.vocab.phrases),
        'objects': list(workspace.objects),
        'frozen_checksum': frozen_checksum,
    }, path)
    return path


def loss_drop(history):
    """Relative drop between the mean loss of the first and last tenth of training"""
    if len(history) < 2:
        return 0.0
    window = max(1, len(history) // 10)
    start = float(np.mean([h['total'] for h in history[:window]]))
    end = float(np.mean([h['total'] for h in history[-window:]]))
    if start <= 0 or not math.isfinite(start):
        return 0.0
    return (start - end) / start
