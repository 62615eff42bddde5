import math


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """
    Linear warm-up followed by cosine decay to zero.

    step 0 gives base_lr / warmup_steps; the last step approaches 0.
    """
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    decay_steps = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / decay_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def ema_momentum(step: int, total_steps: int, base: float) -> float:
    """Cosine ramp of the target-network momentum from base toward 1.0."""
    if total_steps <= 0:
        return base
    progress = min(1.0, step / total_steps)
    return 1.0 - (1.0 - base) * (math.cos(math.pi * progress) + 1.0) / 2.0
