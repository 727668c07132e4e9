"""Adam with per-group learning rates and growable classifier state."""

from __future__ import annotations

import numpy as np

from .encoder import Model
from .errors import TrainingError


class Adam:
    """Standard Adam (bias-corrected) over a model's named parameters.

    Learning rates come from `group_lrs`, keyed by the model's parameter
    group names.  Gradient accumulation is external: callers run several
    backward passes (gradients sum on the tensors) and then one step().
    Missing gradients are treated as zeros, so moment estimates still decay
    and the bias-correction counter still advances.

    When the classifier grows, the new rows' moments start at zero; state
    arrays are padded automatically on the next step.
    """

    def __init__(self, model: Model, group_lrs: dict[str, float],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.model = model
        self.group_lrs = dict(group_lrs)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: dict[str, dict] = {
            name: {"m": np.zeros_like(t.data), "v": np.zeros_like(t.data), "t": 0}
            for name, t in model.params.items()
        }

    def zero_grad(self) -> None:
        for t in self.model.params.values():
            t.zero_grad()

    def _sync(self, name: str, shape: tuple[int, ...]) -> None:
        st = self.state[name]
        if st["m"].shape == shape:
            return
        if st["m"].shape[1:] != shape[1:] or st["m"].shape[0] > shape[0]:
            raise TrainingError(f"parameter {name} changed shape incompatibly: "
                                f"{st['m'].shape} -> {shape}")
        pad = shape[0] - st["m"].shape[0]
        widths = [(0, pad)] + [(0, 0)] * (len(shape) - 1)
        st["m"] = np.pad(st["m"], widths)
        st["v"] = np.pad(st["v"], widths)

    def step(self) -> None:
        for name, p in self.model.params.items():
            lr = self.group_lrs[self.model.parameter_group(name)]
            self._sync(name, p.data.shape)
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            st = self.state[name]
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * (g * g)
            m_hat = st["m"] / (1.0 - self.beta1 ** st["t"])
            v_hat = st["v"] / (1.0 - self.beta2 ** st["t"])
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise TrainingError(f"non-finite values in parameter {name!r} after update")
