from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SlotDistributions:
    """Model output for one canvas of length n.

    ``content_logp[l, c]`` is log p(c | l) and ``location_logp[l]`` is log p(l),
    for the n + 1 slots l.
    """

    content_logp: np.ndarray
    location_logp: np.ndarray

    @property
    def num_slots(self) -> int:
        return self.content_logp.shape[0]

    def joint_logp(self) -> np.ndarray:
        return self.content_logp + self.location_logp[:, None]

    def check_normalized(self, atol: float = 1e-5) -> bool:
        rows = np.logaddexp.reduce(self.content_logp, axis=1)
        loc = np.logaddexp.reduce(self.location_logp)
        return bool(np.all(np.abs(rows) <= atol) and abs(loc) <= atol)
