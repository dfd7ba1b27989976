"""Fixed all-flags-off forward pass used for the degenerate-mode regression check.

Run as a script to (re)write ``golden/plain_forward.npz``; only do that when a
deliberate change to the plain path is made.
"""

from pathlib import Path

import numpy as np

from tribrain.config import AblationConfig, ModelConfig
from tribrain.control import StopPolicy, run_ticks
from tribrain.model import TriBrainModel
from tribrain.perception import ImageBatch

GOLDEN = Path(__file__).parent / "golden" / "plain_forward.npz"
PLAIN = AblationConfig(oscillation=False, neuromodulation=False, sda=False, attention_modulation=False, film=False)


def plain_forward() -> dict[str, np.ndarray]:
    cfg = ModelConfig(widths=(8, 16, 16), d_k=16, d_v=16, D=24, n_sync=40, classes=4, dropout=0.0, seed=11)
    model = TriBrainModel(cfg, PLAIN)
    rng = np.random.default_rng(2024)
    batch = ImageBatch(rng.uniform(size=(3, 16, 16, 3)), np.array([0, 1, 3]))
    tr = run_ticks(model, batch, StopPolicy(t_min=6, t_max=6), gate=False)
    return {"logits": tr.logits, "c_entropy": tr.c_entropy, "entropy": tr.entropy}


if __name__ == "__main__":
    GOLDEN.parent.mkdir(exist_ok=True)
    np.savez(GOLDEN, **plain_forward())
    print(f"wrote {GOLDEN}")
