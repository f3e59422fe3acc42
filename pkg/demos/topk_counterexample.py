"""Two nodes, one kept coordinate: local Top-K loses the whole average.

Each node keeps its largest coordinate. The kept values cancel, so the
aggregated update is zero even though the true mean gradient is not.
A shared row selection does not have this failure.
"""
import numpy as np

from arctopk.bench import prop1_report
from arctopk.compressor import coord_topk

locals_ = [np.array([-1.0, 0.1]), np.array([1.0, 0.1])]
g = (locals_[0] + locals_[1]) / 2
print("true mean gradient:", g)
print("local top-1 picks: ", [coord_topk(v, 1) for v in locals_])
print("aggregate of picks:", sum(coord_topk(v, 1) for v in locals_) / 2)

for name in ("topk", "arc"):
    rep = prop1_report(name, K=1)
    print(f"{name:>4}: error ratio {rep['ratio']:.3f}")
