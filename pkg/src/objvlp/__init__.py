"""Object-level vision-language pre-training objectives on a synthetic 3D grounding world.

Submodules:

* ``geom3d``      axis-aligned boxes, IoU, DIoU loss and its gradient
* ``iou_filter``  positive/negative partition and label-smoothed targets
* ``contrastive`` multi-positive cross- and self-contrastive losses
* ``objectives``  IoU-guided detection loss, cross-entropy, weighted total
* ``diffkit``     parameter store, MLPs with manual backprop, SGD, gradient checking
* ``synthworld``  procedural scene generator and JSON-lines dataset I/O
* ``metrics``     Acc@k, IoU-gated score, exact match
* ``harness``     training, evaluation, ablation grid and threshold sweep
"""

from ._backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
