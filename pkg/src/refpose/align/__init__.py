"""Feature refinement, correspondence selection, pose solving and training loss."""
from .matching import (
    CorrespondenceSet,
    affinity,
    alignment_loss,
    loss_gradient,
    select_correspondences,
    solve_pose,
)
from .pipeline import AlignerWeights, EstimateResult, IterationRecord, SSMExtractor, View, estimate
from .refine import init_aligner, refine_backward, refine_features, refine_forward
