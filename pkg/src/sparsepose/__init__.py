"""3D human pose sequences from 2D poses or heat maps with a sparse pose
dictionary, temporal smoothness priors and a weak-perspective camera."""

from .bcd import BcdReport, apg, solve_bcd, update_coeffs, update_rotations, update_translations
from .dictionary import DictLearnConfig, align_corpus, learn_dictionary
from .em import EmReport, expected_pose, q_value, solve_em
from .initialization import InitConfig, init_from_heatmaps, init_given_2d
from .metrics import (
    EvalReport,
    Intrinsics,
    evaluate,
    limb_rescale,
    mpjpe,
    mpjpe_procrustes,
    pck,
    perspective_adjust,
    procrustes_align,
)
from .objective import ObjectiveBreakdown, data_loss, grad_coeffs, grad_rotations, objective, prior
from .synth import SynthConfig, corrupt_heatmaps, generate_sequence, make_dictionary, render_heatmaps
from .types import (
    CameraTrajectory,
    CoeffSequence,
    GridGeometry,
    HeatMapStack,
    ModelParams,
    Pose2DSequence,
    Pose3D,
    Pose3DSequence,
    PoseDictionary,
    SequenceEstimate,
    SkeletonSpec,
    default_skeleton,
    project,
    reconstruct_pose,
    validate,
)

__version__ = "0.1.0"
