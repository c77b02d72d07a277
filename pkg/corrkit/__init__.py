__version__ = "0.1.0"

from .core import (CameraModel, ConfidenceMap, DepthMap, DepthVariant, DisparityMap, DisplacementField,
                   LsmSystem, MatchSet, PoseWarp, compose_camera_pair, compose_warps, make_displacement_field)
from .errors import (ArgumentError, CorrkitError, EstimationError, EvaluationError, FormatError, ParseError,
                     UsageError, ValidationError)
from .matching import FeatureMap, ProposalKind, ProposalSet, ScoreVolume
from .rig import PoseGraph
