"""Test-time adaptation of a toy 3D detector with a synergy-weighted model bank."""

from .bank import ModelBank, eviction_index
from .boxsim import Box3D, BoxSet, box_iou, hungarian_match, s_box
from .config import RunConfig, load_config
from .detector import DetectorConfig
from .errors import ConfigError, SynergyError, TrainingDiverged
from .featsim import s_feat
from .fileio import load_checkpoint, save_checkpoint
from .params import ParamVector
from .runner import replay_early_set, run_tta
from .simstream import StreamConfig, generate_stream
from .synergy import assemble, gram_matrix, synergy_weights

__version__ = "0.1.0"
