# Keypoint-commanded end-effector pose tracking for legged manipulators: kinematics, terrain,
# command sampling, rewards, curriculum and a whole-body DLS tracking oracle.

from ._exceptions import KeyposeError
from ._se3 import SE3Pose
from .collision import self_collision, terrain_clearance
from .command_sampler import CommandSample, EpisodeSchedule, command_stream, next_command
from .curriculum import (CurriculumConfig, CurriculumState, InitialConfiguration, StanceConfig, curriculum_update,
                         generate_initial_configuration)
from .dls_tracker import TrackerConfig, TrackingResult, evaluate_batch, track_command
from .pose_repr import KeypointTriple, PoseDelta, encode_delta, keypoints_of, pose_errors, pose_from_keypoints
from .reward_engine import RewardWeights, StepState, total_reward
from .robot_model import RobotModel, forward_kinematics, load_robot
from .terrain import CoarseHeightMap, TerrainField, build_coarse_map, generate_terrain
from .trajectory import Trajectory, replay_rewards
from .workspace import WorkspaceDataset, presample_workspace, sample_binned

__all__ = [
    'KeyposeError', 'SE3Pose',
    'RobotModel', 'load_robot', 'forward_kinematics',
    'self_collision', 'terrain_clearance',
    'TerrainField', 'CoarseHeightMap', 'generate_terrain', 'build_coarse_map',
    'WorkspaceDataset', 'presample_workspace', 'sample_binned',
    'EpisodeSchedule', 'CommandSample', 'next_command', 'command_stream',
    'KeypointTriple', 'PoseDelta', 'keypoints_of', 'pose_from_keypoints', 'encode_delta', 'pose_errors',
    'RewardWeights', 'StepState', 'total_reward',
    'CurriculumConfig', 'CurriculumState', 'StanceConfig', 'InitialConfiguration', 'curriculum_update',
    'generate_initial_configuration',
    'TrackerConfig', 'TrackingResult', 'track_command', 'evaluate_batch',
    'Trajectory', 'replay_rewards',
]
