"""Relative-accuracy evaluation of lidar mapping trajectories by ghost detection."""
from .errors import *  # noqa: F401,F403
from .model import (EvalConfig, EvaluationReport, Frame, Label, LidarPoint, PointCloud, Pose, PoseStats,
                    Rigid, SensorModel)
from .spatial import SubmapIndex

__version__ = "0.1.0"
