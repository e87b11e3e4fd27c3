"""Online step detection: causal multi-stage TCN, ordering-aware streaming inference,
step state tracking and the belief-file evaluation kit."""
from .belief import BeliefRecord, StepState, parse_belief, write_belief
from .evaluation import ActionSegment, average_precision, bin_and_extract_segments, build_report, iou, match_segments
from .online import FrameBuffer, ProgressTracker, StreamingTcn, apply_ordering_penalty, finalize_probabilities, infer_current
from .state_machine import StateMachine
from .tasks import PROFILES, TaskDefinition, TaskProfile
from .tcn import CausalTcnModel, FeatureSequence, StageOutput, dilated_causal_conv, model_backward, model_forward, stage_forward
from .training import LabeledSequence, TrainConfig, loss, random_trim, train_task

__version__ = "0.1.0"
