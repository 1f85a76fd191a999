"""semgrid: a gridworld mobile-manipulation stack.

An online gradient-optimized semantic scene map (per-grid embeddings
queried by class vectors through a sigmoid) drives coarse BFS navigation;
a behavior-cloned short-horizon policy refines the pose and triggers
interactions, with openable-affordance gating.
"""

from .world import (  # noqa: F401
    Action, ActionKind, AgentState, DEFAULT_ROSTER, FailReason, GridScene,
    ObjectInstance, Roster, StepResult, check_goal_conditions, load_scene,
    save_scene, step,
)
from .scenegen import ConfigError, SceneGenConfig, generate_scene  # noqa: F401
from .raycast import EgoFrame, RenderConfig, render_egocentric  # noqa: F401
from .mapping import (  # noqa: F401
    GridObservation, MapConfig, PoseEstimate, SemanticPoints, SoftLabels,
    bin_points, project_frame, soft_labels, update_pose,
)
from .scene_repr import (  # noqa: F401
    CellSceneMap, DifferentiableSceneMap, ReprConfig, loss_and_grads,
)
from .control import (  # noqa: F401
    ControlConfig, EpisodeDriver, SubgoalResult, bfs_plan, coarse_target,
    execute_interaction, face_target, fine_features, fine_policy,
    random_walk_target, run_subgoal,
)
from .imitation import (  # noqa: F401
    BCDataset, DatasetConfig, PolicyParams, TrainConfig, collect_dataset,
    expert_interactable_states, expert_label_short_horizon, load_policy,
    save_policy, train_bc,
)
from .planner import Subgoal, TaskSpec, parse_task_file, plan_from_task  # noqa: F401
from .bench import (  # noqa: F401
    ABLATION_PRESETS, AblationMode, EpisodeResult, RunParams, build_suite,
    expert_rollout, metrics, run_ablation_matrix, run_episode, run_suite,
)

__version__ = "0.1.0"
