"""Multi-task architecture search over a flow-restricted DAG.

Every task owns a sub-network of one shared central network. The shared
weights are warmed up, then the task gates are searched. The gates are
reduced to binary sub-networks and the weights are fine-tuned from the
warm-up snapshot.
"""

from .centralnet import CentralNet, GateSet, Mode, count_parameters, predict
from .evalbench import (SyntheticMtlDataset, gen_heterogeneous, gen_homogeneous,
                        relative_performance, run_baselines)
from .graphtop import (RestrictedDag, SubGraph, TopologyReport, build_restricted_dag, depth,
                       export_dot, sparsity, topology, width)
from .numcore import Adam, Variable, backward
from .objectives import squeeze_loss, task_loss, train_loss
from .pipeline import ExperimentReport, TrainPlan, run_experiment
from .reduction import flow_based_reduce, random_reduce, reduce_to_sparsity, threshold_reduce
from .tasks import CLASSIFICATION, REGRESSION, TaskSpec

__version__ = "0.1.0"

__all__ = [
    "Adam", "CLASSIFICATION", "CentralNet", "ExperimentReport", "GateSet", "Mode",
    "REGRESSION", "RestrictedDag", "SubGraph", "SyntheticMtlDataset", "TaskSpec",
    "TopologyReport", "TrainPlan", "Variable", "backward", "build_restricted_dag",
    "count_parameters", "depth", "export_dot", "flow_based_reduce", "gen_heterogeneous",
    "gen_homogeneous", "predict", "random_reduce", "reduce_to_sparsity",
    "relative_performance", "run_baselines", "run_experiment", "sparsity", "squeeze_loss",
    "task_loss", "threshold_reduce", "topology", "train_loss", "width",
]
