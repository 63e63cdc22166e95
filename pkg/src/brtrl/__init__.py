"""Interpretable reinforcement learning with boosted regression trees."""
from .boosting import GbmClassifier, GbmParams, fit_gbm, softmax
from .envs import CartPole, EpisodeLog, MountainCar, make_env, run_episode
from .pipeline import DistillReport, EvalReport, LabeledDataset, collect, compare, distill, evaluate
from .policy_gradient import PgConfig, PreferenceEnsemble, ValueBaseline, train
from .teacher import QFunction, TileCoding, sarsa_train
from .trees import RegressionTree, TreeParams, export_rules, fit_tree, node_count

__version__ = "0.1.0"
