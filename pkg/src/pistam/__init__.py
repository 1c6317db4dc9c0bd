"""Policy improvement with spatio-temporal affordance maps."""

from .env import EnvConfig, EnvState, HandoverEnv
from .gmm import MixtureModel, gmm_classify, gmm_density, gmm_fit_em
from .loop import RunConfig, evaluate_policy, initialize, run, run_iteration
from .mdp import Action, LabeledDataset, dataset_aggregate, normalize_state, states_equal
from .policy import PolicyModel, policy_act, random_policy_dataset, train_policy
from .stam import (AffordanceGrid, AffordanceSignature, affordance_value, compose_map, fit_signatures,
                   legal_actions, rasterize, threshold_legal)
from .uct import ExpansionStats, SearchConfig, ucb_score, uct_search

__version__ = "0.1.0"
