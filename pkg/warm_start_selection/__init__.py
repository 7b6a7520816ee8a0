from .mssp_simulator import MsspConfig, MsspReport, RoundResult, offline_reward, run_mssp, run_round
from .score_distribution import DistributionEstimator, ScoreDistribution, parse_distribution
from .selection_policies import make_policy, parse_policy
from .value_tables import WsspInstance, build_rank_value_table, build_value_table
