"""Covariate-shift-robust learning with empirical V-matrices."""
from .dataset import (BiasSpec, LabeledDataset, NormalizationParams, TargetSample,
                      bias_norm, bias_single_feature, bias_sugiyama, gen_ringnorm,
                      gen_sigmoid_synthetic, gen_twonorm, load_csv, normalize_unit_cube)
from .vmatrix import (VMatrix, analytic_v_gaussian, analytic_v_uniform, diagonal_v,
                      empirical_v, empirical_v_additive, identity_v)
from .vsvm import KernelConfig, VsvmModel, fit, kernel_eval
from .vboost import BoostModel, BoostParams, fit_boost, predict_boost
from .baselines import ImportanceWeights, KdeModel, fit_weighted, importance_weights

__version__ = "0.1.0"
