"""Multi-label metric learning for multichannel time-series trials.

Embeddings are trained with triplet, ladder and product ladder losses and
evaluated within subject and with complete or partial leave-one-subject-out.
"""

from .dataio import Dataset, SyntheticSpec, Trial, generate_synthetic, load_dataset, save_dataset
from .embedder import ArchitectureSpec, TrainSpec, train_embedder
from .losses import LossComponent, LossConfig, builtin_config, product_ladder_loss, triplet_loss
from .mining import BatchSpec, sample_batch
from .scenarios import ScenarioSpec, few_shot_curve, run_complete_loso, run_partial_loso, run_within_subject
from .stats import holm_bonferroni, wilcoxon_signed_rank

__version__ = "0.1.0"
