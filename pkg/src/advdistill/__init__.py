"""Data-free adversarial robustness distillation.

Train a small robust classifier from a frozen robust teacher and a learned
conditional generator, with per-batch adaptive distillation temperature and
generator loss balancing, plus the attack suite and evaluation harness
needed to measure the result.
"""

from .adaptive import (AdaptiveState, ConfidenceStats, adaptive_lambda, confidence_stats,
                       interactive_temperature)
from .attacks import AttackConfig, craft_training_adversarial, fgsm, pgd
from .checkpoints import (Checkpoint, CheckpointError, load_checkpoint, load_model,
                          load_model_into, save_checkpoint, save_model)
from .data import (DataFormatError, ImageDataset, SyntheticSpec, load_dataset,
                   make_synthetic_dataset, save_dataset)
from .evaluation import AttackSuite, RobustnessReport, entropy_report, evaluate_robustness
from .experiments import (StrategyComparison, mode_ablation, strategy_schedule,
                          temperature_strategy_experiment)
from .layers import FrozenModelError, Network
from .losses import (LossValue, adversarial_generation_loss, classification_loss,
                     distillation_loss, generator_loss, information_entropy)
from .models import (ConditionalGenerator, ConvClassifier, InputError,
                     build_from_descriptor, softmax_with_temperature)
from .optim import Adam, SGD, cosine_lr
from .tensor import NumericalError, Tensor, gradients, no_grad
from .training import (DistillationTrainer, PretrainConfig, RunReport, TrainConfig,
                       TrainingDiverged, attack_accuracy, pretrain_robust_teacher)

__version__ = "0.1.0"
