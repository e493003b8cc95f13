"""White-box adversarial image toolkit.

Iterative gradient-descent attack regularized for perceptual similarity,
with sign-step, value-step and boundary-projection baselines, quality
metrics, population statistics and a grid-search harness, all on top of a
small self-trained convolutional classifier.
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, AttackResult, deepfool_attack, fgsm_attack, fgv_attack, jnd_attack
from .classifier import Model, ModelSpec, Prediction, desk_model_spec, init_parameters, load_checkpoint, predict, save_checkpoint, train
from .data_io import Dataset, generate_synthetic, load_cifar10_batch, load_ppm, save_ppm
from .metrics import QualityReport, lp_distances, psnr, quality_report, ssim, uqi, scc, vifp
from .regularizers import br_loss, clamp_to_range, tv_loss
from .stats import color_histogram, kde, kl_divergence, population_compare
from .sweep import SweepSpec, run_sweep
