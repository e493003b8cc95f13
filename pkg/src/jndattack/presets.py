"""Shipped attack hyperparameter presets.

The cifar presets are the tuned low-resolution classification values; the
imagenet presets are the tuned high-resolution ones; detection uses unit
weights. Epsilon and the weights refer to [0, 255] pixel units, matching
the image representation everywhere in the toolkit.
"""

from .attacks import AttackConfig

CIFAR10_JND = AttackConfig(lambda1=10.0, lambda2=1.0, lambda3=1.0, lambda4=10.0, alpha=0.05)
CIFAR10_FGSM = AttackConfig(epsilon=0.5)
CIFAR10_FGV = AttackConfig(epsilon=0.4)

IMAGENET_JND = AttackConfig(lambda1=100.0, lambda2=10.0, lambda3=10.0, lambda4=1.0, alpha=0.0001)
IMAGENET_FGSM = AttackConfig(epsilon=0.1)
IMAGENET_FGV = AttackConfig(epsilon=0.1)

DETECTION_JND = AttackConfig(lambda1=1.0, lambda2=1.0, lambda3=1.0, lambda4=1.0, alpha=0.05)

# The no-regularization baseline: classification loss and pull-back only.
def baseline_config(base: AttackConfig = CIFAR10_JND) -> AttackConfig:
    from dataclasses import replace
    return replace(base, lambda3=0.0, lambda4=0.0)


PRESETS = {
    "cifar10-jnd": CIFAR10_JND,
    "cifar10-fgsm": CIFAR10_FGSM,
    "cifar10-fgv": CIFAR10_FGV,
    "imagenet-jnd": IMAGENET_JND,
    "imagenet-fgsm": IMAGENET_FGSM,
    "imagenet-fgv": IMAGENET_FGV,
    "detection-jnd": DETECTION_JND,
}
