"""Environment generation: synthetic tasks, image staining, rotation and client splits."""

from fedinv.envgen.container import read_container, write_container
from fedinv.envgen.idx import find_mnist, load_idx, write_idx
from fedinv.envgen.images import (STAIN_MODES, color_indices, colorize, image_dataset,
                                  rotate_env, rotate_images, stain_mask, synthetic_digits)
from fedinv.envgen.partition import Partition, PartitionPlan, partition_clients
from fedinv.envgen.synthetic import bayes_accuracy, gen_synthetic_envs, invariant_direction

__all__ = [
    "STAIN_MODES", "Partition", "PartitionPlan", "bayes_accuracy", "color_indices", "colorize",
    "find_mnist", "gen_synthetic_envs", "image_dataset", "invariant_direction", "load_idx",
    "partition_clients", "read_container", "rotate_env", "rotate_images", "stain_mask",
    "synthetic_digits", "write_container", "write_idx",
]
